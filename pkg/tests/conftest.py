import time

import numpy as np
import pytest

from printdefect import synthpage
from printdefect.classifier import CostSensitiveTreeClassifier, cost_matrix
from printdefect.dataset import training_arrays
from printdefect.pipeline import analyze_page, block_records

SUITE_BUDGET_S = 120.0
TRAIN_SEEDS = range(1000, 1015)
TEST_SEEDS = range(1015, 1020)

# lines printed by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES = []
_SESSION = {}


def pytest_sessionstart(session):
    _SESSION["t0"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = time.perf_counter() - _SESSION["t0"]
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
    ok = elapsed < SUITE_BUDGET_S
    terminalreporter.write_line(
        f"suite runtime: {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s) {'PASS' if ok else 'FAIL'}")


def pytest_sessionfinish(session, exitstatus):
    if time.perf_counter() - _SESSION["t0"] >= SUITE_BUDGET_S and exitstatus == 0:
        session.exitstatus = 1


class Page:
    """A generated page with its ground truth and cached analysis."""

    def __init__(self, seed, **kw):
        self.seed = seed
        self.spec = synthpage.random_spec(seed, **kw)
        self.raster, self.truth = synthpage.generate(self.spec)
        self.analysis = analyze_page(self.raster)
        self.records = block_records(self.analysis, f"page{seed}.png", self.truth)


@pytest.fixture(scope="session")
def corpus():
    """20 seeded 10-spot pages: 15 for training, 5 held out."""
    train = [Page(s) for s in TRAIN_SEEDS]
    test = [Page(s) for s in TEST_SEEDS]
    return train, test


@pytest.fixture(scope="session")
def trained_tree(corpus):
    train, _ = corpus
    X, y = training_arrays([r for p in train for r in p.records])
    return CostSensitiveTreeClassifier(cost_matrix(2.0), max_depth=8, min_samples_leaf=5).fit(X, y)


@pytest.fixture(scope="session")
def clean_page():
    spec = synthpage.random_spec(77, width=450, height=450, n_defects=0)
    return synthpage.generate(spec)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
