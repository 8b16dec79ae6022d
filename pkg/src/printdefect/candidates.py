"""Coarse stage: baseline-corrected DDE thresholding of blocks."""

import csv
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

BASELINE_WINDOW = 31

#: Default corrected-DDE threshold, from :func:`calibrate_threshold` run over
#: defect-free pages produced by the synthetic generator (see
#: ``scripts/calibrate_threshold.py``).
DEFAULT_THRESHOLD = 0.0108


@dataclass
class CandidateSet:
    block_ids: set
    threshold_used: float
    baseline: dict = field(default_factory=dict)
    corrected: dict = field(default_factory=dict)

    def __contains__(self, block_id):
        return block_id in self.block_ids

    def __len__(self):
        return len(self.block_ids)


def running_median(values, window=BASELINE_WINDOW):
    """Centred running median; the window is clipped at the sequence ends."""
    values = np.asarray(values, dtype=np.float64)
    half = window // 2
    n = values.size
    out = np.empty(n)
    for i in range(n):
        out[i] = np.median(values[max(0, i - half):min(n, i + half + 1)])
    return out


def _sequences(metrics):
    groups = defaultdict(list)
    for idx, m in enumerate(metrics):
        groups[(m.id.grid_pass, m.region)].append(idx)
    for key in sorted(groups):
        idxs = groups[key]
        idxs.sort(key=lambda i: (metrics[i].id.row, metrics[i].id.col))
        yield idxs


def remove_baseline(metrics, window=BASELINE_WINDOW):
    """Subtract a running-median baseline from DDE.

    The baseline is computed separately for each (grid pass, tint region)
    sequence, walked in row-major block order.

    Returns
    -------
    corrected, baseline : ndarray
        Aligned with ``metrics``; ``corrected = max(0, dde - baseline)``.
    """
    dde = np.array([m.dde for m in metrics], dtype=np.float64)
    baseline = np.zeros_like(dde)
    for idxs in _sequences(metrics):
        baseline[idxs] = running_median(dde[idxs], window)
    return np.maximum(0.0, dde - baseline), baseline


def select_candidates(metrics, corrected, threshold, baseline=None):
    """Blocks whose corrected DDE reaches ``threshold``.

    With ``threshold == 0`` only blocks with strictly positive corrected DDE
    are kept, so flat blocks never become candidates.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    corrected = np.asarray(corrected, dtype=np.float64)
    keep = corrected >= threshold
    if threshold == 0:
        keep &= corrected > 0
    ids = {m.id for m, k in zip(metrics, keep) if k}
    base = {} if baseline is None else {m.id: float(v) for m, v in zip(metrics, baseline)}
    corr = {m.id: float(v) for m, v in zip(metrics, corrected)}
    return CandidateSet(ids, float(threshold), base, corr)


def calibrate_threshold(corrected_values, percentile=95.0):
    """Percentile of pooled corrected DDE from defect-free pages."""
    pooled = np.concatenate([np.ravel(v) for v in corrected_values])
    return float(np.percentile(pooled, percentile))


def dump_dde(metrics, corrected, baseline, path):
    """Write raw DDE, baseline and corrected DDE per block as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block_idx", "grid_pass", "region", "raw_dde", "baseline", "corrected"])
        for m, b, c in zip(metrics, baseline, corrected):
            w.writerow([str(m.id), int(m.id.grid_pass), m.region, repr(m.dde), repr(float(b)), repr(float(c))])
