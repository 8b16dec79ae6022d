"""Command-line front end: ``detect``, ``train``, ``roc`` and ``gen``."""

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, aggregate, candidates, dataset, imaging, segmentation, synthpage
from .classifier import (REFERENCE_COST, REFERENCE_FALSE_ALARM, REFERENCE_MISS_RATE,
                         CostSensitiveTreeClassifier, cost_matrix, evaluate, roc_sweep)
from .pipeline import LocalDefectDetector, block_records

log = logging.getLogger("printdefect")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    inputs: list = field(default_factory=list)
    dpi: int = imaging.DEFAULT_DPI
    threshold: float = candidates.DEFAULT_THRESHOLD
    baseline_window: int = candidates.BASELINE_WINDOW
    channel: str = segmentation.Channel.DELTA_E.value
    method: str = segmentation.Method.VALLEY.value
    bins: int = segmentation.DEFAULT_BINS
    model: str = None
    out_dir: str = None
    truth: str = None
    dump_dde: str = None
    jobs: int = 1
    verbosity: int = 0


# config-file key -> RunConfig attribute
_CONFIG_KEYS = {
    "dpi": "dpi",
    "candidate.threshold": "threshold",
    "candidate.baseline_window": "baseline_window",
    "segment.channel": "channel",
    "segment.method": "method",
    "segment.bins": "bins",
    "model": "model",
    "out_dir": "out_dir",
    "jobs": "jobs",
}


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config_file(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    flat = _flatten(raw)
    unknown = sorted(set(flat) - set(_CONFIG_KEYS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return {_CONFIG_KEYS[k]: v for k, v in flat.items()}


def resolve_config(args):
    """CLI flags > config file > built-in defaults."""
    cfg = RunConfig()
    if args.config:
        for k, v in load_config_file(args.config).items():
            setattr(cfg, k, v)
    for name in ("dpi", "threshold", "baseline_window", "channel", "method", "bins", "model",
                 "out_dir", "truth", "dump_dde", "jobs"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    cfg.inputs = [str(p) for p in args.inputs]
    cfg.verbosity = args.verbose
    try:
        segmentation.Channel(cfg.channel)
        segmentation.Method(cfg.method)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if cfg.dpi <= 0 or cfg.threshold < 0 or cfg.jobs < 1 or cfg.bins < 2 or cfg.baseline_window < 1:
        raise UsageError("dpi, jobs, bins and baseline window must be positive; threshold >= 0")
    return cfg


def expand_inputs(inputs):
    pages = []
    for p in map(Path, inputs):
        if p.is_dir():
            pages.extend(q for q in sorted(p.glob("*.png")) if not q.name.endswith(".annotated.png"))
        else:
            pages.append(p)
    return pages


def _write_atomic(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _save_overlay(pixels, path):
    from PIL import Image
    tmp = Path(path).with_name(Path(path).name + ".tmp")
    Image.fromarray(pixels, mode="RGB").save(tmp, format="PNG")
    os.replace(tmp, path)


def _truth_for(page, cfg, n_pages):
    if cfg.truth and n_pages == 1:
        return dataset.load_truth(cfg.truth)
    sidecar = page.with_name(page.stem + ".truth.json")
    return dataset.load_truth(sidecar) if sidecar.exists() else None


def process_page(page, cfg, n_pages):
    """Run the pipeline on one page and write its outputs; returns a summary."""
    page = Path(page)
    t0 = time.perf_counter()
    raster = imaging.load_page(page, dpi=cfg.dpi)
    tree = CostSensitiveTreeClassifier.load(cfg.model) if cfg.model else None
    det = LocalDefectDetector(threshold=cfg.threshold, baseline_window=cfg.baseline_window,
                              channel=cfg.channel, method=cfg.method, bins=cfg.bins, tree=tree)
    result = det.detect(raster)
    out_dir = Path(cfg.out_dir) if cfg.out_dir else page.parent
    stem = out_dir / page.stem

    _write_atomic(f"{stem}.features.json", result.features.to_json())
    _write_atomic(f"{stem}.features.csv", result.features.to_csv())
    _write_atomic(f"{stem}.defects.json",
                  json.dumps([d.to_dict() for d in result.defects], indent=2) + "\n")
    _save_overlay(aggregate.render_overlay(raster.pixels, result.defects), f"{stem}.annotated.png")

    truth = _truth_for(page, cfg, n_pages)
    records = block_records(result.analysis, page.name, truth)
    tmp = Path(f"{stem}.blocks.csv.tmp")
    dataset.write_dataset(records, tmp)
    os.replace(tmp, f"{stem}.blocks.csv")

    if cfg.dump_dde:
        a = result.analysis
        target = Path(cfg.dump_dde)
        if n_pages > 1:
            target.mkdir(parents=True, exist_ok=True)
            target = target / f"{page.stem}.dde.csv"
        candidates.dump_dde(a.metrics, a.corrected, a.baseline, target)
    return {
        "page": str(page),
        "status": "ok",
        "n_defects": result.features.n_defects,
        "n_candidates": len(result.analysis.candidates),
        "seconds": time.perf_counter() - t0,
    }


def _safe_process(args):
    page, cfg, n_pages = args
    try:
        return process_page(page, cfg, n_pages)
    except (imaging.PageError, dataset.DatasetError, OSError, ValueError) as exc:
        return {"page": str(page), "status": "error", "error": str(exc)}


def _report(path, command, config, extra):
    doc = {
        "command": command,
        "config": config,
        "versions": {"printdefect": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    doc.update(extra)
    _write_atomic(path, json.dumps(doc, indent=2, default=str) + "\n")


def cmd_detect(args):
    cfg = resolve_config(args)
    if cfg.model and not Path(cfg.model).is_file():
        raise UsageError(f"model file not found: {cfg.model}")
    pages = expand_inputs(cfg.inputs)
    if not pages:
        raise UsageError("no input pages")
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    jobs = [(p, cfg, len(pages)) for p in pages]
    if cfg.jobs > 1 and len(pages) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_safe_process, jobs))
    else:
        results = [_safe_process(j) for j in jobs]
    for r in results:
        if r["status"] == "ok":
            log.info("%s: %d defects", r["page"], r["n_defects"])
        else:
            log.error("%s", r["error"])
    report_dir = Path(cfg.out_dir) if cfg.out_dir else Path(pages[0]).parent
    _report(report_dir / "run_report.json", "detect", asdict(cfg),
            {"pages": results, "seconds": time.perf_counter() - t0})
    return EXIT_OK if all(r["status"] == "ok" for r in results) else EXIT_DATA


def _load_training(paths):
    try:
        records = dataset.read_datasets(paths)
    except (OSError, dataset.DatasetError) as exc:
        raise UsageError(str(exc)) from exc
    X, y = dataset.training_arrays(records)
    if len(np.unique(y)) < 2:
        raise UsageError("dataset needs labelled candidate blocks of both classes")
    return X, y


def cmd_train(args):
    t0 = time.perf_counter()
    X, y = _load_training(args.dataset)
    model = CostSensitiveTreeClassifier(cost_matrix(args.cost), args.max_depth, args.min_leaf).fit(X, y)
    dataset_id = ",".join(str(p) for p in args.dataset)
    model.save(args.out, dataset_id=dataset_id)
    train = evaluate(model, X, y)
    _report(f"{args.out}.report.json", "train",
            {"dataset": args.dataset, "cost": args.cost, "max_depth": args.max_depth,
             "min_leaf": args.min_leaf},
            {"samples": int(y.size), "positives": int(y.sum()), "node_count": model.node_count,
             "depth": model.depth_, "training_set": {**asdict(train), "miss_rate": train.miss_rate,
                                                     "false_alarm": train.false_alarm},
             "seconds": time.perf_counter() - t0})
    log.info("trained tree: %d nodes, depth %d", model.node_count, model.depth_)
    return EXIT_OK


def _parse_costs(text):
    try:
        costs = [float(c) for c in text.split(",") if c.strip()]
    except ValueError as exc:
        raise UsageError(f"bad cost list {text!r}") from exc
    if not costs or any(c <= 0 for c in costs):
        raise UsageError("costs must be positive")
    return costs


def cmd_roc(args):
    t0 = time.perf_counter()
    costs = _parse_costs(args.costs)
    X, y = _load_training(args.dataset)
    points = roc_sweep(X, y, costs, n_folds=args.folds, max_depth=args.max_depth,
                       min_samples_leaf=args.min_leaf)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cost", "miss_rate", "false_alarm"])
        for p in points:
            w.writerow([repr(p.cost), repr(p.miss_rate), repr(p.false_alarm)])
    _report(f"{args.out}.report.json", "roc",
            {"dataset": args.dataset, "costs": costs, "folds": args.folds},
            {"held_out": [{"cost": p.cost, "miss_rate": p.miss_rate, "false_alarm": p.false_alarm,
                           "folds_used": p.folds_used} for p in points],
             "training_set": [{"cost": p.cost, "miss_rate": p.train_miss_rate,
                               "false_alarm": p.train_false_alarm} for p in points],
             "reference_operating_point": {"cost": REFERENCE_COST, "miss_rate": REFERENCE_MISS_RATE,
                                           "false_alarm": REFERENCE_FALSE_ALARM},
             "seconds": time.perf_counter() - t0})
    return EXIT_OK


def cmd_gen(args):
    t0 = time.perf_counter()
    if args.spec:
        try:
            spec = synthpage.PageSpec.load(args.spec)
        except (OSError, json.JSONDecodeError, TypeError, KeyError) as exc:
            raise UsageError(f"cannot read spec {args.spec}: {exc}") from exc
    else:
        spec = synthpage.random_spec(args.random, n_defects=args.n_defects)
    try:
        raster, truth = synthpage.generate(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    imaging.save_page(raster, args.out)
    truth_path = args.truth or str(Path(args.out).with_suffix("")) + ".truth.json"
    dataset.save_truth(truth, truth_path)
    _report(f"{args.out}.report.json", "gen", {"spec": spec.to_dict()},
            {"truth": truth_path, "seconds": time.perf_counter() - t0})
    return EXIT_OK


def build_parser():
    p = _Parser(prog="printdefect", description="Local print defect detection on scanned tint pages.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("detect", help="detect defects on pages")
    d.add_argument("inputs", nargs="+", help="PNG pages or directories of pages")
    d.add_argument("--config", help="JSON config file")
    d.add_argument("--dpi", type=int)
    d.add_argument("--threshold", type=float, help="corrected-DDE candidate threshold")
    d.add_argument("--baseline-window", type=int)
    d.add_argument("--channel", choices=[c.value for c in segmentation.Channel])
    d.add_argument("--method", choices=[m.value for m in segmentation.Method])
    d.add_argument("--bins", type=int)
    d.add_argument("--model", help="trained tree (JSON); omitted means coarse-stage output only")
    d.add_argument("--truth", help="ground truth JSON for a single input page")
    d.add_argument("--out-dir")
    d.add_argument("--dump-dde", help="write raw/baseline/corrected DDE CSV here")
    d.add_argument("--jobs", type=int)
    d.set_defaults(func=cmd_detect)

    t = sub.add_parser("train", help="train the refinement tree")
    t.add_argument("--dataset", nargs="+", required=True)
    t.add_argument("--cost", type=float, default=2.0, help="miss cost c[1][0]; c[0][1] is 1")
    t.add_argument("--out", required=True)
    t.add_argument("--max-depth", type=int, default=8)
    t.add_argument("--min-leaf", type=int, default=5)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("roc", help="cross-validated cost sweep")
    r.add_argument("--dataset", nargs="+", required=True)
    r.add_argument("--costs", default="0.5,1,2,4,8")
    r.add_argument("--folds", type=int, default=5)
    r.add_argument("--out", required=True)
    r.add_argument("--max-depth", type=int, default=8)
    r.add_argument("--min-leaf", type=int, default=5)
    r.set_defaults(func=cmd_roc)

    g = sub.add_parser("gen", help="generate a synthetic page")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="page spec JSON")
    src.add_argument("--random", type=int, metavar="SEED", help="random layout from a seed")
    g.add_argument("--n-defects", type=int, default=10)
    g.add_argument("--out", required=True)
    g.add_argument("--truth")
    g.set_defaults(func=cmd_gen)

    for sp in (d, t, r, g):
        sp.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"printdefect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
