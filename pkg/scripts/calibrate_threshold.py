"""Recompute the default corrected-DDE candidate threshold.

Pools baseline-corrected DDE over defect-free synthetic pages (all tints,
one- and two-region layouts) and prints its 95th percentile.
"""

import argparse

import numpy as np

from printdefect import blockgrid, candidates, pipeline, synthpage


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pages", type=int, default=24)
    ap.add_argument("--percentile", type=float, default=95.0)
    args = ap.parse_args()

    pooled = []
    for seed in range(args.pages):
        spec = synthpage.random_spec(10_000 + seed, n_defects=0, n_regions=1 + seed % 2)
        raster, _ = synthpage.generate(spec)
        metrics = blockgrid.dual_pass_metrics(pipeline.preprocess(raster))
        corrected, _ = candidates.remove_baseline(metrics)
        pooled.append(corrected)
    allv = np.concatenate(pooled)
    print(f"blocks={allv.size} p{args.percentile:g}={candidates.calibrate_threshold(pooled, args.percentile):.6f} "
          f"max={allv.max():.6f}")


if __name__ == "__main__":
    main()
