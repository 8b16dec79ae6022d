"""End-to-end page analysis wrapped as an sklearn-style estimator."""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import aggregate, blockgrid, candidates, imaging, segmentation
from .classifier import CostSensitiveTreeClassifier, cost_matrix
from .dataset import BlockRecord, label_from_ground_truth, training_arrays


@dataclass
class PageAnalysis:
    """Coarse and fine stage output for one page (no refinement applied)."""

    shape: tuple
    dpi: int
    metrics: list
    corrected: np.ndarray
    baseline: np.ndarray
    candidates: candidates.CandidateSet
    regions: dict = field(default_factory=dict)
    region_colors: dict = field(default_factory=dict)

    def candidate_metrics(self):
        return [m for m in self.metrics if m.id in self.candidates]

    def feature_rows(self):
        """(BlockMetrics, DefectRegion, 7-vector) for each segmented candidate."""
        out = []
        for m in self.metrics:
            reg = self.regions.get(m.id)
            if reg is not None:
                out.append((m, reg, [m.mdl, m.ddl, m.dde, float(reg.size_px), reg.major_axis_px,
                                     reg.minor_axis_px, reg.severity]))
        return out


@dataclass
class PageResult:
    analysis: PageAnalysis
    accepted: list
    defects: list
    features: aggregate.PageFeatureVector


def _hex_color(mean_lab):
    rgb = np.clip(np.rint(imaging.lab_to_srgb(np.asarray(mean_lab))), 0, 255).astype(int)
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def preprocess(raster):
    """Descreen, convert to CIELAB and restrict validity to full kernel support."""
    lab = imaging.to_lab(imaging.descreen(raster))
    lab.validity = lab.validity & imaging.full_support(raster.validity)
    return lab


def analyze_page(raster, threshold=None, baseline_window=candidates.BASELINE_WINDOW,
                 channel="delta_e", method="valley", bins=segmentation.DEFAULT_BINS,
                 block_size=blockgrid.BLOCK_SIZE, shift=blockgrid.GRID_SHIFT,
                 min_valid_fraction=blockgrid.MIN_VALID_FRACTION):
    """Run preprocessing, dual-pass metrics, candidate selection and segmentation."""
    if threshold is None:
        threshold = candidates.DEFAULT_THRESHOLD
    lab = preprocess(raster)
    labels = blockgrid.label_regions(lab.validity)
    metrics, masks = [], {}
    for grid_pass in blockgrid.GridPass:
        for w, region, mask in blockgrid.region_windows(lab, grid_pass, labels, block_size, shift,
                                                        min_valid_fraction):
            m = blockgrid.compute_metrics(lab, w, region=region, pixel_mask=mask)
            if m is not None:
                metrics.append(m)
                masks[m.id] = mask

    region_colors = {}
    for r in np.unique(labels[labels > 0]):
        sel = labels == r
        region_colors[int(r)] = _hex_color([lab.L[sel].mean(), lab.a[sel].mean(), lab.b[sel].mean()])

    if metrics:
        corrected, baseline = candidates.remove_baseline(metrics, baseline_window)
    else:
        corrected, baseline = np.zeros(0), np.zeros(0)
    cands = candidates.select_candidates(metrics, corrected, threshold, baseline)

    found = {}
    for m in metrics:
        if m.id not in cands:
            continue
        sl = m.window.slices
        valid = lab.validity[sl] & masks[m.id]
        L, a, b = lab.L[sl], lab.a[sl], lab.b[sl]
        mask = segmentation.segment_defect(L, a, b, valid, channel, method, bins)
        if not mask.any():
            continue
        reg = segmentation.defect_attributes(mask, L, a, b, valid, (m.mean_L, m.mean_a, m.mean_b),
                                             block_id=m.id, origin=(m.x_range[0], m.y_range[0]))
        if reg is not None:
            found[m.id] = reg
    return PageAnalysis(lab.shape, raster.dpi, metrics, corrected, baseline, cands, found, region_colors)


def block_records(analysis, filename="", truth=None):
    """Dataset records for every block of an analysed page."""
    records = []
    for m in analysis.metrics:
        reg = analysis.regions.get(m.id)
        extra = {}
        if reg is not None:
            extra = dict(polarity=reg.polarity.value, size_px=int(reg.size_px),
                         major_px=reg.major_axis_px, minor_px=reg.minor_axis_px, severity=reg.severity)
        records.append(BlockRecord(
            file=filename, block_idx=str(m.id), color=analysis.region_colors.get(m.region, ""),
            x0=m.x_range[0], x1=m.x_range[1], y0=m.y_range[0], y1=m.y_range[1],
            mean_l=m.mean_L, mean_a=m.mean_a, mean_b=m.mean_b,
            dde=m.dde, mdl=m.mdl, ddl=m.ddl, **extra))
    if truth is not None:
        label_from_ground_truth(records, truth, analysis.shape)
    return records


class LocalDefectDetector(BaseEstimator):
    """Coarse-to-fine local defect detector for constant-tint pages.

    ``fit`` analyses training pages, labels their blocks from ground truth
    and grows the refinement tree on the candidate blocks. Without a fitted
    (or supplied) tree, every segmented candidate is reported.

    Parameters
    ----------
    threshold : float or None
        Corrected-DDE candidate threshold; None uses the calibrated default.
    miss_cost : float
        ``c[1][0]`` of the refinement tree's cost matrix (``c[0][1]`` is 1).
    tree : CostSensitiveTreeClassifier or None
        A pre-trained refinement tree used when the detector is not fitted.
    """

    def __init__(self, threshold=None, baseline_window=candidates.BASELINE_WINDOW,
                 channel="delta_e", method="valley", bins=segmentation.DEFAULT_BINS,
                 block_size=blockgrid.BLOCK_SIZE, shift=blockgrid.GRID_SHIFT,
                 min_valid_fraction=blockgrid.MIN_VALID_FRACTION,
                 miss_cost=2.0, max_depth=8, min_samples_leaf=5, tree=None):
        self.threshold = threshold
        self.baseline_window = baseline_window
        self.channel = channel
        self.method = method
        self.bins = bins
        self.block_size = block_size
        self.shift = shift
        self.min_valid_fraction = min_valid_fraction
        self.miss_cost = miss_cost
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.tree = tree

    def _analysis_params(self):
        return dict(threshold=self.threshold, baseline_window=self.baseline_window,
                    channel=self.channel, method=self.method, bins=self.bins,
                    block_size=self.block_size, shift=self.shift,
                    min_valid_fraction=self.min_valid_fraction)

    def analyze(self, raster):
        return analyze_page(raster, **self._analysis_params())

    def transform(self, pages, truths=None, filenames=None):
        """Blockwise dataset records for each page, concatenated."""
        records = []
        for i, page in enumerate(pages):
            truth = None if truths is None else truths[i]
            name = "" if filenames is None else str(filenames[i])
            records.extend(block_records(self.analyze(page), name, truth))
        return records

    def fit(self, pages, truths):
        records = self.transform(pages, truths)
        X, y = training_arrays(records)
        self.tree_ = CostSensitiveTreeClassifier(
            cost_matrix(self.miss_cost), self.max_depth, self.min_samples_leaf).fit(X, y)
        self.training_records_ = records
        return self

    def _refiner(self):
        if hasattr(self, "tree_"):
            return self.tree_
        if self.tree is not None:
            check_is_fitted(self.tree, "nodes_")
            return self.tree
        return None

    def refine(self, analysis):
        """Regions the refinement tree keeps (all of them without a tree)."""
        rows = analysis.feature_rows()
        tree = self._refiner()
        if tree is None or not rows:
            return [reg for _, reg, _ in rows]
        keep = tree.predict(np.array([f for _, _, f in rows]))
        return [reg for (_, reg, _), k in zip(rows, keep) if k == 1]

    def detect(self, raster):
        analysis = self.analyze(raster)
        accepted = self.refine(analysis)
        defects = aggregate.merge_detections(accepted, raster.dpi, analysis.shape)
        return PageResult(analysis, accepted, defects, aggregate.page_feature_vector(defects))

    def predict(self, pages):
        """Page feature vectors."""
        return [self.detect(p).features for p in pages]
