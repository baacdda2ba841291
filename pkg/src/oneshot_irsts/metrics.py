"""Pixel- and target-level evaluation plus inter-frame SSIM."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError
from .imaging import Frame, as_mask, connected_components, load_mask

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MatchRule:
    max_distance: float = 3.0

    def __post_init__(self):
        if self.max_distance < 0:
            raise ParameterError(f"match distance must be >= 0, got {self.max_distance}")


@dataclass
class FrameMetrics:
    intersection: int
    union: int
    true_targets: int
    pred_components: int
    detected: int
    false_components: int
    false_pixels: int
    total_pixels: int


@dataclass
class MetricsReport:
    iou: float
    pd: float
    fa: float
    true_target_count: int
    detected_count: int
    false_component_count: int
    false_pixel_count: int
    total_pixel_count: int
    frames: list[FrameMetrics] = field(default_factory=list, repr=False)


def _check_pair(pred, gt):
    pred, gt = as_mask(pred), as_mask(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """|pred & gt| / |pred | gt|; two empty masks score 1."""
    pred, gt = _check_pair(pred, gt)
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(pred & gt)) / union


def match_targets(gt_stats, pred_stats, max_distance: float) -> list[tuple[int, int]]:
    """Greedy one-to-one centroid matching, closest pairs first.

    Returns ``(gt_index, pred_index)`` pairs.
    """
    candidates = []
    for i, g in enumerate(gt_stats):
        for j, p in enumerate(pred_stats):
            d = math.hypot(g.centroid_x - p.centroid_x, g.centroid_y - p.centroid_y)
            if d <= max_distance:
                candidates.append((d, i, j))
    candidates.sort()
    used_gt, used_pred, pairs = set(), set(), []
    for _, i, j in candidates:
        if i in used_gt or j in used_pred:
            continue
        used_gt.add(i)
        used_pred.add(j)
        pairs.append((i, j))
    return pairs


def frame_metrics(pred: np.ndarray, gt: np.ndarray, rule: MatchRule) -> FrameMetrics:
    pred, gt = _check_pair(pred, gt)
    gt_stats = connected_components(gt)
    pred_stats = connected_components(pred)
    pairs = match_targets(gt_stats, pred_stats, rule.max_distance)
    matched_pred = {j for _, j in pairs}
    unmatched = [p for j, p in enumerate(pred_stats) if j not in matched_pred]
    return FrameMetrics(
        intersection=int(np.count_nonzero(pred & gt)),
        union=int(np.count_nonzero(pred | gt)),
        true_targets=len(gt_stats),
        pred_components=len(pred_stats),
        detected=len(pairs),
        false_components=len(unmatched),
        false_pixels=sum(p.pixel_count for p in unmatched),
        total_pixels=pred.size,
    )


def aggregate(frames: list[FrameMetrics]) -> MetricsReport:
    inter = sum(f.intersection for f in frames)
    union = sum(f.union for f in frames)
    true = sum(f.true_targets for f in frames)
    detected = sum(f.detected for f in frames)
    false_px = sum(f.false_pixels for f in frames)
    total = sum(f.total_pixels for f in frames)
    return MetricsReport(
        iou=inter / union if union else 1.0,
        pd=detected / true if true else 1.0,
        fa=false_px / total if total else 0.0,
        true_target_count=true,
        detected_count=detected,
        false_component_count=sum(f.false_components for f in frames),
        false_pixel_count=false_px,
        total_pixel_count=total,
        frames=frames,
    )


def pd_fa(preds, gts, rule: MatchRule | None = None) -> MetricsReport:
    """Target-level detection probability and pixel-level false-alarm rate over a sequence.

    IoU in the report is accumulated over all frames (sum of intersections
    over sum of unions).
    """
    rule = rule or MatchRule()
    if len(preds) != len(gts):
        raise DimensionError(f"{len(preds)} predictions vs {len(gts)} ground-truth masks")
    return aggregate([frame_metrics(p, g, rule) for p, g in zip(preds, gts)])


# --------------------------------------------------------------------------
# SSIM
# --------------------------------------------------------------------------

def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.shape[0]
    rows = sliding_window_view(img, n, axis=0) @ g
    return sliding_window_view(rows, n, axis=1) @ g


def ssim(a: Frame, b: Frame, data_range: float = 1.0) -> float:
    """Mean SSIM over every fully-contained 11x11 Gaussian window (sigma 1.5)."""
    x = a.pixels if isinstance(a, Frame) else np.asarray(a, dtype=np.float64)
    y = b.pixels if isinstance(b, Frame) else np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"cannot compare {x.shape} with {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    g = gaussian_kernel()
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    var_x = _filter_valid(x * x, g) - mu_x * mu_x
    var_y = _filter_valid(y * y, g) - mu_y * mu_y
    cov = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


# --------------------------------------------------------------------------
# directory reports
# --------------------------------------------------------------------------

@dataclass
class SuiteReport:
    sequences: dict[str, MetricsReport]

    @property
    def average(self) -> dict[str, float]:
        reps = list(self.sequences.values())
        return {k: float(np.mean([getattr(r, k) for r in reps])) for k in ("pd", "fa", "iou")}

    def write_csv(self, path) -> None:
        cols = ["sequence", "pd", "fa", "iou", "true_targets", "detected", "false_components", "false_pixels", "total_pixels"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for name, r in self.sequences.items():
                w.writerow([name, r.pd, r.fa, r.iou, r.true_target_count, r.detected_count,
                            r.false_component_count, r.false_pixel_count, r.total_pixel_count])
            avg = self.average
            w.writerow(["average", avg["pd"], avg["fa"], avg["iou"], "", "", "", "", ""])

    def render(self) -> str:
        """Table in the customary units: Pd and IoU in 1e-2, Fa in 1e-6."""
        lines = [f"{'sequence':<20} {'Pd (x1e-2)':>11} {'Fa (x1e-6)':>11} {'IoU (x1e-2)':>12}"]
        rows = [(n, r.pd, r.fa, r.iou) for n, r in self.sequences.items()]
        avg = self.average
        rows.append(("average", avg["pd"], avg["fa"], avg["iou"]))
        for name, pd, fa, io in rows:
            lines.append(f"{name:<20} {pd * 1e2:>11.2f} {fa * 1e6:>11.2f} {io * 1e2:>12.2f}")
        return "\n".join(lines)


def _mask_files(d: Path) -> dict[str, Path]:
    return {p.name: p for p in sorted(d.glob("mask_*.png"))}


def _reference_names(pred_dir: Path) -> set[str]:
    summary = pred_dir / "summary.json"
    if not summary.is_file():
        return set()
    data = json.loads(summary.read_text())
    return {f"mask_{i:05d}.png" for i in data.get("reference_frames", [])}


def evaluate_dir(pred_dir, gt_dir, rule: MatchRule | None = None) -> MetricsReport:
    """Score one sequence directory of ``mask_NNNNN.png`` predictions.

    Ground-truth masks of reference frames (listed in the run summary) are
    skipped; any other unpaired file is an error.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = _mask_files(pred_dir)
    gts = _mask_files(gt_dir)
    skip = _reference_names(pred_dir)
    no_gt = sorted(set(preds) - set(gts))
    no_pred = sorted(set(gts) - set(preds) - skip)
    if no_gt or no_pred:
        parts = []
        if no_gt:
            parts.append(f"no ground truth in {gt_dir} for {no_gt}")
        if no_pred:
            parts.append(f"no prediction in {pred_dir} for {no_pred}")
        raise FileNotFoundError("; ".join(parts))
    if not preds:
        raise FileNotFoundError(f"no mask_*.png predictions in {pred_dir}")
    names = sorted(preds)
    return pd_fa([load_mask(preds[n]) for n in names], [load_mask(gts[n]) for n in names], rule)


def report_sequence(pred_dir, gt_dir, rule: MatchRule | None = None) -> SuiteReport:
    """Evaluate one sequence directory, or every sequence sub-directory of ``pred_dir``."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if not pred_dir.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred_dir}")
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"ground-truth directory not found: {gt_dir}")
    if _mask_files(pred_dir):
        return SuiteReport({pred_dir.name: evaluate_dir(pred_dir, gt_dir, rule)})
    seqs = {}
    for sub in sorted(p for p in pred_dir.iterdir() if p.is_dir()):
        if not _mask_files(sub):
            continue
        gt_sub = gt_dir / sub.name
        if not gt_sub.is_dir():
            raise FileNotFoundError(f"no ground-truth directory {gt_sub} for sequence {sub.name}")
        seqs[sub.name] = evaluate_dir(sub, gt_sub, rule)
    if not seqs:
        raise FileNotFoundError(f"no predictions found under {pred_dir}")
    return SuiteReport(seqs)
