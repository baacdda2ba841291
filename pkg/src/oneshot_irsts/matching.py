"""Local feature matching: reference descriptor, tiled confidence map, prompt extraction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .backend import FeatureGrid, TargetDescriptor, pool_target
from .errors import BackendError, DimensionError, EmptyTargetError, ParameterError
from .imaging import Frame, crop_window, label_components, paste_mask, resize_mask_nearest, tile


@dataclass(frozen=True)
class ConfidenceMap:
    scores: np.ndarray

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    def to_uint16(self) -> np.ndarray:
        """Scores mapped linearly from [-1, 1] to [0, 65535]."""
        return np.round((np.clip(self.scores, -1.0, 1.0) + 1.0) * 0.5 * 65535.0).astype(np.uint16)


@dataclass(frozen=True)
class PromptPoint:
    x: int
    y: int
    confidence: float


def reference_mask(reference: Frame, annotation, side: int, segmenter) -> np.ndarray:
    """Full-frame target mask for ``annotation``.

    Mask annotations are used verbatim. Point and box annotations are
    segmented with ``segmenter`` on the window around the annotation
    centre; a box additionally clips the result to its extent.
    """
    if annotation.kind == "mask":
        return np.asarray(annotation.mask, dtype=bool)
    cx, cy = annotation.center()
    window_frame, window = crop_window(reference, (cx, cy), side)
    local = np.asarray(segmenter.segment_at(window_frame, (cx - window.x, cy - window.y)), dtype=bool)
    full = paste_mask(np.zeros(reference.shape, dtype=bool), local, window)
    if annotation.kind == "bbox":
        x0, y0, x1, y1 = annotation.bbox
        clip = np.zeros_like(full)
        clip[y0:y1, x0:x1] = True
        full &= clip
    return full


def mask_to_grid(mask: np.ndarray, grid: FeatureGrid) -> np.ndarray:
    """Resize a window mask to the grid by nearest neighbour.

    Targets smaller than a cell can vanish under nearest sampling; in that
    case every cell containing a target pixel is selected instead.
    """
    cells = resize_mask_nearest(mask, grid.grid_w, grid.grid_h)
    if cells.any() or not mask.any():
        return cells
    ys, xs = np.nonzero(mask)
    cells = np.zeros((grid.grid_h, grid.grid_w), dtype=bool)
    cells[grid.pixel_to_cell(mask.shape[0], axis=0)[ys], grid.pixel_to_cell(mask.shape[1], axis=1)[xs]] = True
    return cells


def prepare_reference(reference: Frame, annotation, side: int, extractor, segmenter) -> TargetDescriptor:
    full_mask = reference_mask(reference, annotation, side, segmenter)
    if not full_mask.any():
        raise EmptyTargetError("annotation produced an empty reference mask")
    center = annotation.center()
    window_frame, window = crop_window(reference, center, side)
    window_mask = full_mask[window.slices]
    if not window_mask.any():
        raise EmptyTargetError(f"reference mask has no pixel inside window {window}")
    grid = extractor.encode(window_frame)
    cells = mask_to_grid(window_mask, grid)
    masked = FeatureGrid(grid.values * cells[..., None], grid.pitch)
    return TargetDescriptor(masked_grid=masked, pooled=pool_target(masked), source_window=window)


def cell_cosine(grid: FeatureGrid, unit: np.ndarray) -> np.ndarray:
    """Cosine similarity of every cell against a unit vector; zero-norm cells score 0."""
    if grid.dim != unit.shape[0]:
        raise BackendError(f"feature dim {grid.dim} does not match descriptor dim {unit.shape[0]}")
    norms = np.linalg.norm(grid.values, axis=-1)
    dots = grid.values @ unit
    cos = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0.0)
    return np.clip(cos, -1.0, 1.0)


def confidence_map(test: Frame, descriptor: TargetDescriptor, side: int, stride: int | None, extractor) -> ConfidenceMap:
    """Tile ``test``, score each cell against the descriptor, reconstruct with max."""
    stride = side if stride is None else stride
    scores = np.full(test.shape, -np.inf)
    for window_frame, window in tile(test, side, stride):
        grid = extractor.encode(window_frame)
        cell_scores = cell_cosine(grid, descriptor.pooled)
        rows = grid.pixel_to_cell(side, axis=0)
        cols = grid.pixel_to_cell(side, axis=1)
        block = cell_scores[np.ix_(rows, cols)]
        region = scores[window.slices]
        np.maximum(region, block, out=region)
    return ConfidenceMap(scores)


def extract_prompt(cmap: ConfidenceMap) -> PromptPoint:
    """Global argmax; ties resolve to the smallest row-major index."""
    idx = int(np.argmax(cmap.scores))
    y, x = divmod(idx, cmap.width)
    return PromptPoint(x, y, float(cmap.scores[y, x]))


REFINEMENTS = ("peak", "center", "none")


def _plateau(cmap: ConfidenceMap, prompt: PromptPoint) -> np.ndarray:
    labels, _ = label_components(cmap.scores == cmap.scores[prompt.y, prompt.x])
    return labels == labels[prompt.y, prompt.x]


def refine_prompt(cmap: ConfidenceMap, prompt: PromptPoint, frame: Frame, mode: str = "peak") -> PromptPoint:
    """Place ``prompt`` inside the constant-score block (feature cell) it belongs to.

    Cell-resolution scores say which cell matched but not where in the cell
    the target sits, and the row-major argmax always lands on the cell's
    top-left corner. ``"peak"`` moves the prompt to the brightest frame pixel
    of the block (first in row-major order on ties), ``"center"`` to the
    block centre, ``"none"`` keeps the raw argmax.
    """
    if mode == "none":
        return prompt
    region = _plateau(cmap, prompt)
    if mode == "peak":
        idx = int(np.argmax(np.where(region, frame.pixels, -np.inf)))
        y, x = divmod(idx, cmap.width)
        return PromptPoint(x, y, prompt.confidence)
    if mode != "center":
        raise ParameterError(f"prompt refinement must be one of {REFINEMENTS}, got {mode!r}")
    ys, xs = np.nonzero(region)
    cx = (int(xs.min()) + int(xs.max())) // 2
    cy = (int(ys.min()) + int(ys.max())) // 2
    if not region[cy, cx]:
        k = int(np.argmin((xs - cx) ** 2 + (ys - cy) ** 2))
        cx, cy = int(xs[k]), int(ys[k])
    return PromptPoint(cx, cy, prompt.confidence)


def extract_topk(cmap: ConfidenceMap, k: int) -> list[PromptPoint]:
    """Up to ``k`` peaks after 8-neighbourhood non-maximum suppression.

    Flat plateaus of equal local maxima count once, represented by their
    first row-major pixel.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    s = cmap.scores
    peaks = s == ndimage.maximum_filter(s, size=3, mode="nearest")
    labels, _ = label_components(peaks)
    flat = labels.ravel()
    fg = np.flatnonzero(flat)
    _, first = np.unique(flat[fg], return_index=True)
    reps = fg[first]
    order = sorted(reps.tolist(), key=lambda i: (-s.flat[i], i))
    points = []
    for idx in order[:k]:
        y, x = divmod(idx, cmap.width)
        points.append(PromptPoint(x, y, float(s[y, x])))
    return points


def fuse_confidence(maps: list[ConfidenceMap]) -> ConfidenceMap:
    if not maps:
        raise ParameterError("need at least one confidence map")
    shape = maps[0].scores.shape
    for m in maps[1:]:
        if m.scores.shape != shape:
            raise DimensionError(f"confidence map shapes differ: {shape} vs {m.scores.shape}")
    if len(maps) == 1:
        return maps[0]
    return ConfidenceMap(np.maximum.reduce([m.scores for m in maps]))
