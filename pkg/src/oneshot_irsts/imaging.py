"""Raster primitives: frames, windows, tiling, nearest resizing, components, PNG I/O.

Coordinates are 0-based with ``x`` the column and ``y`` the row. Arrays are
indexed ``[y, x]``. Binary masks are plain ``numpy`` boolean arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .errors import BoundsError, DimensionError, ParameterError

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Frame:
    """Grayscale raster with intensities in [0, 1]."""

    pixels: np.ndarray
    index: int | None = None

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64)
        if pixels.ndim != 2 or pixels.size == 0:
            raise DimensionError(f"frame must be a non-empty 2D array, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ParameterError("frame intensities must lie in [0, 1]")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class WindowSpec:
    """Square window of ``side`` pixels whose top-left pixel is ``(x, y)``."""

    x: int
    y: int
    side: int

    def __post_init__(self):
        if self.side <= 0:
            raise ParameterError(f"window side must be positive, got {self.side}")

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.side), slice(self.x, self.x + self.side)

    def contains(self, x: int, y: int) -> bool:
        return self.x <= x < self.x + self.side and self.y <= y < self.y + self.side


@dataclass(frozen=True)
class ComponentStats:
    pixel_count: int
    centroid_x: float
    centroid_y: float
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive


def as_mask(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2D, got shape {mask.shape}")
    return mask.astype(bool, copy=False)


def _check_center(shape, center):
    x, y = int(center[0]), int(center[1])
    h, w = shape
    if not (0 <= x < w and 0 <= y < h):
        raise BoundsError(f"point ({x}, {y}) outside {w}x{h} raster")
    return x, y


def window_at(shape: tuple[int, int], center, side: int) -> WindowSpec:
    """Window of ``side`` centred on ``center``, origin clamped into the raster."""
    h, w = shape
    if side <= 0:
        raise ParameterError(f"window side must be positive, got {side}")
    if side > min(w, h):
        raise DimensionError(f"window side {side} exceeds {w}x{h} raster")
    x, y = _check_center(shape, center)
    ox = min(max(x - side // 2, 0), w - side)
    oy = min(max(y - side // 2, 0), h - side)
    return WindowSpec(ox, oy, side)


def crop_window(frame: Frame, center, side: int) -> tuple[Frame, WindowSpec]:
    window = window_at(frame.shape, center, side)
    return Frame(frame.pixels[window.slices]), window


def paste_mask(global_mask: np.ndarray, local: np.ndarray, window: WindowSpec) -> np.ndarray:
    """Return a copy of ``global_mask`` with the window region replaced by ``local``."""
    global_mask = as_mask(global_mask)
    local = as_mask(local)
    if local.shape != (window.side, window.side):
        raise DimensionError(f"local mask {local.shape} does not match window side {window.side}")
    h, w = global_mask.shape
    if window.x < 0 or window.y < 0 or window.x + window.side > w or window.y + window.side > h:
        raise DimensionError(f"window {window} does not fit inside {w}x{h} mask")
    out = global_mask.copy()
    out[window.slices] = local
    return out


def axis_origins(extent: int, side: int, stride: int) -> list[int]:
    """Tile origins along one axis; the last one is clamped to ``extent - side``."""
    if stride <= 0:
        raise ParameterError(f"stride must be positive, got {stride}")
    if stride > side:
        raise ParameterError(f"stride {stride} exceeds tile side {side}")
    if side > extent:
        raise DimensionError(f"tile side {side} exceeds extent {extent}")
    origins = list(range(0, extent - side + 1, stride))
    if origins[-1] != extent - side:
        origins.append(extent - side)
    return origins


def tile_windows(shape: tuple[int, int], side: int, stride: int) -> list[WindowSpec]:
    h, w = shape
    return [WindowSpec(x, y, side) for y in axis_origins(h, side, stride) for x in axis_origins(w, side, stride)]


def tile(frame: Frame, side: int, stride: int) -> list[tuple[Frame, WindowSpec]]:
    """Cover ``frame`` with ``side`` x ``side`` tiles, row-major order."""
    return [(Frame(frame.pixels[win.slices]), win) for win in tile_windows(frame.shape, side, stride)]


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    """Source index nearest to each output cell centre (ties go to the higher index)."""
    i = np.arange(n_out)
    return np.minimum(((2 * i + 1) * n_in) // (2 * n_out), n_in - 1)


def resize_mask_nearest(mask: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    mask = as_mask(mask)
    if out_w < 1 or out_h < 1:
        raise ParameterError(f"output size must be at least 1x1, got {out_w}x{out_h}")
    h, w = mask.shape
    return mask[np.ix_(nearest_indices(h, out_h), nearest_indices(w, out_w))]


def label_components(mask: np.ndarray) -> tuple[np.ndarray, list[ComponentStats]]:
    """8-connected labelling.

    Labels are renumbered ``1..n`` in order of each component's first
    row-major pixel; background is 0.
    """
    mask = as_mask(mask)
    raw, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return np.zeros(mask.shape, dtype=np.int32), []
    flat = raw.ravel()
    fg = np.flatnonzero(flat)
    uniq, first = np.unique(flat[fg], return_index=True)
    order = np.argsort(fg[first], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[uniq[order]] = np.arange(1, n + 1, dtype=np.int32)
    labels = remap[raw]

    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    counts = np.bincount(lab, minlength=n + 1)
    sx = np.bincount(lab, weights=xs, minlength=n + 1)
    sy = np.bincount(lab, weights=ys, minlength=n + 1)
    stats = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        stats.append(
            ComponentStats(
                pixel_count=int(counts[k]),
                centroid_x=float(sx[k] / counts[k]),
                centroid_y=float(sy[k] / counts[k]),
                bbox=(sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1),
            )
        )
    return labels, stats


def connected_components(mask: np.ndarray) -> list[ComponentStats]:
    return label_components(mask)[1]


# --------------------------------------------------------------------------
# PNG I/O
# --------------------------------------------------------------------------

def load_frame(path, index: int | None = None) -> Frame:
    """Load an 8- or 16-bit single-channel PNG, scaled to [0, 1]."""
    path = Path(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image {path}")
    if raw.ndim != 2:
        raise DimensionError(f"{path}: expected a single-channel image, got shape {raw.shape}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DimensionError(f"{path}: unsupported pixel type {raw.dtype}")
    return Frame(raw.astype(np.float64) / scale, index=index)


def save_frame(path, frame: Frame, bits: int = 16) -> None:
    if bits == 16:
        raw = np.round(frame.pixels * 65535.0).astype(np.uint16)
    elif bits == 8:
        raw = np.round(frame.pixels * 255.0).astype(np.uint8)
    else:
        raise ParameterError(f"bits must be 8 or 16, got {bits}")
    write_png(path, raw)


def load_mask(path) -> np.ndarray:
    path = Path(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read mask {path}")
    if raw.ndim != 2:
        raise DimensionError(f"{path}: expected a single-channel mask, got shape {raw.shape}")
    return raw > 0


def save_mask(path, mask: np.ndarray) -> None:
    write_png(path, as_mask(mask).astype(np.uint8) * 255)


def write_png(path, raw: np.ndarray) -> None:
    path = Path(path)
    ok = cv2.imwrite(str(path), raw)
    if not ok:
        raise OSError(f"failed to write {path}")
