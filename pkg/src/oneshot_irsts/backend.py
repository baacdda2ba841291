"""Feature-encoder and point-prompt segmenter backends.

Two implementations share one duck-typed surface (``encode`` and
``segment_at``):

* :class:`MockBackend` - hand-crafted 8x8-cell statistics and a threshold
  flood fill. Pure and deterministic, used for every weight-free test.
* :class:`OnnxBackend` - runs an exported image encoder and mask decoder
  with ``onnxruntime``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Protocol

import cv2
import numpy as np
from scipy import ndimage

from .errors import BackendError, BoundsError, DimensionError, EmptyTargetError, ValidationError
from .imaging import Frame, WindowSpec, label_components

MOCK_CELL = 8
MOCK_DIM = 5


@dataclass(frozen=True)
class FeatureGrid:
    """Spatial feature grid of shape ``(grid_h, grid_w, dim)``.

    ``pitch`` is the number of window pixels per cell; pixel ``p`` maps to
    cell ``min(floor(p / pitch), n_cells - 1)``.
    """

    values: np.ndarray
    pitch: Fraction

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 1:
            raise DimensionError(f"feature grid must have shape (h, w, dim), got {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "pitch", Fraction(self.pitch))

    @property
    def grid_h(self) -> int:
        return self.values.shape[0]

    @property
    def grid_w(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def pixel_to_cell(self, n_pixels: int, axis: int = 1) -> np.ndarray:
        """Cell index of each of ``n_pixels`` along ``axis`` (0 = rows, 1 = columns)."""
        n_cells = self.values.shape[axis]
        p = np.arange(n_pixels)
        return np.minimum(p * self.pitch.denominator // self.pitch.numerator, n_cells - 1)


@dataclass(frozen=True)
class TargetDescriptor:
    masked_grid: FeatureGrid
    pooled: np.ndarray
    source_window: WindowSpec

    @property
    def dim(self) -> int:
        return self.pooled.shape[0]


class FeatureExtractor(Protocol):
    thread_safe: bool

    def encode(self, window: Frame) -> FeatureGrid: ...


class PromptSegmenter(Protocol):
    thread_safe: bool

    def segment_at(self, window: Frame, prompt: tuple[int, int]) -> np.ndarray: ...


def pool_target(masked: FeatureGrid) -> np.ndarray:
    """Mean of the non-zero cells of ``masked``, L2-normalised."""
    cells = masked.values.reshape(-1, masked.dim)
    nonzero = np.any(cells != 0.0, axis=1)
    if not nonzero.any():
        raise EmptyTargetError("masked feature grid has no non-zero cell")
    mean = cells[nonzero].mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise EmptyTargetError("pooled target feature has zero norm")
    return mean / norm


def _check_square(window: Frame) -> int:
    if window.width != window.height:
        raise DimensionError(f"window must be square, got {window.width}x{window.height}")
    return window.width


def _check_prompt(window: Frame, prompt) -> tuple[int, int]:
    x, y = int(prompt[0]), int(prompt[1])
    if not (0 <= x < window.width and 0 <= y < window.height):
        raise BoundsError(f"prompt ({x}, {y}) outside {window.width}x{window.height} window")
    return x, y


def keep_prompt_component(mask: np.ndarray, prompt: tuple[int, int]) -> np.ndarray:
    """Keep the 8-connected component holding ``prompt``, else the one nearest to it."""
    labels, stats = label_components(mask)
    if not stats:
        return np.zeros(mask.shape, dtype=bool)
    x, y = prompt
    label = labels[y, x]
    if label == 0:
        ys, xs = np.nonzero(labels)
        d2 = (xs - x) ** 2 + (ys - y) ** 2
        label = labels[ys[np.argmin(d2)], xs[np.argmin(d2)]]
    return labels == label


class MockBackend:
    """Deterministic stand-in for the foundation model.

    ``encode`` splits the window into 8x8-pixel cells (the last row/column
    of cells may be narrower) and describes each cell by
    ``(mean, std, mean |dx|, mean |dy|, max)``; gradients are forward
    differences between pixels of the same cell.

    ``segment_at`` flood-fills (8-connected) from the prompt over pixels
    with intensity >= window mean + one standard deviation. A prompt below
    that threshold, or a uniform window, yields the prompt pixel alone.
    """

    thread_safe = True
    cell = MOCK_CELL
    dim = MOCK_DIM

    def encode(self, window: Frame) -> FeatureGrid:
        side = _check_square(window)
        c = self.cell
        g = math.ceil(side / c)
        padded = np.full((g * c, g * c), np.nan)
        padded[:side, :side] = window.pixels
        blocks = padded.reshape(g, c, g, c).transpose(0, 2, 1, 3)  # (gy, gx, py, px)
        valid = ~np.isnan(blocks)
        count = valid.sum(axis=(2, 3))
        filled = np.where(valid, blocks, 0.0)
        mean = filled.sum(axis=(2, 3)) / count
        dev = np.where(valid, blocks - mean[..., None, None], 0.0)
        std = np.sqrt((dev * dev).sum(axis=(2, 3)) / count)
        gx = _mean_abs_diff(blocks, axis=3)
        gy = _mean_abs_diff(blocks, axis=2)
        peak = np.where(valid, blocks, -np.inf).max(axis=(2, 3))
        values = np.stack([mean, std, gx, gy, peak], axis=-1)
        return FeatureGrid(values, Fraction(c))

    def segment_at(self, window: Frame, prompt) -> np.ndarray:
        x, y = _check_prompt(window, prompt)
        pixels = window.pixels
        mask = np.zeros(pixels.shape, dtype=bool)
        threshold = pixels.mean() + pixels.std()
        # compare extremes: a constant window can still have a rounding-level std
        if pixels.max() == pixels.min() or pixels[y, x] < threshold:
            mask[y, x] = True
            return mask
        labels, _ = ndimage.label(pixels >= threshold, structure=np.ones((3, 3), dtype=bool))
        return labels == labels[y, x]


def _mean_abs_diff(blocks: np.ndarray, axis: int) -> np.ndarray:
    d = np.abs(np.diff(blocks, axis=axis))
    valid = ~np.isnan(d)
    n = valid.sum(axis=(2, 3))
    s = np.where(valid, d, 0.0).sum(axis=(2, 3))
    return np.where(n > 0, s / np.maximum(n, 1), 0.0)


# --------------------------------------------------------------------------
# model runtime
# --------------------------------------------------------------------------

@dataclass
class BackendConfig:
    kind: str = "mock"
    encoder_path: str | None = None
    decoder_path: str | None = None
    resolution: int = 1024
    replicate_channels: bool = True
    pixel_scale: float = 255.0
    mean: tuple[float, ...] = (123.675, 116.28, 103.53)
    std: tuple[float, ...] = (58.395, 57.12, 57.375)
    embedding_dim: int | None = None
    grid_size: int | None = None
    providers: list[str] = field(default_factory=lambda: ["CPUExecutionProvider"])

    def __post_init__(self):
        if self.kind not in ("mock", "model"):
            raise ValidationError(f"backend kind must be 'mock' or 'model', got {self.kind!r}")
        if self.kind == "model" and not (self.encoder_path and self.decoder_path):
            raise ValidationError("model backend requires both encoder_path and decoder_path")
        if self.resolution < 16:
            raise ValidationError(f"backend resolution must be >= 16, got {self.resolution}")
        channels = 3 if self.replicate_channels else 1
        if len(self.mean) != channels or len(self.std) != channels:
            raise ValidationError(f"mean/std need {channels} entries")


class OnnxBackend:
    """Encoder/decoder pair exported to ONNX.

    Encoder contract: ``float32[1, C, R, R]`` image in, ``[1, D, G, G]``
    feature grid out. Decoder contract: the encoder output plus
    ``point_coords[1, 1, 2]`` / ``point_labels[1, 1]`` in, mask logits
    ``[1, K, h, w]`` out (first mask used, thresholded at 0). Inputs of the
    standard SAM export (``mask_input``, ``has_mask_input``,
    ``orig_im_size``) are filled with neutral values when the graph asks
    for them.
    """

    # onnxruntime sessions support concurrent run() calls
    thread_safe = True

    def __init__(self, config: BackendConfig):
        self.config = config
        try:
            import onnxruntime as ort
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise BackendError("model backend needs the 'onnxruntime' package") from exc
        self._encoder = self._load(ort, config.encoder_path)
        self._decoder = self._load(ort, config.decoder_path)
        self._enc_input = self._encoder.get_inputs()[0].name

    def _load(self, ort, path):
        path = Path(path)
        if not path.is_file():
            raise BackendError(f"model artifact not found: {path}")
        try:
            return ort.InferenceSession(str(path), providers=self.config.providers)
        except Exception as exc:
            raise BackendError(f"failed to load model artifact {path}: {exc}") from exc

    def _preprocess(self, window: Frame) -> np.ndarray:
        r = self.config.resolution
        img = cv2.resize(window.pixels.astype(np.float32), (r, r), interpolation=cv2.INTER_LINEAR)
        img = img * np.float32(self.config.pixel_scale)
        channels = 3 if self.config.replicate_channels else 1
        img = np.repeat(img[None], channels, axis=0)
        mean = np.asarray(self.config.mean, dtype=np.float32)[:, None, None]
        std = np.asarray(self.config.std, dtype=np.float32)[:, None, None]
        return ((img - mean) / std)[None].astype(np.float32)

    def _embed(self, window: Frame) -> np.ndarray:
        try:
            out = self._encoder.run(None, {self._enc_input: self._preprocess(window)})[0]
        except Exception as exc:
            raise BackendError(f"encoder {self.config.encoder_path} failed: {exc}") from exc
        cfg = self.config
        if out.ndim != 4 or out.shape[0] != 1 or out.shape[2] != out.shape[3]:
            raise BackendError(
                f"encoder {cfg.encoder_path}: expected output shape (1, D, G, G), got {out.shape}"
            )
        if cfg.embedding_dim is not None and out.shape[1] != cfg.embedding_dim:
            raise BackendError(
                f"encoder {cfg.encoder_path}: expected embedding dim {cfg.embedding_dim}, got {out.shape[1]}"
            )
        if cfg.grid_size is not None and out.shape[2] != cfg.grid_size:
            raise BackendError(
                f"encoder {cfg.encoder_path}: expected grid {cfg.grid_size}, got {out.shape[2]}"
            )
        return out

    def encode(self, window: Frame) -> FeatureGrid:
        side = _check_square(window)
        emb = self._embed(window)
        return FeatureGrid(emb[0].transpose(1, 2, 0), Fraction(side, emb.shape[2]))

    def segment_at(self, window: Frame, prompt) -> np.ndarray:
        x, y = _check_prompt(window, prompt)
        side = _check_square(window)
        r = self.config.resolution
        emb = self._embed(window)
        feeds = {}
        for inp in self._decoder.get_inputs():
            name = inp.name
            if name == "image_embeddings":
                feeds[name] = emb.astype(np.float32)
            elif name == "point_coords":
                scale = r / side
                feeds[name] = np.array([[[x * scale, y * scale]]], dtype=np.float32)
            elif name == "point_labels":
                feeds[name] = np.ones((1, 1), dtype=np.float32)
            elif name == "mask_input":
                feeds[name] = np.zeros((1, 1, r // 4, r // 4), dtype=np.float32)
            elif name == "has_mask_input":
                feeds[name] = np.zeros((1,), dtype=np.float32)
            elif name == "orig_im_size":
                feeds[name] = np.array([r, r], dtype=np.float32)
            else:
                raise BackendError(f"decoder {self.config.decoder_path}: unsupported input {name!r}")
        try:
            logits = self._decoder.run(None, feeds)[0]
        except Exception as exc:
            raise BackendError(f"decoder {self.config.decoder_path} failed: {exc}") from exc
        if logits.ndim != 4 or logits.shape[0] != 1 or logits.shape[1] < 1:
            raise BackendError(
                f"decoder {self.config.decoder_path}: expected mask logits (1, K, h, w), got {logits.shape}"
            )
        plane = logits[0, 0].astype(np.float32)
        if plane.shape != (side, side):
            plane = cv2.resize(plane, (side, side), interpolation=cv2.INTER_LINEAR)
        return keep_prompt_component(plane > 0.0, (x, y))


def make_backend(config: BackendConfig | None = None):
    config = config or BackendConfig()
    if config.kind == "mock":
        return MockBackend()
    return OnnxBackend(config)
