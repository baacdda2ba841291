"""Multi-level ensemble and whole-sequence orchestration."""
from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backend import BackendConfig, TargetDescriptor, make_backend
from .dataio import load_annotation, mask_name, write_outputs
from .errors import DimensionError, FrameError, IrstsError, ParameterError, ValidationError
from .focusing import focus_segment
from .imaging import Frame, as_mask, load_frame
from .matching import ConfidenceMap, PromptPoint, confidence_map, extract_prompt, extract_topk, fuse_confidence, prepare_reference, refine_prompt, REFINEMENTS

log = logging.getLogger(__name__)

MIN_SIDE = 16


@dataclass
class PipelineConfig:
    divisors: tuple[int, ...] = (2, 3, 4)
    stride_fraction: float = 1.0
    backend: BackendConfig = field(default_factory=BackendConfig)
    references: list[int] | None = None
    topk: int = 1
    output_dir: str | None = None
    emit_confidence: bool = False
    keep_going: bool = False
    workers: int = 1
    prompt_refinement: str = "peak"

    def __post_init__(self):
        self.divisors = tuple(self.divisors)
        check_divisors(self.divisors)
        if not 0.0 < self.stride_fraction <= 1.0:
            raise ParameterError(f"stride_fraction must be in (0, 1], got {self.stride_fraction}")
        if self.topk < 1:
            raise ParameterError(f"topk must be >= 1, got {self.topk}")
        if self.prompt_refinement not in REFINEMENTS:
            raise ParameterError(f"prompt_refinement must be one of {REFINEMENTS}, got {self.prompt_refinement!r}")
        if self.workers < 1:
            raise ParameterError(f"workers must be >= 1, got {self.workers}")

    def stride_for(self, side: int) -> int:
        return max(1, int(round(side * self.stride_fraction)))


def check_divisors(divisors) -> None:
    if len(divisors) < 1:
        raise ParameterError("need at least one level divisor")
    if any(not isinstance(d, int) or d < 2 for d in divisors):
        raise ParameterError(f"level divisors must be integers >= 2, got {list(divisors)}")
    if len(set(divisors)) != len(divisors):
        raise ParameterError(f"level divisors must be distinct, got {list(divisors)}")


@dataclass
class LevelResult:
    side: int
    confidence: ConfidenceMap
    prompts: list[PromptPoint]
    mask: np.ndarray

    @property
    def prompt(self) -> PromptPoint:
        return self.prompts[0]


def level_sides(frame_height: int, divisors, frame_width: int | None = None) -> list[int]:
    """Window side per level: ``floor(H / d)``, at least 16 pixels."""
    check_divisors(divisors)
    limit = frame_height if frame_width is None else min(frame_height, frame_width)
    sides = [max(frame_height // d, MIN_SIDE) for d in divisors]
    for s in sides:
        if s > limit:
            raise DimensionError(f"level side {s} exceeds frame size {frame_width}x{frame_height}")
    return sides


def vote(masks) -> np.ndarray:
    """Per-pixel strict majority over any number of masks; ties go to background."""
    masks = [as_mask(m) for m in masks]
    if not masks:
        raise ParameterError("need at least one mask to vote")
    shape = masks[0].shape
    for m in masks[1:]:
        if m.shape != shape:
            raise DimensionError(f"mask shapes differ: {shape} vs {m.shape}")
    counts = np.sum(masks, axis=0, dtype=np.int32)
    return 2 * counts > len(masks)


def majority_vote(masks) -> np.ndarray:
    """Per-pixel mode of exactly three masks."""
    if len(masks) != 3:
        raise ParameterError(f"majority_vote takes exactly 3 masks, got {len(masks)}")
    return vote(masks)


class _Serialized:
    """Funnels calls to a backend that is not safe for concurrent use."""

    thread_safe = True

    def __init__(self, backend):
        self._backend = backend
        self._lock = threading.Lock()

    def encode(self, window):
        with self._lock:
            return self._backend.encode(window)

    def segment_at(self, window, prompt):
        with self._lock:
            return self._backend.segment_at(window, prompt)


def segment_frame(
    frame: Frame,
    descriptors: list[list[TargetDescriptor]],
    config: PipelineConfig,
    backend,
) -> tuple[np.ndarray, list[LevelResult]]:
    """Segment one frame; ``descriptors[k]`` holds the reference descriptors of level ``k``."""
    levels = []
    for k, level_desc in enumerate(descriptors):
        side = level_desc[0].source_window.side
        try:
            stride = config.stride_for(side)
            cmap = fuse_confidence([confidence_map(frame, d, side, stride, backend) for d in level_desc])
            prompts = [extract_prompt(cmap)] if config.topk == 1 else extract_topk(cmap, config.topk)
            prompts = [refine_prompt(cmap, p, frame, config.prompt_refinement) for p in prompts]
            mask = np.zeros(frame.shape, dtype=bool)
            for p in prompts:
                mask |= focus_segment(frame, p, side, backend)
        except IrstsError as exc:
            raise FrameError(frame.index, f"level {k} (side {side}): {exc}") from exc
        levels.append(LevelResult(side, cmap, prompts, mask))
    return vote([lv.mask for lv in levels]), levels


@dataclass
class FrameResult:
    index: int
    mask: np.ndarray | None
    levels: list[LevelResult]
    seconds: float
    error: str | None = None


@dataclass
class RunResult:
    sequence_id: str
    sides: list[int]
    divisors: tuple[int, ...]
    reference_frames: list[int]
    backend_kind: str
    frames: list[FrameResult]

    def summary(self) -> dict:
        """Machine-readable run record; contains nothing schedule- or clock-dependent."""
        frames = []
        for fr in self.frames:
            entry = {"frame_index": fr.index, "status": "ok" if fr.error is None else "failed"}
            if fr.error is None:
                entry["mask"] = mask_name(fr.index)
                entry["levels"] = [
                    {
                        "side": lv.side,
                        "prompts": [{"x": p.x, "y": p.y, "confidence": p.confidence} for p in lv.prompts],
                    }
                    for lv in fr.levels
                ]
            else:
                entry["error"] = fr.error
            frames.append(entry)
        return {
            "sequence_id": self.sequence_id,
            "backend": self.backend_kind,
            "divisors": list(self.divisors),
            "level_sides": self.sides,
            "reference_frames": self.reference_frames,
            "frames": frames,
            "failed_frames": [fr.index for fr in self.frames if fr.error is not None],
        }

    @property
    def masks(self) -> dict[int, np.ndarray]:
        return {fr.index: fr.mask for fr in self.frames if fr.mask is not None}


def _select_references(manifest, wanted):
    refs = manifest.references
    if wanted is None:
        return refs
    chosen = [r for r in refs if r.frame_index in set(wanted)]
    missing = set(wanted) - {r.frame_index for r in chosen}
    if missing:
        raise ValidationError(f"manifest has no reference entry for frame(s) {sorted(missing)}")
    return chosen


def run_sequence(manifest, config: PipelineConfig, backend=None) -> RunResult:
    """Segment every non-reference frame of ``manifest``.

    All frames and annotations are loaded and validated before any model
    call. Per-level descriptors are prepared once and reused for every
    frame.
    """
    frames = [load_frame(p, index=i) for i, p in enumerate(manifest.frames)]
    shape = frames[0].shape
    for f in frames[1:]:
        if f.shape != shape:
            raise ValidationError(f"frame {f.index} has shape {f.shape}, expected {shape}")
    refs = _select_references(manifest, config.references)
    ref_pairs = []
    for r in refs:
        ref_frame = frames[r.frame_index] if r.frame_index is not None else load_frame(r.image)
        ref_pairs.append((ref_frame, load_annotation(r.annotation, ref_frame)))
    sides = level_sides(shape[0], config.divisors, shape[1])
    for ref_frame, _ in ref_pairs:
        if min(ref_frame.shape) < max(sides):
            raise ValidationError(f"reference frame {ref_frame.shape} smaller than level side {max(sides)}")

    if backend is None:
        backend = make_backend(config.backend)
    if config.workers > 1 and not getattr(backend, "thread_safe", False):
        backend = _Serialized(backend)

    descriptors = [[prepare_reference(f, a, side, backend, backend) for f, a in ref_pairs] for side in sides]

    ref_indices = sorted({r.frame_index for r in refs if r.frame_index is not None})
    todo = [f for f in frames if f.index not in ref_indices]

    def work(frame):
        t0 = time.perf_counter()
        try:
            mask, levels = segment_frame(frame, descriptors, config, backend)
        except FrameError as exc:
            if not config.keep_going:
                raise
            log.warning("%s", exc)
            return FrameResult(frame.index, None, [], time.perf_counter() - t0, str(exc))
        return FrameResult(frame.index, mask, levels, time.perf_counter() - t0)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, todo))
    else:
        results = [work(f) for f in todo]

    result = RunResult(
        sequence_id=manifest.sequence_id,
        sides=sides,
        divisors=config.divisors,
        reference_frames=ref_indices,
        backend_kind=config.backend.kind,
        frames=sorted(results, key=lambda r: r.index),
    )
    if config.output_dir is not None:
        write_outputs(result, Path(config.output_dir), emit_confidence=config.emit_confidence)
    return result
