"""Sequence manifests, annotations, run configuration and output persistence.

Manifests, annotations and configs are YAML documents. Every relative path
inside a file resolves against that file's directory.

Manifest::

    sequence_id: seq_000
    frames: [frames/00000.png, frames/00001.png, ...]   # order is authoritative
    references:
      - {frame: 0, annotation: annotations/ref_00000.yaml}
      # a reference from another sequence:
      - {image: ../other/frames/00000.png, annotation: ../other/annotations/ref_00000.yaml}
    gt_dir: gt                                           # optional

Annotation::

    {kind: point, point: [x, y]}
    {kind: bbox, bbox: [x0, y0, x1, y1]}     # half-open: columns x0..x1-1
    {kind: mask, mask_path: ref_mask.png}
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ValidationError
from .imaging import Frame, load_mask, save_mask, write_png

log = logging.getLogger(__name__)

SUMMARY_NAME = "summary.json"
TIMINGS_NAME = "timings.json"


def mask_name(frame_index: int) -> str:
    return f"mask_{frame_index:05d}.png"


def confidence_name(frame_index: int, level: int) -> str:
    return f"conf_{frame_index:05d}_{level}.png"


def _read_yaml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ValidationError(f"{path}:{where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    return data


def _field(data: dict, key: str, source, kind=None, required=True):
    if key not in data:
        if required:
            raise ValidationError(f"{source}: missing field '{key}'")
        return None
    value = data[key]
    if kind is not None and not isinstance(value, kind):
        raise ValidationError(f"{source}: field '{key}' has wrong type {type(value).__name__}")
    return value


# --------------------------------------------------------------------------
# annotations
# --------------------------------------------------------------------------

@dataclass
class Annotation:
    kind: str
    point: tuple[int, int] | None = None
    bbox: tuple[int, int, int, int] | None = None
    mask_path: Path | None = None
    mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    def validate(self, width: int, height: int) -> None:
        present = {"point": self.point is not None, "bbox": self.bbox is not None, "mask": self.mask is not None}
        if self.kind not in present:
            raise ValidationError(f"unknown annotation kind {self.kind!r}")
        extra = [k for k, v in present.items() if v and k != self.kind]
        if not present[self.kind] or extra:
            raise ValidationError(f"{self.kind} annotation must carry exactly its own field (extra: {extra})")
        if self.kind == "point":
            x, y = self.point
            if not (0 <= x < width and 0 <= y < height):
                raise ValidationError(f"point ({x}, {y}) outside {width}x{height} reference")
        elif self.kind == "bbox":
            x0, y0, x1, y1 = self.bbox
            if x1 <= x0 or y1 <= y0:
                raise ValidationError(f"bbox {list(self.bbox)} has zero width or height")
            if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
                raise ValidationError(f"bbox {list(self.bbox)} outside {width}x{height} reference")
        else:
            if self.mask.shape != (height, width):
                raise ValidationError(f"mask shape {self.mask.shape} does not match {width}x{height} reference")
            if not self.mask.any():
                raise ValidationError(f"mask annotation {self.mask_path} is empty")

    def center(self) -> tuple[int, int]:
        if self.kind == "point":
            return int(self.point[0]), int(self.point[1])
        if self.kind == "bbox":
            x0, y0, x1, y1 = self.bbox
            return (x0 + x1 - 1) // 2, (y0 + y1 - 1) // 2
        ys, xs = np.nonzero(self.mask)
        return int(np.floor(xs.mean() + 0.5)), int(np.floor(ys.mean() + 0.5))


def _int_tuple(value, n, source, key):
    if not isinstance(value, (list, tuple)) or len(value) != n or not all(isinstance(v, int) for v in value):
        raise ValidationError(f"{source}: field '{key}' must be a list of {n} integers")
    return tuple(value)


def load_annotation(path, reference: Frame) -> Annotation:
    path = Path(path)
    data = _read_yaml(path)
    kind = _field(data, "kind", path, str)
    if kind == "point":
        ann = Annotation("point", point=_int_tuple(_field(data, "point", path), 2, path, "point"))
    elif kind == "bbox":
        ann = Annotation("bbox", bbox=_int_tuple(_field(data, "bbox", path), 4, path, "bbox"))
    elif kind == "mask":
        mask_path = (path.parent / _field(data, "mask_path", path, str)).resolve()
        if not mask_path.is_file():
            raise ValidationError(f"{path}: mask file not found: {mask_path}")
        ann = Annotation("mask", mask_path=mask_path, mask=load_mask(mask_path))
    else:
        raise ValidationError(f"{path}: unknown annotation kind {kind!r}")
    extra = set(data) - {"kind", "point", "bbox", "mask_path"}
    if extra or sum(k in data for k in ("point", "bbox", "mask_path")) != 1:
        raise ValidationError(f"{path}: {kind} annotation must carry exactly its own field")
    ann.validate(reference.width, reference.height)
    return ann


def save_annotation(path, annotation: Annotation) -> None:
    path = Path(path)
    if annotation.kind == "point":
        data = {"kind": "point", "point": list(annotation.point)}
    elif annotation.kind == "bbox":
        data = {"kind": "bbox", "bbox": list(annotation.bbox)}
    else:
        mask_path = Path(annotation.mask_path)
        if annotation.mask is not None:
            save_mask(mask_path, annotation.mask)
        data = {"kind": "mask", "mask_path": os.path.relpath(mask_path, path.parent)}
    path.write_text(yaml.safe_dump(data, sort_keys=False))


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceEntry:
    annotation: Path
    frame_index: int | None = None
    image: Path | None = None


@dataclass
class SequenceManifest:
    sequence_id: str
    frames: list[Path]
    references: list[ReferenceEntry]
    gt_dir: Path | None = None

    def reference_indices(self) -> list[int]:
        return [r.frame_index for r in self.references if r.frame_index is not None]


def load_manifest(path) -> SequenceManifest:
    path = Path(path)
    data = _read_yaml(path)
    root = path.parent
    seq_id = _field(data, "sequence_id", path, str)
    raw_frames = _field(data, "frames", path, list)
    if len(raw_frames) < 2:
        raise ValidationError(f"{path}: field 'frames' needs at least 2 entries, got {len(raw_frames)}")
    frames = []
    for i, f in enumerate(raw_frames):
        if not isinstance(f, str):
            raise ValidationError(f"{path}: frames[{i}] must be a path string")
        p = (root / f).resolve()
        if not p.is_file():
            raise ValidationError(f"{path}: frames[{i}] not found: {p}")
        frames.append(p)
    seen = set()
    for p in frames:
        if p in seen:
            log.warning("%s: duplicate frame path %s", path, p)
        seen.add(p)

    raw_refs = _field(data, "references", path, list)
    if not raw_refs:
        raise ValidationError(f"{path}: field 'references' is empty")
    refs = []
    for i, r in enumerate(raw_refs):
        where = f"{path}: references[{i}]"
        if not isinstance(r, dict):
            raise ValidationError(f"{where} must be a mapping")
        ann = (root / _field(r, "annotation", where, str)).resolve()
        if not ann.is_file():
            raise ValidationError(f"{where}: annotation not found: {ann}")
        if ("frame" in r) == ("image" in r):
            raise ValidationError(f"{where} needs exactly one of 'frame' or 'image'")
        if "frame" in r:
            idx = r["frame"]
            if not isinstance(idx, int) or isinstance(idx, bool):
                raise ValidationError(f"{where}: field 'frame' must be an integer")
            if not 0 <= idx < len(frames):
                raise ValidationError(f"{where}: frame index {idx} out of range for {len(frames)} frames")
            refs.append(ReferenceEntry(annotation=ann, frame_index=idx))
        else:
            img = (root / _field(r, "image", where, str)).resolve()
            if not img.is_file():
                raise ValidationError(f"{where}: image not found: {img}")
            refs.append(ReferenceEntry(annotation=ann, image=img))

    gt_dir = None
    if data.get("gt_dir") is not None:
        gt_dir = (root / _field(data, "gt_dir", path, str)).resolve()
    return SequenceManifest(seq_id, frames, refs, gt_dir)


def save_manifest(manifest: SequenceManifest, path) -> None:
    path = Path(path).resolve()
    root = path.parent

    def rel(p):
        return os.path.relpath(p, root)

    refs = []
    for r in manifest.references:
        entry = {"frame": r.frame_index} if r.frame_index is not None else {"image": rel(r.image)}
        entry["annotation"] = rel(r.annotation)
        refs.append(entry)
    data = {
        "sequence_id": manifest.sequence_id,
        "frames": [rel(f) for f in manifest.frames],
        "references": refs,
    }
    if manifest.gt_dir is not None:
        data["gt_dir"] = rel(manifest.gt_dir)
    path.write_text(yaml.safe_dump(data, sort_keys=False))


def load_config(path, **overrides):
    """Build a ``PipelineConfig`` from a YAML file with ``pipeline`` and ``backend`` sections."""
    from .backend import BackendConfig
    from .ensemble import PipelineConfig

    data = _read_yaml(path) if path is not None else {}
    backend = dict(data.get("backend") or {})
    pipeline = dict(data.get("pipeline") or {})
    base = Path(path).parent if path is not None else Path(".")
    for key in ("encoder_path", "decoder_path"):
        if backend.get(key):
            backend[key] = str((base / backend[key]).resolve())
    for key in ("mean", "std"):
        if key in backend:
            backend[key] = tuple(backend[key])
    if overrides.get("backend_kind"):
        backend["kind"] = overrides.pop("backend_kind")
    overrides.pop("backend_kind", None)
    try:
        backend_cfg = BackendConfig(**backend)
        pipeline.update({k: v for k, v in overrides.items() if v is not None})
        if "divisors" in pipeline:
            pipeline["divisors"] = tuple(pipeline["divisors"])
        return PipelineConfig(backend=backend_cfg, **pipeline)
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------

def _prepare_dir(out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror}") from exc
    if not out_dir.is_dir() or not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")


def write_outputs(result, out_dir, emit_confidence: bool = False) -> None:
    """Persist masks, optional confidence maps, the summary and per-frame timings."""
    out_dir = Path(out_dir)
    _prepare_dir(out_dir)
    try:
        for fr in result.frames:
            if fr.mask is None:
                continue
            save_mask(out_dir / mask_name(fr.index), fr.mask)
            if emit_confidence:
                for k, level in enumerate(fr.levels):
                    write_png(out_dir / confidence_name(fr.index, k), level.confidence.to_uint16())
        (out_dir / SUMMARY_NAME).write_text(json.dumps(result.summary(), indent=2) + "\n")
        timings = {"frames": [{"frame_index": fr.index, "seconds": fr.seconds} for fr in result.frames]}
        (out_dir / TIMINGS_NAME).write_text(json.dumps(timings, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing outputs to {out_dir}: {exc}") from exc
