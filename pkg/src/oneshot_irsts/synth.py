"""Synthetic infrared-like sequences and brute-force reference oracles.

Random numbers come from numpy's PCG64 bit generator seeded through
``SeedSequence``; each sequence component (background, targets, the noise of
each frame) draws from its own spawned child stream, so any frame can be
regenerated independently.

Targets are Gaussian blobs whose half-peak contour has the sampled radius,
so the ground-truth mask (intensity >= half the peak amplitude) is exactly
the set of pixels within ``radius`` of the planted centre.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml
from scipy import ndimage

from .dataio import Annotation, ReferenceEntry, SequenceManifest, save_annotation, save_manifest
from .errors import DimensionError, ParameterError
from .imaging import Frame, save_frame, save_mask
from .matching import ConfidenceMap

BACKGROUNDS = ("flat", "gradient", "filtered-noise")


@dataclass
class SynthSpec:
    frames: int = 30
    size: int = 256
    background: str = "filtered-noise"
    targets: int = 1
    radius: tuple[float, float] = (2.0, 4.0)
    amplitude: float = 0.5
    drift: float = 0.25
    target_speed: float = 1.0
    noise_std: float = 0.003
    background_level: float = 0.25
    background_contrast: float = 0.01
    blur: int = 9
    seed: int = 0

    def __post_init__(self):
        self.radius = tuple(float(r) for r in self.radius)
        if self.frames < 2:
            raise ParameterError(f"need at least 2 frames, got {self.frames}")
        if self.background not in BACKGROUNDS:
            raise ParameterError(f"background must be one of {BACKGROUNDS}, got {self.background!r}")
        if self.targets < 0:
            raise ParameterError("target count must be >= 0")
        lo, hi = self.radius
        if lo < 1 or hi < lo:
            raise ParameterError(f"radius range must satisfy 1 <= lo <= hi, got {self.radius}")
        if self.amplitude <= 0:
            raise ParameterError("amplitude must be positive")
        if self.drift < 0 or self.target_speed < 0 or self.noise_std < 0:
            raise ParameterError("drift, target_speed and noise_std must be >= 0")
        if self.blur < 1:
            raise ParameterError("blur width must be >= 1")
        if 2 * _margin(hi) + 1 > self.size:
            raise DimensionError(f"target radius {hi} too large for {self.size}x{self.size} frames")

    @classmethod
    def from_yaml(cls, path) -> "SynthSpec":
        data = yaml.safe_load(Path(path).read_text()) or {}
        return cls(**data)


@dataclass
class SyntheticSequence:
    spec: SynthSpec
    frames: list[Frame]
    masks: list[np.ndarray]
    centers: list[list[tuple[float, float]]]
    radii: list[float] = field(default_factory=list)


def _margin(radius: float) -> int:
    return int(math.ceil(2.0 * radius)) + 1


def _reflect(p: float, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return lo
    q = (p - lo) % (2.0 * span)
    return lo + (q if q <= span else 2.0 * span - q)


def _background_fn(spec: SynthSpec, rng: np.random.Generator):
    n = spec.size
    theta = rng.uniform(0.0, 2.0 * math.pi)
    ux, uy = math.cos(theta), math.sin(theta)
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)

    if spec.background == "flat":
        return lambda t: np.full((n, n), spec.background_level)

    if spec.background == "gradient":
        phi = rng.uniform(0.0, 2.0 * math.pi)
        gx, gy = math.cos(phi), math.sin(phi)

        def gradient(t):
            ramp = ((xx + ux * spec.drift * t) * gx + (yy + uy * spec.drift * t) * gy) / n
            return spec.background_level + spec.background_contrast * ramp

        return gradient

    travel = spec.drift * (spec.frames - 1)
    margin = int(math.ceil(travel)) + 2
    canvas = rng.standard_normal((n + 2 * margin, n + 2 * margin))
    canvas = ndimage.uniform_filter(canvas, size=spec.blur, mode="wrap")
    canvas = (canvas - canvas.mean()) / canvas.std()

    def noise(t):
        coords = [yy + margin + uy * spec.drift * t, xx + margin + ux * spec.drift * t]
        return spec.background_level + spec.background_contrast * ndimage.map_coordinates(canvas, coords, order=1)

    return noise


def generate_sequence(spec: SynthSpec) -> SyntheticSequence:
    root = np.random.SeedSequence(spec.seed)
    bg_seq, tgt_seq, noise_seq = root.spawn(3)
    background = _background_fn(spec, np.random.Generator(np.random.PCG64(bg_seq)))
    trng = np.random.Generator(np.random.PCG64(tgt_seq))
    frame_seqs = noise_seq.spawn(spec.frames)

    n = spec.size
    tracks = []
    for _ in range(spec.targets):
        r = float(trng.uniform(*spec.radius))
        m = _margin(r)
        x0, y0 = trng.uniform(m, n - 1 - m, size=2)
        phi = trng.uniform(0.0, 2.0 * math.pi)
        vx, vy = spec.target_speed * math.cos(phi), spec.target_speed * math.sin(phi)
        tracks.append((r, m, x0, y0, vx, vy))

    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    frames, masks, centers = [], [], []
    for t in range(spec.frames):
        img = background(t)
        gt = np.zeros((n, n), dtype=bool)
        frame_centers = []
        for r, m, x0, y0, vx, vy in tracks:
            cx = _reflect(x0 + vx * t, m, n - 1 - m)
            cy = _reflect(y0 + vy * t, m, n - 1 - m)
            d2 = (xx - cx) ** 2 + (yy - cy) ** 2
            sigma2 = r * r / (2.0 * math.log(2.0))
            img = img + spec.amplitude * np.exp(-d2 / (2.0 * sigma2))
            gt |= d2 <= r * r
            frame_centers.append((cx, cy))
        if spec.noise_std > 0:
            frng = np.random.Generator(np.random.PCG64(frame_seqs[t]))
            img = img + frng.normal(0.0, spec.noise_std, size=img.shape)
        frames.append(Frame(np.clip(img, 0.0, 1.0), index=t))
        masks.append(gt)
        centers.append(frame_centers)
    return SyntheticSequence(spec, frames, masks, centers, [tr[0] for tr in tracks])


def reference_annotation(seq: SyntheticSequence, index: int, kind: str, mask_path=None) -> Annotation:
    """Annotation of the first planted target of frame ``index``."""
    if kind == "mask":
        return Annotation("mask", mask_path=mask_path, mask=seq.masks[index])
    cx, cy = seq.centers[index][0]
    if kind == "point":
        return Annotation("point", point=(int(round(cx)), int(round(cy))))
    if kind == "bbox":
        ys, xs = np.nonzero(seq.masks[index])
        return Annotation("bbox", bbox=(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1))
    raise ParameterError(f"unknown annotation kind {kind!r}")


def write_sequence(
    seq: SyntheticSequence,
    out_dir,
    sequence_id: str = "synthetic",
    gt_dir=None,
    reference: int = 0,
    annotation: str = "mask",
) -> Path:
    """Write frames (16-bit PNG), GT masks, the reference annotation and a manifest."""
    out_dir = Path(out_dir)
    gt_dir = Path(gt_dir) if gt_dir is not None else out_dir / "gt"
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)
    frame_paths = []
    for t, (frame, mask) in enumerate(zip(seq.frames, seq.masks)):
        p = out_dir / "frames" / f"{t:05d}.png"
        save_frame(p, frame, bits=16)
        save_mask(gt_dir / f"mask_{t:05d}.png", mask)
        frame_paths.append(p.resolve())
    ann_path = out_dir / "annotations" / f"ref_{reference:05d}.yaml"
    ann = reference_annotation(seq, reference, annotation, mask_path=out_dir / "annotations" / f"ref_{reference:05d}_mask.png")
    save_annotation(ann_path, ann)
    (out_dir / "spec.yaml").write_text(yaml.safe_dump(_spec_dict(seq.spec), sort_keys=False))
    manifest = SequenceManifest(
        sequence_id=sequence_id,
        frames=frame_paths,
        references=[ReferenceEntry(annotation=ann_path.resolve(), frame_index=reference)],
        gt_dir=gt_dir.resolve(),
    )
    manifest_path = out_dir / "manifest.yaml"
    save_manifest(manifest, manifest_path)
    return manifest_path


def _spec_dict(spec: SynthSpec) -> dict:
    d = asdict(spec)
    d["radius"] = list(d["radius"])
    return d


def suite_seeds(seed: int, count: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def write_suite(spec: SynthSpec, count: int, out_dir, annotation: str = "mask", reference: int = 0) -> list[Path]:
    """``count`` sequences as ``out_dir/seq_NNN/`` with ground truth in ``out_dir/gt/seq_NNN/``."""
    out_dir = Path(out_dir)
    paths = []
    for k, s in enumerate(suite_seeds(spec.seed, count)):
        name = f"seq_{k:03d}"
        seq = generate_sequence(replace(spec, seed=s))
        paths.append(
            write_sequence(seq, out_dir / name, sequence_id=name, gt_dir=out_dir / "gt" / name,
                           reference=reference, annotation=annotation)
        )
    return paths


# --------------------------------------------------------------------------
# brute-force oracles
# --------------------------------------------------------------------------

def brute_force_confidence(test: Frame, descriptor, side: int, extractor, stride: int | None = None) -> ConfidenceMap:
    """Confidence map by explicit loops over tiles, cells and pixels."""
    stride = side if stride is None else stride
    h, w = test.shape
    if side > min(h, w) or stride < 1 or stride > side:
        raise DimensionError(f"invalid tiling side={side} stride={stride} for {w}x{h}")

    def origins(extent):
        out = []
        pos = 0
        while pos + side <= extent:
            out.append(pos)
            pos += stride
        if out[-1] + side < extent:
            out.append(extent - side)
        return out

    target = [float(v) for v in descriptor.pooled]
    best = [[-math.inf] * w for _ in range(h)]
    for oy in origins(h):
        for ox in origins(w):
            grid = extractor.encode(Frame(test.pixels[oy:oy + side, ox:ox + side]))
            gh, gw, dim = grid.values.shape
            if dim != len(target):
                raise DimensionError(f"feature dim {dim} does not match descriptor dim {len(target)}")
            cell_score = [[0.0] * gw for _ in range(gh)]
            for cy in range(gh):
                for cx in range(gw):
                    v = grid.values[cy, cx]
                    dot = 0.0
                    sq = 0.0
                    for k in range(dim):
                        dot += float(v[k]) * target[k]
                        sq += float(v[k]) * float(v[k])
                    c = dot / math.sqrt(sq) if sq > 0.0 else 0.0
                    cell_score[cy][cx] = min(1.0, max(-1.0, c))
            for py in range(side):
                cy = min(int(Fraction(py) / grid.pitch), gh - 1)
                for px in range(side):
                    cx = min(int(Fraction(px) / grid.pitch), gw - 1)
                    s = cell_score[cy][cx]
                    if s > best[oy + py][ox + px]:
                        best[oy + py][ox + px] = s
    return ConfidenceMap(np.array(best, dtype=np.float64))


def brute_force_mode(masks) -> np.ndarray:
    """Per-pixel vote count; a pixel is set when more than half the masks set it."""
    masks = [np.asarray(m, dtype=bool) for m in masks]
    h, w = masks[0].shape
    for m in masks:
        if m.shape != (h, w):
            raise DimensionError("mask shapes differ")
    out = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            votes = 0
            for m in masks:
                if m[y, x]:
                    votes += 1
            out[y, x] = votes * 2 > len(masks)
    return out


def flood_fill_components(mask) -> list[list[tuple[int, int]]]:
    """8-connected components as lists of (x, y), found by stack flood fill in row-major order."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    seen = np.zeros_like(mask)
    comps = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            stack = [(x, y)]
            seen[y, x] = True
            members = []
            while stack:
                cx, cy = stack.pop()
                members.append((cx, cy))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        nx, ny = cx + dx, cy + dy
                        if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((nx, ny))
            comps.append(members)
    return comps


def brute_force_iou(pred, gt) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    p = {(x, y) for y, x in zip(*np.nonzero(pred))}
    g = {(x, y) for y, x in zip(*np.nonzero(gt))}
    union = p | g
    return 1.0 if not union else len(p & g) / len(union)


def brute_force_pd_fa(preds, gts, max_distance: float = 3.0) -> tuple[int, int, int, int]:
    """Returns ``(gt_targets, detected, false_pixels, total_pixels)``.

    Matching repeatedly takes the globally closest unmatched pair within
    ``max_distance`` (ties by gt order, then prediction order).
    """
    n_gt = detected = false_px = total = 0
    for pred, gt in zip(preds, gts):
        total += np.asarray(pred).size
        gcs = flood_fill_components(gt)
        pcs = flood_fill_components(pred)
        gc = [(sum(x for x, _ in c) / len(c), sum(y for _, y in c) / len(c)) for c in gcs]
        pc = [(sum(x for x, _ in c) / len(c), sum(y for _, y in c) / len(c)) for c in pcs]
        n_gt += len(gcs)
        free_g, free_p = set(range(len(gc))), set(range(len(pc)))
        while True:
            best = None
            for i in sorted(free_g):
                for j in sorted(free_p):
                    d = math.hypot(gc[i][0] - pc[j][0], gc[i][1] - pc[j][1])
                    if d <= max_distance and (best is None or d < best[0]):
                        best = (d, i, j)
            if best is None:
                break
            free_g.discard(best[1])
            free_p.discard(best[2])
            detected += 1
        false_px += sum(len(pcs[j]) for j in free_p)
    return n_gt, detected, false_px, total
