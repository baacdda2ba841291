"""Build run manifests for an IRDST-style dataset.

Expected input layout (one directory per sequence, frame files numbered)::

    <root>/images/<seq>/<n>.png|bmp
    <root>/masks/<seq>/<n>.png|bmp

Frames are ordered by the integer in their file name (``2.png`` before
``10.png``), converted to single-channel 8-bit PNG and written next to the
ground truth, renamed ``mask_NNNNN.png`` so ``eval`` can pair them. The
reference annotation is the ground-truth mask of frame ``--reference``
(or a point / box derived from it).

    python scripts/irdst_to_manifest.py --root /data/IRDST --out /data/irdst_runs --annotation point
    for m in /data/irdst_runs/*/manifest.yaml; do
        oneshot-irsts run --manifest "$m" --backend model --config model.yaml --out preds/$(basename $(dirname $m))
    done
    oneshot-irsts eval --pred preds --gt /data/irdst_runs/gt
"""
from __future__ import annotations

import argparse
import logging
import re
from pathlib import Path

import cv2
import numpy as np

from oneshot_irsts.dataio import Annotation, ReferenceEntry, SequenceManifest, save_annotation, save_manifest
from oneshot_irsts.imaging import connected_components, save_mask, write_png

log = logging.getLogger("irdst")
IMAGE_SUFFIXES = {".png", ".bmp", ".jpg", ".tif", ".tiff"}


def _number(path: Path) -> int:
    m = re.search(r"(\d+)", path.stem)
    if m is None:
        raise ValueError(f"no frame number in {path.name}")
    return int(m.group(1))


def _images(d: Path) -> list[Path]:
    return sorted((p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=_number)


def _gray(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read {path}")
    if raw.ndim == 3:
        raw = cv2.cvtColor(raw[..., :3], cv2.COLOR_BGR2GRAY)
    return raw


def _annotation(mask: np.ndarray, kind: str, mask_path: Path) -> Annotation:
    if kind == "mask":
        return Annotation("mask", mask=mask, mask_path=mask_path)
    biggest = max(connected_components(mask), key=lambda c: c.pixel_count)
    if kind == "point":
        return Annotation("point", point=(int(round(biggest.centroid_x)), int(round(biggest.centroid_y))))
    x0, y0, x1, y1 = biggest.bbox
    return Annotation("bbox", bbox=(x0, y0, x1 + 1, y1 + 1))


def convert_sequence(image_dir: Path, mask_dir: Path, out_root: Path, reference: int, kind: str) -> Path | None:
    name = image_dir.name
    images = _images(image_dir)
    masks = {_number(p): p for p in _images(mask_dir)} if mask_dir.is_dir() else {}
    if len(images) < 2:
        log.warning("%s: fewer than 2 frames, skipped", name)
        return None
    seq_dir = out_root / name
    gt_dir = out_root / "gt" / name
    (seq_dir / "frames").mkdir(parents=True, exist_ok=True)
    (seq_dir / "annotations").mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)
    frames = []
    ref_mask = None
    for i, img in enumerate(images):
        out = seq_dir / "frames" / f"{i:05d}.png"
        write_png(out, _gray(img))
        frames.append(out.resolve())
        src = masks.get(_number(img))
        if src is None:
            log.warning("%s: no mask for %s", name, img.name)
            continue
        m = _gray(src) > 0
        save_mask(gt_dir / f"mask_{i:05d}.png", m)
        if i == reference:
            ref_mask = m
    if ref_mask is None or not ref_mask.any():
        log.warning("%s: reference frame %d has no target, skipped", name, reference)
        return None
    ann_path = seq_dir / "annotations" / f"ref_{reference:05d}.yaml"
    save_annotation(ann_path, _annotation(ref_mask, kind, seq_dir / "annotations" / f"ref_{reference:05d}_mask.png"))
    manifest = SequenceManifest(name, frames, [ReferenceEntry(ann_path.resolve(), frame_index=reference)], gt_dir.resolve())
    path = seq_dir / "manifest.yaml"
    save_manifest(manifest, path)
    return path


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--root", type=Path, required=True)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--images", default="images", help="image sub-directory name under --root")
    parser.add_argument("--masks", default="masks", help="mask sub-directory name under --root")
    parser.add_argument("--reference", type=int, default=0)
    parser.add_argument("--annotation", choices=["mask", "point", "bbox"], default="mask")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    seqs = sorted(p for p in (args.root / args.images).iterdir() if p.is_dir())
    done = 0
    for d in seqs:
        if convert_sequence(d, args.root / args.masks / d.name, args.out, args.reference, args.annotation):
            done += 1
    print(f"wrote {done} manifests under {args.out}")


if __name__ == "__main__":
    main()
