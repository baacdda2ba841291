"""Inter-frame SSIM profile of a sequence (how redundant consecutive frames are).

Works on a manifest, or on a freshly generated synthetic sequence when no
manifest is given. Writes one CSV row per frame and prints a short summary.

    python scripts/ssim_profile.py --manifest data/seq/manifest.yaml --csv ssim.csv
    python scripts/ssim_profile.py --seed 3 --csv ssim_synth.csv
"""
from __future__ import annotations

import argparse
import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from oneshot_irsts.dataio import load_manifest
from oneshot_irsts.imaging import load_frame
from oneshot_irsts.metrics import ssim
from oneshot_irsts.synth import SynthSpec, generate_sequence


def profile(frames) -> list[tuple[int, float, float]]:
    rows = []
    for i, f in enumerate(frames):
        prev = ssim(frames[i - 1], f) if i else 1.0
        rows.append((i, prev, ssim(frames[0], f)))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--manifest", type=Path, default=None)
    parser.add_argument("--seed", type=int, default=0, help="synthetic seed when no manifest is given")
    parser.add_argument("--csv", type=Path, default=None)
    args = parser.parse_args()

    if args.manifest:
        m = load_manifest(args.manifest)
        frames = [load_frame(p, index=i) for i, p in enumerate(m.frames)]
        name = m.sequence_id
    else:
        frames = generate_sequence(replace(SynthSpec(), seed=args.seed)).frames
        name = f"synthetic(seed={args.seed})"
    rows = profile(frames)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_index", "ssim_previous", "ssim_first"])
            w.writerows(rows)
    adj = np.array([r[1] for r in rows[1:]])
    first = np.array([r[2] for r in rows[1:]])
    print(f"{name}: {len(frames)} frames")
    print(f"  adjacent SSIM  min {adj.min():.4f}  mean {adj.mean():.4f}")
    print(f"  vs first frame min {first.min():.4f}  mean {first.mean():.4f}")


if __name__ == "__main__":
    main()
