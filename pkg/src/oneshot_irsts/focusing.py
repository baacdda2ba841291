"""Point prompt-centric focusing.

The prompt ``P = (x, y)`` is a column/row pair. A ``side`` x ``side``
window is cropped around it (origin ``P - side // 2``, clamped into the
frame), the prompt is re-expressed relative to the window origin, the
window is segmented, and the local mask is written back into exactly the
cropped region of an otherwise empty full-frame mask. Without clamping the
local prompt is ``(side // 2, side // 2)``, i.e. pixel ``side / 2 + 1`` when
counted from 1.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .imaging import Frame, WindowSpec, crop_window, paste_mask


def local_prompt(prompt, window: WindowSpec) -> tuple[int, int]:
    return int(prompt[0]) - window.x, int(prompt[1]) - window.y


def focus_segment(frame: Frame, prompt, side: int, segmenter) -> np.ndarray:
    if hasattr(prompt, "x"):
        prompt = (prompt.x, prompt.y)
    window_frame, window = crop_window(frame, prompt, side)
    local = np.asarray(segmenter.segment_at(window_frame, local_prompt(prompt, window)), dtype=bool)
    if local.shape != (side, side):
        raise DimensionError(f"segmenter returned {local.shape}, expected ({side}, {side})")
    return paste_mask(np.zeros(frame.shape, dtype=bool), local, window)
