from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import blob_frame, square_mask
from oneshot_irsts import matching
from oneshot_irsts.backend import FeatureGrid, MockBackend, TargetDescriptor
from oneshot_irsts.dataio import Annotation
from oneshot_irsts.errors import BackendError, DimensionError, EmptyTargetError, ParameterError
from oneshot_irsts.imaging import Frame, WindowSpec
from oneshot_irsts.matching import (
    ConfidenceMap,
    PromptPoint,
    cell_cosine,
    confidence_map,
    extract_prompt,
    extract_topk,
    fuse_confidence,
    prepare_reference,
    refine_prompt,
)
from oneshot_irsts.synth import brute_force_confidence
from test_backend import _cell_features_oracle

MOCK = MockBackend()


def _descriptor(vec, side=64):
    v = np.asarray(vec, dtype=float)
    v = v / np.linalg.norm(v)
    grid = FeatureGrid(np.zeros((1, 1, v.size)), Fraction(side))
    return TargetDescriptor(grid, v, WindowSpec(0, 0, side))


def test_prepare_reference_mask_oracle():
    frame = blob_frame(128, (50, 60), half=2)
    ann = Annotation("mask", mask=square_mask((128, 128), (50, 60), 2))
    desc = prepare_reference(frame, ann, 64, MOCK, MOCK)
    assert (desc.source_window.x, desc.source_window.y) == (18, 28)
    # blob occupies window pixels 30..34 on both axes -> cells 3 and 4
    feats = _cell_features_oracle(frame.pixels[28:92, 18:82])
    cells = [feats[cy, cx] for cy in (3, 4) for cx in (3, 4)]
    expected = np.mean(cells, axis=0)
    np.testing.assert_allclose(desc.pooled, expected / np.linalg.norm(expected), atol=1e-12)
    assert np.count_nonzero(np.linalg.norm(desc.masked_grid.values, axis=-1)) == 4


def test_prepare_reference_point_equals_mask():
    frame = blob_frame(128, (50, 60), half=2)
    by_point = prepare_reference(frame, Annotation("point", point=(50, 60)), 64, MOCK, MOCK)
    by_mask = prepare_reference(
        frame, Annotation("mask", mask=square_mask((128, 128), (50, 60), 2)), 64, MOCK, MOCK
    )
    np.testing.assert_array_equal(by_point.pooled, by_mask.pooled)


def test_prepare_reference_bbox_clips():
    frame = blob_frame(128, (50, 60), half=4)
    ann = Annotation("bbox", bbox=(46, 56, 51, 61))  # upper-left quarter of the blob
    full = matching.reference_mask(frame, ann, 64, MOCK)
    expected = np.zeros((128, 128), bool)
    expected[56:61, 46:51] = True
    np.testing.assert_array_equal(full, expected)


def test_prepare_reference_uniform_frame_single_cell():
    frame = Frame(np.full((64, 64), 0.3))
    desc = prepare_reference(frame, Annotation("point", point=(40, 40)), 32, MOCK, MOCK)
    # window origin 24 -> local prompt (16, 16) -> cell (2, 2), features (0.3, 0, 0, 0, 0.3)
    nz = np.argwhere(np.linalg.norm(desc.masked_grid.values, axis=-1) > 0)
    assert nz.tolist() == [[2, 2]]
    np.testing.assert_allclose(desc.pooled, [1 / math.sqrt(2), 0, 0, 0, 1 / math.sqrt(2)], atol=1e-12)


def test_prepare_reference_empty_mask_in_window():
    frame = blob_frame(128, (50, 60), half=2)
    m = np.zeros((128, 128), bool)
    with pytest.raises(EmptyTargetError):
        prepare_reference(frame, Annotation("mask", mask=m), 64, MOCK, MOCK)


def test_identical_cell_scores_one():
    px = np.random.default_rng(2).random((64, 64))
    cell = MOCK.encode(Frame(px[:64, :64])).values[2, 5]
    cmap = confidence_map(Frame(px), _descriptor(cell), 64, 64, MOCK)
    block = cmap.scores[16:24, 40:48]
    np.testing.assert_allclose(block, 1.0, atol=1e-12)
    assert cmap.scores.max() <= 1.0


def test_orthogonal_descriptor_scores_zero():
    # constant cells carry (v, 0, 0, 0, v); a pure-gradient descriptor is orthogonal to all of them
    px = np.repeat(np.linspace(0.1, 0.9, 8), 8)[None, :].repeat(64, axis=0)
    desc = _descriptor([0, 0, 1, 1, 0])
    np.testing.assert_array_equal(confidence_map(Frame(px), desc, 64, 64, MOCK).scores, 0.0)
    np.testing.assert_array_equal(brute_force_confidence(Frame(px), desc, 64, MOCK).scores, 0.0)


def test_single_tile_matches_oracle():
    rng = np.random.default_rng(11)
    px = rng.random((64, 64))
    desc = _descriptor(rng.random(5))
    got = confidence_map(Frame(px), desc, 64, 64, MOCK).scores
    want = brute_force_confidence(Frame(px), desc, 64, MOCK).scores
    np.testing.assert_allclose(got, want, atol=1e-6, rtol=0)


@settings(max_examples=25)
@given(st.integers(16, 96), st.integers(16, 96), st.data())
def test_confidence_matches_oracle(h, w, data):
    side = data.draw(st.integers(16, min(h, w)))
    stride = data.draw(st.integers(max(1, side // 2), side))
    seed = data.draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    frame = Frame(rng.random((h, w)))
    desc = _descriptor(rng.normal(size=5))
    got = confidence_map(frame, desc, side, stride, MOCK).scores
    want = brute_force_confidence(frame, desc, side, MOCK, stride).scores
    np.testing.assert_allclose(got, want, atol=1e-6, rtol=0)
    assert got.min() >= -1.0 and got.max() <= 1.0


def test_tile_order_invariance(monkeypatch):
    rng = np.random.default_rng(4)
    frame = Frame(rng.random((96, 96)))
    desc = _descriptor(rng.normal(size=5))
    forward = confidence_map(frame, desc, 32, 32, MOCK).scores
    real_tile = matching.tile
    monkeypatch.setattr(matching, "tile", lambda *a: list(reversed(real_tile(*a))))
    backward = confidence_map(frame, desc, 32, 32, MOCK).scores
    assert forward.tobytes() == backward.tobytes()


def test_cell_cosine_dim_mismatch():
    grid = FeatureGrid(np.ones((2, 2, 4)), Fraction(8))
    with pytest.raises(BackendError):
        cell_cosine(grid, np.ones(5) / math.sqrt(5))


def _cmap(shape, points, value=1.0):
    s = np.zeros(shape)
    for x, y in points:
        s[y, x] = value
    return ConfidenceMap(s)


def test_extract_prompt_examples():
    assert extract_prompt(_cmap((10, 10), [(5, 7)])) == PromptPoint(5, 7, 1.0)
    p = extract_prompt(_cmap((10, 10), [(9, 3), (0, 3)]))
    assert (p.x, p.y) == (0, 3)
    p = extract_prompt(ConfidenceMap(np.full((6, 6), 0.2)))
    assert (p.x, p.y) == (0, 0)


@given(st.lists(st.tuples(st.integers(0, 19), st.integers(0, 14)), min_size=1, max_size=8, unique=True), st.randoms())
def test_extract_prompt_tie_break_permutation(points, rnd):
    shuffled = list(points)
    rnd.shuffle(shuffled)
    p = extract_prompt(_cmap((15, 20), shuffled, value=0.7))
    x, y = min(points, key=lambda q: (q[1], q[0]))
    assert (p.x, p.y) == (x, y)


def test_fuse_examples():
    s = np.random.default_rng(0).uniform(-1, 1, (12, 9))
    m = ConfidenceMap(s)
    assert fuse_confidence([m]) is m
    np.testing.assert_array_equal(fuse_confidence([m, ConfidenceMap(-s)]).scores, np.abs(s))
    np.testing.assert_array_equal(fuse_confidence([m] * 4).scores, s)


def test_fuse_errors():
    with pytest.raises(ParameterError):
        fuse_confidence([])
    with pytest.raises(DimensionError):
        fuse_confidence([ConfidenceMap(np.zeros((2, 2))), ConfidenceMap(np.zeros((3, 2)))])


def test_topk_nms():
    s = np.zeros((20, 20))
    s[2:4, 2:4] = 0.9  # plateau counts once
    s[15, 15] = 0.8
    s[15, 16] = 0.7  # suppressed by its neighbour
    s[5, 17] = 0.5
    pts = extract_topk(ConfidenceMap(s), 5)
    assert [(p.x, p.y) for p in pts[:3]] == [(2, 2), (15, 15), (17, 5)]
    assert all((p.x, p.y) != (16, 15) for p in pts)
    assert extract_topk(ConfidenceMap(s), 1)[0] == extract_prompt(ConfidenceMap(s))
    with pytest.raises(ParameterError):
        extract_topk(ConfidenceMap(s), 0)


def test_refine_prompt_modes():
    scores = np.zeros((32, 32))
    scores[8:16, 16:24] = 0.9
    px = np.zeros((32, 32))
    px[13, 21] = 0.8
    px[2, 2] = 1.0  # brighter but outside the winning block
    cmap = ConfidenceMap(scores)
    frame = Frame(px)
    raw = extract_prompt(cmap)
    assert (raw.x, raw.y) == (16, 8)
    assert refine_prompt(cmap, raw, frame, "none") == raw
    peak = refine_prompt(cmap, raw, frame, "peak")
    assert (peak.x, peak.y, peak.confidence) == (21, 13, 0.9)
    center = refine_prompt(cmap, raw, frame, "center")
    assert (center.x, center.y) == (19, 11)
    with pytest.raises(ParameterError):
        refine_prompt(cmap, raw, frame, "mean")


def test_planted_duplicate_small():
    rng = np.random.default_rng(8)
    ref = Frame(np.clip(0.2 + 0.01 * rng.standard_normal((128, 128)), 0, 1))
    px = ref.pixels.copy()
    px[60:64, 40:44] = 0.95
    ref = Frame(px)
    desc = prepare_reference(ref, Annotation("mask", mask=px > 0.9), 32, MOCK, MOCK)
    test = np.full((128, 128), 0.2)
    win = desc.source_window
    test[96:128, 0:32] = px[win.slices]
    p = extract_prompt(confidence_map(Frame(test), desc, 32, 32, MOCK))
    # cells of the planted copy that hold target pixels
    ys, xs = np.nonzero(px[win.slices] > 0.9)
    cells = {(y // 8, x // 8) for y, x in zip(ys, xs)}
    assert ((p.y - 96) // 8, p.x // 8) in cells
