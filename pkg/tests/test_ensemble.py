from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import blob_frame, square_mask
from oneshot_irsts import ensemble
from oneshot_irsts.backend import MockBackend
from oneshot_irsts.dataio import Annotation, ReferenceEntry, load_manifest, save_manifest
from oneshot_irsts.ensemble import PipelineConfig, level_sides, majority_vote, run_sequence, segment_frame, vote
from oneshot_irsts.errors import DimensionError, FrameError, ParameterError, ValidationError
from oneshot_irsts.imaging import Frame, tile_windows
from oneshot_irsts.matching import prepare_reference
from oneshot_irsts.synth import SynthSpec, brute_force_mode, generate_sequence, write_sequence

MOCK = MockBackend()
triples = st.integers(1, 32).flatmap(
    lambda h: st.integers(1, 32).flatmap(lambda w: st.lists(arrays(np.bool_, (h, w)), min_size=3, max_size=3))
)


@pytest.mark.parametrize(
    "h,divisors,sides",
    [(512, (2, 3, 4), [256, 170, 128]), (256, (2, 3, 4), [128, 85, 64]), (36, (4,), [16])],
)
def test_level_sides(h, divisors, sides):
    assert level_sides(h, divisors) == sides


def test_level_sides_errors():
    with pytest.raises(ParameterError):
        level_sides(256, (2, 2, 4))
    with pytest.raises(ParameterError):
        level_sides(256, (1, 3))
    with pytest.raises(ParameterError):
        level_sides(256, ())
    with pytest.raises(DimensionError):
        level_sides(256, (2,), frame_width=100)


@pytest.mark.parametrize("votes,expected", [((1, 1, 0), 1), ((1, 0, 0), 0), ((1, 1, 1), 1), ((0, 0, 0), 0)])
def test_vote_pixel(votes, expected):
    masks = [np.array([[v]], dtype=bool) for v in votes]
    assert majority_vote(masks)[0, 0] == expected
    assert brute_force_mode(masks)[0, 0] == expected


def test_vote_errors():
    with pytest.raises(ParameterError):
        majority_vote([np.zeros((2, 2), bool)] * 2)
    with pytest.raises(DimensionError):
        vote([np.zeros((2, 2), bool), np.zeros((2, 3), bool), np.zeros((2, 2), bool)])


def test_vote_even_ties_background():
    a, b = np.array([[True, True]]), np.array([[True, False]])
    np.testing.assert_array_equal(vote([a, b]), [[True, False]])


@given(triples)
def test_vote_matches_oracle_and_permutations(masks):
    want = brute_force_mode(masks)
    for perm in itertools.permutations(masks):
        np.testing.assert_array_equal(majority_vote(list(perm)), want)
    np.testing.assert_array_equal(majority_vote([masks[0]] * 3), masks[0])


@given(triples)
def test_vote_containment(masks):
    out = majority_vote(masks)
    union = masks[0] | masks[1] | masks[2]
    inter = masks[0] & masks[1] & masks[2]
    assert not (out & ~union).any()
    assert not (inter & ~out).any()


def test_config_validation():
    with pytest.raises(ParameterError):
        PipelineConfig(stride_fraction=0.0)
    with pytest.raises(ParameterError):
        PipelineConfig(topk=0)
    with pytest.raises(ParameterError):
        PipelineConfig(workers=0)
    with pytest.raises(ParameterError):
        PipelineConfig(prompt_refinement="mean")
    assert PipelineConfig().stride_for(85) == 85
    assert PipelineConfig(stride_fraction=0.5).stride_for(85) == 42


def _descriptors(ref, ann, sides):
    return [[prepare_reference(ref, ann, s, MOCK, MOCK)] for s in sides]


def _noisy_blob(size, center, seed, half=2):
    px = blob_frame(size, center, half=half).pixels + 0.01 * np.random.default_rng(seed).random((size, size))
    return Frame(px)


def test_segment_frame_all_levels_find_blob():
    ref = blob_frame(256, (60, 70))
    ann = Annotation("mask", mask=square_mask((256, 256), (60, 70), 2))
    desc = _descriptors(ref, ann, level_sides(256, (2, 3, 4)))
    test = blob_frame(256, (180, 150))
    mask, levels = segment_frame(test, desc, PipelineConfig(), MOCK)
    blob = square_mask((256, 256), (180, 150), 2)
    assert [lv.side for lv in levels] == [128, 85, 64]
    for lv in levels:
        np.testing.assert_array_equal(lv.mask, blob)
    np.testing.assert_array_equal(mask, blob)


def test_segment_frame_one_level_on_false_corner():
    # a bright frame corner stands in for a false response at level 0 only
    px = np.full((256, 256), 0.1)
    px[148:153, 178:183] = 0.9  # true blob centred (180, 150)
    px[0:6, 0:6] = 0.6
    test = Frame(px)
    blob = square_mask((256, 256), (180, 150), 2)
    corner_ann = Annotation("mask", mask=px == 0.6)
    blob_ann = Annotation("mask", mask=blob)
    sides = level_sides(256, (2, 3, 4))
    desc = [
        [prepare_reference(test, corner_ann, sides[0], MOCK, MOCK)],
        [prepare_reference(test, blob_ann, sides[1], MOCK, MOCK)],
        [prepare_reference(test, blob_ann, sides[2], MOCK, MOCK)],
    ]
    mask, levels = segment_frame(test, desc, PipelineConfig(), MOCK)
    assert levels[0].mask[0:6, 0:6].all() and not levels[0].mask[blob].any()
    np.testing.assert_array_equal(levels[1].mask, blob)
    np.testing.assert_array_equal(levels[2].mask, blob)
    np.testing.assert_array_equal(mask, blob)


def test_segment_frame_reference_itself():
    seq = generate_sequence(SynthSpec(frames=2, size=128, seed=3))
    ref, gt = seq.frames[0], seq.masks[0]
    desc = _descriptors(ref, Annotation("mask", mask=gt), level_sides(128, (2, 3, 4)))
    _, levels = segment_frame(ref, desc, PipelineConfig(), MOCK)
    for lv in levels:
        assert gt[lv.prompt.y, lv.prompt.x]


def test_segment_frame_wraps_errors():
    ref = blob_frame(64, (20, 20))
    desc = _descriptors(ref, Annotation("point", point=(20, 20)), [32])
    bad = Frame(np.zeros((20, 20)), index=7)
    with pytest.raises(FrameError) as info:
        segment_frame(bad, desc, PipelineConfig(divisors=(2,)), MOCK)
    assert info.value.frame_index == 7


def test_segment_frame_topk_unions_prompts():
    px = np.full((128, 128), 0.1)
    px[20:25, 20:25] = 0.9
    px[100:105, 90:95] = 0.9
    frame = Frame(px)
    ann = Annotation("mask", mask=px > 0.5)
    desc = [[prepare_reference(frame, Annotation("mask", mask=square_mask((128, 128), (22, 22), 2)), 32, MOCK, MOCK)]]
    mask, levels = segment_frame(frame, desc, PipelineConfig(divisors=(4,), topk=2), MOCK)
    np.testing.assert_array_equal(mask, ann.mask)
    assert len(levels[0].prompts) == 2


# --------------------------------------------------------------------------
# whole sequences
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_seq(tmp_path_factory):
    root = tmp_path_factory.mktemp("seq")
    seq = generate_sequence(SynthSpec(frames=30, size=128, seed=21))
    return seq, write_sequence(seq, root / "a", sequence_id="a")


def test_run_reference_zero(small_seq):
    _, manifest_path = small_seq
    res = run_sequence(load_manifest(manifest_path), PipelineConfig())
    assert sorted(res.masks) == list(range(1, 30))
    assert all(m.shape == (128, 128) for m in res.masks.values())
    assert res.summary()["reference_frames"] == [0]


def test_run_reference_ten(small_seq, tmp_path):
    seq, _ = small_seq
    path = write_sequence(seq, tmp_path / "b", sequence_id="b", reference=10)
    res = run_sequence(load_manifest(path), PipelineConfig())
    assert sorted(res.masks) == [i for i in range(30) if i != 10]


def test_run_cross_sequence_reference(small_seq, tmp_path):
    seq, a_manifest = small_seq
    other = generate_sequence(SynthSpec(frames=30, size=128, seed=99))
    b_path = write_sequence(other, tmp_path / "b", sequence_id="b")
    a = load_manifest(a_manifest)
    b = load_manifest(b_path)
    b.references = [ReferenceEntry(annotation=a.references[0].annotation, image=a.frames[0])]
    save_manifest(b, tmp_path / "b" / "cross.yaml")
    res = run_sequence(load_manifest(tmp_path / "b" / "cross.yaml"), PipelineConfig())
    assert sorted(res.masks) == list(range(30))
    assert res.summary()["reference_frames"] == []


def test_run_outputs_deterministic(small_seq, tmp_path):
    _, manifest_path = small_seq
    manifest = load_manifest(manifest_path)
    for name in ("one", "two"):
        run_sequence(manifest, PipelineConfig(output_dir=str(tmp_path / name)))
    one = sorted(p.name for p in (tmp_path / "one").iterdir())
    assert one == sorted(p.name for p in (tmp_path / "two").iterdir())
    for n in one:
        if n != "timings.json":
            assert (tmp_path / "one" / n).read_bytes() == (tmp_path / "two" / n).read_bytes()


class _Counting(MockBackend):
    def __init__(self):
        self.encodes = 0

    def encode(self, window):
        self.encodes += 1
        return super().encode(window)


def test_descriptors_built_once(small_seq, monkeypatch):
    _, manifest_path = small_seq
    calls = []
    real = ensemble.prepare_reference
    monkeypatch.setattr(ensemble, "prepare_reference", lambda *a: calls.append(a[2]) or real(*a))
    backend = _Counting()
    config = PipelineConfig()
    run_sequence(load_manifest(manifest_path), config, backend=backend)
    sides = level_sides(128, config.divisors)
    assert calls == sides
    tiles = sum(len(tile_windows((128, 128), s, config.stride_for(s))) for s in sides)
    assert backend.encodes == len(sides) + 29 * tiles


class _Unsafe(MockBackend):
    thread_safe = False


def test_workers_match_serial(small_seq):
    _, manifest_path = small_seq
    manifest = load_manifest(manifest_path)
    serial = run_sequence(manifest, PipelineConfig())
    threaded = run_sequence(manifest, PipelineConfig(workers=4), backend=_Unsafe())
    assert serial.summary() == threaded.summary()
    for i, m in serial.masks.items():
        np.testing.assert_array_equal(m, threaded.masks[i])


def test_keep_going(small_seq, monkeypatch):
    _, manifest_path = small_seq
    real = ensemble.segment_frame

    def flaky(frame, *a):
        if frame.index == 5:
            raise FrameError(5, "synthetic failure")
        return real(frame, *a)

    monkeypatch.setattr(ensemble, "segment_frame", flaky)
    manifest = load_manifest(manifest_path)
    with pytest.raises(FrameError):
        run_sequence(manifest, PipelineConfig())
    res = run_sequence(manifest, PipelineConfig(keep_going=True))
    summary = res.summary()
    assert summary["failed_frames"] == [5]
    assert 5 not in res.masks and len(res.masks) == 28


def test_invalid_reference_writes_nothing(small_seq, tmp_path):
    _, manifest_path = small_seq
    manifest = load_manifest(manifest_path)
    bad = tmp_path / "bad.yaml"
    bad.write_text("kind: point\npoint: [500, 3]\n")
    manifest.references = [ReferenceEntry(annotation=bad, frame_index=0)]
    out = tmp_path / "out"
    with pytest.raises(ValidationError):
        run_sequence(manifest, PipelineConfig(output_dir=str(out)))
    assert not out.exists()


def test_unknown_reference_selection(small_seq):
    _, manifest_path = small_seq
    with pytest.raises(ValidationError):
        run_sequence(load_manifest(manifest_path), PipelineConfig(references=[3]))
