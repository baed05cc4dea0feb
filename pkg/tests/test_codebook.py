import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artoveq import codebook as C
from artoveq.codebook import LBGConfig, NestedCodebook, ProgressiveCodebook, lbg_fit

from oracles import eq6_objective, lloyd_oracle


# -- LBG -------------------------------------------------------------------------


def test_lbg_two_clusters():
    pts = np.array([(0, 0), (0, 1), (10, 0), (10, 1)], float)
    words = lbg_fit(pts, LBGConfig(2)).codewords
    assert sorted(map(tuple, words.round(12))) == [(0.0, 0.5), (10.0, 0.5)]


def test_lbg_perfect_cover():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-5, 5, (8, 3))
    res = lbg_fit(pts, LBGConfig(8))
    assert res.distortion == pytest.approx(0.0, abs=1e-20)
    assert sorted(map(tuple, res.codewords)) == pytest.approx(sorted(map(tuple, pts)))


@pytest.mark.parametrize("size", [2, 4, 8])
def test_lbg_matches_lloyd_oracle(size):
    pts = np.random.default_rng(11).uniform(0, 1, (200, 2))
    res = lbg_fit(pts, LBGConfig(size))
    ref = lloyd_oracle(pts, size)
    np.testing.assert_allclose(res.codewords, ref, atol=1e-9)
    assert abs(C.lbg_objective(pts, res.codewords) - eq6_objective(pts, ref)) < 1e-6


def test_lbg_history_non_increasing():
    pts = np.random.default_rng(5).normal(size=(500, 2))
    hist = lbg_fit(pts, LBGConfig(32)).distortion_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_lbg_reaches_fixed_point():
    pts = np.random.default_rng(6).normal(size=(300, 2))
    cfg = LBGConfig(8, convergence_threshold=1e-12, max_iterations=1000)
    words = lbg_fit(pts, cfg).codewords
    assign = C.nearest_indices(pts, words)
    means = np.array([pts[assign == k].mean(axis=0) for k in range(8)])
    np.testing.assert_allclose(means, words, atol=1e-8)


def test_lbg_split_order_puts_plus_copies_first():
    pts = np.random.default_rng(1).uniform(1, 2, (50, 2))
    # a single Lloyd iteration: the codeword order still reflects the split
    words = lbg_fit(pts, LBGConfig(2, max_iterations=1)).codewords
    mean = pts.mean(axis=0)
    assert np.linalg.norm(words[0]) > np.linalg.norm(mean) > np.linalg.norm(words[1])


def test_lbg_deterministic():
    pts = np.random.default_rng(2).normal(size=(100, 2))
    a, b = lbg_fit(pts, LBGConfig(16)), lbg_fit(pts.copy(), LBGConfig(16))
    np.testing.assert_array_equal(a.codewords, b.codewords)


def test_empty_cell_reseeded_on_worst_point():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [4.0, 0.0]])
    words = np.array([[0.0, 0.0], [100.0, 100.0]])  # second codeword owns nothing
    out = C._centroid_step(pts, words)
    np.testing.assert_array_equal(out[1], [4.0, 0.0])
    assert C._distortion(pts, out) < C._distortion(pts, words)


def test_lbg_rejections():
    with pytest.raises(ValueError, match="at least"):
        lbg_fit(np.zeros((3, 2)), LBGConfig(4))
    with pytest.raises(ValueError, match="non-finite"):
        lbg_fit(np.array([[0.0, np.nan], [1.0, 1.0]]), LBGConfig(2))
    with pytest.raises(ValueError):
        LBGConfig(6)
    with pytest.raises(ValueError):
        LBGConfig(4, split_perturbation=0.0)


def test_nearest_tie_goes_low():
    assert C.nearest_indices(np.array([[0.5, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]))[0] == 0


# -- nested ------------------------------------------------------------------------


def test_sub_codebook_prefixes():
    words = np.arange(16, dtype=np.float32).reshape(8, 2)
    cb = NestedCodebook(words)
    np.testing.assert_array_equal(cb.sub_codebook(1), words[:2])
    np.testing.assert_array_equal(cb.sub_codebook(3), words)
    for level in range(2, 4):
        np.testing.assert_array_equal(cb.sub_codebook(level - 1), cb.sub_codebook(level)[: 1 << (level - 1)])


def test_sub_codebook_is_live_view():
    cb = NestedCodebook(np.zeros((4, 2)))
    view = C.sub_codebook(cb, 1)
    cb.table.data[1] = [3.0, 4.0]
    np.testing.assert_array_equal(view[1], [3.0, 4.0])


@pytest.mark.parametrize("level", [0, 4, -1])
def test_sub_codebook_range(level):
    with pytest.raises(ValueError):
        NestedCodebook(np.zeros((8, 2))).sub_codebook(level)


def test_nested_rejects_bad_counts():
    with pytest.raises(ValueError):
        NestedCodebook(np.zeros((6, 2)))


# -- progressive --------------------------------------------------------------------


def test_materialize_example():
    pcb = ProgressiveCodebook([[(0, 0), (1, 0)], [(0, 0), (0, 1)]])
    np.testing.assert_array_equal(pcb.materialize(2), [(0, 0), (0, 1), (1, 0), (1, 1)])
    np.testing.assert_array_equal(C.materialize(pcb, 1), [(0, 0), (1, 0)])


def test_materialize_range():
    pcb = ProgressiveCodebook(np.zeros((3, 2, 2)))
    with pytest.raises(ValueError):
        pcb.materialize(0)
    with pytest.raises(ValueError):
        pcb.materialize(4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7), st.integers(1, 4))
def test_minkowski_identity_exact(seed, levels, dim):
    pcb = ProgressiveCodebook.random(levels, dim, np.random.default_rng(seed))
    for level in range(1, levels + 1):
        words = pcb.materialize(level)
        assert len(words) == 2**level
        for i, bits in enumerate(itertools.product("01", repeat=level)):
            np.testing.assert_array_equal(words[i], pcb.codeword("".join(bits)))
        if level > 1:
            prev = pcb.materialize(level - 1)
            pair = pcb.pairs[level - 1].data
            np.testing.assert_array_equal(words, (prev[:, None] + pair[None]).reshape(-1, dim))


def test_random_pairs_scale():
    pcb = ProgressiveCodebook.random(8, 4, np.random.default_rng(0))
    assert np.abs(pcb.difference_pairs()).max() <= 0.5 / np.sqrt(4)


def test_refine_index_examples():
    assert C.refine_index("0", 1) == "01"
    pcb = ProgressiveCodebook.random(3, 2, np.random.default_rng(4))
    np.testing.assert_allclose(pcb.codeword("01") - pcb.codeword("0"), pcb.pairs[1].data[1], atol=1e-7)
    with pytest.raises(ValueError):
        C.refine_index("0", 2)


def test_prefix_decoding_walk():
    pcb = ProgressiveCodebook.random(8, 2, np.random.default_rng(8))
    bits = "".join(np.random.default_rng(9).choice(["0", "1"], 8))
    words = [pcb.codeword(bits[: l + 1]) for l in range(8)]
    assert len(words) == 8
    for l in range(1, 8):
        np.testing.assert_allclose(words[l] - words[l - 1], pcb.pairs[l].data[int(bits[l])], atol=1e-6)
        idx = int(bits[: l + 1], 2)
        np.testing.assert_array_equal(pcb.materialize(l + 1)[idx], words[l])


def test_bit_planes_round_trip():
    idx = np.arange(32)
    planes = C.bit_planes(idx, 5)
    assert [C.index_bits(int(i), 5) for i in idx] == ["".join(map(str, planes[:, i])) for i in idx]


# -- serialisation ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["nested", "progressive"])
def test_round_trip_bit_identical(kind, tmp_path):
    rng = np.random.default_rng(21)
    if kind == "nested":
        cb = NestedCodebook(rng.normal(size=(16, 3)).astype(np.float32))
        arr = lambda c: c.codewords
    else:
        cb = ProgressiveCodebook(rng.normal(size=(4, 2, 3)).astype(np.float32))
        arr = lambda c: c.difference_pairs()
    C.save_codebook(cb, tmp_path / "cb.json")
    back = C.load_codebook(tmp_path / "cb.json")
    assert type(back) is type(cb)
    assert arr(back).dtype == np.float32
    np.testing.assert_array_equal(arr(back).view(np.uint32), arr(cb).view(np.uint32))


def test_serialised_fields():
    import json

    doc = json.loads(C.dumps_codebook(NestedCodebook(np.ones((4, 2)))))
    assert doc["format_version"] == 1 and doc["mode"] == "nested"
    assert doc["dim"] == 2 and doc["max_level"] == 2 and len(doc["codewords"]) == 4


def test_loads_rejects_garbage():
    with pytest.raises(ValueError):
        C.loads_codebook('{"format_version": 2}')
    with pytest.raises(ValueError):
        C.loads_codebook('{"format_version": 1, "mode": "nested", "dim": 2, "max_level": 2, "codewords": [[0, 0]]}')
