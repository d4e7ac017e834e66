import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import best_gated_matching, brute_force_min_cost
from panotrack.association import CostMatrix, Detection, build_cost_matrix, cascade_match, hungarian
from panotrack.geometry import PanoBox, pano_iou

W = 2048


def _total(values, pairs):
    return sum(values[r, c] for r, c in pairs)


def test_two_by_two_example():
    pairs = hungarian(CostMatrix(np.array([[1.0, 2.0], [2.0, 1.0]])))
    assert pairs == [(0, 0), (1, 1)]


def test_zero_diagonal():
    v = np.ones((5, 5)) - np.eye(5)
    assert hungarian(CostMatrix(v)) == [(i, i) for i in range(5)]


def test_empty_matrix():
    assert hungarian(CostMatrix(np.zeros((0, 3)))) == []
    assert hungarian(CostMatrix(np.zeros((0, 0)))) == []
    assert hungarian(CostMatrix([])) == []


def test_cost_matrix_validation():
    with pytest.raises(ValueError):
        CostMatrix(np.zeros((2, 2)), np.zeros((2, 3), dtype=bool))
    with pytest.raises(ValueError):
        CostMatrix(np.array([[np.inf, 0.0]]), np.array([[True, True]]))
    with pytest.raises(ValueError):
        CostMatrix(np.zeros(3))


def test_infinite_cells_are_gated_out():
    c = CostMatrix(np.array([[np.inf, 1.0], [np.inf, np.inf]]))
    assert hungarian(c) == [(0, 1)]


def test_gate_leaves_rows_unmatched():
    v = np.array([[0.1, 0.9], [0.2, 0.95]])
    mask = v <= 0.7
    assert hungarian(CostMatrix(v, mask)) == [(0, 0)]


def test_optimality_on_500_random_matrices():
    rng = np.random.default_rng(0)
    elapsed = 0.0
    for _ in range(500):
        n, m = rng.integers(1, 9, size=2)
        v = rng.uniform(0, 10, size=(n, m))
        start = time.perf_counter()
        pairs = hungarian(CostMatrix(v))
        elapsed += time.perf_counter() - start
        assert len(pairs) == min(n, m)
        assert _total(v, pairs) == pytest.approx(brute_force_min_cost(v), abs=1e-9)
    assert elapsed < 5.0


def test_gated_matching_and_tie_break_against_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n, m = rng.integers(1, 6, size=2)
        v = rng.integers(0, 4, size=(n, m)).astype(float)  # small integers force many ties
        mask = rng.random((n, m)) < 0.6
        got = hungarian(CostMatrix(v, mask))
        assert got == best_gated_matching(v, mask)
        assert all(mask[r, c] for r, c in got)


matrices = st.integers(1, 6).flatmap(
    lambda n: st.integers(1, 6).flatmap(
        lambda m: arrays(float, (n, m), elements=st.floats(0, 1, allow_nan=False))
    )
)


@given(matrices, st.randoms(use_true_random=False))
def test_permutation_equivariance(v, rnd):
    n, m = v.shape
    rp = list(range(n))
    cp = list(range(m))
    rnd.shuffle(rp)
    rnd.shuffle(cp)
    base = hungarian(CostMatrix(v), tie_break=False)
    permuted = hungarian(CostMatrix(v[np.ix_(rp, cp)]), tie_break=False)
    assert len(base) == len(permuted)
    # optimal totals agree; with distinct costs the matchings correspond exactly
    assert _total(v[np.ix_(rp, cp)], permuted) == pytest.approx(_total(v, base), abs=1e-9)
    if len(np.unique(v)) == v.size:
        mapped = sorted((rp[r], cp[c]) for r, c in permuted)
        assert mapped == base


@given(matrices)
def test_valid_matching(v):
    mask = v < 0.7
    pairs = hungarian(CostMatrix(v, mask))
    rows = [r for r, _ in pairs]
    cols = [c for _, c in pairs]
    assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
    assert all(mask[r, c] for r, c in pairs)


def test_build_cost_matrix_examples():
    same = PanoBox(500, 100, 40, 80, W)
    far = PanoBox(1500, 100, 40, 80, W)
    c = build_cost_matrix([same], [same, far])
    assert c.values[0, 0] == 0 and c.gate_mask[0, 0]
    assert c.values[0, 1] == 1 and not c.gate_mask[0, 1]
    t, d = PanoBox(2040, 100, 40, 80, W), PanoBox(5, 100, 40, 80, W)
    seam = build_cost_matrix([t], [d])
    assert seam.values[0, 0] == pytest.approx(1 - pano_iou(t, d)) and seam.values[0, 0] < 1


def test_build_cost_matrix_mixed_width():
    with pytest.raises(ValueError):
        build_cost_matrix([PanoBox(5, 5, 4, 4, 100)], [PanoBox(5, 5, 4, 4, 200)])


def _scene(rng, n_tracks, n_dets, width=W):
    tracks = [PanoBox(rng.uniform(0, width), rng.uniform(100, 300), 40, 80, width) for _ in range(n_tracks)]
    dets = []
    for k in range(n_dets):
        if k < n_tracks and rng.random() < 0.8:
            base = tracks[k]
            box = PanoBox(base.cx + rng.normal(0, 6), base.cy + rng.normal(0, 6), 40, 80, width)
        else:
            box = PanoBox(rng.uniform(0, width), rng.uniform(100, 300), 40, 80, width)
        dets.append(Detection(box, float(rng.uniform(0.1, 1.0))))
    return tracks, dets


def test_rotation_invariance():
    rng = np.random.default_rng(3)
    for _ in range(100):
        tracks, dets = _scene(rng, int(rng.integers(0, 7)), int(rng.integers(0, 7)))
        s = float(rng.uniform(-W, W))
        a = hungarian(build_cost_matrix(tracks, [d.box for d in dets]))
        b = hungarian(build_cost_matrix([t.shifted(s) for t in tracks], [d.box.shifted(s) for d in dets]))
        assert a == b


def test_cascade_all_high_equals_single_stage():
    rng = np.random.default_rng(4)
    for _ in range(50):
        tracks, dets = _scene(rng, 5, 6)
        dets = [Detection(d.box, 0.9) for d in dets]
        matched, ut, ud = cascade_match(tracks, dets, conf_split=0.6)
        assert matched == hungarian(build_cost_matrix(tracks, [d.box for d in dets]))
        assert sorted(ut + [t for t, _ in matched]) == list(range(5))
        assert sorted(ud + [d for _, d in matched]) == list(range(6))


def test_cascade_low_confidence_second_stage():
    t = PanoBox(300, 200, 40, 80, W)
    d = Detection(PanoBox(305, 200, 40, 80, W), 0.2)
    assert cascade_match([t], [d], conf_split=0.6) == ([(0, 0)], [], [])


def test_cascade_prefers_high_confidence():
    t = PanoBox(300, 200, 40, 80, W)
    low = Detection(PanoBox(300, 200, 40, 80, W), 0.3)
    high = Detection(PanoBox(310, 200, 40, 80, W), 0.9)
    matched, _, ud = cascade_match([t], [low, high], conf_split=0.6)
    assert matched == [(0, 1)] and ud == [0]


def test_cascade_random_validity_and_classes():
    rng = np.random.default_rng(5)
    for _ in range(200):
        nt, nd = rng.integers(0, 8, size=2)
        tracks, dets = _scene(rng, int(nt), int(nd), width=600)
        classes = list(rng.integers(1, 3, size=nt))
        dets = [Detection(d.box, d.score, int(rng.integers(1, 3))) for d in dets]
        matched, ut, ud = cascade_match(tracks, dets, 0.5, track_classes=classes)
        ts = [t for t, _ in matched]
        ds = [d for _, d in matched]
        assert len(set(ts)) == len(ts) and len(set(ds)) == len(ds)
        assert sorted(ts + ut) == list(range(nt)) and sorted(ds + ud) == list(range(nd))
        for t, d in matched:
            assert classes[t] == dets[d].class_id
            assert 1 - pano_iou(tracks[t], dets[d].box) <= 0.7
