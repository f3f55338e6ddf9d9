import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridseg.fmm import NoSeedsError, arrival_times, eikonal_update, inpaint, march
from hybridseg.heads import UNKNOWN

from fmm_oracle import nearest_label_oracle, random_unknown_map


def test_eikonal_examples():
    assert eikonal_update(0.0, math.inf) == 1.0
    assert eikonal_update(math.inf, 2.0) == 3.0
    assert eikonal_update(0.0, 0.0) == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    assert eikonal_update(0.0, 1.5) == 1.0


def test_eikonal_needs_a_neighbour():
    with pytest.raises(ValueError):
        eikonal_update(math.inf, math.inf)


@given(st.floats(0, 50), st.floats(0, 50))
def test_eikonal_solves_quadratic(a, b):
    t = eikonal_update(a, b)
    assert t > max(min(a, b), 0) and t <= min(a, b) + 1 + 1e-12
    if abs(a - b) < 1:
        assert (t - a) ** 2 + (t - b) ** 2 == pytest.approx(1.0, abs=1e-9)


def test_no_unknown_is_identity(rng):
    seg = rng.integers(0, 6, (9, 7)).astype(np.uint8)
    np.testing.assert_array_equal(inpaint(seg), seg)


def test_single_unknown_with_one_neighbour():
    seg = np.full((3, 3), UNKNOWN, dtype=np.uint8)
    seg[0, 1] = 4
    seg[1, 1] = UNKNOWN
    seg2 = np.array([[UNKNOWN, 2]], dtype=np.uint8)
    assert inpaint(seg2)[0, 0] == 2
    assert (inpaint(seg) == 4).all()


def test_all_unknown_errors():
    with pytest.raises(NoSeedsError, match="no seeds"):
        inpaint(np.full((4, 4), UNKNOWN, dtype=np.uint8))


def test_distance_field_accuracy():
    seeds = np.zeros((32, 32), dtype=bool)
    seeds[16, 16] = True
    t = arrival_times(seeds)
    yy, xx = np.mgrid[:32, :32]
    d = np.hypot(yy - 16, xx - 16)
    assert t[16, 16] == 0
    assert (np.abs(t - d) <= 0.21 * d + 1e-12).all()
    # along axes the march is exact
    assert t[16, 31] == 15 and t[0, 16] == 16


def test_nearest_neighbour_oracle():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(20):
        seg = random_unknown_map(rng)
        ref, confident = nearest_label_oracle(seg)
        out = inpaint(seg)
        np.testing.assert_array_equal(out[confident], ref[confident])
        checked += confident.sum()
    assert checked > 100


@given(st.integers(0, 10 ** 6), st.floats(0.05, 0.95))
def test_march_invariants(seed, frac):
    rng = np.random.default_rng(seed)
    seg = random_unknown_map(rng, size=10, frac=frac)
    labels, arrival, order = march(seg)
    known = seg != UNKNOWN
    # seed fidelity
    np.testing.assert_array_equal(labels[known], seg[known])
    assert (arrival[known] == 0).all()
    assert np.isfinite(arrival).all() and (labels != UNKNOWN).all()
    assert all(a <= b for a, b in zip(order, order[1:]))
    assert set(np.unique(labels)) <= set(np.unique(seg[known]))
    np.testing.assert_array_equal(inpaint(labels), labels)
    np.testing.assert_array_equal(inpaint(seg), labels)


def test_tie_break_is_row_major():
    # the middle pixel is equidistant from 1 (left) and 2 (right)
    seg = np.array([[1, UNKNOWN, 2]], dtype=np.uint8)
    assert inpaint(seg)[0, 1] == 1
    seg = np.array([[2], [UNKNOWN], [1]], dtype=np.uint8)
    assert inpaint(seg)[1, 0] == 2


def test_rejects_non_2d():
    with pytest.raises(ValueError):
        inpaint(np.zeros((2, 2, 2), dtype=np.uint8) + UNKNOWN)
