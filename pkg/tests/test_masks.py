import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mclnn.masks import MaskSpec, apply_mask, build_mask, mask_to_text

from conftest import mask_oracle_py

GOLDEN_9x8 = """\
10010010
10010000
10000001
00001001
01001001
01001000
01000000
00000100
00100100
"""


def ones_by_column(mask):
    return [set(np.flatnonzero(mask[:, j]).tolist()) for j in range(mask.shape[1])]


def test_golden_9x8_gap_pattern():
    mask = build_mask(9, 8, MaskSpec(3, -1))
    assert ones_by_column(mask) == [
        {0, 1, 2}, {4, 5, 6}, {8}, {0, 1}, {3, 4, 5}, {7, 8}, {0}, {2, 3, 4},
    ]
    assert mask.sum() == 18
    assert mask_to_text(mask) == GOLDEN_9x8


def test_first_fourth_seventh_neurons():
    cols = ones_by_column(build_mask(9, 8, MaskSpec(3, -1)))
    assert cols[0] == {0, 1, 2}  # first three features
    assert cols[3] == {0, 1}  # first two features
    assert cols[6] == {0}  # first feature only


def test_overlapping_bands_shift_by_bw_minus_ov():
    mask = build_mask(12, 10, MaskSpec(5, 3))
    for j in range(4):
        assert ones_by_column(mask)[j] == set(range(2 * j, 2 * j + 5))
    # consecutive bands share 3 rows
    assert len(ones_by_column(mask)[0] & ones_by_column(mask)[1]) == 3


def test_full_bandwidth_single_column():
    assert np.array_equal(build_mask(2, 1, MaskSpec(2, 0)), np.ones((2, 1)))


@pytest.mark.parametrize("bw, ov", [(0, -1), (-2, -5), (3, 3), (3, 7)])
def test_invalid_spec_rejected(bw, ov):
    with pytest.raises(ValueError):
        MaskSpec(bw, ov)


def test_bandwidth_larger_than_l_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        build_mask(4, 3, MaskSpec(5, 0))


@pytest.mark.parametrize("l, e", [(0, 3), (3, 0)])
def test_empty_matrix_rejected(l, e):
    with pytest.raises(ValueError):
        build_mask(l, e, MaskSpec(1, 0))


def test_deterministic():
    a = build_mask(30, 17, MaskSpec(7, -2))
    b = build_mask(30, 17, MaskSpec(7, -2))
    assert np.array_equal(a, b)


grid = st.integers(2, 32).flatmap(
    lambda l: st.tuples(st.just(l), st.integers(1, 64), st.integers(1, l)).flatmap(
        lambda t: st.tuples(*map(st.just, t), st.integers(-t[0], t[2] - 1))
    )
)


@settings(max_examples=300, deadline=None)
@given(grid)
def test_matches_enumeration(case):
    l, e, bw, ov = case
    mask = build_mask(l, e, MaskSpec(bw, ov))
    assert set(np.unique(mask)) <= {0.0, 1.0}
    assert np.array_equal(mask, mask_oracle_py(l, e, bw, ov))


@settings(max_examples=300, deadline=None)
@given(grid)
def test_ones_count(case):
    l, e, bw, ov = case
    step = l + bw - ov
    g_max = math.ceil(l * e / step)
    dropped = sum(1 for a in range(bw) for g in range(1, g_max + 1) if a + (g - 1) * step >= l * e)
    assert build_mask(l, e, MaskSpec(bw, ov)).sum() == bw * g_max - dropped


@settings(max_examples=300, deadline=None)
@given(grid)
def test_bands_do_not_interleave_within_a_column(case):
    # a column may hold the tail of one band and the head of the next, but
    # each band's rows are consecutive and the bands stay in row order
    l, e, bw, ov = case
    step = l + bw - ov
    mask = build_mask(l, e, MaskSpec(bw, ov))
    for j in range(e):
        rows = np.flatnonzero(mask[:, j])
        bands = (j * l + rows) // step
        assert np.all(np.diff(bands) >= 0)
        for b in np.unique(bands):
            run = rows[bands == b]
            assert run[-1] - run[0] + 1 == run.size


def test_apply_mask_examples():
    mask = build_mask(9, 8, MaskSpec(3, -1))
    assert np.array_equal(apply_mask(np.ones((9, 8)), mask), mask)
    w = np.arange(6.0).reshape(2, 3) - 2
    assert np.array_equal(apply_mask(w, np.ones((2, 3))), w)
    out = apply_mask(np.array([[2.0, -3.0], [4.0, 5.0]]), np.array([[1, 0], [0, 1]]))
    assert np.array_equal(out, [[2, 0], [0, 5]])


def test_apply_mask_dimension_mismatch():
    with pytest.raises(ValueError):
        apply_mask(np.ones((3, 2)), np.ones((2, 3)))


def test_apply_mask_broadcasts_over_weight_stack():
    mask = build_mask(6, 4, MaskSpec(2, -1))
    W = np.random.default_rng(0).normal(size=(5, 6, 4))
    Z = apply_mask(W, mask)
    for u in range(5):
        assert np.array_equal(Z[u], W[u] * mask)


@given(st.integers(0, 2**32 - 1))
def test_apply_mask_idempotent(seed):
    rng = np.random.default_rng(seed)
    mask = build_mask(10, 7, MaskSpec(3, 1))
    W = rng.normal(size=(10, 7))
    once = apply_mask(W, mask)
    assert np.array_equal(apply_mask(once, mask), once)
