import itertools
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from multienc.analysis import ColocatedRef
from multienc.codec import ALL_MODES, AMP_MODES, INTRA_MODES, MotionVector, PuMode
from multienc.media import Resolution
from multienc.schemes import (
    cross_resolution_lower_bound, depth_bounds, depth_offset, me_constraints, mode_constraints, resolution_factor,
)

DEPTHS = range(4)


def test_depth_bounds_exhaustive():
    for dh in DEPTHS:
        b = depth_bounds("single", dh)
        assert (b.d_L, b.d_U) == (0, dh)
    for dl in DEPTHS:
        b = depth_bounds("lower_only", d_ref_low=dl)
        assert (b.d_L, b.d_U) == (dl, 3)
    for dh, dl in itertools.product(DEPTHS, DEPTHS):
        b = depth_bounds("double", dh, dl)
        assert (b.d_L, b.d_U) == ((dl, dh) if dl <= dh else (dh, dl))


def test_depth_bounds_examples_and_errors():
    assert 2 not in depth_bounds("single", 1) and 3 not in depth_bounds("single", 1)
    assert (depth_bounds("double", 2, 1).d_L, depth_bounds("double", 2, 1).d_U) == (1, 2)
    with pytest.raises(ValueError):
        depth_bounds("single")
    with pytest.raises(ValueError):
        depth_bounds("double", 1)
    with pytest.raises(ValueError):
        depth_bounds("single", 4)
    with pytest.raises(ValueError):
        depth_bounds("bogus", 1, 1)


def test_cross_resolution_lower_bound_exhaustive():
    table = {0: 0, 1: 0, 2: 1, 3: 2}
    for rule in ("from_highest", "from_lowest"):
        for d in DEPTHS:
            assert cross_resolution_lower_bound(rule, d) == table[d]
    with pytest.raises(ValueError):
        cross_resolution_lower_bound("from_middle", 1)


@pytest.mark.parametrize("lo,hi,L", [
    ((1920, 1080), (3840, 2160), 4), ((960, 540), (1920, 1080), 4), ((64, 64), (64, 64), 1),
    ((192, 112), (384, 216), Fraction(384 * 216, 192 * 112)), ((640, 360), (1280, 720), 4),
    ((1280, 720), (1920, 1080), Fraction(9, 4)),
])
def test_resolution_factor(lo, hi, L):
    f = resolution_factor(Resolution(1, *lo), Resolution(2, *hi))
    assert f == L and isinstance(f, Fraction)


def test_resolution_factor_errors():
    with pytest.raises(ValueError):
        resolution_factor(Resolution(1, 0, 8), Resolution(2, 8, 8))
    with pytest.raises(ValueError):
        resolution_factor(Resolution(1, 16, 16), Resolution(2, 8, 8))


@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 64), st.integers(1, 64))
def test_resolution_factor_is_exact_ratio(a, b, c, d):
    lo, hi = sorted([(8 * a, 8 * b), (8 * c, 8 * d)], key=lambda r: r[0] * r[1])
    f = resolution_factor(Resolution(1, *lo), Resolution(2, *hi))
    assert f * lo[0] * lo[1] == hi[0] * hi[1]


def test_depth_offset():
    assert depth_offset(Resolution(1, 192, 112), Resolution(3, 768, 432)) == -2
    assert depth_offset(Resolution(1, 384, 216), Resolution(3, 768, 432)) == -1
    assert depth_offset(Resolution(1, 768, 432), Resolution(3, 384, 216)) == 1
    assert depth_offset(Resolution(1, 64, 64), Resolution(3, 64, 64)) == 0


def _ref(mode, motion=(), depth=1):
    return ColocatedRef(depth, mode, motion, 0, Fraction(1))


def test_mode_heuristics_examples():
    S, I2, IN = PuMode.SkipMerge2Nx2N, PuMode.Intra2Nx2N, PuMode.IntraNxN
    assert mode_constraints(_ref(S), None, True).allowed == {S, PuMode.Inter2Nx2N}
    assert mode_constraints(_ref(I2), _ref(I2), True).allowed == {S, I2, IN}
    assert mode_constraints(_ref(S), None, False).allowed == ALL_MODES
    a = mode_constraints(_ref(PuMode.Inter2Nx2N), None, True).allowed
    assert not (a & AMP_MODES) and not (a & INTRA_MODES)
    a = mode_constraints(_ref(PuMode.Inter2NxnU), None, True).allowed
    assert a == ALL_MODES - INTRA_MODES


@given(st.sampled_from(list(PuMode)), st.one_of(st.none(), st.sampled_from(list(PuMode))), st.booleans())
def test_mode_constraints_keep_skip_and_are_subsets(h, l, same):
    a = mode_constraints(_ref(h), None if l is None else _ref(l), same).allowed
    assert PuMode.SkipMerge2Nx2N in a and a <= ALL_MODES
    if not same:
        assert a == ALL_MODES


def _mref(x, y, ref=0, mode=PuMode.Inter2Nx2N):
    return _ref(mode, ((MotionVector(x, y), ref),))


def test_me_heuristics_examples():
    m = me_constraints(_mref(4, 1, 1), _mref(3, 3), True, 16)
    assert m.search_range_override == 2 and m.mvp_override == MotionVector(4, 1) and m.forced_ref_index == 1
    assert me_constraints(_mref(4, 1), _mref(4, 1), True, 16).search_range_override == 0
    assert me_constraints(_mref(4, 1), _mref(3, 3), False, 16).empty
    # far apart: no range override
    assert me_constraints(_mref(40, 1), _mref(0, 0), True, 16).search_range_override is None


@given(st.integers(-64, 64), st.integers(-64, 64), st.integers(-64, 64), st.integers(-64, 64), st.integers(0, 32))
def test_me_range_is_max_coordinate_difference(a, b, c, d, r):
    m = me_constraints(_mref(a, b), _mref(c, d), True, r)
    diff = max(abs(a - c), abs(b - d))
    assert m.search_range_override == (diff if diff <= r else None)
