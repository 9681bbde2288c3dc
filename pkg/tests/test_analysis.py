from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multienc.analysis import AnalysisFormatError, colocate, colocated_maps, deserialize, scale_mv, serialize
from multienc.media import Resolution

from conftest import encoded


def test_analysis_roundtrip_identity():
    for kind in ("checkerboard-pan", "seeded-noise", "moving-gradient"):
        a = encoded(kind).analysis
        assert deserialize(serialize(a)) == a


def test_ctu_tree_leaves_match_leaf_table():
    a = encoded().analysis
    fa = a.frames[1]
    n = 0
    for (r, c), tree in fa.ctus():
        for leaf in tree.leaves():
            n += 1
            assert leaf.x // 64 == c and leaf.y // 64 == r
    assert n == len(fa.leaves)


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:10], "truncated"),
    (lambda b: b[: len(b) // 2], "truncated"),
])
def test_malformed_analysis_rejected(mutate, msg):
    data = serialize(encoded().analysis)
    with pytest.raises(AnalysisFormatError, match=msg):
        deserialize(mutate(data))


def _round_half_away(v, num, den):
    q = Fraction(v * num, den)
    mag = abs(q)
    r = int(mag) + (1 if mag - int(mag) >= Fraction(1, 2) else 0)
    return r if q >= 0 else -r


@given(st.integers(-200, 200), st.integers(1, 8), st.integers(1, 8))
def test_scale_mv_rounds_half_away_from_zero(v, num, den):
    assert int(scale_mv(np.array([v]), num, den)[0]) == _round_half_away(v, num, den)


def test_spec_mv_scaling_example():
    assert list(scale_mv(np.array([3, -2]), 2, 1)) == [6, -4]


def test_colocated_identity_and_dyadic():
    fa = encoded().analysis.frames[1]
    m = colocated_maps(fa, 128, 64)
    assert np.array_equal(m.depth8, fa.maps[0]) and m.scale == 1
    up = colocated_maps(fa, 256, 128)
    assert up.scale == 4
    # centre-sample mapping: target block (by, bx) reads reference block (by // 2, bx // 2)
    assert np.array_equal(up.depth8, np.repeat(np.repeat(fa.maps[0], 2, 0), 2, 1))


def test_colocate_rejects_missing_frame():
    a = encoded().analysis
    with pytest.raises(ValueError):
        colocate(a, Resolution(2, 256, 128), (0, 0), len(a.frames))


def test_colocate_rows():
    a = encoded().analysis
    rows = colocate(a, Resolution(2, 256, 128), (0, 0), 1)
    assert len(rows) == 8 and all(len(r) == 8 for r in rows)
    assert rows[0][0].source_scale == 4
