import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multienc.media import (
    Frame, Resolution, Sequence, Y4MError, cubic_kernel, downscale, read_y4m, resample_matrix,
    resample_plane_float, synthesize, upscale_bicubic, write_y4m, SYNTH_KINDS,
)


def _seq(w, h, n, seed):
    rng = np.random.default_rng(seed)
    fr = [Frame(rng.integers(0, 256, (h, w), dtype=np.uint8), rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8),
                rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8)) for _ in range(n)]
    return Sequence(fr, Fraction(30000, 1001))


@given(st.integers(1, 4), st.integers(1, 4), st.integers(2, 4), st.integers(0, 1000))
def test_y4m_roundtrip_is_identity(wb, hb, n, seed):
    s = _seq(8 * wb, 8 * hb, n, seed)
    data = write_y4m(s)
    back = read_y4m(data)
    assert back == s
    assert write_y4m(back) == data


def test_y4m_header_tokens_and_frame_params_preserved():
    s = _seq(16, 8, 2, 0)
    raw = write_y4m(s).replace(b"C420jpeg", b"C420jpeg XYSCSS=420JPEG").replace(b"FRAME\n", b"FRAME Ixyz\n", 1)
    back = read_y4m(io.BytesIO(raw))
    assert write_y4m(back) == raw


@pytest.mark.parametrize("raw,offset", [
    (b"NOTY4M W8 H8\n", 0),
    (b"YUV4MPEG2 W8 H8 F30:1 C444\n", None),
    (b"YUV4MPEG2 W8 H8 F30:1\nFRAME\n" + b"\0" * 10, None),
])
def test_y4m_errors_report_offsets(raw, offset):
    with pytest.raises(Y4MError) as ei:
        read_y4m(raw)
    if offset is not None:
        assert ei.value.offset == offset


def test_frame_validation():
    with pytest.raises(ValueError):
        Frame(np.zeros((12, 16), np.uint8), np.zeros((6, 8), np.uint8), np.zeros((6, 8), np.uint8))
    with pytest.raises(TypeError):
        Frame(np.zeros((8, 8), np.int32), np.zeros((4, 4), np.uint8), np.zeros((4, 4), np.uint8))


@pytest.mark.parametrize("kind", SYNTH_KINDS)
def test_synthesis_is_deterministic(kind):
    a = synthesize(kind, 64, 32, 3, 7)
    b = synthesize(kind, 64, 32, 3, 7)
    assert a == b
    assert (a.width, a.height, len(a)) == (64, 32, 3)


def test_synthesis_seed_changes_noise():
    assert synthesize("seeded-noise", 32, 32, 2, 1) != synthesize("seeded-noise", 32, 32, 2, 2)


def _keys_oracle(x, a=-0.5):
    # scalar Keys cubic written out per piece
    x = abs(x)
    if x < 1:
        return 1 - (a + 3) * x ** 2 + (a + 2) * x ** 3
    if x < 2:
        return -4 * a + 8 * a * x - 5 * a * x ** 2 + a * x ** 3
    return 0.0


@given(st.floats(-3, 3, allow_nan=False))
def test_cubic_kernel_matches_scalar_oracle(x):
    assert cubic_kernel(np.array([x]))[0] == pytest.approx(_keys_oracle(x), abs=1e-12)


@given(st.integers(2, 40), st.integers(2, 40))
def test_resample_rows_sum_to_one(n_in, n_out):
    m = resample_matrix(n_in, n_out)
    assert m.shape == (n_out, n_in)
    assert np.allclose(m.sum(axis=1), 1.0)


def test_constant_plane_survives_resampling():
    p = np.full((16, 24), 77, np.uint8)
    assert np.allclose(resample_plane_float(p, 48, 32), 77)


def test_identity_resample():
    rng = np.random.default_rng(0)
    p = rng.integers(0, 256, (16, 16)).astype(np.uint8)
    assert np.allclose(resample_plane_float(p, 16, 16), p)


def test_downscale_then_upscale_shapes():
    s = synthesize("moving-gradient", 64, 32, 2, 1)
    d = downscale(s, Resolution(1, 32, 16))
    assert (d.width, d.height, len(d)) == (32, 16, 2)
    u = upscale_bicubic(d.frames[0], Resolution(2, 64, 32))
    assert u.y.shape == (32, 64) and u.u.shape == (16, 32)
    with pytest.raises(ValueError):
        downscale(s, Resolution(1, 30, 16))
