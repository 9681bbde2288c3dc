"""Raw video containers, Y4M I/O, synthetic clips and bicubic resampling."""

import io
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import List, Optional

import numpy as np


class Y4MError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Resolution:
    index: int
    width: int
    height: int

    @property
    def pixels(self):
        return self.width * self.height

    def __str__(self):
        return f"{self.width}x{self.height}"


@dataclass(frozen=True, eq=False)
class Frame:
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        h, w = self.y.shape
        if w % 8 or h % 8:
            raise ValueError(f"frame size {w}x{h} is not a multiple of 8")
        if self.u.shape != (h // 2, w // 2) or self.v.shape != (h // 2, w // 2):
            raise ValueError("chroma planes must be half the luma size in each direction")
        for p in (self.y, self.u, self.v):
            if p.dtype != np.uint8:
                raise TypeError("planes must be uint8")

    @property
    def width(self):
        return self.y.shape[1]

    @property
    def height(self):
        return self.y.shape[0]

    @property
    def planes(self):
        return self.y, self.u, self.v

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.planes, other.planes))

    def __hash__(self):
        return hash(self.y.tobytes()[:64])


@dataclass(frozen=True, eq=False)
class Sequence:
    frames: tuple
    framerate: Fraction = Fraction(30)
    # raw header tokens after the signature and per-frame FRAME parameters, so
    # a parsed stream can be written back byte-for-byte
    y4m_tokens: Optional[tuple] = None
    frame_tokens: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "framerate", Fraction(self.framerate))
        if len(self.frames) < 2:
            raise ValueError("a sequence needs at least 2 frames")
        w, h = self.frames[0].width, self.frames[0].height
        if any(f.width != w or f.height != h for f in self.frames):
            raise ValueError("all frames must share the same dimensions")

    @property
    def width(self):
        return self.frames[0].width

    @property
    def height(self):
        return self.frames[0].height

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, Sequence):
            return NotImplemented
        return (self.framerate == other.framerate and len(self) == len(other)
                and all(a == b for a, b in zip(self.frames, other.frames)))

    def __hash__(self):
        return hash((len(self), self.width, self.height))

    def luma_stack(self):
        return np.stack([f.y for f in self.frames])


# ------------------------------------------------------------------ Y4M

_SIG = b"YUV4MPEG2"


def read_y4m(stream) -> Sequence:
    """Parse a YUV4MPEG2 stream (bytes or binary file object) with 4:2:0 chroma."""
    data = stream if isinstance(stream, (bytes, bytearray, memoryview)) else stream.read()
    data = bytes(data)
    nl = data.find(b"\n")
    if not data.startswith(_SIG) or nl < 0:
        raise Y4MError("missing YUV4MPEG2 signature", 0)
    header = data[:nl].decode("ascii", errors="replace")
    tokens = header.split(" ")[1:]
    width = height = None
    rate = Fraction(25)
    for tok in tokens:
        if not tok:
            raise Y4MError("empty header token", 0)
        tag, val = tok[0], tok[1:]
        try:
            if tag == "W":
                width = int(val)
            elif tag == "H":
                height = int(val)
            elif tag == "F":
                num, den = val.split(":")
                rate = Fraction(int(num), int(den))
            elif tag == "C" and not val.startswith("420"):
                raise Y4MError(f"unsupported chroma tag C{val}", data.find(tok.encode()))
        except (ValueError, ZeroDivisionError) as exc:
            if isinstance(exc, Y4MError):
                raise
            raise Y4MError(f"malformed header token {tok!r}", data.find(tok.encode())) from None
    if not width or not height:
        raise Y4MError("header lacks W/H", 0)
    fsize = width * height * 3 // 2
    pos = nl + 1
    frames, ftoks = [], []
    while pos < len(data):
        if not data.startswith(b"FRAME", pos):
            raise Y4MError(f"expected FRAME marker for frame {len(frames)}", pos)
        end = data.find(b"\n", pos)
        if end < 0:
            raise Y4MError(f"truncated FRAME header of frame {len(frames)}", pos)
        ftoks.append(data[pos + 5:end].decode("ascii", errors="replace"))
        pos = end + 1
        if pos + fsize > len(data):
            raise Y4MError(f"truncated payload in frame {len(frames)}", len(data))
        buf = np.frombuffer(data, np.uint8, fsize, pos)
        ysz = width * height
        csz = ysz // 4
        frames.append(Frame(
            buf[:ysz].reshape(height, width).copy(),
            buf[ysz:ysz + csz].reshape(height // 2, width // 2).copy(),
            buf[ysz + csz:].reshape(height // 2, width // 2).copy(),
        ))
        pos += fsize
    return Sequence(frames, rate, tuple(tokens), tuple(ftoks))


def write_y4m(seq: Sequence, stream=None):
    """Serialise seq as Y4M; returns the bytes when no stream is given."""
    out = io.BytesIO() if stream is None else stream
    if seq.y4m_tokens is not None:
        toks = list(seq.y4m_tokens)
    else:
        fr = seq.framerate
        toks = [f"W{seq.width}", f"H{seq.height}", f"F{fr.numerator}:{fr.denominator}",
                "Ip", "A1:1", "C420jpeg"]
    out.write(b" ".join([_SIG] + [t.encode("ascii") for t in toks]) + b"\n")
    for k, f in enumerate(seq.frames):
        extra = seq.frame_tokens[k] if seq.frame_tokens is not None else ""
        out.write(b"FRAME" + extra.encode("ascii") + b"\n")
        for p in f.planes:
            out.write(np.ascontiguousarray(p).tobytes())
    if stream is None:
        return out.getvalue()
    return None


# ------------------------------------------------------- synthetic clips

SYNTH_KINDS = ("moving-gradient", "checkerboard-pan", "seeded-noise")


def _chroma_from(y, bias):
    h, w = y.shape
    c = y.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return np.clip(128 + (c - 128) * 0.25 + bias, 0, 255).astype(np.uint8)


def synthesize(kind, width, height, frame_count, seed=1, velocity=None, noise=None) -> Sequence:
    """Deterministic synthetic clip.

    moving-gradient: a sawtooth luma ramp translating by an integer velocity
    (default (2, 0) px/frame).  checkerboard-pan: 16 px checkerboard with soft
    texture panning by (3, 1).  seeded-noise: a low-pass random field panning
    by a seed-dependent velocity.  ``noise`` adds seeded temporal Gaussian
    noise of that standard deviation (default 0 for the first two kinds, 2 for
    seeded-noise).
    """
    if width % 8 or height % 8:
        raise ValueError("dimensions must be multiples of 8")
    if frame_count < 2:
        raise ValueError("frame_count must be >= 2")
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    if kind == "moving-gradient":
        vx, vy = velocity or (2, 0)
        sigma = 0.0 if noise is None else noise

        def luma(t):
            X = xx - vx * t
            Y = yy - vy * t
            return (2 * X + Y) % 256 * 0.8 + 24 + 12 * np.sin(Y / 9.0)
    elif kind == "checkerboard-pan":
        vx, vy = velocity or (3, 1)
        sigma = 0.0 if noise is None else noise
        tex = rng.normal(0, 6, (height + 64, width + 64))

        def luma(t):
            X = xx - vx * t
            Y = yy - vy * t
            board = ((X // 16 + Y // 16) % 2) * 120 + 60
            return board + tex[(Y % (height + 64)), (X % (width + 64))]
    else:
        vx, vy = velocity or (int(rng.integers(-3, 4)), int(rng.integers(-2, 3)))
        sigma = 2.0 if noise is None else noise
        ph, pw = height + 128, width + 128
        field_ = rng.normal(0, 1, (ph, pw))
        # separable box smoothing keeps the field textured but compressible
        k = np.ones(5) / 5.0
        field_ = np.apply_along_axis(lambda r: np.convolve(np.r_[r[-2:], r, r[:2]], k, "valid"), 1, field_)
        field_ = np.apply_along_axis(lambda r: np.convolve(np.r_[r[-2:], r, r[:2]], k, "valid"), 0, field_)
        field_ = 128 + field_ * (50.0 / field_.std())

        def luma(t):
            return field_[(yy - vy * t) % ph, (xx - vx * t) % pw]
    noise_rng = np.random.default_rng([seed, 7])
    frames = []
    for t in range(frame_count):
        y = luma(t)
        if sigma > 0:
            y = y + noise_rng.normal(0, sigma, y.shape)
        y8 = np.clip(np.rint(y), 0, 255).astype(np.uint8)
        frames.append(Frame(y8, _chroma_from(y8.astype(np.float64), 8), _chroma_from(255.0 - y8, -8)))
    return Sequence(frames, Fraction(30))


# -------------------------------------------------------------- scaling

A_BICUBIC = -0.5


def cubic_kernel(x, a=A_BICUBIC):
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    m1 = x <= 1
    m2 = (x > 1) & (x < 2)
    out[m1] = (a + 2) * x[m1] ** 3 - (a + 3) * x[m1] ** 2 + 1
    out[m2] = a * x[m2] ** 3 - 5 * a * x[m2] ** 2 + 8 * a * x[m2] - 4 * a
    return out


@lru_cache(maxsize=64)
def resample_matrix(n_in, n_out):
    """Dense (n_out, n_in) bicubic weights on a half-pel-centred grid.

    For downscaling the kernel is stretched by the scale factor so it also
    low-passes; edge samples are replicated."""
    if n_in == n_out:
        return np.eye(n_in)
    scale = n_in / n_out
    stretch = max(scale, 1.0)
    centres = (np.arange(n_out) + 0.5) * scale - 0.5
    lo = np.floor(centres - 2 * stretch).astype(int) + 1
    taps = int(np.ceil(4 * stretch)) + 1
    idx = lo[:, None] + np.arange(taps)[None, :]
    w = cubic_kernel((idx - centres[:, None]) / stretch)
    w /= w.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.repeat(np.arange(n_out), taps), np.clip(idx, 0, n_in - 1).ravel()), w.ravel())
    m.setflags(write=False)
    return m


def resample_plane_float(plane, width, height):
    p = np.asarray(plane, dtype=np.float64)
    return resample_matrix(p.shape[0], height) @ p @ resample_matrix(p.shape[1], width).T


def resample_plane(plane, width, height):
    if plane.shape == (height, width):
        return plane.copy()
    return np.clip(np.rint(resample_plane_float(plane, width, height)), 0, 255).astype(np.uint8)


def _resize_frame(f: Frame, width, height):
    return Frame(resample_plane(f.y, width, height),
                 resample_plane(f.u, width // 2, height // 2),
                 resample_plane(f.v, width // 2, height // 2))


def downscale(seq: Sequence, target: Resolution) -> Sequence:
    if target.width > seq.width or target.height > seq.height:
        raise ValueError("downscale cannot enlarge a sequence")
    if target.width % 8 or target.height % 8:
        raise ValueError("target dimensions must be multiples of 8")
    if (target.width, target.height) == (seq.width, seq.height):
        return seq
    return Sequence([_resize_frame(f, target.width, target.height) for f in seq.frames], seq.framerate)


def upscale_bicubic(frame: Frame, target: Resolution) -> Frame:
    if target.width < frame.width or target.height < frame.height:
        raise ValueError("upscale target smaller than the frame")
    if (target.width, target.height) == (frame.width, frame.height):
        return Frame(frame.y.copy(), frame.u.copy(), frame.v.copy())
    return _resize_frame(frame, target.width, target.height)


def upscale_luma_stack(frames: List[Frame], width, height):
    """Float luma of every frame upscaled to width x height (rounded, clamped)."""
    if (frames[0].width, frames[0].height) == (width, height):
        return np.stack([f.y for f in frames]).astype(np.float64)
    my = resample_matrix(frames[0].height, height)
    mx = resample_matrix(frames[0].width, width)
    return np.stack([np.clip(np.rint(my @ f.y.astype(np.float64) @ mx.T), 0, 255) for f in frames])
