"""Encoder driver, rate control and the .tvc container."""

import struct
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Optional

import numpy as np
from numba import njit

from . import _kernels as K
from ._tables import L_NCOLS, MAGIC_TVC, TVC_VERSION, DEPTH_OFFSET
from .constraints import FrameConstraints, count_violations, intersect
from .types import (
    CuNode, DepthBounds, EncodeStats, EncoderConfig, MeConstraints, ModeConstraints,
    MotionVector, PuMode,
)
from .. import analysis as _an
from ..media import Frame, Resolution, Sequence

_TVC_HDR = struct.Struct("<4sBHHHHIBB")


class BitstreamError(ValueError):
    pass


@dataclass(frozen=True)
class Bitstream:
    data: bytes

    @property
    def payload_bits(self):
        return 8 * (len(self.data) - _TVC_HDR.size)


def _planes32(frame: Frame):
    return tuple(np.ascontiguousarray(p, dtype=np.int32) for p in frame.planes)


def psnr(a, b):
    mse = np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2)
    if mse == 0:
        return 100.0
    return min(100.0, 10 * np.log10(255.0 ** 2 / mse))


class ConstraintError(ValueError):
    pass


def _resolve(source, f):
    if source is None:
        return None
    if callable(source):
        return source(f)
    return source[f]


@dataclass
class EncodeResult:
    bitstream: Bitstream
    analysis: "_an.SegmentAnalysis"
    stats: EncodeStats
    recon: Optional[Sequence] = None
    violations: int = 0

    def __iter__(self):
        return iter((self.bitstream, self.analysis, self.stats))


def encode_representation(seq: Sequence, config: EncoderConfig, constraints=None, reuse=None,
                          resolution: Optional[Resolution] = None, keep_recon=False) -> EncodeResult:
    """Encode seq: frame 0 intra, the rest P-frames with up to
    config.reference_count previous reconstructions as references.

    constraints / reuse are per-frame FrameConstraints, given as a list or a
    callable frame_index -> FrameConstraints (None = unrestricted); when both
    are given they are intersected with reuse taking precedence for ME.  The
    per-frame time covers building and normalising constraints and the RDO.
    """
    W, H = seq.width, seq.height
    res = resolution or Resolution(0, W, H)
    nctu = ((W + 63) // 64) * ((H + 63) // 64)
    lam, lamm = config.lambda_fix, config.lambda_motion_fix
    fr = seq.framerate
    header = _TVC_HDR.pack(MAGIC_TVC, TVC_VERSION, W, H, fr.numerator, fr.denominator,
                           len(seq), config.qp, config.reference_count)
    payload = []
    frames_an = []
    visits = np.zeros((len(seq), nctu, 4), np.int64)
    work = np.zeros((len(seq), nctu, K.N_WORK), np.int64)
    frame_times, frame_costs, row_times = [], [], []
    nrows = (H + 63) // 64
    refs = []
    recon = []
    fallbacks = 0
    violations = 0
    buf = np.zeros(W * H * 8 + 4096, np.uint8)
    leaves = np.zeros((W * H // 64, L_NCOLS), np.int32)
    lcost = np.zeros(W * H // 64, np.int64)
    t_start = time.perf_counter()
    for f, frame in enumerate(seq.frames):
        t0 = time.perf_counter()
        is_intra = f == 0
        c = _resolve(constraints, f)
        r = _resolve(reuse, f)
        if c is not None and r is not None:
            fc = intersect(c, r)
        else:
            fc = c if c is not None else r
        if fc is not None:
            if fc.size != (W, H):
                raise ConstraintError(f"constraint grid {fc.size} does not match frame {W}x{H}")
            fc = fc.normalized(is_intra)
        else:
            fc = _unconstrained(W, H, is_intra)
        oy, ou, ov = _planes32(frame)
        nref = min(len(refs), config.reference_count)
        if nref:
            ry = np.stack([p[0] for p in refs[:nref]])
            ru = np.stack([p[1] for p in refs[:nref]])
            rv = np.stack([p[2] for p in refs[:nref]])
        else:
            ry = oy[None]
            ru = ou[None]
            rv = ov[None]
        rec_y = np.zeros((H, W), np.int32)
        rec_u = np.zeros((H // 2, W // 2), np.int32)
        rec_v = np.zeros((H // 2, W // 2), np.int32)
        mf_mv = np.zeros((H // 4, W // 4, 2), np.int64)
        mf_ref = np.full((H // 4, W // 4), -1, np.int64)
        buf[:] = 0
        st = np.zeros(2, np.int64)
        fcost = np.zeros(1, np.int64)
        nleaf, fb = 0, 0
        rows = []
        t_row = t0
        for row in range(nrows):
            nleaf, fbr = K.encode_frame(
                oy, ou, ov, ry, ru, rv, nref, is_intra, config.qp, lam, lamm, config.search_range,
                *fc.arrays(), rec_y, rec_u, rec_v, mf_mv, mf_ref, buf, st, leaves, lcost, nleaf,
                visits[f], work[f], fcost, row, row + 1)
            fb += int(fbr)
            now = time.perf_counter()
            # the first row also carries the constraint preparation
            rows.append(now - t_row)
            t_row = now
        bits = (int(st[0]) + 7) // 8 * 8
        row_times.append(rows)
        frame_times.append(sum(rows))
        frame_costs.append(int(fcost[0]))
        fallbacks += fb
        violations += count_violations(fc, leaves[:nleaf], visits[f], nref, fb)
        payload.append(buf[: bits // 8].tobytes())
        frames_an.append(_an.FrameAnalysis(W, H, config.qp, leaves[:nleaf].copy(), lcost[:nleaf].copy()))
        planes = (rec_y, rec_u, rec_v)
        refs.insert(0, planes)
        del refs[config.reference_count:]
        recon.append(Frame(*(p.astype(np.uint8) for p in planes)))
    wall = time.perf_counter() - t_start
    data = header + b"".join(payload)
    total_bits = 8 * sum(len(p) for p in payload)
    rate = total_bits * float(fr) / len(seq)
    psnr_y = psnr(np.stack([f.y for f in recon]), seq.luma_stack())
    stats = EncodeStats(wall, total_bits, rate, psnr_y, visits, frame_times,
                        int(sum(frame_costs)), frame_costs, fallbacks, row_times, work)
    analysis = _an.SegmentAnalysis(res, config.qp, config.target_bitrate or 0, frames_an)
    rec_seq = Sequence(recon, seq.framerate) if keep_recon else None
    return EncodeResult(Bitstream(data), analysis, stats, rec_seq, violations)


_UNC_CACHE: Dict = {}


def _unconstrained(W, H, is_intra):
    key = (W, H, is_intra)
    if key not in _UNC_CACHE:
        _UNC_CACHE[key] = FrameConstraints.unconstrained(W, H).normalized(is_intra)
    return _UNC_CACHE[key]


# ----------------------------------------------------------------- decode

def decode(bitstream) -> Sequence:
    data = bitstream.data if isinstance(bitstream, Bitstream) else bytes(bitstream)
    if len(data) < _TVC_HDR.size:
        raise BitstreamError("truncated header")
    magic, ver, W, H, num, den, nframes, qp, nref_max = _TVC_HDR.unpack_from(data)
    if magic != MAGIC_TVC:
        raise BitstreamError(f"bad magic {magic!r}")
    if ver != TVC_VERSION:
        raise BitstreamError(f"unsupported version {ver}")
    if W % 8 or H % 8 or not W or not H or den == 0 or qp > 51:
        raise BitstreamError("invalid header fields")
    buf = np.frombuffer(data, np.uint8, offset=_TVC_HDR.size)
    st = np.zeros(2, np.int64)
    refs = []
    frames = []
    for f in range(nframes):
        nref = min(len(refs), nref_max)
        rec = [np.zeros((H, W), np.int32), np.zeros((H // 2, W // 2), np.int32),
               np.zeros((H // 2, W // 2), np.int32)]
        if nref:
            ry, ru, rv = (np.stack([p[i] for p in refs[:nref]]) for i in range(3))
        else:
            ry, ru, rv = (r[None] for r in rec)
        mf_mv = np.zeros((H // 4, W // 4, 2), np.int64)
        mf_ref = np.full((H // 4, W // 4), -1, np.int64)
        K.decode_frame(buf, st, W, H, nref, f == 0, qp, ry, ru, rv, *rec, mf_mv, mf_ref)
        if st[1] == 1:
            raise BitstreamError(f"truncated payload in frame {f}")
        if st[1] != 0:
            raise BitstreamError(f"corrupt payload in frame {f}")
        refs.insert(0, rec)
        del refs[nref_max:]
        frames.append(Frame(*(p.astype(np.uint8) for p in rec)))
    return Sequence(frames, Fraction(num, den))


# ----------------------------------------------------------- rate control

@dataclass
class RateControlResult:
    qp: int
    achieved_bitrate: float
    saturated: bool
    evaluations: Dict[int, float]


def solve_qp_for_bitrate(seq: Sequence, target_bitrate: float, config: EncoderConfig,
                         rate_of: Optional[Callable[[int], float]] = None) -> RateControlResult:
    """Bisection for the smallest QP whose achieved bitrate does not exceed
    the target, then the closer of it and its predecessor (the one not above
    the target on ties).  rate_of(qp) may be supplied to memoise encodes."""
    if target_bitrate <= 0:
        raise ValueError("target bitrate must be positive")
    evals: Dict[int, float] = {}

    def rate(q):
        if q not in evals:
            if rate_of is not None:
                evals[q] = float(rate_of(q))
            else:
                evals[q] = encode_representation(seq, config.with_qp(q)).stats.achieved_bitrate
        return evals[q]

    lo, hi = -1, 52          # rate(-1) = +inf, rate(52) = -inf
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if rate(mid) <= target_bitrate:
            hi = mid
        else:
            lo = mid
    if hi == 52:
        q = 51
    elif hi == 0:
        q = 0
    else:
        over, under = rate(hi - 1), rate(hi)
        q = hi if (target_bitrate - under) <= (over - target_bitrate) else hi - 1
    achieved = rate(q)
    saturated = q in (0, 51) and abs(achieved - target_bitrate) > 0.1 * target_bitrate
    return RateControlResult(q, achieved, saturated, evals)


# ------------------------------------------------------- single-CTU entry

@dataclass
class CtuContext:
    """Inputs for an isolated CTU decision: the source frame, previous
    reconstructions (most recent first) and the motion field of the CTUs to
    the left/above (zero motion when absent)."""
    frame: Frame
    references: tuple
    ctu: tuple                      # (row, col)
    config: EncoderConfig
    recon: Optional[Frame] = None   # reconstruction holding left/above CTUs


def rdo_ctu(ctx: CtuContext, bounds: DepthBounds = DepthBounds(), modes: ModeConstraints = ModeConstraints(),
            me: MeConstraints = MeConstraints()):
    """Run the quadtree RDO for one CTU; returns (CuNode tree, visits[4])."""
    W, H = ctx.frame.width, ctx.frame.height
    r, c = ctx.ctu
    is_intra = len(ctx.references) == 0
    fc = FrameConstraints.from_ctu(W, H, {(r, c): bounds}, {(r, c): modes}, {(r, c): me}).normalized(is_intra)
    oy, _, _ = _planes32(ctx.frame)
    rec = _planes32(ctx.recon)[0] if ctx.recon is not None else np.zeros((H, W), np.int32)
    nref = min(len(ctx.references), ctx.config.reference_count)
    ry = np.stack([_planes32(f)[0] for f in ctx.references[:nref]]) if nref else oy[None]
    cfg = ctx.config
    out = _rdo_one(oy, rec, ry, nref, W, H, c * 64, r * 64, cfg.qp, cfg.lambda_fix, cfg.lambda_motion_fix,
                   cfg.search_range, is_intra, *fc.arrays())
    cu_mode, cu_merge, cu_mv, cu_ref, cu_dir, cu_leaf, cu_split, cu_cost, visits = out
    lam = cfg.lambda_fix

    def build(d, x, y):
        cid = int(DEPTH_OFFSET[d]) + ((y - r * 64) >> (6 - d)) * (1 << d) + ((x - c * 64) >> (6 - d))
        if cu_split[cid]:
            s = 64 >> d
            kids = [build(d + 1, x + (q & 1) * s // 2, y + (q >> 1) * s // 2) for q in range(4)
                    if x + (q & 1) * s // 2 < W and y + (q >> 1) * s // 2 < H]
            inside = x + s <= W and y + s <= H
            return CuNode(d, x, y, True, sum(k.rd_cost for k in kids) + (lam if inside else 0), children=kids)
        mode = PuMode(int(cu_mode[cid]))
        n = mode.pu_count
        motion = [] if mode.is_intra else [(MotionVector(int(cu_mv[cid, q, 0]), int(cu_mv[cid, q, 1])),
                                            int(cu_ref[cid, q])) for q in range(n)]
        intra = [int(cu_dir[cid, q]) for q in range(n)] if mode.is_intra else []
        return CuNode(d, x, y, False, int(cu_leaf[cid]), mode, motion, intra,
                      int(cu_merge[cid]) if mode == PuMode.SkipMerge2Nx2N else -1)

    return build(0, c * 64, r * 64), visits


@njit(cache=True)
def _rdo_one(oy, rec, ry, nref, W, H, cx, cy, qp, lam, lamm, rng, is_intra,
             lo8, hi8, mode_mask, me_mode, me_ref, me_range, me_mvp, me_set):
    q64 = K.qstep64(qp)
    side = 2 * rng + 1
    tab = np.zeros((max(nref, 1), 3 * side * side, 17, 17), np.int64)
    tinfo = np.zeros(9, np.int64)
    rowbuf = np.zeros(64, np.int64)
    pred = np.zeros((64, 64), np.int64)
    res = np.zeros((32, 32), np.float64)
    tmp = np.zeros((2, 32, 32), np.float64)
    lev = np.zeros((32, 32), np.int64)
    rbuf = np.zeros((32, 32), np.int64)
    cu_mode = np.zeros(85, np.int64)
    cu_merge = np.zeros(85, np.int64)
    cu_cbf = np.zeros(85, np.int64)
    cu_mv = np.zeros((85, 4, 2), np.int64)
    cu_ref = np.zeros((85, 4), np.int64)
    cu_dir = np.zeros((85, 4), np.int64)
    cu_leaf = np.zeros(85, np.int64)
    cu_split = np.zeros(85, np.bool_)
    cu_cost = np.zeros(85, np.int64)
    visits = np.zeros(4, np.int64)
    fallback = np.zeros(1, np.int64)
    work = np.zeros(K.N_WORK, np.int64)
    mf_mv = np.zeros((H >> 2, W >> 2, 2), np.int64)
    mf_ref = np.full((H >> 2, W >> 2), -1, np.int64)
    K.rdo_ctu(oy, rec, ry, nref, W, H, cx, cy, mf_mv, mf_ref, q64, lam, lamm, rng,
              is_intra, lo8, hi8, mode_mask, me_mode, me_ref, me_range, me_mvp, me_set,
              pred, tab, tinfo, rowbuf, res, tmp, lev, rbuf,
              cu_mode, cu_merge, cu_cbf, cu_mv, cu_ref, cu_dir, cu_leaf, cu_split, cu_cost,
              visits, fallback, work)
    return cu_mode, cu_merge, cu_mv, cu_ref, cu_dir, cu_leaf, cu_split, cu_cost, visits


# ---------------------------------------------------------- motion search

def motion_search(block, references, mvp: MotionVector, search_range: int, me: MeConstraints = MeConstraints(),
                  lam_motion_fix: int = 0):
    """Full integer-pel search of block = (plane, x, y, w, h) over reference
    planes (most recent first) in the window of radius search_range (or the
    override) around mvp (or the override centre).

    Returns (MotionVector, ref_index, cost) with cost = SAD + lambda_motion *
    (mv bits relative to mvp + reference bits)."""
    plane, x, y, w, h = block
    refs = np.stack([np.asarray(r, np.int32) for r in references])
    org = np.ascontiguousarray(plane, dtype=np.int32)
    H, W = org.shape
    r_lo, r_hi = 0, len(refs)
    if me.forced_ref_index is not None:
        r_lo, r_hi = me.forced_ref_index, me.forced_ref_index + 1
    rng = search_range if me.search_range_override is None else me.search_range_override
    centre = me.mvp_override or mvp
    out = np.zeros(3, np.int64)
    refbits = 1 if len(refs) > 1 else 0
    cost = K.search_direct(org, refs, r_lo, r_hi, x, y, w, h, centre.x, centre.y, rng,
                           mvp.x, mvp.y, lam_motion_fix, refbits, W, H, out)
    return MotionVector(int(out[0]), int(out[1])), int(out[2]), cost / 256.0
