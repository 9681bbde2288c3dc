"""Encoder analysis metadata: storage, the .amet format and co-location.

A frame's decisions are kept as a leaf matrix (one row per coded CU in
bitstream order, columns from ``codec._tables``) plus per-leaf RD costs.
Quadtrees of :class:`CuNode` are rebuilt on demand.
"""

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import List

import numpy as np
from numba import njit

from .codec._kernels import put_bits, put_se, get_bits, get_se
from .codec._tables import (
    PU_COUNT, PU_GEOM, L_CTU, L_X, L_Y, L_DEPTH, L_MODE, L_MERGE, L_CBF,
    L_MV, L_REF, L_DIR, L_NCOLS,
)
from .codec.types import CuNode, MotionVector, PuMode, lambda_for_qp
from .media import Resolution

AMET_MAGIC = b"AMET"
AMET_VERSION = 1
_HDR = struct.Struct("<4sBBHHBII")
COST_MAX = (1 << 32) - 1


class AnalysisFormatError(ValueError):
    pass


@dataclass(eq=False)
class FrameAnalysis:
    width: int
    height: int
    qp: int
    leaves: np.ndarray          # (n, L_NCOLS) int32
    costs: np.ndarray           # (n,) int64, saturated to u32

    def __post_init__(self):
        self.leaves = np.ascontiguousarray(self.leaves, dtype=np.int32)
        self.leaves[:, L_CBF] = 0
        self.costs = np.minimum(np.asarray(self.costs, dtype=np.int64), COST_MAX)

    @property
    def grid(self):
        return (self.height + 63) // 64, (self.width + 63) // 64

    def __eq__(self, other):
        return (isinstance(other, FrameAnalysis) and self.width == other.width
                and self.height == other.height and self.qp == other.qp
                and np.array_equal(self.leaves, other.leaves)
                and np.array_equal(self.costs, other.costs))

    @cached_property
    def _ctu_starts(self):
        n = self.grid[0] * self.grid[1]
        return np.searchsorted(self.leaves[:, L_CTU], np.arange(n + 1))

    def ctu_tree(self, row, col) -> CuNode:
        ci = row * self.grid[1] + col
        a, b = self._ctu_starts[ci], self._ctu_starts[ci + 1]
        lam = int(round(256 * lambda_for_qp(self.qp)))
        node, k = self._build(a, b, 0, col * 64, row * 64, lam)
        if k != b:
            raise ValueError(f"leaves of CTU {ci} do not form a quadtree")
        return node

    def _build(self, k, end, d, x, y, lam):
        if k < end:
            row = self.leaves[k]
            if row[L_X] == x and row[L_Y] == y and row[L_DEPTH] == d:
                return self._leaf_node(k), k + 1
        if d == 3:
            raise ValueError("split below depth 3")
        s = 64 >> d
        inside = x + s <= self.width and y + s <= self.height
        children = []
        h = s // 2
        for q in range(4):
            cx, cy = x + (q & 1) * h, y + (q >> 1) * h
            if cx < self.width and cy < self.height:
                child, k = self._build(k, end, d + 1, cx, cy, lam)
                children.append(child)
        cost = sum(c.rd_cost for c in children) + (lam if inside else 0)
        return CuNode(d, x, y, True, cost, children=children), k

    def _leaf_node(self, k):
        row = self.leaves[k]
        mode = PuMode(int(row[L_MODE]))
        n = mode.pu_count
        motion, intra = [], []
        if mode.is_intra:
            intra = [int(row[L_DIR + i]) for i in range(n)]
        else:
            motion = [(MotionVector(int(row[L_MV + 2 * i]), int(row[L_MV + 2 * i + 1])), int(row[L_REF + i]))
                      for i in range(n)]
        return CuNode(int(row[L_DEPTH]), int(row[L_X]), int(row[L_Y]), False, int(self.costs[k]),
                      mode, motion, intra, int(row[L_MERGE]))

    def ctus(self):
        rows, cols = self.grid
        for r in range(rows):
            for c in range(cols):
                yield (r, c), self.ctu_tree(r, c)

    @cached_property
    def maps(self):
        """Per-8x8 (depth, mode, cost, leaf index) and per-4x4 (mv, ref) arrays."""
        return _leaf_maps(self.leaves, self.costs, self.width, self.height)


@dataclass(eq=False)
class SegmentAnalysis:
    resolution: Resolution
    qp: int
    target_bitrate: float
    frames: List[FrameAnalysis] = field(default_factory=list)

    def __eq__(self, other):
        return (isinstance(other, SegmentAnalysis) and self.resolution == other.resolution
                and self.qp == other.qp and int(self.target_bitrate) == int(other.target_bitrate)
                and len(self.frames) == len(other.frames)
                and all(a == b for a, b in zip(self.frames, other.frames)))


@njit(cache=True)
def _leaf_maps(leaves, costs, W, H):
    H8, W8, H4, W4 = H >> 3, W >> 3, H >> 2, W >> 2
    depth8 = np.zeros((H8, W8), np.int64)
    mode8 = np.zeros((H8, W8), np.int64)
    cost8 = np.zeros((H8, W8), np.int64)
    idx8 = np.zeros((H8, W8), np.int64)
    mv4 = np.zeros((H4, W4, 2), np.int64)
    ref4 = np.full((H4, W4), -1, np.int64)
    for k in range(leaves.shape[0]):
        x = leaves[k, L_X]
        y = leaves[k, L_Y]
        d = leaves[k, L_DEPTH]
        m = leaves[k, L_MODE]
        s = 64 >> d
        for by in range(y >> 3, (y + s) >> 3):
            for bx in range(x >> 3, (x + s) >> 3):
                depth8[by, bx] = d
                mode8[by, bx] = m
                cost8[by, bx] = costs[k]
                idx8[by, bx] = k
        if m <= 8:
            for q in range(PU_COUNT[m]):
                px = x + PU_GEOM[m, q, 0] * s // 4
                py = y + PU_GEOM[m, q, 1] * s // 4
                pw = PU_GEOM[m, q, 2] * s // 4
                ph = PU_GEOM[m, q, 3] * s // 4
                for gy in range(py >> 2, (py + ph) >> 2):
                    for gx in range(px >> 2, (px + pw) >> 2):
                        mv4[gy, gx, 0] = leaves[k, L_MV + 2 * q]
                        mv4[gy, gx, 1] = leaves[k, L_MV + 2 * q + 1]
                        ref4[gy, gx] = leaves[k, L_REF + q]
    return depth8, mode8, cost8, idx8, mv4, ref4


# ------------------------------------------------------------ .amet I/O

@njit(cache=True)
def _write_frame(leaves, costs, W, H, buf, st):
    nctu_x = (W + 63) >> 6
    nctu_y = (H + 63) >> 6
    stack = np.zeros((96, 3), np.int64)
    k = 0
    pmx = 0
    pmy = 0
    for t in range(nctu_y):
        for u in range(nctu_x):
            sp = 1
            stack[0, 0] = 0
            stack[0, 1] = u * 64
            stack[0, 2] = t * 64
            while sp > 0:
                sp -= 1
                d = stack[sp, 0]
                x = stack[sp, 1]
                y = stack[sp, 2]
                s = 64 >> d
                if x >= W or y >= H:
                    continue
                inside = x + s <= W and y + s <= H
                is_leaf = k < leaves.shape[0] and leaves[k, L_X] == x and leaves[k, L_Y] == y and leaves[k, L_DEPTH] == d
                if not is_leaf:
                    if d == 3:
                        return -1
                    if inside:
                        put_bits(buf, st, 1, 1)
                    h = s >> 1
                    for q in range(3, -1, -1):
                        stack[sp, 0] = d + 1
                        stack[sp, 1] = x + (q & 1) * h
                        stack[sp, 2] = y + (q >> 1) * h
                        sp += 1
                    continue
                if d < 3:
                    put_bits(buf, st, 0, 1)
                m = leaves[k, L_MODE]
                put_bits(buf, st, m, 4)
                if m == 0:
                    put_bits(buf, st, leaves[k, L_MERGE], 2)
                if m <= 8:
                    for q in range(PU_COUNT[m]):
                        put_bits(buf, st, leaves[k, L_REF + q], 1)
                        mx = leaves[k, L_MV + 2 * q]
                        my = leaves[k, L_MV + 2 * q + 1]
                        put_se(buf, st, mx - pmx)
                        put_se(buf, st, my - pmy)
                        pmx = mx
                        pmy = my
                else:
                    for q in range(PU_COUNT[m]):
                        put_bits(buf, st, leaves[k, L_DIR + q], 2)
                put_bits(buf, st, costs[k], 32)
                k += 1
    if st[0] & 7:
        st[0] += 8 - (st[0] & 7)
    return k


@njit(cache=True)
def _read_frame(buf, st, W, H, leaves, costs):
    """Returns (leaf count, status, ctu index); status 0 ok, 1 truncated, 2 malformed."""
    nctu_x = (W + 63) >> 6
    nctu_y = (H + 63) >> 6
    stack = np.zeros((96, 3), np.int64)
    k = 0
    pmx = 0
    pmy = 0
    for t in range(nctu_y):
        for u in range(nctu_x):
            ci = t * nctu_x + u
            sp = 1
            stack[0, 0] = 0
            stack[0, 1] = u * 64
            stack[0, 2] = t * 64
            while sp > 0:
                sp -= 1
                d = stack[sp, 0]
                x = stack[sp, 1]
                y = stack[sp, 2]
                s = 64 >> d
                if x >= W or y >= H:
                    continue
                inside = x + s <= W and y + s <= H
                split = False
                if d < 3:
                    split = get_bits(buf, st, 1) == 1 if inside else True
                if st[1] != 0:
                    return k, 1, ci
                if split:
                    h = s >> 1
                    for q in range(3, -1, -1):
                        stack[sp, 0] = d + 1
                        stack[sp, 1] = x + (q & 1) * h
                        stack[sp, 2] = y + (q >> 1) * h
                        sp += 1
                    continue
                if k >= leaves.shape[0]:
                    return k, 2, ci
                m = get_bits(buf, st, 4)
                if m > 10:
                    return k, 2, ci
                row = leaves[k]
                for c in range(L_NCOLS):
                    row[c] = 0
                row[L_CTU] = ci
                row[L_X] = x
                row[L_Y] = y
                row[L_DEPTH] = d
                row[L_MODE] = m
                row[L_MERGE] = -1
                for q in range(4):
                    row[L_DIR + q] = -1
                if m == 0:
                    row[L_MERGE] = get_bits(buf, st, 2)
                if m <= 8:
                    for q in range(PU_COUNT[m]):
                        row[L_REF + q] = get_bits(buf, st, 1)
                        pmx += get_se(buf, st)
                        pmy += get_se(buf, st)
                        row[L_MV + 2 * q] = pmx
                        row[L_MV + 2 * q + 1] = pmy
                else:
                    for q in range(4):
                        row[L_REF + q] = -1
                    for q in range(PU_COUNT[m]):
                        row[L_DIR + q] = get_bits(buf, st, 2)
                costs[k] = get_bits(buf, st, 32)
                if st[1] != 0:
                    return k, 1, ci
                k += 1
    if st[0] & 7:
        st[0] += 8 - (st[0] & 7)
    return k, 0, -1


def serialize(a: SegmentAnalysis) -> bytes:
    r = a.resolution
    out = [_HDR.pack(AMET_MAGIC, AMET_VERSION, r.index, r.width, r.height, a.qp,
                     int(a.target_bitrate), len(a.frames))]
    for fa in a.frames:
        cap = fa.leaves.shape[0] * 40 + 16
        buf = np.zeros(cap, np.uint8)
        st = np.zeros(2, np.int64)
        n = _write_frame(fa.leaves, fa.costs, r.width, r.height, buf, st)
        if n != fa.leaves.shape[0]:
            raise ValueError("analysis leaves do not form a valid quadtree")
        out.append(buf[: st[0] // 8].tobytes())
    return b"".join(out)


def deserialize(data: bytes) -> SegmentAnalysis:
    data = bytes(data)
    if len(data) < _HDR.size:
        raise AnalysisFormatError("truncated header")
    magic, ver, idx, w, h, qp, rate, nframes = _HDR.unpack_from(data)
    if magic != AMET_MAGIC:
        raise AnalysisFormatError(f"bad magic {magic!r}")
    if ver != AMET_VERSION:
        raise AnalysisFormatError(f"unsupported version {ver}")
    if w % 8 or h % 8 or w == 0 or h == 0:
        raise AnalysisFormatError(f"invalid dimensions {w}x{h}")
    buf = np.frombuffer(data, np.uint8, offset=_HDR.size)
    st = np.zeros(2, np.int64)
    cap = (w // 8) * (h // 8)
    frames = []
    for f in range(nframes):
        leaves = np.zeros((cap, L_NCOLS), np.int32)
        costs = np.zeros(cap, np.int64)
        n, status, ci = _read_frame(buf, st, w, h, leaves, costs)
        if status == 1:
            raise AnalysisFormatError(f"truncated analysis in frame {f}, CTU {ci}")
        if status == 2:
            raise AnalysisFormatError(f"malformed quadtree in frame {f}, CTU {ci}")
        frames.append(FrameAnalysis(w, h, qp, leaves[:n].copy(), costs[:n].copy()))
    return SegmentAnalysis(Resolution(idx, w, h), qp, rate, frames)


# ---------------------------------------------------------- co-location

@dataclass(frozen=True)
class ColocatedRef:
    depth: int
    mode: PuMode
    motion: tuple               # ((MotionVector, ref), ...) per PU, scaled
    rd_cost: int
    source_scale: Fraction

    def __post_init__(self):
        if not 0 <= self.depth <= 3:
            raise ValueError("depth out of range")
        if self.source_scale < 1:
            raise ValueError("source_scale must be >= 1")


def scale_mv(v, num, den):
    """Round-half-away-from-zero of v * num / den on integer arrays."""
    v = np.asarray(v, dtype=np.int64)
    mag = (2 * np.abs(v) * num + den) // (2 * den)
    return np.sign(v) * mag


@dataclass(eq=False)
class ColocatedMaps:
    """Reference decisions re-indexed onto a target grid.

    8x8 arrays: depth, mode, cost (ref units), same-size flag input depth.
    4x4 arrays: scaled mv and ref index (-1 for intra)."""
    depth8: np.ndarray
    mode8: np.ndarray
    cost8: np.ndarray
    idx8: np.ndarray
    mv4: np.ndarray
    ref4: np.ndarray
    scale: Fraction


def _axis_map(n_tgt, n_ref, step):
    centres = np.arange(n_tgt // step) * step + step // 2
    return (centres * n_ref) // n_tgt


def colocated_maps(fa: FrameAnalysis, target_width, target_height) -> ColocatedMaps:
    """Centre-sample mapping of a reference frame analysis onto a target size."""
    depth8, mode8, cost8, idx8, mv4, ref4 = fa.maps
    W, H = fa.width, fa.height
    if (target_width, target_height) == (W, H):
        return ColocatedMaps(depth8, mode8, cost8, idx8, mv4, ref4, Fraction(1))
    ry8 = _axis_map(target_height, H, 8) >> 3
    rx8 = _axis_map(target_width, W, 8) >> 3
    ry4 = _axis_map(target_height, H, 4) >> 2
    rx4 = _axis_map(target_width, W, 4) >> 2
    sel8 = np.ix_(ry8, rx8)
    sel4 = np.ix_(ry4, rx4)
    mv = mv4[sel4]
    smv = np.stack([scale_mv(mv[..., 0], target_width, W), scale_mv(mv[..., 1], target_height, H)], axis=-1)
    scale = Fraction(target_width * target_height, W * H)
    return ColocatedMaps(depth8[sel8], mode8[sel8], cost8[sel8], idx8[sel8], smv, ref4[sel4], scale)


def colocate(ref: SegmentAnalysis, target_resolution: Resolution, target_ctu, target_frame):
    """ColocatedRef for every 8x8 block of one target CTU, as rows of columns.

    target_ctu is (row, col) in the target CTU grid."""
    if target_frame >= len(ref.frames):
        raise ValueError(f"frame {target_frame} not present in reference analysis "
                         f"({len(ref.frames)} frames)")
    fa = ref.frames[target_frame]
    tw, th = target_resolution.width, target_resolution.height
    maps = colocated_maps(fa, tw, th)
    r0, c0 = target_ctu[0] * 8, target_ctu[1] * 8
    rows = []
    for by in range(r0, min(r0 + 8, th // 8)):
        row = []
        for bx in range(c0, min(c0 + 8, tw // 8)):
            k = int(maps.idx8[by, bx])
            leaf = fa.leaves[k]
            mode = PuMode(int(leaf[L_MODE]))
            motion = ()
            if not mode.is_intra:
                mvs = []
                for q in range(mode.pu_count):
                    vx = int(scale_mv(int(leaf[L_MV + 2 * q]), tw, fa.width))
                    vy = int(scale_mv(int(leaf[L_MV + 2 * q + 1]), th, fa.height))
                    mvs.append((MotionVector(vx, vy), int(leaf[L_REF + q])))
                motion = tuple(mvs)
            row.append(ColocatedRef(int(leaf[L_DEPTH]), mode, motion, int(fa.costs[k]), maps.scale))
        rows.append(row)
    return rows
