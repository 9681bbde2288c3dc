"""Per-frame RDO search restrictions in the layout the frame kernel reads.

Depth bounds live on the 8x8 grid; mode masks and the constrained-ME mode on
the 8x8 grid per depth (the CU's top-left block is authoritative); ME
overrides on the 4x4 grid per depth (read at each PU's top-left block).
"""

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from ._tables import ALL_MODES_MASK, PU_COUNT, PU_GEOM

INTRA_MASK = (1 << 9) | (1 << 10)
ME_ALL_MODES = 15        # me_mode value applying ME overrides to every inter mode


@dataclass(eq=False)
class FrameConstraints:
    lo8: np.ndarray          # (H8, W8)
    hi8: np.ndarray          # (H8, W8)
    mode_mask: np.ndarray    # (4, H8, W8) bit set of permitted PuModes
    me_mode: np.ndarray      # (4, H8, W8) mode whose ME is constrained, -1 none
    me_ref: np.ndarray       # (4, H4, W4) forced reference, -1 none
    me_range: np.ndarray     # (4, H4, W4) search range override, -1 none
    me_mvp: np.ndarray       # (4, H4, W4, 2) search centre override
    me_set: np.ndarray       # (4, H4, W4) bool, me_mvp valid

    @classmethod
    def unconstrained(cls, width, height):
        H8, W8, H4, W4 = height // 8, width // 8, height // 4, width // 4
        return cls(
            np.zeros((H8, W8), np.int64), np.full((H8, W8), 3, np.int64),
            np.full((4, H8, W8), ALL_MODES_MASK, np.int64), np.full((4, H8, W8), -1, np.int64),
            np.full((4, H4, W4), -1, np.int64), np.full((4, H4, W4), -1, np.int64),
            np.zeros((4, H4, W4, 2), np.int64), np.zeros((4, H4, W4), np.bool_),
        )

    @classmethod
    def from_ctu(cls, width, height, bounds=None, modes=None, me=None):
        """Build from per-CTU dicts {(row, col): DepthBounds / ModeConstraints /
        MeConstraints}; CTUs absent from a dict are unrestricted."""
        fc = cls.unconstrained(width, height)
        for (r, c), b in (bounds or {}).items():
            fc.lo8[r * 8:(r + 1) * 8, c * 8:(c + 1) * 8] = b.d_L
            fc.hi8[r * 8:(r + 1) * 8, c * 8:(c + 1) * 8] = b.d_U
        for (r, c), m in (modes or {}).items():
            fc.mode_mask[:, r * 8:(r + 1) * 8, c * 8:(c + 1) * 8] = m.mask
        for (r, c), m in (me or {}).items():
            if m.empty:
                continue
            sl4 = (slice(None), slice(r * 16, (r + 1) * 16), slice(c * 16, (c + 1) * 16))
            fc.me_mode[:, r * 8:(r + 1) * 8, c * 8:(c + 1) * 8] = ME_ALL_MODES
            if m.forced_ref_index is not None:
                fc.me_ref[sl4] = m.forced_ref_index
            if m.search_range_override is not None:
                fc.me_range[sl4] = m.search_range_override
            if m.mvp_override is not None:
                fc.me_mvp[sl4 + (0,)] = m.mvp_override.x
                fc.me_mvp[sl4 + (1,)] = m.mvp_override.y
                fc.me_set[sl4] = True
        return fc

    def copy(self):
        return FrameConstraints(*(np.array(a) for a in self.arrays()))

    def arrays(self):
        return (self.lo8, self.hi8, self.mode_mask, self.me_mode,
                self.me_ref, self.me_range, self.me_mvp, self.me_set)

    @property
    def size(self):
        return self.lo8.shape[1] * 8, self.lo8.shape[0] * 8

    def normalized(self, is_intra):
        """Kernel-ready copy.

        Upper bounds are raised where a frame-edge CU cannot be coded whole,
        and top-down so every CU the search descends into admits a leaf at
        its own depth (nested fields); Skip is always permitted, and intra
        frames always permit intra modes."""
        w, h = self.size
        lo = np.minimum(np.asarray(self.lo8, np.int64), 3)
        hi = np.asarray(self.hi8, np.int64).copy()
        _normalize_bounds(lo, hi, w, h)
        mm = np.asarray(self.mode_mask, np.int64) | 1
        if is_intra:
            for d in range(4):
                # Intra NxN exists only at depth 3
                legal = INTRA_MASK if d == 3 else (1 << 9)
                mm[d] = np.where(mm[d] & legal, mm[d], mm[d] | legal)
        return FrameConstraints(lo, hi, mm, np.asarray(self.me_mode, np.int64),
                                np.asarray(self.me_ref, np.int64), np.asarray(self.me_range, np.int64),
                                np.asarray(self.me_mvp, np.int64), np.asarray(self.me_set, np.bool_))

    def ctu_bounds(self, row, col):
        """(min lo, max hi) over the 8x8 blocks of a CTU."""
        sl = (slice(row * 8, row * 8 + 8), slice(col * 8, col * 8 + 8))
        return int(self.lo8[sl].min()), int(self.hi8[sl].max())


def intersect(a: FrameConstraints, b: FrameConstraints) -> FrameConstraints:
    """Tightest combination: bounds intersected (upper raised to the lower on
    conflict), masks ANDed, ME overrides of b taking precedence."""
    lo = np.maximum(a.lo8, b.lo8)
    hi = np.maximum(np.minimum(a.hi8, b.hi8), lo)
    mm = (a.mode_mask & b.mode_mask) | 1
    pick = b.me_mode >= 0
    me_mode = np.where(pick, b.me_mode, a.me_mode)
    pick4 = np.repeat(np.repeat(pick, 2, axis=1), 2, axis=2)
    return FrameConstraints(
        lo, hi, mm, me_mode,
        np.where(pick4, b.me_ref, a.me_ref), np.where(pick4, b.me_range, a.me_range),
        np.where(pick4[..., None], b.me_mvp, a.me_mvp), np.where(pick4, b.me_set, a.me_set),
    )


@njit(cache=True)
def _normalize_bounds(lo, hi, W, H):
    H8, W8 = lo.shape
    for by in range(H8):
        for bx in range(W8):
            if lo[by, bx] > hi[by, bx]:
                hi[by, bx] = lo[by, bx]
            # shallowest depth whose CU containing this block lies in the frame
            for d in range(4):
                s = 64 >> d
                x = (bx * 8) // s * s
                y = (by * 8) // s * s
                if x + s <= W and y + s <= H:
                    if hi[by, bx] < d:
                        hi[by, bx] = d
                    break
    for d in range(3):
        s = 64 >> d
        for y in range(0, H, s):
            for x in range(0, W, s):
                y1 = min((y + s) >> 3, H8)
                x1 = min((x + s) >> 3, W8)
                mx = 0
                for by in range(y >> 3, y1):
                    for bx in range(x >> 3, x1):
                        mx = max(mx, hi[by, bx])
                inside = x + s <= W and y + s <= H
                if mx > d or not inside:
                    for by in range(y >> 3, y1):
                        for bx in range(x >> 3, x1):
                            if hi[by, bx] < d + 1:
                                hi[by, bx] = d + 1


@njit(cache=True)
def _check(lo, hi, mode_mask, me_mode, me_ref, leaves, nleaf, visits, W, H, nref):
    bad = 0
    nctu_x = (W + 63) >> 6
    for k in range(nleaf):
        x = leaves[k, 1]
        y = leaves[k, 2]
        d = leaves[k, 3]
        m = leaves[k, 4]
        s = 64 >> d
        for by in range(y >> 3, (y + s) >> 3):
            for bx in range(x >> 3, (x + s) >> 3):
                if d < lo[by, bx] or d > hi[by, bx]:
                    bad += 1
        if not (mode_mask[d, y >> 3, x >> 3] >> m) & 1:
            bad += 1
        cm = me_mode[d, y >> 3, x >> 3]
        if 0 < m <= 8 and (cm == m or cm == ME_ALL_MODES):
            # forced references respected per PU (read at each PU origin)
            for q in range(PU_COUNT[m]):
                px = x + PU_GEOM[m, q, 0] * s // 4
                py = y + PU_GEOM[m, q, 1] * s // 4
                fr = me_ref[d, py >> 2, px >> 2]
                if 0 <= fr < nref and leaves[k, 15 + q] != fr:
                    bad += 1
    for ci in range(visits.shape[0]):
        cy = (ci // nctu_x) * 8
        cx = (ci % nctu_x) * 8
        dmin = 3
        dmax = 0
        for by in range(cy, min(cy + 8, lo.shape[0])):
            for bx in range(cx, min(cx + 8, lo.shape[1])):
                dmin = min(dmin, lo[by, bx])
                dmax = max(dmax, hi[by, bx])
        for d in range(4):
            if (d < dmin or d > dmax) and visits[ci, d] != 0:
                bad += visits[ci, d]
    return bad


def count_violations(fc: FrameConstraints, leaves, visits, nref, fallbacks=0):
    """Search-compliance violations of one encoded frame against normalised
    constraints: leaves outside their blocks' depth bounds or mode masks,
    forced references ignored, depth visits outside each CTU's bounds, and
    kernel fallbacks."""
    w, h = fc.size
    return int(_check(fc.lo8, fc.hi8, fc.mode_mask, fc.me_mode, fc.me_ref,
                      np.asarray(leaves), len(leaves), np.asarray(visits), w, h, nref)) + int(fallbacks)


def with_bounds(fc: FrameConstraints, lo8=None, hi8=None):
    return replace(fc, lo8=fc.lo8 if lo8 is None else lo8, hi8=fc.hi8 if hi8 is None else hi8)
