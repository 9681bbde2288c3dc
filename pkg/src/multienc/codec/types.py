"""Value types of the toy codec."""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Tuple

import numpy as np

from ._tables import PU_COUNT, PU_GEOM


class PuMode(IntEnum):
    SkipMerge2Nx2N = 0
    Inter2Nx2N = 1
    Inter2NxN = 2
    InterNx2N = 3
    Inter2NxnU = 4
    Inter2NxnD = 5
    InternLx2N = 6
    InternRx2N = 7
    InterNxN = 8
    Intra2Nx2N = 9
    IntraNxN = 10

    @property
    def is_intra(self):
        return self >= PuMode.Intra2Nx2N

    @property
    def is_amp(self):
        return PuMode.Inter2NxnU <= self <= PuMode.InternRx2N

    @property
    def pu_count(self):
        return int(PU_COUNT[self])

    def pu_rects(self, x, y, size):
        """PU rectangles (x, y, w, h) in pixels for a CU at (x, y)."""
        q = size // 4
        return [
            (x + int(g[0]) * q, y + int(g[1]) * q, int(g[2]) * q, int(g[3]) * q)
            for g in PU_GEOM[self][: self.pu_count]
        ]

    @property
    def mode_class(self):
        # 0 skip, 1 inter, 2 intra
        if self == PuMode.SkipMerge2Nx2N:
            return 0
        return 2 if self.is_intra else 1


AMP_MODES = frozenset(m for m in PuMode if m.is_amp)
INTRA_MODES = frozenset({PuMode.Intra2Nx2N, PuMode.IntraNxN})
ALL_MODES = frozenset(PuMode)


@dataclass(frozen=True)
class MotionVector:
    x: int
    y: int

    def __iter__(self):
        return iter((self.x, self.y))


@dataclass(frozen=True)
class DepthBounds:
    d_L: int = 0
    d_U: int = 3

    def __post_init__(self):
        if not (0 <= self.d_L <= self.d_U <= 3):
            raise ValueError(f"invalid depth bounds [{self.d_L}, {self.d_U}]")

    def __contains__(self, d):
        return self.d_L <= d <= self.d_U


@dataclass(frozen=True)
class ModeConstraints:
    allowed: frozenset = ALL_MODES

    def __post_init__(self):
        if PuMode.SkipMerge2Nx2N not in self.allowed:
            raise ValueError("mode constraints must keep SkipMerge2Nx2N")

    @property
    def mask(self):
        m = 0
        for mode in self.allowed:
            m |= 1 << int(mode)
        return m


@dataclass(frozen=True)
class MeConstraints:
    forced_ref_index: Optional[int] = None
    mvp_override: Optional[MotionVector] = None
    search_range_override: Optional[int] = None

    @property
    def empty(self):
        return (self.forced_ref_index is None and self.mvp_override is None
                and self.search_range_override is None)


def lambda_for_qp(qp):
    return 0.85 * 2.0 ** ((qp - 12) / 3.0)


@dataclass(frozen=True)
class EncoderConfig:
    qp: int = 32
    search_range: int = 16
    reference_count: int = 2
    target_bitrate: Optional[float] = None

    def __post_init__(self):
        if not (0 <= self.qp <= 51):
            raise ValueError(f"qp {self.qp} outside [0, 51]")
        if self.reference_count < 1:
            raise ValueError("reference_count must be >= 1")
        if self.search_range < 0:
            raise ValueError("search_range must be >= 0")

    @property
    def lam(self):
        return lambda_for_qp(self.qp)

    @property
    def lambda_fix(self):
        return int(round(256 * self.lam))

    @property
    def lambda_motion_fix(self):
        return int(round(256 * np.sqrt(self.lam)))

    def with_qp(self, qp):
        return EncoderConfig(qp, self.search_range, self.reference_count, self.target_bitrate)


@dataclass
class EncodeStats:
    wall_time: float
    total_bits: int
    achieved_bitrate: float
    psnr_y: float
    visits: np.ndarray                  # [frames, ctus, 4] leaf evaluations per depth
    frame_times: List[float] = field(default_factory=list)
    rd_cost: int = 0                    # sum of CTU RD costs, fixed point (8 fractional bits)
    frame_rd_costs: List[int] = field(default_factory=list)
    fallbacks: int = 0
    row_times: List[List[float]] = field(default_factory=list)   # per frame, per CTU row
    work: Optional[np.ndarray] = None   # [frames, ctus, N_WORK] operation counts

    @property
    def depth_visits(self):
        return self.visits.sum(axis=(0, 1))


@dataclass
class CuNode:
    depth: int
    x: int
    y: int
    split: bool
    rd_cost: int
    mode: Optional[PuMode] = None
    motion: List[Tuple[MotionVector, int]] = field(default_factory=list)
    intra_modes: List[int] = field(default_factory=list)
    merge_index: int = -1
    children: List["CuNode"] = field(default_factory=list)

    @property
    def size(self):
        return 64 >> self.depth

    def leaves(self):
        if not self.split:
            yield self
            return
        for c in self.children:
            yield from c.leaves()

    def pu_rects(self):
        return self.mode.pu_rects(self.x, self.y, self.size)
