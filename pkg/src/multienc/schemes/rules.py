"""Depth-bound formulas, resolution factor and the MR3 mode/ME heuristics
in their scalar form (one co-located reference at a time)."""

import math
from fractions import Fraction
from typing import Optional

from ..analysis import ColocatedRef
from ..codec.types import (
    AMP_MODES, ALL_MODES, INTRA_MODES, DepthBounds, MeConstraints, ModeConstraints, PuMode,
)
from ..media import Resolution

RULES = ("single", "double", "lower_only")


def depth_bounds(rule, d_ref_high: Optional[int] = None, d_ref_low: Optional[int] = None) -> DepthBounds:
    """single -> [0, d_high]; double -> [min, max] of the two references;
    lower_only -> [d_low, 3]."""
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}")
    need = {"single": (d_ref_high,), "double": (d_ref_high, d_ref_low), "lower_only": (d_ref_low,)}[rule]
    for d in need:
        if d is None:
            raise ValueError(f"rule {rule!r} is missing a reference depth")
        if not 0 <= d <= 3:
            raise ValueError(f"reference depth {d} outside [0, 3]")
    if rule == "single":
        return DepthBounds(0, d_ref_high)
    if rule == "double":
        return DepthBounds(min(d_ref_low, d_ref_high), max(d_ref_low, d_ref_high))
    return DepthBounds(d_ref_low, 3)


def cross_resolution_lower_bound(rule, d_ref: int) -> int:
    """Lower bound from the co-located depth one resolution below; both
    variants (from the highest or the lowest rung) share the same form."""
    if rule not in ("from_highest", "from_lowest"):
        raise ValueError(f"unknown rule {rule!r}")
    if not 0 <= d_ref <= 3:
        raise ValueError(f"reference depth {d_ref} outside [0, 3]")
    return d_ref - 1 if d_ref >= 1 else 0


def resolution_factor(lower: Resolution, higher: Resolution) -> Fraction:
    a_lo = lower.width * lower.height
    a_hi = higher.width * higher.height
    if a_lo == 0 or a_hi == 0:
        raise ValueError("zero-area resolution")
    if a_hi < a_lo:
        raise ValueError("higher resolution has fewer pixels than lower")
    return Fraction(a_hi, a_lo)


def depth_offset(ref: Resolution, target: Resolution) -> int:
    """Depth shift that makes a reference CU cover the same picture area at
    the target: log2 of the per-axis ratio, rounded (negative when the
    target is larger)."""
    x = math.log2(Fraction(ref.width * ref.height, target.width * target.height)) / 2
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _same_pu(evaluated: PuMode, ref_mode: PuMode):
    # a skipped CU carries a 2Nx2N prediction unit
    m = PuMode.Inter2Nx2N if ref_mode == PuMode.SkipMerge2Nx2N else ref_mode
    return evaluated == m


def mode_constraints(ref_high: ColocatedRef, ref_low: Optional[ColocatedRef], same_cu_size: bool) -> ModeConstraints:
    """Prediction-mode heuristics sourced from the highest (and lowest)
    bitrate references, applied in order and intersected."""
    allowed = set(ALL_MODES)
    if not same_cu_size:
        return ModeConstraints(frozenset(allowed))
    m = ref_high.mode
    if m == PuMode.SkipMerge2Nx2N:
        allowed &= {PuMode.SkipMerge2Nx2N, PuMode.Inter2Nx2N}
    if m == PuMode.Inter2Nx2N:
        allowed -= AMP_MODES
    if not m.is_intra:
        allowed -= INTRA_MODES
    if m.is_intra and ref_low is not None and ref_low.mode.is_intra:
        allowed &= {PuMode.SkipMerge2Nx2N} | INTRA_MODES
    allowed.add(PuMode.SkipMerge2Nx2N)
    return ModeConstraints(frozenset(allowed))


def me_constraints(ref_high: ColocatedRef, ref_low: Optional[ColocatedRef], same_cu_and_pu: bool,
                   default_range: int, pu: int = 0) -> MeConstraints:
    """Motion heuristics for PU `pu` of a CU whose size and partition match
    the highest bitrate reference: reuse its reference frame and MV as the
    search centre, and shrink the window to the max-coordinate difference
    against the lowest bitrate MV (first motion entry of ref_low) when that
    difference does not exceed default_range."""
    if not same_cu_and_pu or ref_high.mode.is_intra or not ref_high.motion:
        return MeConstraints()
    mv, ref = ref_high.motion[pu]
    rng = None
    if ref_low is not None and not ref_low.mode.is_intra and ref_low.motion:
        lmv = ref_low.motion[0][0]
        diff = max(abs(mv.x - lmv.x), abs(mv.y - lmv.y))
        if diff <= default_range:
            rng = diff
    return MeConstraints(ref, mv, rng)
