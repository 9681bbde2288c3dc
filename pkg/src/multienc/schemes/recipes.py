"""Turn a node's constraint terms and its upstream analyses into per-frame
FrameConstraints, vectorised over the 8x8 / 4x4 block grids."""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..analysis import ColocatedMaps, SegmentAnalysis, colocated_maps
from ..codec.constraints import FrameConstraints
from ..codec.types import PuMode
from ..media import Resolution, Sequence
from .plan import Node, Term
from .predictor import SplitPredictor, predicted_bounds
from .rules import depth_offset

FULL = (1 << 11) - 1
SKIP = 1 << PuMode.SkipMerge2Nx2N
INTER2N = 1 << PuMode.Inter2Nx2N
AMP = sum(1 << m for m in (4, 5, 6, 7))
INTRA = (1 << 9) | (1 << 10)
REUSE_RANGE = 2          # refinement window around a reused, scaled MV


def mode_masks(mode_high, mode_low, same):
    """Vectorised prediction-mode heuristics: mask per block of allowed modes."""
    m = np.full(mode_high.shape, FULL, np.int64)
    m = np.where(mode_high == PuMode.SkipMerge2Nx2N, m & (SKIP | INTER2N), m)
    m = np.where(mode_high == PuMode.Inter2Nx2N, m & ~AMP, m)
    m = np.where(mode_high <= PuMode.InterNxN, m & ~INTRA, m)
    if mode_low is not None:
        both = (mode_high >= PuMode.Intra2Nx2N) & (mode_low >= PuMode.Intra2Nx2N)
        m = np.where(both, m & (SKIP | INTRA), m)
    m |= SKIP
    return np.where(same, m, FULL)


def _up2(a):
    """8x8-grid array onto the 4x4 grid."""
    return np.repeat(np.repeat(a, 2, axis=0), 2, axis=1)


def apply_heuristics(fc: FrameConstraints, high: ColocatedMaps, low: Optional[ColocatedMaps], default_range):
    """Mode and ME heuristics at the depth chosen by the high reference."""
    for d in range(4):
        same = high.depth8 == d
        fc.mode_mask[d] &= mode_masks(high.mode8, None if low is None else low.mode8, same)
        inter = same & (high.mode8 <= PuMode.InterNxN)
        pu_mode = np.where(high.mode8 == PuMode.SkipMerge2Nx2N, PuMode.Inter2Nx2N, high.mode8)
        fc.me_mode[d] = np.where(inter, pu_mode, fc.me_mode[d])
        inter4 = _up2(inter) & (high.ref4 >= 0)
        fc.me_ref[d] = np.where(inter4, high.ref4, fc.me_ref[d])
        fc.me_mvp[d] = np.where(inter4[..., None], high.mv4, fc.me_mvp[d])
        fc.me_set[d] |= inter4
        if low is not None:
            diff = np.abs(high.mv4 - low.mv4).max(axis=-1)
            ok = inter4 & (low.ref4 >= 0) & (diff <= default_range)
            fc.me_range[d] = np.where(ok, diff, fc.me_range[d])


def apply_reuse(fc: FrameConstraints, src: ColocatedMaps):
    """Two-depth search seeded by a lower-resolution decision: at d_L only
    Skip and the reused (scaled) mode with its MV as the search centre,
    at d_L + 1 the full mode set."""
    dl = np.maximum(src.depth8 - 1, 0)
    fc.lo8[...] = np.maximum(fc.lo8, dl)
    fc.hi8[...] = np.maximum(np.minimum(fc.hi8, dl + 1), fc.lo8)
    mode = src.mode8.copy()
    mode = np.where((mode == PuMode.InterNxN) & (dl < 3), PuMode.Inter2Nx2N, mode)
    mode = np.where((mode == PuMode.IntraNxN) & (dl < 3), PuMode.Intra2Nx2N, mode)
    for d in range(4):
        at = dl == d
        fc.mode_mask[d] = np.where(at, fc.mode_mask[d] & (SKIP | (1 << mode)), fc.mode_mask[d])
        inter = at & (mode >= 1) & (mode <= PuMode.InterNxN)
        fc.me_mode[d] = np.where(inter, mode, fc.me_mode[d])
        inter4 = _up2(inter) & (src.ref4 >= 0)
        fc.me_ref[d] = np.where(inter4, src.ref4, fc.me_ref[d])
        fc.me_mvp[d] = np.where(inter4[..., None], src.mv4, fc.me_mvp[d])
        fc.me_set[d] |= inter4
        fc.me_range[d] = np.where(inter4, REUSE_RANGE, fc.me_range[d])


def _bound(fc, lo=None, hi=None):
    if lo is not None:
        fc.lo8[...] = np.maximum(fc.lo8, lo)
    if hi is not None:
        fc.hi8[...] = np.minimum(fc.hi8, hi)
    # on conflict the lower bound wins
    fc.hi8[...] = np.maximum(fc.hi8, fc.lo8)


@dataclass
class RecipeContext:
    target: Resolution
    qp: int
    search_range: int
    sources: Dict[Node, SegmentAnalysis]
    seq: Optional[Sequence] = None                 # target-resolution source, for the predictor
    predictor: Optional[SplitPredictor] = None
    skip_intra_frame: bool = False


def frame_constraints(terms, ctx: RecipeContext, f: int) -> Optional[FrameConstraints]:
    """Constraints of frame f for a node with the given terms (None when the
    node is unconstrained in this frame)."""
    if not terms or (f == 0 and ctx.skip_intra_frame):
        return None
    W, H = ctx.target.width, ctx.target.height
    fc = FrameConstraints.unconstrained(W, H)
    maps = {}

    def m(node):
        if node not in maps:
            a = ctx.sources[node]
            if f >= len(a.frames):
                raise ValueError(f"reference {node} has {len(a.frames)} frames, frame {f} requested")
            maps[node] = colocated_maps(a.frames[f], W, H)
        return maps[node]

    def depth_at_target(node):
        # reference depths expressed as the depth covering the same area
        off = depth_offset(ctx.sources[node].resolution, ctx.target)
        return np.clip(m(node).depth8 + off, 0, 3)

    predict = None
    for t in terms:
        if t.kind == "upper":
            _bound(fc, hi=depth_at_target(t.high))
        elif t.kind == "double":
            a, b = depth_at_target(t.high), depth_at_target(t.low)
            _bound(fc, np.minimum(a, b), np.maximum(a, b))
        elif t.kind == "lower":
            _bound(fc, lo=depth_at_target(t.low))
        elif t.kind == "cross_lower":
            _bound(fc, lo=np.maximum(m(t.low).depth8 - 1, 0))
        elif t.kind == "heuristics":
            apply_heuristics(fc, m(t.high), m(t.low) if t.low else None, ctx.search_range)
        elif t.kind == "reuse":
            apply_reuse(fc, m(t.low))
        elif t.kind == "predict":
            predict = t
        else:
            raise ValueError(f"unknown term {t.kind!r}")
    if predict is not None:
        if ctx.predictor is None or ctx.seq is None:
            raise ValueError("predictor term needs a model and the target sequence")
        src = ctx.sources[predict.low]
        lo, hi = predicted_bounds(ctx.predictor, ctx.seq.frames[f].y, m(predict.low), ctx.qp, src.qp,
                                  src.resolution.index, ctx.target.index)
        # advisory: never outside the rule-derived range
        fc.lo8[...] = np.minimum(np.maximum(fc.lo8, lo), fc.hi8)
        fc.hi8[...] = np.maximum(np.minimum(fc.hi8, hi), fc.lo8)
    return fc


def scale_analysis(ref: SegmentAnalysis, target: Resolution, skip_intra_frame=True):
    """Per-frame reuse constraints for a higher-resolution dependent: a
    callable frame index -> FrameConstraints."""
    if target.width * target.height < ref.resolution.width * ref.resolution.height:
        raise ValueError("target resolution must not be smaller than the reference")
    ctx = RecipeContext(target, 0, 0, {(0, 0): ref}, skip_intra_frame=skip_intra_frame)
    terms = (Term("reuse", low=(0, 0)),)
    return lambda f: frame_constraints(terms, ctx, f)
