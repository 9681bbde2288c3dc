"""Toy block-based video codec with externally constrainable RDO."""

from .types import (
    PuMode, MotionVector, DepthBounds, ModeConstraints, MeConstraints, EncoderConfig,
    EncodeStats, CuNode, lambda_for_qp, AMP_MODES, INTRA_MODES, ALL_MODES,
)
from .constraints import FrameConstraints, intersect, count_violations
from .encoder import (
    Bitstream, BitstreamError, ConstraintError, CtuContext, EncodeResult, RateControlResult,
    decode, encode_representation, motion_search, rdo_ctu, solve_qp_for_bitrate,
)
