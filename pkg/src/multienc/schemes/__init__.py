"""Analysis-sharing policies: plans, bound rules, heuristics and the split
predictor."""

from .plan import EncodePlan, Ladder, Node, SchemeId, Term, plan, predictor_pairs
from .rules import (
    cross_resolution_lower_bound, depth_bounds, depth_offset, me_constraints, mode_constraints,
    resolution_factor,
)
from .recipes import RecipeContext, frame_constraints, scale_analysis
from .predictor import (
    BucketModel, SplitFeatures, SplitPredictor, TrainParams, extract_split_features, load_predictor,
    predict_split, save_predictor, split_samples, stack_dataset, train_predictor,
)
