"""Self-consistent step-wise multiple testing procedures with FDR control."""

from stepfdr.core import (
    HypothesisSpace,
    PValueVector,
    RejectionSet,
    fdp,
    pi_volume,
    scaled_pvalues,
    weighted_pvalues,
)
from stepfdr.procedures import (
    FactorizedThresholds,
    Procedure,
    RankThresholds,
    StepUpDownOrder,
    adaptive_two_stage,
    level_set,
    make_rank_thresholds,
    rank_step_down,
    step_down,
    step_up,
    step_up_down,
)
from stepfdr.shape import (
    ContinuousPrior,
    PriorDistribution,
    ShapeFunction,
    beta_from_prior,
    bonferroni_crossover,
    discretize_prior,
    parse_shape,
    shape_eval,
    shape_table,
)

__version__ = "0.1.0"
