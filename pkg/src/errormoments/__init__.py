"""Blind recovery of ensemble error statistics from pairwise differences.

Given only the predictions of R noisy regressors, this package estimates
their squared-error moments (including sparse pairwise correlations) and
relative biases without ever seeing the ground truth, then puts the
estimates to work: precision-weighted fusion that beats plain averaging,
plus a synthetic harness that keeps the hidden truth around so every claim
can be scored.

The pipeline is three steps. :func:`compute_pairwise_stats` reduces the
prediction matrix to per-pair mean differences and mean squared differences,
the only observables recovery uses. The recovery functions invert those
observables into moment and bias estimates, exactly for independent
ensembles and through a sparse l1 solver when correlations are allowed.
The fusion helpers turn diagonal moments into weights.
"""

from .core import (
    BiasVector,
    CovarianceMatrix,
    MomentVector,
    PairIndexMap,
    PredictionMatrix,
    pair_index,
    validate,
)
from .fusion import (
    FusionEvaluation,
    FusionWeights,
    covariance_weights,
    evaluate_fusion,
    fuse,
    inverse_variance_weights,
)
from .pairwise import (
    PairwiseStats,
    compensated_mean,
    compensated_sum,
    compute_pairwise_stats,
)
from .recovery import (
    BIAS_SHIFT_NOTE,
    MODE_BIAS,
    MODE_DIAGONAL,
    MODE_FULL,
    L1SolverConfig,
    RecoveryReport,
    SolverInfo,
    assemble_covariance,
    basis_pursuit,
    build_bias_design,
    build_moment_design,
    default_noise_budget,
    min_l1_shift,
    recover_bias,
    recover_moments_diagonal,
    recover_moments_full,
)
from .synth import (
    CorrelatedPair,
    GroundTruthBundle,
    NoiseSpec,
    RegressorNoise,
    ScoreRecord,
    bundle_from_deltas,
    generate,
    make_truth,
    score,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BiasVector",
    "CovarianceMatrix",
    "MomentVector",
    "PairIndexMap",
    "PredictionMatrix",
    "pair_index",
    "validate",
    "PairwiseStats",
    "compensated_mean",
    "compensated_sum",
    "compute_pairwise_stats",
    "BIAS_SHIFT_NOTE",
    "MODE_BIAS",
    "MODE_DIAGONAL",
    "MODE_FULL",
    "L1SolverConfig",
    "RecoveryReport",
    "SolverInfo",
    "assemble_covariance",
    "basis_pursuit",
    "build_bias_design",
    "build_moment_design",
    "default_noise_budget",
    "min_l1_shift",
    "recover_bias",
    "recover_moments_diagonal",
    "recover_moments_full",
    "CorrelatedPair",
    "GroundTruthBundle",
    "NoiseSpec",
    "RegressorNoise",
    "ScoreRecord",
    "bundle_from_deltas",
    "generate",
    "make_truth",
    "score",
    "FusionEvaluation",
    "FusionWeights",
    "covariance_weights",
    "evaluate_fusion",
    "fuse",
    "inverse_variance_weights",
]
