"""Numerical laboratory for self-distillation under linear probing.

Structured Gram models and their eigensystems, label-noise corruption
matrices, closed-form multi-round distillation dynamics, the top-2
partial-label student, and an exact softmax fixed-point oracle, plus a
CLI reproducing the synthetic experiments.
"""

from .config import CorruptionConfig, ExperimentConfig, GramConfig
from .distillation import (
    AveragingOperator,
    OutputMatrix,
    PartialLabelMatrix,
    PllOutput,
    argmax_accuracy,
    averaging_operator,
    closed_form_output,
    extended_output,
    pll_output,
    pll_refine,
    trajectory,
)
from .errors import NumericalError, ValidationError
from .gram_models import (
    EigenGroup,
    EigenSystem,
    FeatureMatrix,
    GramCase,
    GramModel,
    GramStatistics,
    RelationStats,
    SuperclassMap,
    analytic_eigensystem,
    build_gram,
    embed_gram,
    gram_statistics,
    load_superclass_map,
    numeric_eigensystem,
)
from .noise_theory import (
    Case5Constants,
    ConditionResult,
    CorruptionMatrix,
    LabelAssignment,
    TheoryConstants,
    evolving_condition,
    evolving_constants,
    make_corruption,
    minimal_rounds,
    nearest_realizable,
    pll_accuracy_condition,
    predicted_population_accuracy,
    realize_labels,
    sd_accuracy_condition,
    theory_constants,
)
from .oracle import (
    OracleResult,
    SolverConfig,
    fixed_point_residual,
    linearized_softmax,
    measure_approx_error,
    objective_and_gradient,
    softmax,
    solve_round,
)

__all__ = [
    "NumericalError",
    "ValidationError",
    "EigenGroup",
    "EigenSystem",
    "FeatureMatrix",
    "GramCase",
    "GramModel",
    "GramStatistics",
    "RelationStats",
    "SuperclassMap",
    "analytic_eigensystem",
    "build_gram",
    "embed_gram",
    "gram_statistics",
    "load_superclass_map",
    "numeric_eigensystem",
    "Case5Constants",
    "ConditionResult",
    "CorruptionMatrix",
    "LabelAssignment",
    "TheoryConstants",
    "evolving_condition",
    "evolving_constants",
    "make_corruption",
    "minimal_rounds",
    "nearest_realizable",
    "pll_accuracy_condition",
    "predicted_population_accuracy",
    "realize_labels",
    "sd_accuracy_condition",
    "theory_constants",
    "AveragingOperator",
    "OutputMatrix",
    "PartialLabelMatrix",
    "PllOutput",
    "argmax_accuracy",
    "averaging_operator",
    "closed_form_output",
    "extended_output",
    "pll_output",
    "pll_refine",
    "trajectory",
    "OracleResult",
    "SolverConfig",
    "fixed_point_residual",
    "linearized_softmax",
    "measure_approx_error",
    "objective_and_gradient",
    "softmax",
    "solve_round",
    "CorruptionConfig",
    "ExperimentConfig",
    "GramConfig",
]
