"""Structured sparse estimation in time-dependent Cox models.

Fits Cox proportional-hazards models on counting-process data under a
weighted overlapping-group l-infinity penalty, with the proximal operator
computed by a quadratic min-cost flow decomposition over a push-relabel
max-flow core.  Includes regularization paths, cross-validation, grouping
tooling, simulation scenarios, and a command-line interface.
"""

__version__ = "0.1.0"

from .survival import (
    SurvivalDataset,
    RiskIndex,
    build_risk_index,
    neg_log_partial_likelihood,
    gradient,
    expand_interval_coefficients,
    read_dataset,
    write_dataset,
)
from .groups import (
    Group,
    GroupingStructure,
    SelectionRule,
    validate,
    build_strong_heredity,
    build_sparse_group,
    check_rules,
    selection_support,
    parse_grouping_file,
    write_grouping_file,
)
from .flow import prox, compute_flow, max_flow, build_network, FlowNetwork, DualVariables
from .solver import FitConfig, FitResult, fit, penalty
from .select import (
    LambdaPath,
    CvResult,
    lambda_sequence,
    solution_path,
    cv_error,
    cross_validate,
    adaptive_weights,
    metrics,
    concordance,
)
from .simulate import ScenarioSpec, generate_scenario, run_experiment

__all__ = [name for name in dir() if not name.startswith("_")]
