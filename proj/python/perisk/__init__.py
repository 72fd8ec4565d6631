"""Rare-event failure-probability estimation toolkit (python surface)."""

from ._core import (
    ArgumentError,
    CapabilityError,
    Formula,
    SchemaError,
    bce,
    cem_threshold,
    enumerate_failure_probability,
    format_formula,
    gen_synthetic_log,
    iou,
    log_sum_exp,
    match_boxes,
    parse_formula,
    rank_trajectories,
    required_samples,
    robustness,
    roc_auc,
    solve_assignment,
)

__all__ = [
    "ArgumentError",
    "CapabilityError",
    "Formula",
    "SchemaError",
    "bce",
    "cem_threshold",
    "enumerate_failure_probability",
    "format_formula",
    "gen_synthetic_log",
    "iou",
    "log_sum_exp",
    "match_boxes",
    "parse_formula",
    "rank_trajectories",
    "required_samples",
    "robustness",
    "roc_auc",
    "solve_assignment",
]

__version__ = "0.1.0"
