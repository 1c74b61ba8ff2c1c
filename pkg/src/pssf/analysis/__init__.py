"""Robustness scenarios, ICC stability and feature importance."""

from .scenarios import SCENARIOS, RowTable, ScenarioSpec, feature_importance, ordering_checks, run_scenario, train_models
from .stability import (
    CONDITIONS,
    RepeatConfig,
    StabilityReport,
    choose_subset,
    compute_icc,
    repeat_records,
    stability_report,
    stability_screen,
)

__all__ = [
    "CONDITIONS",
    "SCENARIOS",
    "RepeatConfig",
    "RowTable",
    "ScenarioSpec",
    "StabilityReport",
    "choose_subset",
    "compute_icc",
    "feature_importance",
    "ordering_checks",
    "repeat_records",
    "run_scenario",
    "stability_report",
    "stability_screen",
    "train_models",
]
