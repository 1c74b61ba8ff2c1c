"""Feature selection, classifiers, subject-level splits and metrics."""

from .linear import class_weights, fit_logreg_l1, fit_logreg_l2, l1_select
from .metrics import auc, balanced_accuracy, compute_metrics, confusion_matrix, macro_f1
from .models import KINDS, TASKS, TrainedModel
from .mrmr import mrmr_rank, mutual_information
from .pipeline import (
    MLConfig,
    fit_with_selection,
    selection_candidates,
    task_labels,
    train_gradient_boosting,
    train_logreg_l2,
    train_random_forest,
)
from .split import SplitPlan, split_subjects
from .trees import BoostingConfig, ForestConfig

__all__ = [
    "KINDS",
    "TASKS",
    "BoostingConfig",
    "ForestConfig",
    "MLConfig",
    "SplitPlan",
    "TrainedModel",
    "auc",
    "balanced_accuracy",
    "class_weights",
    "compute_metrics",
    "confusion_matrix",
    "fit_logreg_l1",
    "fit_logreg_l2",
    "fit_with_selection",
    "l1_select",
    "macro_f1",
    "mrmr_rank",
    "mutual_information",
    "selection_candidates",
    "split_subjects",
    "task_labels",
    "train_gradient_boosting",
    "train_logreg_l2",
    "train_random_forest",
]
