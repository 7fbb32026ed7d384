"""Wave-aligned 1D CNN for survival-status prediction on longitudinal survey panels."""

from .cohort import CohortConfig, generate_cohort
from .data import (LabeledMatrix, LongTable, WaveTable, ZScoreScaler, filter_features_by_missingness,
                   impute_adjacent_waves, pivot_long_to_wide, stratified_split, zscore_normalize)
from .estimator import WaveCNNClassifier
from .metrics import accuracy, auc, auc_from_scores, roc_curve
from .resampling import (ADASYN, SMOTE, SMOTEENN, EditedNearestNeighbours, RandomOverSampler,
                         SMOTETomek, TomekLinks)

__version__ = "0.1.0"

__all__ = [
    "ADASYN", "CohortConfig", "EditedNearestNeighbours", "LabeledMatrix", "LongTable",
    "RandomOverSampler", "SMOTE", "SMOTEENN", "SMOTETomek", "TomekLinks", "WaveCNNClassifier",
    "WaveTable", "ZScoreScaler", "accuracy", "auc", "auc_from_scores", "filter_features_by_missingness",
    "generate_cohort", "impute_adjacent_waves", "pivot_long_to_wide", "roc_curve", "stratified_split",
    "zscore_normalize",
]
