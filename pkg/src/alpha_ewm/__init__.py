"""Policy learning for the average outcome of the worst-off alpha-fraction."""

from alpha_ewm.data import FoldAssignment, ObservationTable, load_table, partition_folds, write_table
from alpha_ewm.policy import (
    Constant,
    FeatureThreshold,
    LinearHalfSpace,
    PolicyClassSpec,
    canonicalize,
    decide,
    treated_fraction,
)
from alpha_ewm.welfare import dual_sup, dual_value, empirical_cvar, gini_welfare, quantile_welfare

__version__ = "0.1.0"

__all__ = [
    "Constant",
    "FeatureThreshold",
    "FoldAssignment",
    "LinearHalfSpace",
    "ObservationTable",
    "PolicyClassSpec",
    "canonicalize",
    "decide",
    "dual_sup",
    "dual_value",
    "empirical_cvar",
    "gini_welfare",
    "load_table",
    "partition_folds",
    "quantile_welfare",
    "treated_fraction",
    "write_table",
]
