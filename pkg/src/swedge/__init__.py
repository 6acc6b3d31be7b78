"""Design-based inference for the complier effect in stepped-wedge trials."""

from .ancova import AncovaEstimator, fit_ancova, invert_ci, point_estimate, ratio_statistic
from .data import (
    PotentialOutcomeTable,
    TrialDataset,
    export_csv,
    ingest_csv,
    materialize,
    residualize,
    true_estimands,
)
from .design import (
    AssignmentRealization,
    StepWedgeDesign,
    enumerate_assignments,
    joint_probability,
    propensity,
    sample_assignment,
)
from .ht import HTEstimator, build_clt_grid, exact_moments, fit_adjustment, ht_estimate, ht_statistic, ht_variance
from .inference import InferenceResult, IntervalSet, RatioStatistic, fieller_set

__version__ = "0.1.0"

__all__ = [
    "AncovaEstimator",
    "AssignmentRealization",
    "HTEstimator",
    "InferenceResult",
    "IntervalSet",
    "PotentialOutcomeTable",
    "RatioStatistic",
    "StepWedgeDesign",
    "TrialDataset",
    "build_clt_grid",
    "enumerate_assignments",
    "exact_moments",
    "export_csv",
    "fieller_set",
    "fit_adjustment",
    "fit_ancova",
    "ht_estimate",
    "ht_statistic",
    "ht_variance",
    "ingest_csv",
    "invert_ci",
    "joint_probability",
    "materialize",
    "point_estimate",
    "propensity",
    "ratio_statistic",
    "residualize",
    "sample_assignment",
    "true_estimands",
]
