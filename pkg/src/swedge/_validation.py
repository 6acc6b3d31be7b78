"""Input checks shared by the estimators."""

from __future__ import annotations

import math

from .data import TrialDataset


def check_dataset(dataset) -> TrialDataset:
    if not isinstance(dataset, TrialDataset):
        raise TypeError(f"expected a TrialDataset, got {type(dataset).__name__}")
    return dataset


def check_alpha(alpha) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0) or math.isnan(alpha):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def check_choice(name: str, value, choices) -> str:
    if value not in choices:
        raise ValueError(f"{name} must be one of {', '.join(map(str, choices))}; got {value!r}")
    return value
