"""Regression (ANCOVA-type) estimators of the residualized effect.

Each flavor regresses the rollout-period records on period intercepts and
period-specific treatment indicators, optionally with covariates:

* ``unadjusted``: beta_j + theta_j Z
* ``ancova1``: adds covariate main effects X eta
* ``ancova3``: adds X eta1 + Z (X - Xbar_j) eta2, covariates centred within period

The effect estimate is sum_j N_j theta_j / N. Because least squares is linear
in the response, Y and D are fit once each and every hypothesized ratio is
handled by composing the two fits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _linalg
from ._validation import check_alpha, check_choice, check_dataset
from .data import TrialDataset
from .exceptions import UnidentifiedError
from .inference import InferenceResult, IntervalSet, RatioStatistic

FLAVORS = ("unadjusted", "ancova1", "ancova3")
SANDWICH_KINDS = ("cr0", "cr3")


@dataclass(frozen=True, eq=False)
class RegressionFitPair:
    """Least-squares fits of Y and D on one shared design matrix."""

    flavor: str
    X: np.ndarray
    columns: tuple[str, ...]
    coef: np.ndarray  # (p, 2): Y then D
    resid: np.ndarray  # (n, 2)
    bread: np.ndarray  # (X'X)^{-1}
    xtx: np.ndarray
    clusters: np.ndarray
    groups: tuple
    cluster_labels: tuple
    weights: np.ndarray  # contrast placing N_j / N on the theta_j entries
    n_clusters: int

    @property
    def theta_index(self) -> np.ndarray:
        return np.flatnonzero([c.startswith("treat:period") for c in self.columns])

    @property
    def theta_y(self) -> np.ndarray:
        return self.coef[self.theta_index, 0]

    @property
    def theta_d(self) -> np.ndarray:
        return self.coef[self.theta_index, 1]

    def theta(self, lambda0: float) -> np.ndarray:
        return self.theta_y - lambda0 * self.theta_d

    @property
    def tau_y(self) -> float:
        return float(self.weights @ np.ascontiguousarray(self.coef[:, 0]))

    @property
    def tau_d(self) -> float:
        return float(self.weights @ np.ascontiguousarray(self.coef[:, 1]))


def design_matrix(dataset: TrialDataset, flavor: str, covariates=None):
    """Rollout-period design matrix, column names and the row mask used."""
    check_choice("flavor", flavor, FLAVORS)
    J = dataset.design.J
    mask = dataset.rollout_mask
    period = dataset.period[mask]
    z = dataset.z[mask].astype(float)
    onehot = (period[:, None] == np.arange(1, J + 1)[None, :]).astype(float)
    for j in range(J):
        arm = z[onehot[:, j] == 1]
        if arm.size == 0 or arm.min() == arm.max():
            raise UnidentifiedError(
                f"theta_j unidentified in period {j + 1}: records are all "
                f"{'treated' if arm.size and arm[0] == 1 else 'control' if arm.size else 'missing'}"
            )
    blocks = [onehot, onehot * z[:, None]]
    names = [f"period[{j}]" for j in range(1, J + 1)] + [f"treat:period[{j}]" for j in range(1, J + 1)]
    if flavor != "unadjusted":
        cols = _covariate_columns(dataset, covariates)
        if not cols:
            raise ValueError(f"{flavor} needs at least one covariate")
        x = dataset.x[mask][:, cols]
        cov_names = [dataset.covariate_names[k] for k in cols]
        blocks.append(x)
        names += cov_names
        if flavor == "ancova3":
            counts = onehot.sum(axis=0)
            means = (onehot.T @ x) / counts[:, None]
            centred = x - onehot @ means
            blocks.append(centred * z[:, None])
            names += [f"treat:{n}_centred" for n in cov_names]
    return np.hstack(blocks), tuple(names), mask


def _covariate_columns(dataset, covariates):
    if covariates is None:
        return list(range(dataset.p))
    names = list(dataset.covariate_names)
    cols = []
    for c in covariates:
        if isinstance(c, (int, np.integer)):
            cols.append(int(c))
        elif c in names:
            cols.append(names.index(c))
        else:
            raise KeyError(f"unknown covariate {c!r}; available: {', '.join(names)}")
    return cols


def fit_ancova(dataset: TrialDataset, flavor: str = "ancova3", covariates=None) -> RegressionFitPair:
    X, names, mask = design_matrix(dataset, flavor, covariates)
    response = np.column_stack([dataset.y[mask], dataset.d[mask].astype(float)])
    coef, resid, bread = _linalg.ols(X, response, names)
    clusters = dataset.cluster[mask]
    weights = _theta_weights(dataset, X.shape[1])
    groups = _linalg.cluster_groups(clusters)
    present = [int(clusters[g[0]]) for g in groups]
    return RegressionFitPair(
        flavor, X, names, coef, resid, bread, X.T @ X, clusters, tuple(groups),
        tuple(dataset.cluster_labels[c] for c in present), weights, dataset.design.I,
    )


def tau_hat(fit: RegressionFitPair, lambda0: float) -> float:
    """sum_j N_j (theta_Y,j - lambda0 theta_D,j) / N."""
    return fit.tau_y - lambda0 * fit.tau_d


def variance_coefficients(fit: RegressionFitPair, kind: str = "cr3") -> tuple[float, float, float]:
    """(q0, q1, q2) with Var(tau_hat(lam)) = q0 + q1 lam + q2 lam^2."""
    check_choice("variance", kind, SANDWICH_KINDS)
    try:
        scores = _linalg.cluster_scores(
            fit.X, fit.resid, list(fit.groups), kind, fit.xtx, fit.cluster_labels
        )
    except np.linalg.LinAlgError as exc:
        raise UnidentifiedError(str(exc)) from None
    proj = _linalg.contrast_scores(fit.bread, scores, fit.weights)
    sy, sd = np.ascontiguousarray(proj[:, 0]), np.ascontiguousarray(proj[:, 1])
    return float(sy @ sy), float(-2.0 * (sy @ sd)), float(sd @ sd)


def sandwich_variance(fit: RegressionFitPair, lambda0: float, kind: str = "cr3") -> float:
    q0, q1, q2 = variance_coefficients(fit, kind)
    return q0 + q1 * lambda0 + q2 * lambda0 * lambda0


def ratio_statistic(
    dataset: TrialDataset,
    flavor: str = "ancova3",
    kind: str = "cr3",
    reference: str = "t",
    covariates=None,
    fit: RegressionFitPair | None = None,
) -> RatioStatistic:
    fit = fit if fit is not None else fit_ancova(dataset, flavor, covariates)
    return RatioStatistic(
        fit.tau_y, fit.tau_d, variance_coefficients(fit, kind), dataset.design.I,
        estimator=flavor, variance_label=kind, reference=reference,
    )


def itt_statistic(dataset, flavor="ancova3", kind="cr3", reference="t", covariates=None) -> RatioStatistic:
    """Test statistic for the intention-to-treat effect of Z on Y alone."""
    X, names, mask = design_matrix(dataset, flavor, covariates)
    coef, resid, bread = _linalg.ols(X, dataset.y[mask], names)
    weights = _theta_weights(dataset, X.shape[1])
    clusters = dataset.cluster[mask]
    groups = _linalg.cluster_groups(clusters)
    labels = [dataset.cluster_labels[int(clusters[g[0]])] for g in groups]
    scores = _linalg.cluster_scores(X, resid, groups, kind, X.T @ X, labels)
    s = np.ascontiguousarray(_linalg.contrast_scores(bread, scores, weights)[:, 0])
    return RatioStatistic(
        float(weights @ np.ascontiguousarray(coef[:, 0])), 0.0, (float(s @ s), 0.0, 0.0), dataset.design.I,
        estimator=f"{flavor}-itt", variance_label=kind, reference=reference,
    )


def _theta_weights(dataset, n_columns):
    J = dataset.design.J
    sizes = dataset.period_totals[1 : J + 1].astype(float)
    weights = np.zeros(n_columns)
    weights[J : 2 * J] = sizes / sizes.sum()
    return weights


def point_estimate(dataset: TrialDataset, flavor: str = "ancova3", covariates=None) -> float:
    fit = fit_ancova(dataset, flavor, covariates)
    if fit.tau_d == 0:
        raise ZeroDivisionError("weak/null first stage: tau_D = 0")
    return fit.tau_y / fit.tau_d


def test_lambda(dataset, flavor="ancova3", lambda0=0.0, kind="cr3", alpha=0.05, reference="t", covariates=None):
    return ratio_statistic(dataset, flavor, kind, reference, covariates).test(lambda0, alpha)


def invert_ci(dataset, flavor="ancova3", kind="cr3", alpha=0.05, reference="t", covariates=None) -> IntervalSet:
    return ratio_statistic(dataset, flavor, kind, reference, covariates).confidence_set(alpha)


test_lambda.__test__ = False  # keep pytest from collecting the name


class AncovaEstimator(BaseEstimator):
    """Effect-ratio estimator from period-specific regression contrasts.

    Parameters
    ----------
    flavor : {"unadjusted", "ancova1", "ancova3"}
    variance : {"cr0", "cr3"}
        Cluster-robust sandwich used for the deviate.
    reference : {"t", "gaussian"}
        t uses I - 2 degrees of freedom.
    covariates : list of names or indices, optional
        Defaults to every covariate column.
    alpha : float
        Level for ``test`` and ``confidence_set`` when not given explicitly.
    """

    def __init__(self, flavor="ancova3", variance="cr3", reference="t", covariates=None, alpha=0.05):
        self.flavor = flavor
        self.variance = variance
        self.reference = reference
        self.covariates = covariates
        self.alpha = alpha

    def fit(self, dataset, y=None):
        check_dataset(dataset)
        check_choice("flavor", self.flavor, FLAVORS)
        check_choice("variance", self.variance, SANDWICH_KINDS)
        check_choice("reference", self.reference, ("t", "gaussian"))
        self.fit_ = fit_ancova(dataset, self.flavor, self.covariates)
        self.statistic_ = ratio_statistic(
            dataset, self.flavor, self.variance, self.reference, fit=self.fit_
        )
        self.lambda_hat_ = self.statistic_.lambda_hat
        self.theta_y_ = self.fit_.theta_y
        self.theta_d_ = self.fit_.theta_d
        return self

    def tau(self, lambda0=0.0):
        check_is_fitted(self, "statistic_")
        return self.statistic_.tau(lambda0)

    def test(self, lambda0=0.0, alpha=None) -> InferenceResult:
        check_is_fitted(self, "statistic_")
        return self.statistic_.test(lambda0, check_alpha(self.alpha if alpha is None else alpha))

    def confidence_set(self, alpha=None) -> IntervalSet:
        check_is_fitted(self, "statistic_")
        return self.statistic_.confidence_set(check_alpha(self.alpha if alpha is None else alpha))
