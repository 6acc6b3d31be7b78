"""Horvitz-Thompson estimation of the residualized effect.

Everything works on cluster-period totals over the rollout periods. The
estimator is affine in the hypothesized ratio and both variance estimators
are quadratic forms in the (adjusted) residual totals, so each is reduced to
its coefficients once and evaluated at any ratio afterwards.

Pairwise assignment probabilities depend on two cells only through their
periods and whether they share a cluster, so every double sum over cells is
computed from J x J kernels: a cross-cluster part applied to period totals
plus a within-cluster correction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _linalg
from ._validation import check_alpha, check_choice, check_dataset
from .data import PotentialOutcomeTable, TrialDataset
from .design import StepWedgeDesign, pairwise_probabilities
from .exceptions import DataError, DesignError
from .inference import InferenceResult, IntervalSet, RatioStatistic

ADJUSTMENTS = ("none", "prepost", "full")
VARIANCES = ("conservative", "simplified")


# -- regression adjustment -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdjustmentModel:
    """Linear predictors of the residual under each arm.

    ``coef_treated`` and ``coef_control`` are (1 + p, 2) arrays whose columns
    fit Y and D, so the prediction at ratio ``lam`` is the Y fit minus
    ``lam`` times the D fit.
    """

    mode: str
    covariates: tuple[int, ...]
    coef_treated: np.ndarray
    coef_control: np.ndarray

    def _features(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        return np.column_stack([np.ones(x.shape[0]), x[:, list(self.covariates)]])

    def predict(self, x, arm: int, lambda0: float = 0.0) -> np.ndarray:
        coef = self.coef_treated if arm == 1 else self.coef_control
        feats = self._features(x)
        return feats @ coef[:, 0] - lambda0 * (feats @ coef[:, 1])

    def cell_aggregates(self, dataset: TrialDataset) -> dict[str, np.ndarray]:
        """Summed predictions per rollout cell, I x J, for each arm and response."""
        mask = dataset.rollout_mask
        feats = self._features(dataset.x)
        J = dataset.design.J
        out = {}
        for arm, coef in (("treated", self.coef_treated), ("control", self.coef_control)):
            for r, resp in enumerate(("y", "d")):
                totals = dataset.cell_sum(feats @ coef[:, r], mask)
                out[f"{arm}_{resp}"] = totals[:, 1 : J + 1]
        return out


def fit_adjustment(dataset: TrialDataset, mode: str = "prepost", covariates=None) -> AdjustmentModel:
    """Fit Y and D on (1, x) separately for the treated and control predictors.

    ``prepost`` uses the pre-rollout records for the control predictor and
    the post-rollout records for the treated one, so the fit does not depend
    on the rollout assignment. ``full`` adds the rollout records of each arm.
    """
    check_choice("mode", mode, ("prepost", "full"))
    J = dataset.design.J
    cols = _covariate_columns(dataset, covariates)
    rollout = dataset.rollout_mask
    if mode == "prepost":
        sets = {"control": dataset.period == 0, "treated": dataset.period == J + 1}
    else:
        sets = {
            "control": (dataset.period == 0) | (rollout & (dataset.z == 0)),
            "treated": (dataset.period == J + 1) | (rollout & (dataset.z == 1)),
        }
    names = ["intercept"] + [dataset.covariate_names[k] for k in cols]
    need = len(cols) + 2
    coefs = {}
    for arm, rows in sets.items():
        n = int(rows.sum())
        if n < need:
            where = {"control": "period-0", "treated": f"period-{J + 1}"}[arm] if mode == "prepost" else arm
            raise DataError(f"{arm} adjustment fit needs at least {need} {where} records, found {n}")
        X = np.column_stack([np.ones(n), dataset.x[rows][:, cols]])
        response = np.column_stack([dataset.y[rows], dataset.d[rows].astype(float)])
        coefs[arm], _, _ = _linalg.ols(X, response, names)
    return AdjustmentModel(mode, tuple(cols), coefs["treated"], coefs["control"])


def _covariate_columns(dataset, covariates):
    if covariates is None:
        return list(range(dataset.p))
    names = list(dataset.covariate_names)
    out = []
    for c in covariates:
        if isinstance(c, (int, np.integer)):
            out.append(int(c))
        elif c in names:
            out.append(names.index(c))
        else:
            raise KeyError(f"unknown covariate {c!r}; available: {', '.join(names)}")
    return out


# -- kernels ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Kernels:
    e: np.ndarray
    f: np.ndarray
    k11_same: np.ndarray
    k11_diff: np.ndarray
    k00_same: np.ndarray
    k00_diff: np.ndarray
    k10_same: np.ndarray
    k10_diff: np.ndarray
    # number of partner cells with a structurally zero joint probability
    zero11: np.ndarray
    zero00: np.ndarray
    zero10_row: np.ndarray
    zero10_col: np.ndarray
    # kernels of the exact moments (no division by the joint probability)
    l11_same: np.ndarray
    l11_diff: np.ndarray
    l00_same: np.ndarray
    l00_diff: np.ndarray
    l10_same: np.ndarray
    l10_diff: np.ndarray


def _ratio(num, den):
    """num / den with 0/0 taken as 0."""
    out = np.zeros_like(num, dtype=float)
    np.divide(num, den, out=out, where=den != 0)
    return out


@lru_cache(maxsize=64)
def _kernels(design: StepWedgeDesign) -> _Kernels:
    pw = pairwise_probabilities(design)
    I = design.I
    den = float(pw.denominator)
    e = design.propensities()
    f = 1.0 - e
    if np.any(e <= 0) or np.any(e >= 1):
        raise DesignError("rollout propensities must lie strictly between 0 and 1")
    ee = np.outer(e, e)
    ff = np.outer(f, f)
    ef = np.outer(e, f)

    def est_kernel(numer, prod):
        joint = numer / den
        # joint == 0 exactly when the integer numerator is zero
        return np.where(numer == 0, 0.0, _ratio(joint - prod, joint * prod))

    def moment_kernel(numer, prod):
        return (numer / den - prod) / prod

    def zero_count(same, diff, axis):
        return (same == 0).sum(axis=axis) + (I - 1) * (diff == 0).sum(axis=axis)

    return _Kernels(
        e=e,
        f=f,
        k11_same=est_kernel(pw.e11_same, ee),
        k11_diff=est_kernel(pw.e11_diff, ee),
        k00_same=est_kernel(pw.e00_same, ff),
        k00_diff=est_kernel(pw.e00_diff, ff),
        k10_same=est_kernel(pw.e10_same, ef),
        k10_diff=est_kernel(pw.e10_diff, ef),
        zero11=zero_count(pw.e11_same, pw.e11_diff, 1),
        zero00=zero_count(pw.e00_same, pw.e00_diff, 1),
        zero10_row=zero_count(pw.e10_same, pw.e10_diff, 1),
        zero10_col=zero_count(pw.e10_same, pw.e10_diff, 0),
        l11_same=moment_kernel(pw.e11_same, ee),
        l11_diff=moment_kernel(pw.e11_diff, ee),
        l00_same=moment_kernel(pw.e00_same, ff),
        l00_diff=moment_kernel(pw.e00_diff, ff),
        l10_same=moment_kernel(pw.e10_same, ef),
        l10_diff=moment_kernel(pw.e10_diff, ef),
    )


def _pair_sum(u: np.ndarray, v: np.ndarray, same: np.ndarray, diff: np.ndarray) -> float:
    """sum over cell pairs c, c' of K(c, c') u_c v_c' for I x J arrays u, v.

    K is ``same`` for cells in one cluster (diagonal included) and ``diff``
    otherwise.
    """
    cross = u.sum(axis=0) @ diff @ v.sum(axis=0)
    within = np.sum(u * (v @ (same - diff).T))
    return float(cross + within)


# -- estimator and variance ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class HtInputs:
    """Rollout cell quantities for one observed trial, each I x J."""

    design: StepWedgeDesign
    z: np.ndarray
    y_totals: np.ndarray
    d_totals: np.ndarray
    N: int
    adjust: dict[str, np.ndarray] | None = None

    @classmethod
    def from_dataset(cls, dataset: TrialDataset, adjustment: AdjustmentModel | None = None) -> HtInputs:
        J = dataset.design.J
        mask = dataset.rollout_mask
        y = dataset.cell_sum(dataset.y, mask)[:, 1 : J + 1]
        d = dataset.cell_sum(dataset.d, mask)[:, 1 : J + 1]
        z = dataset.z_matrix[:, 1 : J + 1].astype(float)
        adjust = adjustment.cell_aggregates(dataset) if adjustment is not None else None
        return cls(dataset.design, z, y, d, dataset.N, adjust)

    def _g(self, arm, resp):
        if self.adjust is None:
            return np.zeros_like(self.y_totals)
        return self.adjust[f"{arm}_{resp}"]

    def affine_part(self, resp: str) -> float:
        """Estimator applied to one response (Y or D) with its adjustment."""
        k = _kernels(self.design)
        t = self.y_totals if resp == "y" else self.d_totals
        g1, g0 = self._g("treated", resp), self._g("control", resp)
        z = self.z
        treated = z / k.e * (t - g1) + g1
        control = (1 - z) / k.f * (t - g0) + g0
        return float(np.sum(treated - control) / self.N)

    def residual(self, resp: str) -> np.ndarray:
        """Totals minus the adjustment of the arm each cell actually received."""
        t = self.y_totals if resp == "y" else self.d_totals
        g = np.where(self.z == 1, self._g("treated", resp), self._g("control", resp))
        return t - g


def ht_bilinear(inputs: HtInputs, u: np.ndarray, v: np.ndarray, kind: str = "conservative") -> float:
    """Symmetric bilinear form whose diagonal is the variance estimate."""
    check_choice("variance", kind, VARIANCES)
    k = _kernels(inputs.design)
    z = inputs.z
    au, av = z * u, z * v
    bu, bv = (1 - z) * u, (1 - z) * v
    total = _pair_sum(au, av, k.k11_same, k.k11_diff)
    total += _pair_sum(bu, bv, k.k00_same, k.k00_diff)
    total -= _pair_sum(au, bv, k.k10_same, k.k10_diff) + _pair_sum(av, bu, k.k10_same, k.k10_diff)
    if kind == "conservative":
        uv = u * v
        total += np.sum(z * uv * ((k.zero11 + k.zero10_row) / k.e))
        total += np.sum((1 - z) * uv * ((k.zero00 + k.zero10_col) / k.f))
    return float(total / inputs.N**2)


def ht_variance_coefficients(inputs: HtInputs, kind: str = "conservative") -> tuple[float, float, float]:
    """(q0, q1, q2) with the variance estimate at lam equal to q0 + q1 lam + q2 lam^2."""
    uy = inputs.residual("y")
    ud = inputs.residual("d")
    q0 = ht_bilinear(inputs, uy, uy, kind)
    q1 = -2.0 * ht_bilinear(inputs, uy, ud, kind)
    q2 = ht_bilinear(inputs, ud, ud, kind)
    return q0, q1, q2


def _inputs(dataset, adjustment, covariates=None):
    check_choice("adjustment", adjustment, ADJUSTMENTS)
    model = None if adjustment == "none" else fit_adjustment(dataset, adjustment, covariates)
    return HtInputs.from_dataset(dataset, model)


def ht_estimate(dataset: TrialDataset, lambda0: float = 0.0, adjustment: str = "none", covariates=None) -> float:
    inputs = _inputs(dataset, adjustment, covariates)
    return inputs.affine_part("y") - lambda0 * inputs.affine_part("d")


def ht_variance(
    dataset: TrialDataset, lambda0: float = 0.0, adjustment: str = "none", kind: str = "conservative", covariates=None
) -> float:
    q0, q1, q2 = ht_variance_coefficients(_inputs(dataset, adjustment, covariates), kind)
    return q0 + q1 * lambda0 + q2 * lambda0 * lambda0


def ht_statistic(
    dataset: TrialDataset,
    adjustment: str = "none",
    kind: str = "conservative",
    reference: str = "gaussian",
    covariates=None,
    inputs: HtInputs | None = None,
) -> RatioStatistic:
    inputs = inputs if inputs is not None else _inputs(dataset, adjustment, covariates)
    return RatioStatistic(
        inputs.affine_part("y"), inputs.affine_part("d"), ht_variance_coefficients(inputs, kind),
        dataset.design.I, estimator="ht" if adjustment == "none" else f"ht-{adjustment}",
        variance_label=kind, reference=reference,
    )


def ht_itt_statistic(dataset, adjustment="none", kind="conservative", reference="gaussian", covariates=None):
    """Statistic for the effect of Z on Y alone, built from the same pieces."""
    inputs = _inputs(dataset, adjustment, covariates)
    uy = inputs.residual("y")
    return RatioStatistic(
        inputs.affine_part("y"), 0.0, (ht_bilinear(inputs, uy, uy, kind), 0.0, 0.0), dataset.design.I,
        estimator="ht-itt", variance_label=kind, reference=reference,
    )


def ht_test_and_ci(
    dataset, adjustment="none", kind="conservative", lambda0=0.0, alpha=0.05, reference="gaussian", covariates=None
) -> InferenceResult:
    return ht_statistic(dataset, adjustment, kind, reference, covariates).test(lambda0, alpha)


# -- design-based moments and the combinatorial CLT grid -----------------------


def _rollout_totals(table: PotentialOutcomeTable, lambda0: float):
    t1, t0 = table.cell_totals(lambda0)
    J = table.design.J
    return t1[:, 1 : J + 1], t0[:, 1 : J + 1]


def exact_moments(table: PotentialOutcomeTable, design: StepWedgeDesign | None = None, lambda0: float = 0.0):
    """(mean, variance) of the unadjusted estimator over the randomization."""
    design = design or table.design
    k = _kernels(design)
    t1, t0 = _rollout_totals(table, lambda0)
    N = table.N
    var1 = _pair_sum(t1, t1, k.l11_same, k.l11_diff) / N**2
    var0 = _pair_sum(t0, t0, k.l00_same, k.l00_diff) / N**2
    cov = _pair_sum(t1, t0, k.l10_same, k.l10_diff) / N**2
    mean = float(np.sum(t1 - t0) / N)
    return mean, var1 + var0 - 2.0 * cov


@dataclass(frozen=True, eq=False)
class CltGrid:
    """c(i, l): cluster i's contribution to the estimator when placed l-th in line."""

    matrix: np.ndarray
    position_periods: np.ndarray

    @property
    def row_means(self) -> np.ndarray:
        return self.matrix.mean(axis=1)

    @property
    def col_means(self) -> np.ndarray:
        return self.matrix.mean(axis=0)

    @property
    def grand_mean(self) -> float:
        return float(self.matrix.mean())

    @property
    def row_mean_total(self) -> float:
        """Sum of the row means; equals the residualized effect."""
        return float(self.row_means.sum())

    def evaluate(self, positions) -> float:
        """sum_i c(i, V_i) for 1-based positions V."""
        positions = np.asarray(positions) - 1
        return float(self.matrix[np.arange(len(positions)), positions].sum())


def build_clt_grid(table: PotentialOutcomeTable, design: StepWedgeDesign | None = None, lambda0: float = 0.0) -> CltGrid:
    design = design or table.design
    k = _kernels(design)
    t1, t0 = _rollout_totals(table, lambda0)
    N = table.N
    w1 = t1 / k.e
    w0 = t0 / k.f
    I, J = t1.shape
    # treated part for start period P = sum_{j >= P} w1; control part = sum_{j < P} w0
    suffix = np.zeros((I, J + 2))
    suffix[:, 1 : J + 1] = np.cumsum(w1[:, ::-1], axis=1)[:, ::-1]
    prefix = np.zeros((I, J + 2))
    prefix[:, 2:] = np.cumsum(w0, axis=1)
    periods = design.position_periods()
    matrix = (suffix[:, periods] - prefix[:, periods]) / N
    return CltGrid(matrix, periods)


# -- estimator object ------------------------------------------------------------


class HTEstimator(BaseEstimator):
    """Horvitz-Thompson effect-ratio estimator.

    Parameters
    ----------
    adjustment : {"none", "prepost", "full"}
        ``prepost`` fits the outcome predictors on the pre- and post-rollout
        records only; ``full`` also uses each arm's rollout records.
    variance : {"conservative", "simplified"}
    reference : {"gaussian", "t"}
    covariates : list of names or indices, optional
    alpha : float
    """

    def __init__(self, adjustment="none", variance="conservative", reference="gaussian", covariates=None, alpha=0.05):
        self.adjustment = adjustment
        self.variance = variance
        self.reference = reference
        self.covariates = covariates
        self.alpha = alpha

    def fit(self, dataset, y=None):
        check_dataset(dataset)
        check_choice("adjustment", self.adjustment, ADJUSTMENTS)
        check_choice("variance", self.variance, VARIANCES)
        check_choice("reference", self.reference, ("gaussian", "t"))
        self.adjustment_model_ = (
            None if self.adjustment == "none" else fit_adjustment(dataset, self.adjustment, self.covariates)
        )
        self.inputs_ = HtInputs.from_dataset(dataset, self.adjustment_model_)
        self.statistic_ = ht_statistic(
            dataset, self.adjustment, self.variance, self.reference, inputs=self.inputs_
        )
        self.lambda_hat_ = self.statistic_.lambda_hat
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
