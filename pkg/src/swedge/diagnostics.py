"""Heuristic checks: does time on an arm predict uptake or outcome, and are arms balanced?"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import _linalg
from .data import TrialDataset
from .exceptions import ConvergenceError, RankDeficientError, SeparationError, SwedgeError

ARMS = {"intervention": 1, "control": 0}


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    fitted: np.ndarray
    bread: np.ndarray  # inverse Fisher information
    iterations: int
    loglik: float


def _loglik(y, eta):
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(X: np.ndarray, y: np.ndarray, names=None, tol: float = 1e-10, max_iter: int = 100, label: str = "") -> LogisticFit:
    """Maximum likelihood logistic regression by iteratively reweighted least squares.

    Stops when the relative change in deviance falls below ``tol``.
    """
    names = list(names) if names is not None else [f"b{k}" for k in range(X.shape[1])]
    _linalg.check_full_rank(X, names)
    where = f" in the {label} arm" if label else ""
    if np.all(y == y[0]):
        raise SeparationError(f"response is constant{where}; logistic fit is separated")
    beta = np.zeros(X.shape[1])
    eta = X @ beta
    dev = -2 * _loglik(y, eta)
    trace = [dev]
    for it in range(1, max_iter + 1):
        p = 1.0 / (1.0 + np.exp(-eta))
        w = p * (1 - p)
        info = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(info, X.T @ (y - p))
        except np.linalg.LinAlgError:
            raise SeparationError(f"information matrix singular{where}; likely separation") from None
        beta = beta + step
        eta = X @ beta
        new_dev = -2 * _loglik(y, eta)
        trace.append(new_dev)
        if new_dev < 1e-8 * len(y) or np.max(np.abs(eta)) > 35:
            raise SeparationError(f"fitted probabilities reach 0 or 1{where}; data are separated")
        if abs(new_dev - dev) / (abs(new_dev) + 0.1) < tol:
            p = 1.0 / (1.0 + np.exp(-eta))
            info = X.T @ (X * (p * (1 - p))[:, None])
            return LogisticFit(beta, p, np.linalg.inv(info), it, -new_dev / 2)
        dev = new_dev
    raise ConvergenceError(
        f"IRLS did not converge in {max_iter} iterations{where}; deviance trace: "
        + ", ".join(f"{d:.6g}" for d in trace[-5:]),
        trace,
    )


@dataclass(frozen=True)
class DurationTestResult:
    response: str
    arm: str
    coefficient: float
    se: float
    t_stat: float
    df: int
    p_value: float
    n_records: int
    n_clusters: int


def duration_tests(dataset: TrialDataset, covariates=None) -> list[DurationTestResult]:
    """Regress D (logistic) and Y (linear) on time-on-arm plus covariates, per arm.

    Only rollout records enter. Standard errors are CR0 cluster-robust and
    the reference is t with (clusters in the arm - 2) degrees of freedom.
    """
    cols = list(range(dataset.p)) if covariates is None else [
        c if isinstance(c, int) else dataset.covariate_names.index(c) for c in covariates
    ]
    time = dataset.time_on_arm().astype(float)
    names = ["intercept", "time_on_arm"] + [dataset.covariate_names[k] for k in cols]
    results = []
    for response in ("D", "Y"):
        for arm, zval in ARMS.items():
            rows = dataset.rollout_mask & (dataset.z == zval)
            n = int(rows.sum())
            X = np.column_stack([np.ones(n), time[rows], dataset.x[rows][:, cols]])
            if n and np.all(X[:, 1] == X[0, 1]):
                raise RankDeficientError(f"time on arm is constant in the {arm} arm", ["time_on_arm"])
            clusters = dataset.cluster[rows]
            groups = _linalg.cluster_groups(clusters)
            if response == "D":
                y = dataset.d[rows].astype(float)
                fit = fit_logistic(X, y, names, label=arm)
                coef, bread, resid = fit.coef, fit.bread, y - fit.fitted
            else:
                coef, resid, bread = _linalg.ols(X, dataset.y[rows], names)
                coef = coef[:, 0]
            scores = _linalg.cluster_scores(X, resid, groups, "cr0")
            contrast = np.zeros(X.shape[1])
            contrast[1] = 1.0
            se = math.sqrt(_linalg.sandwich(bread, scores, contrast))
            df = len(groups) - 2
            if df < 1:
                raise SwedgeError(f"{arm} arm has {len(groups)} clusters; need at least 3 for a t reference")
            t_stat = float(coef[1] / se) if se > 0 else math.copysign(math.inf, coef[1])
            p = float(2 * stats.t.sf(abs(t_stat), df))
            results.append(DurationTestResult(response, arm, float(coef[1]), se, t_stat, df, p, n, len(groups)))
    return results


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    mean_intervention: float
    sd_intervention: float
    mean_control: float
    sd_control: float
    smd: float


def balance_table(dataset: TrialDataset, covariates=None) -> list[BalanceRow]:
    """Arm means, SDs and |standardized mean difference| over rollout records."""
    names = list(dataset.covariate_names) if covariates is None else list(covariates)
    rollout = dataset.rollout_mask
    treated = rollout & (dataset.z == 1)
    control = rollout & (dataset.z == 0)
    rows = []
    for name in names:
        k = dataset.covariate_names.index(name)
        a, b = dataset.x[treated, k], dataset.x[control, k]
        ma, mb = float(a.mean()), float(b.mean())
        sa = float(a.std(ddof=1)) if a.size > 1 else math.nan
        sb = float(b.std(ddof=1)) if b.size > 1 else math.nan
        pooled = math.sqrt((sa**2 + sb**2) / 2)
        if pooled == 0:
            smd = 0.0 if ma == mb else math.inf
        else:
            smd = abs(ma - mb) / pooled
        rows.append(BalanceRow(name, ma, sa, mb, sb, smd))
    return rows


# -- rendering -----------------------------------------------------------------


def _records(items) -> list[dict]:
    return [asdict(r) for r in items]


def to_csv(items) -> str:
    records = _records(items)
    if not records:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(records[0]), lineterminator="\n")
    writer.writeheader()
    for r in records:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def to_json(items) -> str:
    def clean(v):
        return None if isinstance(v, float) and not math.isfinite(v) else v

    return json.dumps([{k: clean(v) for k, v in r.items()} for r in _records(items)], indent=2) + "\n"


def to_text(items) -> str:
    records = _records(items)
    if not records:
        return ""
    cols = list(records[0])
    cells = [[f"{v:.3f}" if isinstance(v, float) else str(v) for v in r.values()] for r in records]
    widths = [max(len(c), *(len(row[k]) for row in cells)) for k, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(cols, widths)))]
    for row in cells:
        lines.append("  ".join(v.ljust(w) if k == 0 else v.rjust(w) for k, (v, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"
