"""Tests and test-inversion confidence sets for the effect ratio.

Both engines reduce to the same object: an estimator of the residualized
effect that is affine in the hypothesized ratio, tau(lam) = a - b * lam,
with a variance estimate quadratic in it, S(lam)^2 = q0 + q1 lam + q2 lam^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .exceptions import InsufficientClustersError

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class IntervalSet:
    """Confidence set for lambda.

    ``kind`` is one of ``bounded`` [lo, hi], ``two_rays`` (-inf, lo] U [hi, inf),
    ``whole_line``, ``empty`` or ``point``. A half-line is a ``two_rays`` set
    with one infinite end.
    """

    kind: str
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.kind == "bounded" and not self.lo <= self.hi:
            raise ValueError("bounded interval needs lo <= hi")
        if self.kind == "two_rays" and not self.lo < self.hi:
            raise ValueError("two rays need hi_of_left < lo_of_right")

    @classmethod
    def bounded(cls, lo, hi):
        return cls("bounded", float(lo), float(hi))

    @classmethod
    def two_rays(cls, hi_of_left, lo_of_right):
        return cls("two_rays", float(hi_of_left), float(lo_of_right))

    @classmethod
    def whole_line(cls):
        return cls("whole_line")

    @classmethod
    def empty(cls):
        return cls("empty")

    @classmethod
    def point(cls, x):
        return cls("point", float(x), float(x))

    def contains(self, x: float) -> bool:
        if self.kind == "whole_line":
            return True
        if self.kind == "empty":
            return False
        if self.kind in ("bounded", "point"):
            return self.lo <= x <= self.hi
        return x <= self.lo or x >= self.hi

    def to_dict(self) -> dict:
        out = {"type": self.kind}
        for key in ("lo", "hi"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value if math.isfinite(value) else None
        return out

    def __str__(self):
        if self.kind == "bounded":
            return f"[{self.lo:.4g}, {self.hi:.4g}]"
        if self.kind == "point":
            return f"{{{self.lo:.4g}}}"
        if self.kind == "two_rays":
            return f"(-inf, {self.lo:.4g}] U [{self.hi:.4g}, inf)"
        return "(-inf, inf)" if self.kind == "whole_line" else "{}"


def fieller_set(a: float, b: float, q: tuple[float, float, float], crit: float) -> IntervalSet:
    """Solve (a - b lam)^2 - crit^2 (q0 + q1 lam + q2 lam^2) <= 0 for lam."""
    q0, q1, q2 = q
    c2 = crit * crit
    A = b * b - c2 * q2
    B = -2.0 * a * b - c2 * q1
    C = a * a - c2 * q0
    scale_a = b * b + c2 * abs(q2)
    if abs(A) <= 64 * _EPS * scale_a:
        scale_b = 2 * abs(a * b) + c2 * abs(q1)
        root = -C / B if B != 0 else math.inf
        # a root that overflows means the linear term never outweighs C
        if abs(B) <= 64 * _EPS * scale_b or not math.isfinite(root):
            return IntervalSet.whole_line() if C <= 0 else IntervalSet.empty()
        if B > 0:
            return IntervalSet.two_rays(root, math.inf)
        return IntervalSet.two_rays(-math.inf, root)
    disc = B * B - 4.0 * A * C
    tol = 64 * _EPS * (B * B + 4.0 * abs(A * C))
    if A > 0:
        if disc < -tol:
            return IntervalSet.empty()
        if disc <= tol:
            return IntervalSet.point(-B / (2.0 * A))
        r1, r2 = _roots(A, B, C, disc)
        return IntervalSet.bounded(r1, r2)
    if disc <= tol:
        return IntervalSet.whole_line()
    r1, r2 = _roots(A, B, C, disc)
    return IntervalSet.two_rays(r1, r2)


def _roots(A, B, C, disc):
    sq = math.sqrt(disc)
    qq = -0.5 * (B + math.copysign(sq, B))
    r1 = qq / A
    r2 = C / qq if qq != 0 else r1
    return min(r1, r2), max(r1, r2)


def reference_distribution(reference: str, n_clusters: int):
    """(scipy frozen distribution, df) for the deviate's reference."""
    if reference == "gaussian":
        return stats.norm(), math.inf
    if reference == "t":
        df = n_clusters - 2
        if df < 1:
            raise InsufficientClustersError(
                f"t reference needs at least 3 clusters (df = I - 2 = {df})"
            )
        return stats.t(df), float(df)
    raise ValueError(f"reference must be 't' or 'gaussian', got {reference!r}")


@dataclass(frozen=True)
class InferenceResult:
    estimator: str
    variance: str
    reference: str
    alpha: float
    lambda0: float
    lambda_hat: float
    tau_hat: float
    se: float
    deviate: float
    df: float
    p_value: float
    interval: IntervalSet
    tau_at_0: float
    se_at_lambda_hat: float
    p_value_at_0: float
    critical_value: float
    flags: tuple[str, ...] = field(default=())

    @property
    def rejects(self) -> bool:
        """Two-sided rejection of lambda = lambda0 at level alpha."""
        if not math.isfinite(self.deviate):
            return self.p_value == 0.0
        return abs(self.deviate) >= self.critical_value

    def to_dict(self) -> dict:
        def clean(v):
            return v if isinstance(v, float) and math.isfinite(v) else (None if isinstance(v, float) else v)

        return {
            "estimator": self.estimator,
            "variance": self.variance,
            "reference": self.reference,
            "lambda_hat": clean(self.lambda_hat),
            "tau_at_0": clean(self.tau_at_0),
            "se_at_lambda_hat": clean(self.se_at_lambda_hat),
            "df": clean(self.df),
            "alpha": self.alpha,
            "interval": self.interval.to_dict(),
            "p_value_at_0": clean(self.p_value_at_0),
            "lambda0": self.lambda0,
            "tau_hat": clean(self.tau_hat),
            "se": clean(self.se),
            "deviate": clean(self.deviate),
            "p_value": clean(self.p_value),
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class RatioStatistic:
    """tau(lam) = a - b lam with variance q0 + q1 lam + q2 lam^2."""

    a: float
    b: float
    q: tuple[float, float, float]
    n_clusters: int
    estimator: str = ""
    variance_label: str = ""
    reference: str = "t"

    def tau(self, lam: float) -> float:
        return self.a - self.b * lam

    def variance(self, lam: float) -> float:
        q0, q1, q2 = self.q
        return q0 + q1 * lam + q2 * lam * lam

    @property
    def lambda_hat(self) -> float:
        if self.b == 0:
            return math.nan
        return self.a / self.b

    def _deviate(self, lam, dist):
        tau = self.tau(lam)
        var = self.variance(lam)
        flags = []
        if var < 0:
            return tau, math.nan, math.nan, math.nan, ("negative-variance",)
        se = math.sqrt(var)
        if se == 0:
            if tau == 0:
                return tau, se, 0.0, 1.0, ("degenerate-variance",)
            return tau, se, math.copysign(math.inf, tau), 0.0, ("degenerate-variance",)
        dev = tau / se
        return tau, se, dev, float(2.0 * dist.sf(abs(dev))), tuple(flags)

    def test(self, lambda0: float = 0.0, alpha: float = 0.05) -> InferenceResult:
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        dist, df = reference_distribution(self.reference, self.n_clusters)
        crit = float(dist.ppf(1 - alpha / 2))
        tau, se, dev, p, flags = self._deviate(lambda0, dist)
        tau0, _, _, p0, _ = self._deviate(0.0, dist)
        lam_hat = self.lambda_hat
        flags = list(flags)
        if self.b == 0:
            flags.append("null-first-stage")
            se_hat = math.nan
        else:
            v_hat = self.variance(lam_hat)
            se_hat = math.sqrt(v_hat) / abs(self.b) if v_hat >= 0 else math.nan
        return InferenceResult(
            estimator=self.estimator,
            variance=self.variance_label,
            reference=self.reference,
            alpha=alpha,
            lambda0=float(lambda0),
            lambda_hat=lam_hat,
            tau_hat=tau,
            se=se,
            deviate=dev,
            df=df,
            p_value=p,
            interval=self.confidence_set(alpha),
            tau_at_0=tau0,
            se_at_lambda_hat=se_hat,
            p_value_at_0=p0,
            critical_value=crit,
            flags=tuple(flags),
        )

    def confidence_set(self, alpha: float = 0.05) -> IntervalSet:
        dist, _ = reference_distribution(self.reference, self.n_clusters)
        crit = float(dist.ppf(1 - alpha / 2))
        return fieller_set(self.a, self.b, self.q, crit)

    def rejects(self, lambda0: float, alpha: float = 0.05) -> bool:
        """Cheap rejection check used inside simulation loops."""
        dist, _ = reference_distribution(self.reference, self.n_clusters)
        crit = float(dist.ppf(1 - alpha / 2))
        tau = self.tau(lambda0)
        var = self.variance(lambda0)
        if var < 0:
            raise ValueError("negative variance")
        return tau * tau >= crit * crit * var
