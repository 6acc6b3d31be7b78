"""Monte Carlo harness: synthetic trials, the estimator matrix, summary metrics.

Every replicate draws its randomness from independent Philox streams keyed by
``(base_seed, rep, purpose)``, so a replicate's data never depends on which
worker produced it or in what order.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import ancova, ht
from .data import PotentialOutcomeTable, TrialDataset, materialize, true_estimands
from .design import StepWedgeDesign, sample_assignment
from .exceptions import SimulationConfigError, SwedgeError

ESTIMATORS = ("unadjusted", "ancova1", "ancova3", "ht", "ht-adj-prepost", "ht-adj-full")
VARIANCES = ("cr0", "cr3", "ht-conservative", "ht-simplified")
REFERENCES = ("t", "gaussian")
METRICS = ("bias", "mse", "type.I", "power")

# stream identifiers for SeedSequence([base_seed, rep, purpose])
_STREAMS = {"sizes": 0, "covariates": 1, "cluster": 2, "noise": 3, "compliance": 4, "assignment": 5}


@dataclass(frozen=True)
class MethodSpec:
    estimator: str
    variance: str
    reference: str = "t"

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise SimulationConfigError(f"unknown estimator {self.estimator!r}")
        if self.variance not in VARIANCES:
            raise SimulationConfigError(f"unknown variance {self.variance!r}")
        if self.reference not in REFERENCES:
            raise SimulationConfigError(f"unknown reference {self.reference!r}")
        is_ht = self.estimator.startswith("ht")
        if is_ht != self.variance.startswith("ht-"):
            raise SimulationConfigError(
                f"variance {self.variance} does not apply to estimator {self.estimator}"
            )

    @property
    def label(self) -> str:
        return f"{self.estimator}/{self.variance}/{self.reference}"

    @classmethod
    def parse(cls, item) -> MethodSpec:
        if isinstance(item, MethodSpec):
            return item
        if isinstance(item, str):
            return cls(*item.split("/"))
        return cls(**item)


@dataclass(frozen=True)
class SimScenario:
    name: str
    design: StepWedgeDesign
    informative_size: bool = False
    n_reps: int = 1000
    base_seed: int = 20240601
    methods: tuple[MethodSpec, ...] = ()
    c_I: float = -0.5
    c_F: float = 2.5
    alpha: float = 0.05
    check_itt: bool = True

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(MethodSpec.parse(m) for m in self.methods))
        if self.n_reps < 1:
            raise SimulationConfigError("n_reps must be positive")
        if not 0 < self.alpha < 1:
            raise SimulationConfigError("alpha must lie in (0, 1)")
        if self.c_F == 0:
            raise SimulationConfigError("c_F must be non-zero")

    @classmethod
    def from_dict(cls, spec: dict) -> SimScenario:
        spec = dict(spec)
        try:
            design = StepWedgeDesign.from_dict(spec.pop("design"))
            name = spec.pop("name", None) or f"I{design.I}J{design.J}"
            return cls(name=name, design=design, **spec)
        except KeyError as exc:
            raise SimulationConfigError(f"scenario is missing field {exc}") from None
        except TypeError as exc:
            raise SimulationConfigError(f"bad scenario: {exc}") from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["design"] = self.design.to_dict()
        out["methods"] = [asdict(m) for m in self.methods]
        return out


def load_scenarios(path) -> list[SimScenario]:
    """Read a JSON scenario file: one scenario, a list, or ``{"scenarios": [...]}``."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise SimulationConfigError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SimulationConfigError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(raw, dict) and "scenarios" in raw:
        raw = raw["scenarios"]
    if isinstance(raw, dict):
        raw = [raw]
    return [SimScenario.from_dict(s) for s in raw]


def balanced_design(I: int, J: int) -> StepWedgeDesign:
    """Spread I clusters as evenly as possible over adoption times 1..J+1."""
    sizes = [I // (J + 1) + (k < I % (J + 1)) for k in range(J + 1)]
    return StepWedgeDesign(I, tuple(np.cumsum(sizes[:J]).tolist()))


def study_grid(n_reps=1000, base_seed=20240601, methods=()) -> list[SimScenario]:
    """Four J=5 cells plus the one-at-a-time I=11 cell, each with and without informative size."""
    designs = [balanced_design(I, 5) for I in (12, 30, 60, 90)] + [StepWedgeDesign.one_at_a_time(10)]
    return [
        SimScenario(f"I{d.I}J{d.J}", d, informative, n_reps, base_seed, tuple(methods))
        for d in designs
        for informative in (False, True)
    ]


# -- data generation -------------------------------------------------------------


def _stream(scenario: SimScenario, rep: int, purpose: str) -> np.random.Generator:
    seq = np.random.SeedSequence([scenario.base_seed, rep, _STREAMS[purpose]])
    return np.random.Generator(np.random.Philox(seq))


def generate_trial(scenario: SimScenario, rep: int) -> tuple[TrialDataset, PotentialOutcomeTable]:
    design = scenario.design
    I, J = design.I, design.J
    periods = np.arange(J + 2)

    rng = _stream(scenario, rep, "sizes")
    sizes = np.rint(rng.uniform(10, 90, size=(I, J + 2)) + 2 * (periods + 1) ** 1.5).astype(int)
    cluster = np.repeat(np.repeat(np.arange(I), J + 2), sizes.ravel())
    period = np.repeat(np.tile(periods, I), sizes.ravel())
    n = cluster.size

    rng = _stream(scenario, rep, "covariates")
    x1_cell = rng.binomial(1, 0.5, size=(I, J + 2)).astype(float)
    x1 = x1_cell[cluster, period]
    x2 = (cluster + 1) / I + rng.uniform(-1, 1, size=n)
    period_mean = np.bincount(period, weights=x2, minlength=J + 2) / np.bincount(period, minlength=J + 2)
    dev = x2 - period_mean[period]

    c = _stream(scenario, rep, "cluster").normal(0.0, math.sqrt(0.1), size=I)[cluster]
    e = _stream(scenario, rep, "noise").normal(0.0, math.sqrt(0.9), size=n)

    trend = (period + 1) / (J + 2)
    if scenario.informative_size:
        per_period = sizes.sum(axis=0)
        size_term = (2.0 * sizes * I / per_period.mean())[cluster, period]
    else:
        size_term = np.zeros(n)

    y_untreated = trend + x1 + dev**2 + c + e
    y_treated = y_untreated + size_term + 0.5 * x1 + dev**3

    logit_always = (scenario.c_I + trend + size_term + 0.7 * x1 + 0.5 * dev**3 + c + e) / scenario.c_F
    logit_never = (scenario.c_I - trend - size_term - 0.4 * x1 + dev**2 - c + e) / scenario.c_F
    # softmax over (complier, always-taker, never-taker) with the complier as baseline
    top = np.maximum(0.0, np.maximum(logit_always, logit_never))
    w = np.column_stack([np.exp(-top), np.exp(logit_always - top), np.exp(logit_never - top)])
    cum = np.cumsum(w, axis=1)
    u = _stream(scenario, rep, "compliance").uniform(size=n) * cum[:, -1]
    compliance = (u[:, None] >= cum[:, :2]).sum(axis=1)

    d0 = (compliance == 1).astype(np.int8)
    d1 = (compliance != 2).astype(np.int8)
    y0 = np.where(d0 == 1, y_treated, y_untreated)
    y1 = np.where(d1 == 1, y_treated, y_untreated)

    table = PotentialOutcomeTable(
        design, cluster, period, np.column_stack([x1, x2]), y0, y1, d0, d1, compliance, ("x1", "x2")
    )
    realization = sample_assignment(design, _stream(scenario, rep, "assignment"))
    return materialize(table, realization), table


# -- per-replicate evaluation ------------------------------------------------------


def _statistics(dataset: TrialDataset, method: MethodSpec, cache: dict):
    """(ratio statistic, ITT statistic or None) for one method; fits shared via ``cache``."""
    est, reference = method.estimator, method.reference
    if est.startswith("ht"):
        adjustment = {"ht": "none", "ht-adj-prepost": "prepost", "ht-adj-full": "full"}[est]
        kind = method.variance.removeprefix("ht-")
        key = ("ht", adjustment)
        if key not in cache:
            cache[key] = ht._inputs(dataset, adjustment)
        inputs = cache[key]
        stat = ht.ht_statistic(dataset, adjustment, kind, reference, inputs=inputs)
        return stat, lambda: ht.ht_itt_statistic(dataset, adjustment, kind, reference)
    key = ("ancova", est)
    if key not in cache:
        cache[key] = ancova.fit_ancova(dataset, est)
    stat = ancova.ratio_statistic(dataset, est, method.variance, reference, fit=cache[key])
    return stat, lambda: ancova.itt_statistic(dataset, est, method.variance, reference)


def _deviate(stat, lam):
    tau = stat.tau(lam)
    var = stat.variance(lam)
    if not var >= 0:
        return None
    se = math.sqrt(var)
    if se == 0:
        return 0.0 if tau == 0 else math.copysign(math.inf, tau)
    return tau / se


def _critical(scenario: SimScenario, reference: str) -> float:
    if reference == "gaussian":
        return float(stats.norm.ppf(1 - scenario.alpha / 2))
    return float(stats.t.ppf(1 - scenario.alpha / 2, scenario.design.I - 2))


def run_replicate(scenario: SimScenario, rep: int) -> dict:
    dataset, table = generate_trial(scenario, rep)
    tau, lam_true, rate = true_estimands(table)
    cache: dict = {}
    rows = {}
    for method in scenario.methods:
        crit = _critical(scenario, method.reference)
        row = {"lambda_hat": math.nan, "reject_true": None, "reject_zero": None, "itt_match": None, "error": None}
        try:
            stat, itt = _statistics(dataset, method, cache)
        except (SwedgeError, ValueError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            rows[method.label] = row
            continue
        if stat.b != 0:
            row["lambda_hat"] = stat.a / stat.b
        dev_true = _deviate(stat, lam_true)
        dev_zero = _deviate(stat, 0.0)
        row["reject_true"] = None if dev_true is None else bool(abs(dev_true) >= crit)
        row["reject_zero"] = None if dev_zero is None else bool(abs(dev_zero) >= crit)
        if scenario.check_itt:
            itt_dev = _deviate(itt(), 0.0)
            row["itt_match"] = (dev_zero is None and itt_dev is None) or (
                dev_zero is not None and itt_dev is not None and dev_zero == itt_dev
            )
        rows[method.label] = row
    return {"rep": rep, "tau": tau, "lambda": lam_true, "compliance_rate": rate, "methods": rows}


def _run_chunk(args):
    scenario, reps = args
    return [run_replicate(scenario, r) for r in reps]


def worker_count() -> int:
    cpus = os.cpu_count() or 1
    cap = os.environ.get("SWEDGE_THREADS")
    if cap:
        try:
            cpus = min(cpus, max(1, int(cap)))
        except ValueError:
            raise SimulationConfigError(f"SWEDGE_THREADS must be an integer, got {cap!r}") from None
    return cpus


@dataclass
class MethodSummary:
    method: str
    bias: float
    mse: float
    type_I: float
    power: float
    n_estimates: int
    n_tests_true: int
    n_tests_zero: int
    declined: int
    itt_discordant: int

    def metric(self, name: str) -> float:
        return {"bias": self.bias, "mse": self.mse, "type.I": self.type_I, "power": self.power}[name]


@dataclass
class SimReport:
    scenario: SimScenario
    methods: list[MethodSummary]
    replicates: list[dict] = field(repr=False)

    @property
    def mean_compliance(self) -> float:
        return float(np.mean([r["compliance_rate"] for r in self.replicates]))

    def summary(self, label: str) -> MethodSummary:
        for m in self.methods:
            if m.method == label:
                return m
        raise KeyError(label)

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        return {
            "cell": self.scenario.name,
            "informative": self.scenario.informative_size,
            "scenario": self.scenario.to_dict(),
            "mean_compliance_rate": self.mean_compliance,
            "mean_lambda": float(np.mean([r["lambda"] for r in self.replicates])),
            "methods": [{k: clean(v) for k, v in asdict(m).items()} for m in self.methods],
            "replicates": [
                {"rep": r["rep"], "tau": r["tau"], "lambda": r["lambda"], "compliance_rate": r["compliance_rate"]}
                for r in self.replicates
            ],
        }


def _summarize(label: str, replicates: list[dict]) -> MethodSummary:
    errs, rej_t, rej_z, declined, discord = [], [], [], 0, 0
    for r in replicates:
        row = r["methods"][label]
        if row["error"] is not None:
            declined += 1
            continue
        if math.isfinite(row["lambda_hat"]):
            errs.append(row["lambda_hat"] - r["lambda"])
        if row["reject_true"] is None or row["reject_zero"] is None:
            declined += 1
        if row["reject_true"] is not None:
            rej_t.append(row["reject_true"])
        if row["reject_zero"] is not None:
            rej_z.append(row["reject_zero"])
        if row["itt_match"] is False:
            discord += 1
    errs = np.array(errs)
    nan = math.nan
    return MethodSummary(
        method=label,
        bias=float(errs.mean()) if errs.size else nan,
        mse=float(np.mean(errs**2)) if errs.size else nan,
        type_I=float(np.mean(rej_t)) if rej_t else nan,
        power=float(np.mean(rej_z)) if rej_z else nan,
        n_estimates=int(errs.size),
        n_tests_true=len(rej_t),
        n_tests_zero=len(rej_z),
        declined=declined,
        itt_discordant=discord,
    )


def run_cell(scenario: SimScenario, workers: int | None = None) -> SimReport:
    if not scenario.methods:
        raise SimulationConfigError(f"scenario {scenario.name} lists no methods")
    workers = workers or worker_count()
    reps = list(range(scenario.n_reps))
    if workers <= 1:
        replicates = _run_chunk((scenario, reps))
    else:
        chunks = [(scenario, reps[k::workers]) for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            replicates = [r for part in pool.map(_run_chunk, chunks) for r in part]
        replicates.sort(key=lambda r: r["rep"])
    methods = [_summarize(m.label, replicates) for m in scenario.methods]
    return SimReport(scenario, methods, replicates)


def run_grid(scenarios, out_dir=None, workers: int | None = None) -> list[SimReport]:
    reports = [run_cell(s, workers) for s in scenarios]
    if out_dir is not None:
        write_reports(reports, out_dir)
    return reports


def write_reports(reports: list[SimReport], out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell", "inform", "method", "metric", "value", "n", "declined"])
        for rep in reports:
            for m in rep.methods:
                counts = {"bias": m.n_estimates, "mse": m.n_estimates, "type.I": m.n_tests_true, "power": m.n_tests_zero}
                for metric in METRICS:
                    value = m.metric(metric)
                    writer.writerow([
                        rep.scenario.name, str(rep.scenario.informative_size).upper(), m.method, metric,
                        "" if not math.isfinite(value) else repr(value), counts[metric], m.declined,
                    ])
    json_path = out / "results.json"
    json_path.write_text(json.dumps({"cells": [r.to_dict() for r in reports]}, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def render_table(reports: list[SimReport]) -> str:
    header = f"{'cell':<8} {'inform':<6} {'method':<32} {'bias':>8} {'mse':>8} {'type.I':>7} {'power':>7} {'declined':>8}"
    lines = [header, "-" * len(header)]
    for rep in reports:
        for m in rep.methods:
            lines.append(
                f"{rep.scenario.name:<8} {str(rep.scenario.informative_size).upper():<6} {m.method:<32} "
                f"{m.bias:>8.3f} {m.mse:>8.3f} {m.type_I:>7.3f} {m.power:>7.3f} {m.declined:>8d}"
            )
    return "\n".join(lines)
