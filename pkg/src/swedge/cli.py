"""Command-line entry point: ``swedge {analyze,simulate,design-probe,diagnose}``.

Every run writes ``manifest.json`` next to its reports with the parsed
configuration, seed, package versions and SHA-256 digests of inputs and
outputs. Exit codes: 0 success, 1 every requested analysis declined,
2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy
import sklearn

from . import __version__, ancova, diagnostics, ht, simulation
from .data import ingest_csv
from .design import DEFAULT_ENUMERATION_CAP, StepWedgeDesign
from .exceptions import SwedgeError

EXIT_OK, EXIT_DECLINED, EXIT_CONFIG = 0, 1, 2

ESTIMATORS = simulation.ESTIMATORS
VARIANCES = simulation.VARIANCES
FORMATS = ("csv", "json", "text")
CI_LEVELS = (0.90, 0.95)


class ConfigError(Exception):
    pass


# -- shared helpers --------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _formats(values) -> list[str]:
    out = []
    for v in values or FORMATS:
        for item in v.split(","):
            item = item.strip()
            if item not in FORMATS:
                raise ConfigError(f"unknown format {item!r}; choose from {', '.join(FORMATS)}")
            if item not in out:
                out.append(item)
    return out


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _load_design(path) -> StepWedgeDesign:
    if path is None:
        raise ConfigError("--design is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"design file not found: {p}")
    return StepWedgeDesign.from_json(p)


def _write_manifest(out: Path, args, inputs: dict, outputs: list[Path], extra=None) -> Path:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "versions": {
            "swedge": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
        },
        "inputs": {name: {"path": str(p), "sha256": _sha256(Path(p))} for name, p in inputs.items() if p},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _fmt(v, digits=4):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "NA"
    return f"{v:.{digits}g}" if isinstance(v, float) else str(v)


def _num(v):
    return "" if v is None or (isinstance(v, float) and not math.isfinite(v)) else repr(float(v))


def _write_table(out: Path, stem: str, rows: list[dict], formats: list[str]) -> list[Path]:
    written = []
    if "csv" in formats:
        p = out / f"{stem}.csv"
        buf = io.StringIO()
        if rows:
            writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            for r in rows:
                writer.writerow({k: _num(v) if isinstance(v, float) else ("" if v is None else v) for k, v in r.items()})
        p.write_text(buf.getvalue())
        written.append(p)
    if "json" in formats:
        p = out / f"{stem}.json"
        clean = [{k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in r.items()} for r in rows]
        p.write_text(json.dumps(clean, indent=2) + "\n")
        written.append(p)
    if "text" in formats:
        p = out / f"{stem}.txt"
        p.write_text(_text_table(rows))
        written.append(p)
    return written


def _text_table(rows: list[dict]) -> str:
    if not rows:
        return "(no rows)\n"
    cols = list(rows[0])
    cells = [[_fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[k]) for row in cells)) for k, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


# -- analyze -----------------------------------------------------------------------


def _pairs(estimators, variances) -> list[tuple[str, str]]:
    estimators = estimators or ["ancova3"]
    pairs = []
    for est in estimators:
        is_ht = est.startswith("ht")
        chosen = [v for v in (variances or []) if v.startswith("ht-") == is_ht]
        if not chosen:
            chosen = ["ht-conservative"] if is_ht else ["cr3"]
        pairs += [(est, v) for v in chosen]
    return pairs


def _statistic(dataset, est, variance, reference):
    if est.startswith("ht"):
        adjustment = {"ht": "none", "ht-adj-prepost": "prepost", "ht-adj-full": "full"}[est]
        return ht.ht_statistic(dataset, adjustment, variance.removeprefix("ht-"), reference)
    return ancova.ratio_statistic(dataset, est, variance, reference)


def cmd_analyze(args) -> int:
    if args.data is None:
        raise ConfigError("--data is required")
    design = _load_design(args.design)
    if not Path(args.data).is_file():
        raise ConfigError(f"data file not found: {args.data}")
    dataset = ingest_csv(args.data, design)
    out = _out_dir(args.out)
    formats = _formats(args.format)
    rows, long_rows = [], []
    declined = 0
    for est, variance in _pairs(args.estimator, args.variance):
        reference = args.ref or ("gaussian" if est.startswith("ht") else "t")
        row = {"estimator": est, "variance": variance, "reference": reference}
        try:
            stat = _statistic(dataset, est, variance, reference)
            result = stat.test(args.lambda0, args.alpha)
            sets = {level: stat.confidence_set(1 - level) for level in CI_LEVELS}
        except (SwedgeError, ValueError, ZeroDivisionError) as exc:
            declined += 1
            row.update(status="declined", message=f"{type(exc).__name__}: {exc}")
            rows.append(row)
            continue
        if "negative-variance" in result.flags:
            declined += 1
        row.update(
            status="ok" if "negative-variance" not in result.flags else "declined",
            lambda_hat=result.lambda_hat,
            se_at_lambda_hat=result.se_at_lambda_hat,
            tau_at_0=result.tau_at_0,
            p_value_at_0=result.p_value_at_0,
            lambda0=result.lambda0,
            deviate=result.deviate,
            p_value=result.p_value,
            df=result.df,
        )
        for level, s in sets.items():
            tag = f"ci{int(round(level * 100))}"
            row[f"{tag}_type"] = s.kind
            row[f"{tag}_lo"] = s.lo if s.lo is not None else math.nan
            row[f"{tag}_hi"] = s.hi if s.hi is not None else math.nan
            long_rows.append({
                "estimator": est, "variance": variance, "level": level, "type": s.kind,
                "lo": s.lo if s.lo is not None else math.nan, "hi": s.hi if s.hi is not None else math.nan,
            })
        row["flags"] = ";".join(result.flags)
        row["message"] = ""
        rows.append(row)
    rows = _rectangular(rows)
    written = _write_table(out, "analysis", rows, formats)
    if args.plot_csv:
        written += _write_table(out, "intervals_long", long_rows, ["csv"])
    _write_manifest(out, args, {"data": args.data, "design": args.design}, written)
    sys.stdout.write(_text_table(rows))
    return EXIT_DECLINED if rows and declined == len(rows) else EXIT_OK


def _rectangular(rows):
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    return [{k: r.get(k, math.nan if k not in ("status", "message", "flags") else "") for k in keys} for r in rows]


# -- simulate ----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    if args.scenario is None:
        raise ConfigError("--scenario is required")
    if not Path(args.scenario).is_file():
        raise ConfigError(f"scenario file not found: {args.scenario}")
    scenarios = simulation.load_scenarios(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.n_reps is not None:
        overrides["n_reps"] = args.n_reps
    if overrides:
        scenarios = [simulation.SimScenario.from_dict({**s.to_dict(), **overrides}) for s in scenarios]
    out = _out_dir(args.out)
    reports = simulation.run_grid(scenarios, workers=args.workers)
    csv_path, json_path = simulation.write_reports(reports, out)
    table = simulation.render_table(reports) + "\n"
    text_path = out / "results.txt"
    text_path.write_text(table)
    _write_manifest(out, args, {"scenario": args.scenario}, [csv_path, json_path, text_path])
    sys.stdout.write(table)
    return EXIT_OK


# -- design-probe ------------------------------------------------------------------


def probe_design(design: StepWedgeDesign, cap: int = DEFAULT_ENUMERATION_CAP) -> dict:
    periods = []
    one_at_a_time = design.is_one_at_a_time()
    for j in range(1, design.J + 1):
        count = design.count(j)
        reasons = []
        if count == 1:
            reasons.append("I_j=1")
        if design.I - count == 1:
            reasons.append("I-I_j=1")
        if one_at_a_time:
            reasons.append("one-at-a-time")
        periods.append({
            "period": j,
            "treated": count,
            "propensity": str(Fraction(count, design.I)),
            "propensity_float": count / design.I,
            "flagged": bool(reasons),
            "reason": ";".join(reasons),
        })
    total = design.num_assignments
    return {
        "I": design.I,
        "J": design.J,
        "cumulative_treated": list(design.cumulative_treated),
        "one_at_a_time": one_at_a_time,
        "periods": periods,
        "assignments": total,
        "enumerable": total <= cap,
    }


def cmd_design_probe(args) -> int:
    design = _load_design(args.design)
    report = probe_design(design, args.cap)
    lines = [f"design: I={report['I']}, J={report['J']}, cumulative treated {report['cumulative_treated']}"]
    for p in report["periods"]:
        flag = f"  [flagged: {p['reason']}]" if p["flagged"] else ""
        lines.append(f"  period {p['period']:>2}: e = {p['propensity']:>7} ({p['propensity_float']:.4f}){flag}")
    if report["enumerable"]:
        lines.append(f"enumerable: {report['assignments']} assignments")
    else:
        lines.append(f"not enumerable: {report['assignments']} assignments exceed the cap of {args.cap}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = _out_dir(args.out)
        written = []
        formats = _formats(args.format)
        if "json" in formats:
            p = out / "design_probe.json"
            p.write_text(json.dumps(report, indent=2) + "\n")
            written.append(p)
        if "text" in formats:
            p = out / "design_probe.txt"
            p.write_text(text)
            written.append(p)
        if "csv" in formats:
            written += _write_table(out, "design_probe", report["periods"], ["csv"])
        _write_manifest(out, args, {"design": args.design}, written)
    return EXIT_OK


# -- diagnose ------------------------------------------------------------------------


def cmd_diagnose(args) -> int:
    if args.data is None:
        raise ConfigError("--data is required")
    design = _load_design(args.design)
    if not Path(args.data).is_file():
        raise ConfigError(f"data file not found: {args.data}")
    dataset = ingest_csv(args.data, design)
    out = _out_dir(args.out)
    formats = _formats(args.format)
    written = []
    tests = diagnostics.duration_tests(dataset)
    balance = diagnostics.balance_table(dataset)
    for stem, items in (("duration_tests", tests), ("balance", balance)):
        if "csv" in formats:
            p = out / f"{stem}.csv"
            p.write_text(diagnostics.to_csv(items))
            written.append(p)
        if "json" in formats:
            p = out / f"{stem}.json"
            p.write_text(diagnostics.to_json(items))
            written.append(p)
        if "text" in formats:
            p = out / f"{stem}.txt"
            p.write_text(diagnostics.to_text(items))
            written.append(p)
    _write_manifest(out, args, {"data": args.data, "design": args.design}, written)
    sys.stdout.write(diagnostics.to_text(tests) + "\n" + diagnostics.to_text(balance))
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def _alpha(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be a number, got {text!r}") from None
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swedge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"swedge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            p.add_argument("--data", help="trial records CSV (cluster,period,z,d,y,x...)")
        p.add_argument("--design", help="design JSON with I and cumulative_treated")
        p.add_argument("--out", default="swedge-out", help="output directory")
        p.add_argument("--format", action="append", help="csv, json, text (repeatable or comma-separated)")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("analyze", help="tests and confidence sets for the effect ratio")
    common(p)
    p.add_argument("--estimator", action="append", choices=ESTIMATORS)
    p.add_argument("--variance", action="append", choices=VARIANCES)
    p.add_argument("--ref", choices=("t", "gaussian"), default=None,
                   help="reference distribution (default t for regression, gaussian for HT)")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--lambda0", type=float, default=0.0)
    p.add_argument("--plot-csv", action="store_true", help="also write long-format interval CSV")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run a Monte Carlo scenario file")
    p.add_argument("--scenario", help="scenario JSON")
    p.add_argument("--out", default="swedge-out")
    p.add_argument("--seed", type=int, default=None, help="override every scenario's base seed")
    p.add_argument("--n-reps", type=int, default=None)
    p.add_argument("--workers", type=int, default=None, help="process count (capped by SWEDGE_THREADS)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("design-probe", help="propensities, correction-term flags, enumerability")
    p.add_argument("--design", help="design JSON")
    p.add_argument("--out", default=None)
    p.add_argument("--format", action="append")
    p.add_argument("--cap", type=int, default=DEFAULT_ENUMERATION_CAP)
    p.set_defaults(func=cmd_design_probe)

    p = sub.add_parser("diagnose", help="duration-irrelevance checks and covariate balance")
    common(p)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, SwedgeError, ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"swedge {args.command}: error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
