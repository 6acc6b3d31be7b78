"""Individual-level trial data, residualization and potential-outcome tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .design import AssignmentRealization, StepWedgeDesign
from .exceptions import DataError

COMPLIER, ALWAYS_TAKER, NEVER_TAKER = 0, 1, 2
COMPLIANCE_LABELS = {COMPLIER: "complier", ALWAYS_TAKER: "always-taker", NEVER_TAKER: "never-taker"}

BASE_COLUMNS = ("cluster", "period", "z", "d", "y")


class SchemaError(DataError):
    pass


class NonBinaryError(DataError):
    pass


class NonStaggeredError(DataError):
    pass


class InconsistentAssignmentError(DataError):
    pass


class RaggedCovariatesError(DataError):
    pass


class MissingValueError(DataError):
    pass


def _rows_text(rows, limit=5):
    rows = [int(r) for r in rows]
    shown = ", ".join(str(r) for r in rows[:limit])
    return shown + (f" (+{len(rows) - limit} more)" if len(rows) > limit else "")


def _resolve_adoption(lo: np.ndarray, hi: np.ndarray, design: StepWedgeDesign) -> np.ndarray | None:
    """Find adoption times with lo < A <= hi matching the block sizes, or None.

    Greedy earliest-deadline assignment is exact for interval constraints.
    """
    sizes = design.block_sizes
    adoption = np.zeros(len(lo), dtype=int)
    free = np.ones(len(lo), dtype=bool)
    for t, need in enumerate(sizes, start=1):
        eligible = np.flatnonzero(free & (lo < t) & (hi >= t))
        if len(eligible) < need:
            return None
        chosen = eligible[np.argsort(hi[eligible], kind="stable")[:need]]
        adoption[chosen] = t
        free[chosen] = False
        if np.any(free & (hi <= t)):
            return None
    return adoption


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Validated individual records for one stepped-wedge trial.

    Clusters are stored as 0-based indices into ``cluster_labels``. Periods
    run 0..J+1; only periods 1..J enter the rollout estimands.
    """

    design: StepWedgeDesign
    cluster: np.ndarray
    period: np.ndarray
    z: np.ndarray
    d: np.ndarray
    y: np.ndarray
    x: np.ndarray
    covariate_names: tuple[str, ...] = ()
    cluster_labels: tuple = ()
    source_rows: np.ndarray | None = field(default=None, repr=False)
    adoption_times: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_arrays(
        cls,
        design: StepWedgeDesign,
        cluster,
        period,
        z,
        d,
        y,
        x=None,
        covariate_names: Sequence[str] | None = None,
        *,
        source_rows=None,
    ) -> TrialDataset:
        """Build and validate a dataset; ``cluster`` may hold arbitrary labels."""
        cluster = np.asarray(cluster)
        n = cluster.shape[0]
        rows = np.arange(1, n + 1) if source_rows is None else np.asarray(source_rows)
        period = np.asarray(period)
        z = np.asarray(z)
        d = np.asarray(d)
        y = np.asarray(y, dtype=float)
        if x is None:
            x = np.zeros((n, 0))
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        for name, arr in (("period", period), ("z", z), ("d", d), ("y", y), ("x", x)):
            if arr.shape[0] != n:
                raise SchemaError(f"column {name} has {arr.shape[0]} rows, expected {n}")
        if covariate_names is None:
            covariate_names = [f"x{k + 1}" for k in range(x.shape[1])]
        if len(covariate_names) != x.shape[1]:
            raise RaggedCovariatesError(
                f"{len(covariate_names)} covariate names for {x.shape[1]} columns"
            )
        if n == 0:
            raise SchemaError("dataset has no records")

        bad = ~np.isfinite(y)
        if bad.any():
            raise MissingValueError(f"non-finite y at rows {_rows_text(rows[bad])}")
        if x.size:
            bad = ~np.isfinite(x).all(axis=1)
            if bad.any():
                raise MissingValueError(f"missing or non-finite covariates at rows {_rows_text(rows[bad])}")
        for name, arr in (("z", z), ("d", d)):
            bad = ~np.isin(arr, (0, 1))
            if bad.any():
                raise NonBinaryError(f"{name} must be 0/1; offending rows {_rows_text(rows[bad])}")
        z = z.astype(np.int8)
        d = d.astype(np.int8)
        J = design.J
        if not np.issubdtype(period.dtype, np.integer):
            if not np.all(np.mod(period, 1) == 0):
                raise SchemaError("period must be integer")
        period = period.astype(np.int64)
        bad = (period < 0) | (period > J + 1)
        if bad.any():
            raise SchemaError(f"period outside 0..{J + 1} at rows {_rows_text(rows[bad])}")
        bad = (period == 0) & (z != 0)
        if bad.any():
            raise InconsistentAssignmentError(
                f"z must be 0 in the pre-rollout period; rows {_rows_text(rows[bad])}"
            )
        bad = (period == J + 1) & (z != 1)
        if bad.any():
            raise InconsistentAssignmentError(
                f"z must be 1 in the post-rollout period; rows {_rows_text(rows[bad])}"
            )

        labels, cidx = np.unique(cluster, return_inverse=True)
        if len(labels) != design.I:
            raise InconsistentAssignmentError(
                f"data has {len(labels)} clusters but the design has {design.I}"
            )
        cells = cidx * (J + 2) + period
        ncell = design.I * (J + 2)
        zmin = np.full(ncell, 2, dtype=np.int8)
        zmax = np.full(ncell, -1, dtype=np.int8)
        np.minimum.at(zmin, cells, z)
        np.maximum.at(zmax, cells, z)
        mixed = (zmin != zmax) & (zmax >= 0)
        if mixed.any():
            bad = mixed[cells]
            raise InconsistentAssignmentError(
                f"z varies within a cluster-period; rows {_rows_text(rows[bad])}"
            )
        zcell = np.where(zmax >= 0, zmax, -1).reshape(design.I, J + 2)
        periods = np.arange(J + 2)
        lo = np.array([periods[r == 0].max() if (r == 0).any() else 0 for r in zcell])
        hi = np.array([periods[r == 1].min() if (r == 1).any() else J + 1 for r in zcell])
        nonstag = lo >= hi
        if nonstag.any():
            bad = nonstag[cidx]
            raise NonStaggeredError(
                f"non-staggered assignment (z returns to 0 after 1) in clusters "
                f"{', '.join(map(str, labels[nonstag][:5]))}; rows {_rows_text(rows[bad])}"
            )
        adoption = _resolve_adoption(lo, hi, design)
        if adoption is None:
            raise InconsistentAssignmentError(
                "z pattern is not consistent with any assignment of the design "
                f"(cumulative treated counts {list(design.cumulative_treated)})"
            )
        rollout = (period >= 1) & (period <= J)
        if not rollout.any():
            raise SchemaError("no records in rollout periods 1..J")
        return cls(
            design,
            cidx.astype(np.int64),
            period,
            z,
            d,
            y,
            x,
            tuple(covariate_names),
            tuple(labels.tolist()),
            rows,
            adoption,
        )

    # -- derived quantities --------------------------------------------------

    @property
    def n_records(self) -> int:
        return int(self.cluster.shape[0])

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    @cached_property
    def rollout_mask(self) -> np.ndarray:
        return (self.period >= 1) & (self.period <= self.design.J)

    @cached_property
    def cell(self) -> np.ndarray:
        return self.cluster * (self.design.J + 2) + self.period

    def cell_sum(self, values, mask=None) -> np.ndarray:
        """Sum ``values`` into an I x (J+2) array of cluster-period totals."""
        shape = (self.design.I, self.design.J + 2)
        values = np.asarray(values, dtype=float)
        cells = self.cell
        if mask is not None:
            values = values[mask]
            cells = cells[mask]
        return np.bincount(cells, weights=values, minlength=shape[0] * shape[1]).reshape(shape)

    @cached_property
    def sizes(self) -> np.ndarray:
        """N_ij over all periods 0..J+1, as an I x (J+2) integer array."""
        shape = (self.design.I, self.design.J + 2)
        return np.bincount(self.cell, minlength=shape[0] * shape[1]).reshape(shape)

    @property
    def period_totals(self) -> np.ndarray:
        """N_j for periods 0..J+1."""
        return self.sizes.sum(axis=0)

    @property
    def N(self) -> int:
        """Number of rollout individuals."""
        return int(self.sizes[:, 1 : self.design.J + 1].sum())

    @cached_property
    def z_matrix(self) -> np.ndarray:
        """I x (J+2) assignment matrix implied by the adoption times."""
        return AssignmentRealization(self.design, tuple(self.adoption_times)).z

    def subset(self, mask) -> tuple[np.ndarray, ...]:
        mask = np.asarray(mask, dtype=bool)
        return self.cluster[mask], self.period[mask], self.z[mask], self.d[mask], self.y[mask], self.x[mask]

    def time_on_arm(self) -> np.ndarray:
        """Periods spent on the current arm, counting the current period.

        Control records count from period 0; treated records from adoption.
        """
        adopt = self.adoption_times[self.cluster]
        return np.where(self.z == 1, self.period - adopt + 1, self.period + 1)


@dataclass(frozen=True, eq=False)
class ResidualizedView:
    """Residuals y - lambda0 * d with cluster-period totals kept affine in lambda0."""

    dataset: TrialDataset
    lambda0: float
    y_totals: np.ndarray
    d_totals: np.ndarray

    @property
    def records(self) -> np.ndarray:
        return self.dataset.y - self.lambda0 * self.dataset.d

    @property
    def totals(self) -> np.ndarray:
        """R_ij(lambda0) as an I x (J+2) array of cluster-period totals."""
        return self.y_totals - self.lambda0 * self.d_totals

    def at(self, lambda0: float) -> ResidualizedView:
        return ResidualizedView(self.dataset, float(lambda0), self.y_totals, self.d_totals)


def residualize(dataset: TrialDataset, lambda0: float) -> ResidualizedView:
    lambda0 = float(lambda0)
    if not np.isfinite(lambda0):
        raise ValueError("lambda0 must be finite")
    return ResidualizedView(dataset, lambda0, dataset.cell_sum(dataset.y), dataset.cell_sum(dataset.d))


# -- potential outcomes ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PotentialOutcomeTable:
    """Full potential outcomes for every individual in every period 0..J+1."""

    design: StepWedgeDesign
    cluster: np.ndarray
    period: np.ndarray
    x: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    d0: np.ndarray
    d1: np.ndarray
    compliance: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()
    exclusion_restriction: bool = True

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "x", x)
        if not self.covariate_names:
            object.__setattr__(self, "covariate_names", tuple(f"x{k + 1}" for k in range(x.shape[1])))
        if np.any(self.d1 < self.d0):
            raise DataError("monotonicity violated: some d(1) < d(0)")
        if self.exclusion_restriction:
            same = self.d1 == self.d0
            if np.any(self.y1[same] != self.y0[same]):
                raise DataError("exclusion restriction violated: y(1) != y(0) where d(1) == d(0)")

    @property
    def rollout_mask(self) -> np.ndarray:
        return (self.period >= 1) & (self.period <= self.design.J)

    def cell_totals(self, lambda0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Residual totals under treatment and control, each I x (J+2)."""
        J = self.design.J
        shape = (self.design.I, J + 2)
        cells = self.cluster * (J + 2) + self.period
        r1 = self.y1 - lambda0 * self.d1
        r0 = self.y0 - lambda0 * self.d0
        size = shape[0] * shape[1]
        t1 = np.bincount(cells, weights=r1, minlength=size).reshape(shape)
        t0 = np.bincount(cells, weights=r0, minlength=size).reshape(shape)
        return t1, t0

    @property
    def N(self) -> int:
        return int(self.rollout_mask.sum())


def true_estimands(table: PotentialOutcomeTable) -> tuple[float, float, float]:
    """(tau, lambda, compliance rate) over rollout individuals."""
    m = table.rollout_mask
    n = m.sum()
    if n == 0:
        raise DataError("no rollout individuals")
    tau = float(np.sum(table.y1[m] - table.y0[m]) / n)
    rate = float(np.sum(table.d1[m].astype(float) - table.d0[m]) / n)
    if rate == 0:
        raise DataError("relevance violated: mean of d(1) - d(0) is zero")
    return tau, tau / rate, rate


def materialize(table: PotentialOutcomeTable, realization: AssignmentRealization) -> TrialDataset:
    """Observed dataset implied by the potential outcomes under one assignment."""
    J = table.design.J
    adoption = np.asarray(realization.adoption_times)
    z = (adoption[table.cluster] <= table.period).astype(np.int8)
    y = np.where(z == 1, table.y1, table.y0)
    d = np.where(z == 1, table.d1, table.d0).astype(np.int8)
    n = len(z)
    return TrialDataset(
        table.design,
        np.asarray(table.cluster, dtype=np.int64),
        np.asarray(table.period, dtype=np.int64),
        z,
        d,
        y,
        table.x,
        table.covariate_names,
        tuple(range(1, table.design.I + 1)),
        np.arange(1, n + 1),
        adoption.copy(),
    )


# -- CSV ---------------------------------------------------------------------


def _parse_int(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"line {line}: column {column} is not numeric: {text!r}") from None
    if value != int(value):
        raise SchemaError(f"line {line}: column {column} must be an integer: {text!r}")
    return int(value)


def ingest_csv(path, design: StepWedgeDesign) -> TrialDataset:
    """Read ``cluster,period,z,d,y,x1..xp`` records and validate against ``design``.

    Error messages cite file line numbers (the header is line 1).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(header[:5]) != BASE_COLUMNS:
            raise SchemaError(
                f"{path}: header must start with {','.join(BASE_COLUMNS)}; got {','.join(header[:5])}"
            )
        cov_names = header[5:]
        width = len(header)
        clusters, periods, zs, ds, ys, xs, lines = [], [], [], [], [], [], []
        ragged, missing = [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                ragged.append(line)
                continue
            cells = [c.strip() for c in row]
            if any(c == "" or c.upper() in ("NA", "NAN") for c in cells):
                missing.append(line)
                continue
            clusters.append(cells[0])
            periods.append(_parse_int(cells[1], line, "period"))
            zs.append(_parse_int(cells[2], line, "z"))
            ds.append(_parse_int(cells[3], line, "d"))
            try:
                ys.append(float(cells[4]))
                xs.append([float(c) for c in cells[5:]])
            except ValueError:
                raise SchemaError(f"line {line}: non-numeric y or covariate") from None
            lines.append(line)
    if ragged:
        raise RaggedCovariatesError(f"{path}: wrong number of fields on lines {_rows_text(ragged)}")
    if missing:
        raise MissingValueError(f"{path}: missing values on lines {_rows_text(missing)}")
    try:
        cluster_ids = np.array([int(c) for c in clusters])
    except ValueError:
        cluster_ids = np.array(clusters)
    x = np.array(xs, dtype=float).reshape(len(xs), len(cov_names))
    return TrialDataset.from_arrays(
        design, cluster_ids, np.array(periods), np.array(zs), np.array(ds), np.array(ys), x,
        cov_names, source_rows=np.array(lines),
    )


def export_csv(dataset: TrialDataset, path) -> None:
    """Write the dataset in the ingest schema with round-trip float precision."""
    labels = dataset.cluster_labels
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(BASE_COLUMNS) + list(dataset.covariate_names))
        for k in range(dataset.n_records):
            writer.writerow(
                [labels[dataset.cluster[k]], int(dataset.period[k]), int(dataset.z[k]), int(dataset.d[k]),
                 repr(float(dataset.y[k]))]
                + [repr(float(v)) for v in dataset.x[k]]
            )
