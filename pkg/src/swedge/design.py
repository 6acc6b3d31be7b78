"""Stepped-wedge designs and their exact assignment probabilities.

A design with ``I`` clusters and ``J`` rollout periods is described by the
cumulative treated counts ``I_1 <= ... <= I_J``. Periods are indexed
``0..J+1``; period 0 is the all-control pre-rollout period and ``J+1`` the
all-treated post-rollout period. Randomization draws a uniform permutation
of clusters ("position in line") and cuts it at the cumulative counts, so a
cluster at position ``l`` adopts at the first period ``t`` with ``l <= I_t``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import _lemmas
from .exceptions import DesignError, EnumerationTooLarge

TREATED = 1
CONTROL = 0

DEFAULT_ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class StepWedgeDesign:
    num_clusters: int
    cumulative_treated: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.cumulative_treated)
        object.__setattr__(self, "cumulative_treated", counts)
        if self.num_clusters < 2:
            raise DesignError(f"need at least 2 clusters, got {self.num_clusters}")
        if not counts:
            raise DesignError("need at least one rollout period")
        if counts[0] <= 0:
            raise DesignError("first rollout period must treat at least one cluster")
        if any(b < a for a, b in zip(counts, counts[1:])):
            raise DesignError(f"cumulative treated counts must be non-decreasing: {counts}")
        if counts[-1] >= self.num_clusters:
            raise DesignError(
                f"I_J={counts[-1]} must be < I={self.num_clusters}; "
                "some cluster has to stay in control through the rollout"
            )

    @classmethod
    def one_at_a_time(cls, num_rollout_periods: int) -> StepWedgeDesign:
        J = int(num_rollout_periods)
        return cls(J + 1, tuple(range(1, J + 1)))

    @classmethod
    def from_dict(cls, spec: dict) -> StepWedgeDesign:
        if spec.get("one_at_a_time"):
            if "J" not in spec:
                if "I" not in spec:
                    raise DesignError("one_at_a_time design needs I or J")
                J = int(spec["I"]) - 1
            else:
                J = int(spec["J"])
            design = cls.one_at_a_time(J)
            if "I" in spec and int(spec["I"]) != design.num_clusters:
                raise DesignError(f"one_at_a_time with J={J} implies I={J + 1}, got I={spec['I']}")
            return design
        try:
            design = cls(int(spec["I"]), tuple(spec["cumulative_treated"]))
        except KeyError as exc:
            raise DesignError(f"design is missing field {exc}") from None
        if "J" in spec and int(spec["J"]) != design.J:
            raise DesignError(
                f"J={spec['J']} disagrees with {design.J} cumulative counts"
            )
        return design

    @classmethod
    def from_json(cls, path) -> StepWedgeDesign:
        try:
            spec = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DesignError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(spec)

    def to_dict(self) -> dict:
        return {"I": self.I, "J": self.J, "cumulative_treated": list(self.cumulative_treated)}

    @property
    def I(self) -> int:  # noqa: E743
        return self.num_clusters

    @property
    def J(self) -> int:
        return len(self.cumulative_treated)

    def count(self, period: int) -> int:
        """Cumulative treated count I_t, with I_0 = 0 and I_{J+1} = I."""
        if period <= 0:
            return 0
        if period >= self.J + 1:
            return self.I
        return self.cumulative_treated[period - 1]

    @property
    def block_sizes(self) -> np.ndarray:
        """Number of clusters adopting at each time 1..J+1."""
        cum = np.array((0,) + self.cumulative_treated + (self.I,))
        return np.diff(cum)

    @property
    def num_assignments(self) -> int:
        return math.factorial(self.I) // math.prod(
            math.factorial(int(n)) for n in self.block_sizes
        )

    def position_periods(self) -> np.ndarray:
        """P_l: adoption period of the cluster placed l-th in line (l = 1..I)."""
        cum = np.array(self.cumulative_treated + (self.I,))
        return np.searchsorted(cum, np.arange(1, self.I + 1), side="left") + 1

    def is_one_at_a_time(self) -> bool:
        return self.cumulative_treated == tuple(range(1, self.J + 1)) and self.I == self.J + 1

    def propensities(self) -> np.ndarray:
        """Float propensities e_1..e_J."""
        return np.array(self.cumulative_treated, dtype=float) / self.I


@dataclass(frozen=True)
class AssignmentRealization:
    """Adoption times A_i in 1..J+1 for one randomization draw."""

    design: StepWedgeDesign
    adoption_times: tuple[int, ...]
    positions: tuple[int, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        times = tuple(int(a) for a in self.adoption_times)
        object.__setattr__(self, "adoption_times", times)
        d = self.design
        if len(times) != d.I:
            raise DesignError(f"expected {d.I} adoption times, got {len(times)}")
        if any(a < 1 or a > d.J + 1 for a in times):
            raise DesignError(f"adoption times must lie in 1..{d.J + 1}: {times}")
        for j in range(1, d.J + 1):
            treated = sum(a <= j for a in times)
            if treated != d.count(j):
                raise DesignError(
                    f"{treated} clusters treated by period {j}, design requires {d.count(j)}"
                )

    @property
    def z(self) -> np.ndarray:
        """I x (J+2) matrix of z(i, j) = 1{A_i <= j} for periods 0..J+1."""
        periods = np.arange(self.design.J + 2)
        return (np.asarray(self.adoption_times)[:, None] <= periods[None, :]).astype(np.int8)


def propensity(design: StepWedgeDesign, period: int) -> Fraction:
    """Exact e_j = I_j / I for a rollout period; ``float()`` it for the float."""
    _check_rollout_period(design, period)
    return Fraction(design.count(period), design.I)


def _check_rollout_period(design, period):
    if not (1 <= period <= design.J):
        raise DesignError(
            f"period {period} is outside the rollout 1..{design.J}; "
            "propensity is 0 or 1 there, so positivity fails"
        )


def _coerce_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def sample_assignment(design: StepWedgeDesign, rng_seed) -> AssignmentRealization:
    """Draw one assignment uniformly (a seeded permutation cut by the counts).

    ``rng_seed`` is an int/SeedSequence entropy or an existing Generator.
    """
    rng = _coerce_rng(rng_seed)
    positions = rng.permutation(design.I) + 1
    periods = design.position_periods()
    adoption = periods[positions - 1]
    return AssignmentRealization(design, tuple(adoption.tolist()), tuple(positions.tolist()))


def enumerate_assignments(
    design: StepWedgeDesign, cap: int = DEFAULT_ENUMERATION_CAP
) -> Iterator[AssignmentRealization]:
    """Yield every distinct assignment once; each has probability 1/count."""
    total = design.num_assignments
    if total > cap:
        raise EnumerationTooLarge(
            f"design has {total} assignments, above the enumeration cap of {cap}"
        )
    sizes = [int(n) for n in design.block_sizes]

    def rec(remaining: tuple[int, ...], t: int, adoption: list[int]):
        if t == len(sizes):
            yield tuple(adoption)
            return
        for chosen in itertools.combinations(remaining, sizes[t]):
            for c in chosen:
                adoption[c] = t + 1
            rest = tuple(c for c in remaining if c not in chosen)
            yield from rec(rest, t + 1, adoption)

    for times in rec(tuple(range(design.I)), 0, [0] * design.I):
        yield AssignmentRealization(design, times)


def assignment_matrix(design: StepWedgeDesign, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """All assignments stacked as an (n_assignments, I) array of adoption times."""
    return np.array([a.adoption_times for a in enumerate_assignments(design, cap)], dtype=int)


# --- joint probabilities -------------------------------------------------


def _normalize_spec(design, spec) -> list[tuple[int, int, int]]:
    entries = []
    for item in spec:
        try:
            cluster, period, arm = item
        except (TypeError, ValueError):
            raise DesignError(f"spec entries must be (cluster, period, arm) triples: {item!r}") from None
        if isinstance(arm, str):
            arm = {"treated": TREATED, "control": CONTROL, "1": 1, "0": 0}.get(arm.lower(), arm)
        if arm not in (0, 1):
            raise DesignError(f"arm must be treated/control (1/0): {arm!r}")
        if not (1 <= cluster <= design.I):
            raise DesignError(f"cluster index {cluster} outside 1..{design.I}")
        _check_rollout_period(design, period)
        entries.append((int(cluster), int(period), int(arm)))
    return entries


def exact_probability(design: StepWedgeDesign, spec) -> Fraction:
    """Joint probability by counting placements of the named clusters.

    Each distinct cluster's constraints collapse to an adoption window
    ``lo < A <= hi``; the probability is the number of ways to seat the
    clusters in positions compatible with their windows, over I(I-1)...
    """
    entries = _normalize_spec(design, spec)
    windows: dict[int, list[int]] = {}
    for cluster, period, arm in entries:
        lo, hi = windows.setdefault(cluster, [0, design.J + 1])
        if arm == TREATED:
            windows[cluster][1] = min(hi, period)
        else:
            windows[cluster][0] = max(lo, period)
    if any(lo >= hi for lo, hi in windows.values()):
        return Fraction(0)
    sizes = [int(n) for n in design.block_sizes]
    options = [range(lo + 1, hi + 1) for lo, hi in windows.values()]
    ways = 0
    for blocks in itertools.product(*options):
        used = {}
        term = 1
        for t in blocks:
            k = used.get(t, 0)
            term *= sizes[t - 1] - k
            used[t] = k + 1
        ways += term
    m = len(windows)
    return Fraction(ways, math.perm(design.I, m))


def enumerated_probability(design: StepWedgeDesign, spec, cap: int = DEFAULT_ENUMERATION_CAP) -> Fraction:
    """Joint probability as a frequency over all assignments (the oracle)."""
    entries = _normalize_spec(design, spec)
    hits = 0
    total = 0
    for a in enumerate_assignments(design, cap):
        total += 1
        times = a.adoption_times
        if all((times[c - 1] <= j) == bool(arm) for c, j, arm in entries):
            hits += 1
    return Fraction(hits, total)


def canonical_keys(entries) -> Iterator[tuple[str, tuple[int, ...], tuple[int, ...]]]:
    """Candidate (arms, cluster pattern, periods) keys after sorting by period.

    Ties in period can be ordered either way, so every distinct tie ordering
    is yielded; clusters are relabelled 0, 1, ... by first appearance.
    """
    entries = sorted(entries, key=lambda e: e[1])
    groups = [list(g) for _, g in itertools.groupby(entries, key=lambda e: e[1])]
    seen = set()
    for perm in itertools.product(*(itertools.permutations(g) for g in groups)):
        ordered = [e for g in perm for e in g]
        labels: dict[int, int] = {}
        pattern = tuple(labels.setdefault(c, len(labels)) for c, _, _ in ordered)
        arms = "".join(str(arm) for _, _, arm in ordered)
        periods = tuple(j for _, j, _ in ordered)
        key = (arms, pattern, periods)
        if key not in seen:
            seen.add(key)
            yield key


def joint_probability(design: StepWedgeDesign, spec) -> Fraction:
    """Exact P(Z_{c1 j1} = a1, ..., Z_{cm jm} = am) for m = 1..4.

    Orders 2-4 dispatch to the tabulated closed forms for the sorted period
    ordering and cluster-identity pattern. Patterns with no tabulated form
    (e.g. three treated and one control) use the exact placement count.
    """
    entries = _normalize_spec(design, spec)
    if not 1 <= len(entries) <= 4:
        raise DesignError(f"joint probabilities are supported for 1-4 entries, got {len(entries)}")
    if len(entries) == 1:
        _, period, arm = entries[0]
        e = propensity(design, period)
        return e if arm == TREATED else 1 - e
    I = Fraction(design.I)
    for arms, pattern, periods in canonical_keys(entries):
        formula = _lemmas.lookup(arms, pattern)
        if formula is None:
            continue
        counts = [Fraction(design.count(j)) for j in periods]
        try:
            return formula(I, *counts)
        except ZeroDivisionError:
            break
    return exact_probability(design, entries)


# --- pairwise structures used by the HT variance -------------------------


@dataclass(frozen=True)
class PairwiseProbabilities:
    """Order-2 probabilities between cells (i, j) and (i', j').

    Each attribute is a pair of J x J integer numerator arrays over the common
    denominator I(I-1): ``same`` for i == i' and ``diff`` for i != i'.
    Rows index the period of the first cell, columns the second.
    """

    denominator: int
    e11_same: np.ndarray
    e11_diff: np.ndarray
    e00_same: np.ndarray
    e00_diff: np.ndarray
    e10_same: np.ndarray
    e10_diff: np.ndarray


def pairwise_probabilities(design: StepWedgeDesign) -> PairwiseProbabilities:
    I = design.I
    c = np.array(design.cumulative_treated, dtype=np.int64)
    lo = np.minimum.outer(c, c)
    hi = np.maximum.outer(c, c)
    row = np.broadcast_to(c[:, None], lo.shape)
    col = np.broadcast_to(c[None, :], lo.shape)
    den = I * (I - 1)
    e11_same = lo * (I - 1)
    e11_diff = lo * (hi - 1)
    e00_same = (I - hi) * (I - 1)
    e00_diff = (I - hi) * (I - lo - 1)
    # first cell treated, second in control
    e10_same = np.where(row > col, (row - col) * (I - 1), 0)
    period = np.arange(design.J)
    later = period[:, None] > period[None, :]
    e10_diff = np.where(later, row * (I - 1) - col * (row - 1), row * (I - col))
    return PairwiseProbabilities(
        den, e11_same, e11_diff, e00_same, e00_diff, e10_same, e10_diff.astype(np.int64)
    )
