"""Independent reference computations used by several test modules."""

import itertools
from fractions import Fraction

import numpy as np

from swedge import _lemmas
from swedge.data import materialize
from swedge.design import StepWedgeDesign, assignment_matrix, enumerate_assignments, joint_probability
from swedge.ht import ht_estimate, ht_variance


def small_designs(max_clusters=5, max_periods=4):
    for I in range(2, max_clusters + 1):
        for J in range(1, max_periods + 1):
            for counts in itertools.combinations_with_replacement(range(1, I), J):
                yield StepWedgeDesign(I, counts)


def z_tensor(design):
    """(assignments, I, J) boolean array of Z over every assignment."""
    times = assignment_matrix(design)
    periods = np.arange(1, design.J + 1)
    return times[:, :, None] <= periods[None, None, :]


def enumeration_frequency(Z, entries):
    hit = np.ones(Z.shape[0], dtype=bool)
    for cluster, period, arm in entries:
        hit &= Z[:, cluster - 1, period - 1] == bool(arm)
    return Fraction(int(hit.sum()), Z.shape[0])


def lemma_cases(design):
    """Every tabulated (arms, pattern) at every sorted period tuple that fits the design."""
    for (arms, pattern) in _lemmas.TABLE:
        m = len(arms)
        if max(pattern) + 1 > design.I:
            continue
        for periods in itertools.combinations_with_replacement(range(1, design.J + 1), m):
            entries = [(pattern[k] + 1, periods[k], int(arms[k])) for k in range(m)]
            yield arms, pattern, periods, entries


def check_lemmas(designs):
    """Compare formulas and the public dispatcher with enumeration in exact arithmetic.

    A case is identified by I, the arm and cluster patterns, the cumulative
    counts at the queried periods and which queried periods coincide; both
    sides depend on nothing else, so repeats across designs are skipped.
    Returns (distinct cases, formula mismatches outside the misprint list,
    dispatcher mismatches).
    """
    seen = set()
    checked, bad_formula, bad_dispatch = 0, [], []
    for design in designs:
        Z = None
        I = Fraction(design.I)
        for arms, pattern, periods, entries in lemma_cases(design):
            key = (design.I, arms, pattern, tuple(design.count(j) for j in periods),
                   tuple(a == b for a, b in zip(periods, periods[1:])))
            if key in seen:
                continue
            seen.add(key)
            if Z is None:
                Z = z_tensor(design)
            truth = enumeration_frequency(Z, entries)
            checked += 1
            if joint_probability(design, entries) != truth:
                bad_dispatch.append((design, entries))
            formula = _lemmas.lookup(arms, pattern)
            if formula is None:
                continue
            counts = [Fraction(design.count(j)) for j in periods]
            try:
                value = formula(I, *counts)
            except ZeroDivisionError:
                continue
            if value != truth:
                bad_formula.append((design, arms, pattern, periods, value, truth))
    return checked, bad_formula, bad_dispatch


def brute_force_ht_variance(dataset, kind="conservative", lambda0=0.0):
    """Cell-by-cell double sum of the HT variance estimator with exact probabilities."""
    design = dataset.design
    I, J = design.I, design.J
    z = dataset.z_matrix[:, 1 : J + 1]
    mask = dataset.rollout_mask
    r = dataset.cell_sum(dataset.y - lambda0 * dataset.d, mask)[:, 1 : J + 1]
    N = dataset.N
    cells = [(i, j) for i in range(I) for j in range(J)]
    e = {j: float(Fraction(design.count(j + 1), I)) for j in range(J)}

    def joint(c1, a1, c2, a2):
        return joint_probability(design, [(c1[0] + 1, c1[1] + 1, a1), (c2[0] + 1, c2[1] + 1, a2)])

    def ratio(num, den):
        return 0.0 if num == 0 and den == 0 else num / den

    v1 = v0 = cov = 0.0
    for c in cells:
        i, j = c
        t, ej = r[i, j], e[j]
        if z[i, j] == 1:
            v1 += (1 - ej) / ej**2 * t * t
        else:
            v0 += ej / (1 - ej) ** 2 * t * t
        for c2 in cells:
            i2, j2 = c2
            t2, ej2 = r[i2, j2], e[j2]
            p11 = joint(c, 1, c2, 1) if c2 != c else None
            p00 = joint(c, 0, c2, 0) if c2 != c else None
            p10 = joint(c, 1, c2, 0)
            if c2 != c:
                if z[i, j] == 1 and z[i2, j2] == 1:
                    v1 += ratio(float(p11) - ej * ej2, float(p11) * ej * ej2) * t * t2
                if z[i, j] == 0 and z[i2, j2] == 0:
                    v0 += ratio(float(p00) - (1 - ej) * (1 - ej2), float(p00) * (1 - ej) * (1 - ej2)) * t * t2
                if z[i, j] == 1 and z[i2, j2] == 0:
                    cov += ratio(float(p10) - ej * (1 - ej2), float(p10) * ej * (1 - ej2)) * t * t2
            if kind != "conservative":
                continue
            if p11 is not None and p11 == 0:
                v1 += (z[i, j] * t * t / (2 * ej)) + (z[i2, j2] * t2 * t2 / (2 * ej2))
            if p00 is not None and p00 == 0:
                v0 += ((1 - z[i, j]) * t * t / (2 * (1 - ej))) + ((1 - z[i2, j2]) * t2 * t2 / (2 * (1 - ej2)))
            if p10 == 0:
                cov -= (z[i, j] * t * t / (2 * ej)) + ((1 - z[i2, j2]) * t2 * t2 / (2 * (1 - ej2)))
    return (v1 + v0 - 2 * cov) / N**2


def enumerate_ht(table, lambda0=0.0, adjustment="none", kinds=("conservative", "simplified")):
    """Estimate and variance estimates under every assignment of the table's design."""
    est, var = [], {k: [] for k in kinds}
    for a in enumerate_assignments(table.design):
        ds = materialize(table, a)
        est.append(ht_estimate(ds, lambda0, adjustment))
        for k in kinds:
            var[k].append(ht_variance(ds, lambda0, adjustment, k))
    return np.array(est), {k: np.array(v) for k, v in var.items()}
