"""Closed-form joint assignment probabilities for 2, 3 and 4 cells.

Keys are ``(arms, pattern)``. ``arms`` lists the required statuses ("1"
treated, "0" control) after sorting cells by period, so ``A <= B <= C <= D``
are the cumulative treated counts at those periods. ``pattern`` labels the
clusters by first appearance: ``(0, 1, 0)`` means the first and third cell
share a cluster. Expressions are evaluated with exact fractions.

A handful of the tabulated expressions disagree with exhaustive
enumeration; those keys are listed in ``MISPRINTED`` and are never used
(the caller falls back to the exact placement count).
"""

from __future__ import annotations

TABLE: dict[tuple[str, tuple[int, ...]], str] = {
    # order 2
    ("11", (0, 0)): "A/I",
    ("01", (0, 0)): "(B-A)/I",
    ("00", (0, 0)): "1 - B/I",
    ("10", (0, 0)): "0",
    ("11", (0, 1)): "A/I * (B-1)/(I-1)",
    ("01", (0, 1)): "(B-A)/I * (B-1)/(I-1) + (1 - B/I) * B/(I-1)",
    ("00", (0, 1)): "(1 - B/I) * (I-A-1)/(I-1)",
    ("10", (0, 1)): "A/I * (I-B)/(I-1)",
    # order 3, all treated
    ("111", (0, 1, 2)): "A/I * (B-1)/(I-1) * (C-2)/(I-2)",
    ("111", (0, 0, 1)): "A/I * (C-1)/(I-1)",
    ("111", (0, 1, 0)): "A/I * (B-1)/(I-1)",
    ("111", (0, 1, 1)): "A/I * (B-1)/(I-1)",
    ("111", (0, 0, 0)): "A/I",
    # order 3, all control
    ("000", (0, 1, 2)): "(I-A-2)/(I-2) * (I-B-1)/(I-1) * (I-C)/I",
    ("000", (0, 0, 1)): "(I-B-1)/(I-1) * (I-C)/I",
    ("000", (0, 1, 0)): "(I-B-1)/(I-1) * (I-C)/I",
    ("000", (0, 1, 1)): "(I-A-1)/(I-1) * (I-C)/I",
    ("000", (0, 0, 0)): "(I-C)/I",
    # order 3, mixed
    ("110", (0, 1, 2)): "A/I * (B-1)/(I-1) * (I-C)/(I-2)",
    ("110", (0, 0, 1)): "A/I * (I-C)/(I-1)",
    ("110", (0, 1, 0)): "0",
    ("110", (0, 1, 1)): "0",
    ("110", (0, 0, 0)): "0",
    ("101", (0, 1, 2)): "A/I * (C-B)/(I-1) * (I-B-1)/(I-2) + A/I * B/(I-1) * (I-B)/(I-2)",
    ("101", (0, 0, 1)): "0",
    ("101", (0, 1, 0)): "A/I * (I-B)/(I-1)",
    ("101", (0, 1, 1)): "A/I * (C-B)/(I-1)",
    ("101", (0, 0, 0)): "0",
    ("011", (0, 1, 2)): (
        "(B-A)/I * (B-1)/(I-1) * (C-2)/(I-2) + (C-B)/I * B/(I-1) * (C-2)/(I-2)"
        " + (I-C)/I * B/(I-1) * (C-1)/(I-2)"
    ),
    ("011", (0, 0, 1)): "(B-A)/I * (C-1)/(I-1)",
    ("011", (0, 1, 0)): "(B-A)/I * (C-A-1)/(I-1) + A/I * (C-A)/(I-1)",
    ("011", (0, 1, 1)): "(B-A)/I * (B-1)/(I-1) + (I-B)/I * B/(I-1)",
    ("011", (0, 0, 0)): "(B-A)/I",
    ("100", (0, 1, 2)): "A/I * (I-B-1)/(I-2) * (I-C)/(I-1)",
    ("100", (0, 0, 1)): "0",
    ("100", (0, 1, 0)): "0",
    ("100", (0, 1, 1)): "A/I * (I-C)/(I-1)",
    ("100", (0, 0, 0)): "0",
    ("010", (0, 1, 2)): (
        "A/I * (I-C)/(I-1) * (I-A-1)/(I-2) + (B-A)/I * (I-C)/(I-1) * (I-A-2)/(I-2)"
    ),
    ("010", (0, 0, 1)): "(B-A)/I * (I-C)/(I-1)",
    ("010", (0, 1, 0)): "(I-C)/I * B/(I-1)",
    ("010", (0, 1, 1)): "0",
    ("010", (0, 0, 0)): "0",
    ("001", (0, 1, 2)): (
        "A/I * (I-B)/(I-1) * (I-A-1)/(I-2) + (B-A)/I * (I-B)/(I-1) * (I-A-2)/(I-2)"
        " + (C-B)/I * (I-B-1)/(I-1) * (I-A-2)/(I-2)"
    ),
    ("001", (0, 0, 1)): "(I-C)/I * C/(I-1) + (C-B)/I * (C-1)/(I-1)",
    ("001", (0, 1, 0)): "(B-A)/I * (I-B)/(I-1) + (C-B)/I * (I-B-1)/(I-1)",
    ("001", (0, 1, 1)): "(C-B)/I * (I-A-1)/(I-1)",
    ("001", (0, 0, 0)): "(C-B)/I",
    # order 4, all treated
    ("1111", (0, 1, 2, 3)): "A/I * (B-1)/(I-1) * (C-2)/(I-2) * (D-3)/(I-3)",
    ("1111", (0, 0, 1, 2)): "A/I * (C-1)/(I-1) * (D-2)/(I-2)",
    ("1111", (0, 1, 1, 2)): "A/I * (B-1)/(I-1) * (D-2)/(I-2)",
    ("1111", (0, 1, 2, 2)): "A/I * (B-1)/(I-1) * (C-2)/(I-2)",
    ("1111", (0, 1, 0, 2)): "A/I * (B-1)/(I-1) * (D-2)/(I-2)",
    ("1111", (0, 1, 2, 1)): "A/I * (B-1)/(I-1) * (C-2)/(I-2)",
    ("1111", (0, 1, 2, 0)): "A/I * (B-1)/(I-1) * (C-2)/(I-2)",
    ("1111", (0, 0, 0, 1)): "A/I * (D-1)/(I-1)",
    ("1111", (0, 1, 1, 1)): "A/I * (D-1)/(I-1)",
    ("1111", (0, 0, 1, 0)): "A/I * (C-1)/(I-1)",
    ("1111", (0, 1, 0, 0)): "A/I * (B-1)/(I-1)",
    ("1111", (0, 0, 1, 1)): "A/I * (C-1)/(I-1)",
    ("1111", (0, 1, 0, 1)): "A/I * (B-1)/(I-1)",
    ("1111", (0, 1, 1, 0)): "A/I * (B-1)/(I-1)",
    ("1111", (0, 0, 0, 0)): "A/I",
    # order 4, all control
    ("0000", (0, 1, 2, 3)): "(I-A-3)/(I-3) * (I-B-2)/(I-2) * (I-C-1)/(I-1) * (I-D)/I",
    ("0000", (0, 0, 1, 2)): "(I-B-2)/(I-2) * (I-C-1)/(I-1) * (I-D)/I",
    ("0000", (0, 1, 1, 2)): "(I-A-2)/(I-2) * (I-C-1)/(I-1) * (I-D)/I",
    ("0000", (0, 1, 2, 2)): "(I-A-2)/(I-2) * (I-B-1)/(I-1) * (I-D)/I",
    ("0000", (0, 1, 0, 2)): "(I-B-2)/(I-2) * (I-C-1)/(I-1) * (I-D)/I",
    ("0000", (0, 1, 2, 1)): "(I-A-2)/(I-2) * (I-C-1)/(I-1) * (I-D)/I",
    ("0000", (0, 1, 2, 0)): "(I-A-2)/(I-2) * (I-C-1)/(I-1) * (I-D)/I",
    ("0000", (0, 0, 0, 1)): "(I-C-1)/(I-1) * (I-D)/I",
    ("0000", (0, 1, 1, 1)): "(I-A-1)/(I-1) * (I-D)/I",
    ("0000", (0, 0, 1, 0)): "(I-C-1)/(I-1) * (I-D)/I",
    ("0000", (0, 1, 0, 0)): "(I-B-1)/(I-1) * (I-D)/I",
    ("0000", (0, 0, 1, 1)): "(I-B-1)/(I-1) * (I-D)/I",
    ("0000", (0, 1, 0, 1)): "(I-C-1)/(I-1) * (I-D)/I",
    ("0000", (0, 1, 1, 0)): "(I-C-1)/(I-1) * (I-D)/I",
    ("0000", (0, 0, 0, 0)): "(I-D)/I",
    # order 4, two treated and two control
    ("1100", (0, 1, 2, 3)): "A/I * (B-1)/(I-1) * (I-D)/(I-2) * (I-C-1)/(I-3)",
    ("1100", (0, 1, 2, 2)): "A/I * (B-1)/(I-1) * (I-D)/(I-2)",
    ("1100", (0, 1, 1, 2)): "0",
    ("1100", (0, 0, 1, 2)): "A/I * (I-D)/(I-1) * (I-C-1)/(I-2)",
    ("1100", (0, 1, 0, 2)): "0",
    ("1100", (0, 1, 2, 0)): "0",
    ("1100", (0, 1, 2, 1)): "0",
    ("1100", (0, 0, 0, 1)): "0",
    ("1100", (0, 0, 1, 0)): "0",
    ("1100", (0, 1, 0, 0)): "0",
    ("1100", (0, 1, 1, 1)): "0",
    ("1100", (0, 0, 1, 1)): "A/I * (I-D)/(I-1)",
    ("1100", (0, 1, 1, 0)): "0",
    ("1100", (0, 1, 0, 1)): "0",
    ("1100", (0, 0, 0, 0)): "0",
    ("1010", (0, 1, 2, 3)): (
        "A/I * (I-D)/(I-1) * ((I-D-1)/(I-2) * (C-1)/(I-3) + (D-C)/(I-2) * (C-1)/(I-3)"
        " + (C-B)/(I-2) * (C-2)/(I-3))"
    ),
    ("1010", (0, 1, 2, 2)): "0",
    ("1010", (0, 1, 1, 2)): "A/I * (C-B)/(I-1) * (I-D)/(I-2)",
    ("1010", (0, 0, 1, 2)): "0",
    ("1010", (0, 1, 0, 2)): "A/I * (I-D)/(I-1) * (I-B-1)/(I-2)",
    ("1010", (0, 1, 2, 0)): "0",
    ("1010", (0, 1, 2, 1)): "A/I * (C-1)/(I-1) * (I-D)/(I-2)",
    ("1010", (0, 0, 0, 1)): "0",
    ("1010", (0, 0, 1, 0)): "0",
    ("1010", (0, 1, 0, 0)): "0",
    ("1010", (0, 1, 1, 1)): "0",
    ("1010", (0, 0, 1, 1)): "0",
    ("1010", (0, 1, 1, 0)): "0",
    ("1010", (0, 1, 0, 1)): "A/I * (I-D)/(I-1)",
    ("1010", (0, 0, 0, 0)): "0",
    ("1001", (0, 1, 2, 3)): (
        "A/I * ((I-D)/(I-1) * (I-D-1)/(I-2) * (D-1)/(I-3)"
        " + (D-C)/(I-1) * (D-B-1)/(I-2) * (D-3)/(I-3))"
    ),
    ("1001", (0, 1, 2, 2)): "A/I * (D-C)/(I-1) * (I-B-1)/(I-2)",
    ("1001", (0, 1, 1, 2)): "A/I * ((I-D)/(I-1) * (D-1)/(I-2) + (D-C)/(I-1) * (D-2)/(I-2))",
    ("1001", (0, 0, 1, 2)): "0",
    ("1001", (0, 1, 0, 2)): "0",
    ("1001", (0, 1, 2, 0)): "A/I * (I-C)/(I-1) * (I-B-1)/(I-2)",
    ("1001", (0, 1, 2, 1)): "A/I * ((I-D)/(I-1) * (D-B)/(I-2) + (D-C)/(I-1) * (D-B-1)/(I-2))",
    ("1001", (0, 0, 0, 1)): "0",
    ("1001", (0, 0, 1, 0)): "0",
    ("1001", (0, 1, 0, 0)): "0",
    ("1001", (0, 1, 1, 1)): "A/I * (D-C)/(I-1)",
    ("1001", (0, 0, 1, 1)): "0",
    ("1001", (0, 1, 1, 0)): "A/I * (I-C)/(I-1)",
    ("1001", (0, 1, 0, 1)): "0",
    ("1001", (0, 0, 0, 0)): "0",
    ("0101", (0, 1, 2, 3)): (
        "(B-A)/I * (B-1)/(I-1) * ((I-D)/(I-2) * (D-2)/(I-3) + (D-C)/(I-2) * (D-3)/(I-3))"
        " + (C-B)/I * B/(I-1) * ((I-D)/(I-2) * (D-2)/(I-3) + (D-C)/(I-2) * (D-3)/(I-3))"
        " + (D-C)/I * B/(I-1) * ((I-D)/(I-2) * (D-2)/(I-3) + (D-C-1)/(I-2) * (D-3)/(I-3))"
        " + (I-D)/I * B/(I-1) * ((I-D-1)/(I-2) * (D-1)/(I-3) + (D-C)/(I-2) * (D-2)/(I-3))"
    ),
    ("0101", (0, 1, 2, 2)): "(D-C)/I * (A/(I-1) * (I-A-1)/(I-2) + (B-A)/(I-1) * (I-A-2)/(I-2))",
    ("0101", (0, 1, 1, 2)): "0",
    ("0101", (0, 0, 1, 2)): "(B-A)/I * ((I-D)/(I-1) * (D-1)/(I-2) + (D-C)/(I-1) * (D-2)/(I-2))",
    ("0101", (0, 1, 0, 2)): "B/I * ((I-D)/(I-1) * (D-1)/(I-2) + (D-C)/(I-1) * (D-2)/(I-2))",
    ("0101", (0, 1, 2, 0)): (
        "(B-A)/I * (B-1)/(I-1) * (I-C)/(I-2) + (C-B)/I * B/(I-1) * (I-C)/(I-2)"
        " + (D-C)/I * B/(I-1) * (I-C-1)/(I-2)"
    ),
    ("0101", (0, 1, 2, 1)): (
        "A/I * (I-C)/(I-1) * (I-A-1)/(I-2) + (B-A)/I * (I-C)/(I-1) * (I-A-2)/(I-2)"
    ),
    ("0101", (0, 0, 0, 1)): "0",
    ("0101", (0, 0, 1, 0)): "(B-A)/I * (I-C)/(I-1)",
    ("0101", (0, 1, 0, 0)): "B/I * (D-C)/(I-1)",
    ("0101", (0, 1, 1, 1)): "0",
    ("0101", (0, 0, 1, 1)): "(B-A)/I * (D-C)/(I-1)",
    ("0101", (0, 1, 1, 0)): "0",
    ("0101", (0, 1, 0, 1)): "B/I * (I-C)/(I-1)",
    ("0101", (0, 0, 0, 0)): "0",
    ("0110", (0, 1, 2, 3)): (
        "(I-D)/I * ((B-A)/(I-1) * (B-1)/(I-2) * (C-2)/(I-2) + (C-B)/(I-1) * B/(I-2) * (C-2)/(I-2)"
        " + (I-C-1)/(I-1) * B/(I-2) * (C-1)/(I-2))"
    ),
    ("0110", (0, 1, 2, 2)): "0",
    ("0110", (0, 1, 1, 2)): "(I-D)/I * ((B-A)/(I-1) * (B-1)/(I-2) + (I-B-1)/(I-1) * B/(I-2))",
    ("0110", (0, 0, 1, 2)): "(B-A)/I * (C-1)/(I-1) * (I-D)/(I-2)",
    ("0110", (0, 1, 0, 2)): "(B-A)/I * (B-1)/(I-1) * (I-D)/(I-2) + (C-B)/I * B/(I-1) * (I-D)/(I-2)",
    ("0110", (0, 1, 2, 0)): "B/I * (C-1)/(I-1) * (I-D)/(I-2)",
    ("0110", (0, 1, 2, 1)): "0",
    ("0110", (0, 0, 0, 1)): "(B-A)/I * (I-D)/(I-1)",
    ("0110", (0, 0, 1, 0)): "0",
    ("0110", (0, 1, 0, 0)): "0",
    ("0110", (0, 1, 1, 1)): "0",
    ("0110", (0, 0, 1, 1)): "0",
    ("0110", (0, 1, 1, 0)): "B/I * (I-D)/(I-1)",
    ("0110", (0, 1, 0, 1)): "0",
    ("0110", (0, 0, 0, 0)): "0",
    ("0011", (0, 1, 2, 3)): (
        "(C-B)/I * ((C-A-1)/(I-1) * (C-2)/(I-2) * (D-3)/(I-3) + (D-C)/(I-1) * (C-1)/(I-2) * (D-3)/(I-3)"
        " + (I-D)/(I-1) * (C-1)/(I-2) * (D-2)/(I-3))"
        " + (D-C)/I * ((C-A)/(I-1) * (C-2)/(I-2) * (D-3)/(I-3) + (D-C-1)/(I-1) * C/(I-2) * (D-3)/(I-3)"
        " + (I-D)/(I-1) * C/(I-2) * (D-2)/(I-3))"
        " + (I-D)/I * ((C-A)/(I-1) * (C-1)/(I-2) * (D-2)/(I-3) + (D-C)/(I-1) * C/(I-2) * (D-2)/(I-3)"
        " + (I-D-1)/(I-1) * C/(I-2) * (D-1)/(I-3))"
    ),
    ("0011", (0, 1, 2, 2)): (
        "A/I * (I-B)/(I-1) * (I-A-1)/(I-2) + (B-A)/I * (I-B)/(I-1) * (I-A-2)/(I-2)"
        " + (C-B)/I * (I-B-1)/(I-1) * (I-A-2)/(I-2)"
    ),
    ("0011", (0, 1, 1, 2)): (
        "(I-D)/I * (C-B)/(I-1) * (D-1)/(I-2) + (D-C)/I * (C-B)/(I-1) * (D-2)/(I-2)"
        " + (C-B)/I * (C-B-1)/(I-1) * (D-2)/(I-2) + (B-A)/I * (C-B)/(I-1) * (D-2)/(I-2)"
    ),
    ("0011", (0, 0, 1, 2)): (
        "(I-D)/I * C/(I-1) * (D-1)/(I-2)"
        " + (D-C)/I * C/(I-1) * (D-2)/(I-2) * (C-A)/I * (C-1)/(I-1) * (D-2)/(I-2)"
    ),
    ("0011", (0, 1, 0, 2)): (
        "(B-A)/I * ((D-B)/(I-1) * (D-2)/(I-2) + (I-D)/(I-1) * (D-1)/(I-2))"
        " + (C-B)/I * ((D-B-1)/(I-1) * (D-2)/(I-2) + (I-D)/(I-1) * (D-1)/(I-2))"
    ),
    ("0011", (0, 1, 2, 0)): (
        "(B-A)/I * ((C-B)/(I-1) * (C-2)/(I-2) + (I-C)/(I-1) * (C-1)/(I-2))"
        " + (C-B)/I * ((C-B-1)/(I-1) * (C-2)/(I-2) + (I-C-1)/(I-1) * (C-1)/(I-2))"
        " + (D-C)/I * ((C-B)/(I-1) * (C-1)/(I-2) + (I-C-1)/(I-1) * C/(I-2))"
    ),
    ("0011", (0, 1, 2, 1)): (
        "A/I * (D-B)/(I-1) * (I-A-1)/(I-2) + (B-A)/I * (D-B)/(I-1) * (I-A-2)/(I-2)"
        " + (C-B)/I * (D-B-1)/(I-1) * (I-A-2)/(I-2)"
    ),
    ("0011", (0, 0, 0, 1)): "(C-B)/I * (D-1)/(I-1)",
    ("0011", (0, 0, 1, 0)): "(C-B)/I * (C-1)/(I-1) + (D-C)/I * C/(I-1)",
    ("0011", (0, 1, 0, 0)): "(C-B)/I * (C-A-1)/(I-1) + (I-C)/I * (C-A)/(I-1)",
    ("0011", (0, 1, 1, 1)): "(C-B)/I * (I-A-1)/(I-1)",
    ("0011", (0, 0, 1, 1)): "(C-B)/I * (C-1)/(I-1) + (I-C)/I * C/(I-1)",
    ("0011", (0, 1, 1, 0)): "(C-B)/I * (D-A-1)/(I-1)",
    ("0011", (0, 1, 0, 1)): "(B-A)/I * (D-B)/(I-1) + (C-B)/I * (D-B-1)/(I-1)",
    ("0011", (0, 0, 0, 0)): "(C-B)/I",
}

# Filled in from exhaustive checks against enumeration (see tests/test_design.py).
MISPRINTED: frozenset[tuple[str, tuple[int, ...]]] = frozenset(
    {
        ("101", (0, 1, 2)),
        ("1111", (0, 1, 1, 1)),
        ("0000", (0, 1, 2, 0)),
        ("1001", (0, 1, 2, 3)),
        ("0110", (0, 1, 2, 3)),
        ("0011", (0, 1, 2, 3)),
        ("0011", (0, 0, 1, 2)),
        ("0011", (0, 1, 2, 0)),
    }
)

_ARGS = ("I", "A", "B", "C", "D")


def _compile(expr: str, order: int):
    names = ", ".join(_ARGS[: order + 1])
    return eval(f"lambda {names}: {expr}", {})  # noqa: S307 - constant table


FORMULAS = {key: _compile(expr, len(key[0])) for key, expr in TABLE.items()}


def lookup(arms: str, pattern: tuple[int, ...], *, include_misprinted: bool = False):
    key = (arms, tuple(pattern))
    if key in MISPRINTED and not include_misprinted:
        return None
    return FORMULAS.get(key)
