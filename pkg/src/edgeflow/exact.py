"""Exact rational arithmetic helpers: parsing, formatting, small matrices.

All skeleton/branch computations run on ``fractions.Fraction`` so that golden
tables can be compared entry-for-entry.  Floats enter only through eigenvalue
extraction and ODE integration, which live elsewhere.
"""

from __future__ import annotations

import math
from decimal import Decimal
from fractions import Fraction
from typing import Sequence

Row = tuple[Fraction, ...]
Matrix = tuple[Row, ...]


def as_fraction(value) -> Fraction:
    """Parse an exact rational from int, Fraction, "p/q" string or decimal."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        # float payloads come from JSON number literals; go through the
        # decimal repr so 0.1 means 1/10, not its binary expansion
        return Fraction(Decimal(repr(value)))
    raise TypeError(f"cannot interpret {value!r} as an exact rational")


def format_fraction(q: Fraction) -> str:
    """Render as "p/q" in lowest terms (Fraction normalizes on creation)."""
    return f"{q.numerator}/{q.denominator}"


def format_float(x: float) -> str:
    return f"{x:.17g}"


def vec(values) -> Row:
    return tuple(as_fraction(v) for v in values)


def matrix(rows) -> Matrix:
    return tuple(vec(r) for r in rows)


def identity(n: int) -> Matrix:
    one, zero = Fraction(1), Fraction(0)
    return tuple(
        tuple(one if i == j else zero for j in range(n)) for i in range(n)
    )


def mat_mul(a: Matrix, b: Matrix) -> Matrix:
    n, m = len(a), len(b[0])
    k = len(b)
    return tuple(
        tuple(sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m))
        for i in range(n)
    )


def mat_vec(a: Matrix, x: Sequence[Fraction]) -> Row:
    return tuple(sum(row[j] * x[j] for j in range(len(x))) for row in a)


def mat_sub(a: Matrix, b: Matrix) -> Matrix:
    return tuple(
        tuple(x - y for x, y in zip(ra, rb)) for ra, rb in zip(a, b)
    )


def solve(a: Matrix, rhs: Sequence[Fraction]) -> Row | None:
    """Solve a square rational system; None when singular."""
    n = len(a)
    aug = [list(row) + [rhs[i]] for i, row in enumerate(a)]
    col = 0
    for col in range(n):
        pivot = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if pivot is None:
            return None
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [v - f * w for v, w in zip(aug[r], aug[col])]
    return tuple(aug[i][n] for i in range(n))


def det(a: Matrix) -> Fraction:
    n = len(a)
    m = [list(row) for row in a]
    result = Fraction(1)
    for col in range(n):
        pivot = next((r for r in range(col, n) if m[r][col] != 0), None)
        if pivot is None:
            return Fraction(0)
        if pivot != col:
            m[col], m[pivot] = m[pivot], m[col]
            result = -result
        result *= m[col][col]
        inv = 1 / m[col][col]
        for r in range(col + 1, n):
            if m[r][col] != 0:
                f = m[r][col] * inv
                m[r] = [v - f * w for v, w in zip(m[r], m[col])]
    return result


def char_poly(a: Matrix) -> tuple[Fraction, ...]:
    """Coefficients (c_0..c_n) of det(tI - A), ascending powers of t.

    Faddeev-LeVerrier recursion; exact for rational input.
    """
    n = len(a)
    coeffs = [Fraction(0)] * (n + 1)
    coeffs[n] = Fraction(1)
    m = identity(n)
    c = Fraction(1)
    for k in range(1, n + 1):
        m = mat_mul(a, m)
        trace = sum(m[i][i] for i in range(n))
        c = -trace / k
        coeffs[n - k] = c
        m = tuple(
            tuple(m[i][j] + (c if i == j else 0) for j in range(n))
            for i in range(n)
        )
    return tuple(coeffs)


def primitive_row(row: Sequence[Fraction]) -> tuple[int, ...]:
    """Scale by a positive rational to coprime integers (inequality-safe)."""
    fracs = [as_fraction(v) for v in row]
    if all(v == 0 for v in fracs):
        raise ValueError("zero row has no primitive representative")
    denom_lcm = math.lcm(*(v.denominator for v in fracs))
    ints = [int(v * denom_lcm) for v in fracs]
    g = math.gcd(*(abs(v) for v in ints))
    return tuple(v // g for v in ints)
