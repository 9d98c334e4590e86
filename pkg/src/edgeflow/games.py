"""Game-defined vector fields on prisms and their boundary-order data.

A payoff matrix plus a grouping of strategies defines a replicator-type flow
that leaves every face of the prism invariant.  For each facet the field has
a finite or infinite order of tangency, and each vertex carries one rational
"character" per incident facet: minus the leading coefficient of the normal
component of the field at that corner.  These numbers drive everything
downstream (edge orientation, transition matrices, cycle spectra), so they
are computed in exact rational arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .exact import Matrix, as_fraction, matrix, solve
from .geometry import Polytope, PrismType, build_prism, build_simplex

INFINITE_ORDER = math.inf


class GameValidationError(ValueError):
    """Raised for malformed game specifications or off-prism states."""


# ---------------------------------------------------------------------------
# game models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GameModel:
    """A vector-field specification on a prism.

    kind is "replicator" (single group), "polymatrix" (payoff matrix over
    grouped strategies) or "generalized" (black-box analytic payoff map).
    """

    kind: str
    prism: PrismType
    payoff: Matrix | None = None
    payoff_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("replicator", "polymatrix", "generalized"):
            raise GameValidationError(f"unknown game kind {self.kind!r}")
        n = self.prism.n
        if self.kind == "generalized":
            if self.payoff_fn is None:
                raise GameValidationError("generalized game needs payoff_fn")
            return
        if self.payoff is None or len(self.payoff) != n or any(
            len(row) != n for row in self.payoff
        ):
            raise GameValidationError(
                f"payoff matrix must be {n}x{n} for groups {self.prism.groups}"
            )
        if self.kind == "replicator" and self.prism.p != 1:
            raise GameValidationError("replicator game requires a single group")

    @property
    def n(self) -> int:
        return self.prism.n

    def polytope(self) -> Polytope:
        return build_prism(self.prism)


def polymatrix_game(groups: Sequence[int], payoff) -> GameModel:
    return GameModel("polymatrix", PrismType(tuple(groups)), matrix(payoff))


def replicator_game(payoff) -> GameModel:
    payoff = matrix(payoff)
    return GameModel("replicator", PrismType((len(payoff),)), payoff)


def generalized_game(groups: Sequence[int],
                     payoff_fn: Callable[[np.ndarray], np.ndarray]) -> GameModel:
    return GameModel("generalized", PrismType(tuple(groups)), None, payoff_fn)


def compactify_lv(interaction, growth) -> GameModel:
    """Embed a Lotka-Volterra system as a replicator game on one more strategy.

    The (n+1)-th strategy plays the role of the point at infinity; its payoff
    row is zero and its column carries the growth rates.
    """
    a = matrix(interaction)
    r = [as_fraction(v) for v in growth]
    n = len(a)
    if any(len(row) != n for row in a) or len(r) != n:
        raise GameValidationError("interaction matrix and growth vector sizes differ")
    zero = Fraction(0)
    rows = [tuple(a[i]) + (r[i],) for i in range(n)]
    rows.append(tuple([zero] * (n + 1)))
    return replicator_game(rows)


# ---------------------------------------------------------------------------
# field evaluation
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _float_payoff(game: GameModel) -> np.ndarray:
    return np.array([[float(v) for v in row] for row in game.payoff])


def _check_state(game: GameModel, x, tol: float, exact: bool) -> None:
    ranges = game.prism.group_ranges()
    for rng in ranges:
        s = sum(x[i] for i in rng)
        off = (s != 1) if exact else abs(float(s) - 1.0) > tol
        if off:
            raise GameValidationError(
                f"state is off the prism: group sum {float(s)} != 1"
            )
    if any(float(x[i]) < -tol for i in range(game.n)):
        raise GameValidationError("state has a negative coordinate")


def eval_field(game: GameModel, x, *, tol: float = 1e-9, check: bool = True):
    """Right-hand side of the flow at state x.

    Exact rational in, exact rational out; numpy arrays follow the float
    path.  Group sums of the result are zero (tangency to the prism).
    """
    exact = game.kind != "generalized" and not isinstance(x, np.ndarray) and all(
        isinstance(v, (int, Fraction)) for v in x
    )
    if check:
        _check_state(game, x, tol, exact)
    ranges = game.prism.group_ranges()
    if exact:
        a = game.payoff
        ax = [sum(a[i][j] * x[j] for j in range(game.n)) for i in range(game.n)]
        out = [Fraction(0)] * game.n
        for rng in ranges:
            avg = sum(x[k] * ax[k] for k in rng)
            for i in rng:
                out[i] = x[i] * (ax[i] - avg)
        return tuple(out)
    xf = np.asarray(x, dtype=float)
    if game.kind == "generalized":
        fx = np.asarray(game.payoff_fn(xf), dtype=float)
        if fx.shape != (game.n,):
            raise GameValidationError("payoff_fn must return an n-vector")
    else:
        fx = _float_payoff(game) @ xf
    out = np.empty(game.n)
    for rng in ranges:
        idx = np.array(rng)
        avg = float(xf[idx] @ fx[idx])
        out[idx] = xf[idx] * (fx[idx] - avg)
    return out


def field_callable(game: GameModel) -> Callable[[float, np.ndarray], np.ndarray]:
    """(t, x) -> dx/dt closure for ODE integrators (no per-call validation)."""
    def rhs(t, x):
        return eval_field(game, np.asarray(x), check=False)
    return rhs


def jacobian(game: GameModel, x) -> Matrix:
    """Exact Jacobian of the field at a rational state."""
    if game.kind == "generalized":
        raise GameValidationError("exact Jacobian needs a payoff matrix")
    xs = [as_fraction(v) for v in x]
    a = game.payoff
    n = game.n
    ax = [sum(a[i][j] * xs[j] for j in range(n)) for i in range(n)]
    rows = []
    for alpha, rng in enumerate(game.prism.group_ranges()):
        del alpha
        avg = sum(xs[k] * ax[k] for k in rng)
        for i in rng:
            row = []
            for j in range(n):
                davg = sum(xs[k] * a[k][j] for k in rng)
                if j in rng:
                    davg += ax[j]
                term = xs[i] * (a[i][j] - davg)
                if i == j:
                    term += ax[i] - avg
                row.append(term)
            rows.append((i, tuple(row)))
    rows.sort()
    return tuple(r for _, r in rows)


# ---------------------------------------------------------------------------
# boundary orders and characters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SkeletonField:
    """Per-facet tangency orders and per-corner characters.

    ``orders[f]`` is a positive integer or ``math.inf``; ``character[v][f]``
    is zero whenever facet f does not pass through vertex v, and zero on all
    infinite-order facets.
    """

    orders: tuple
    character: tuple[tuple[Fraction, ...], ...]

    @property
    def n_facets(self) -> int:
        return len(self.orders)

    @property
    def n_vertices(self) -> int:
        return len(self.character)

    def chi(self, v: int) -> tuple[Fraction, ...]:
        return self.character[v]

    def negate(self) -> "SkeletonField":
        return SkeletonField(
            self.orders,
            tuple(tuple(-c for c in row) for row in self.character),
        )


def validate_skeleton(poly: Polytope, field: SkeletonField) -> None:
    if field.n_facets != poly.n_facets or field.n_vertices != poly.n_vertices:
        raise GameValidationError("skeleton data does not match the polytope")
    for v in range(poly.n_vertices):
        for f in range(poly.n_facets):
            if f not in poly.vertex_facets[v] and field.character[v][f] != 0:
                raise GameValidationError(
                    f"character nonzero off the active facet set at "
                    f"({poly.vertex_name(v)}, {poly.facet_name(f)})"
                )
    for f, nu in enumerate(field.orders):
        if nu == INFINITE_ORDER and any(
            field.character[v][f] != 0 for v in range(poly.n_vertices)
        ):
            raise GameValidationError(
                f"facet {poly.facet_name(f)} has infinite order but a "
                "nonzero character"
            )


# -- tiny exact multivariate polynomials (degree stays <= 2 here) -----------

class _Poly:
    """Polynomial over Fraction coefficients, keyed by exponent tuples."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: dict | None = None):
        self.n = n
        self.terms = {}
        if terms:
            for mono, c in terms.items():
                if c != 0:
                    self.terms[mono] = c

    @classmethod
    def const(cls, n, c) -> "_Poly":
        c = as_fraction(c)
        return cls(n, {(0,) * n: c} if c else {})

    @classmethod
    def var(cls, n, i) -> "_Poly":
        mono = tuple(1 if j == i else 0 for j in range(n))
        return cls(n, {mono: Fraction(1)})

    def __add__(self, other: "_Poly") -> "_Poly":
        out = dict(self.terms)
        for mono, c in other.terms.items():
            out[mono] = out.get(mono, Fraction(0)) + c
        return _Poly(self.n, out)

    def __sub__(self, other: "_Poly") -> "_Poly":
        out = dict(self.terms)
        for mono, c in other.terms.items():
            out[mono] = out.get(mono, Fraction(0)) - c
        return _Poly(self.n, out)

    def __mul__(self, other: "_Poly") -> "_Poly":
        out: dict = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                mono = tuple(a + b for a, b in zip(m1, m2))
                out[mono] = out.get(mono, Fraction(0)) + c1 * c2
        return _Poly(self.n, out)

    def scale(self, c) -> "_Poly":
        c = as_fraction(c)
        return _Poly(self.n, {m: v * c for m, v in self.terms.items()})

    def substitute(self, i: int, repl: "_Poly") -> "_Poly":
        """Replace variable i by a polynomial (used with affine repl)."""
        out = _Poly(self.n)
        for mono, c in self.terms.items():
            k = mono[i]
            base = tuple(0 if j == i else e for j, e in enumerate(mono))
            piece = _Poly(self.n, {base: c})
            for _ in range(k):
                piece = piece * repl
            out = out + piece
        return out

    def is_zero(self) -> bool:
        return not self.terms

    def min_power(self, i: int) -> int:
        return min(mono[i] for mono in self.terms)

    def shift_down(self, i: int, m: int) -> "_Poly":
        out = {}
        for mono, c in self.terms.items():
            lowered = list(mono)
            lowered[i] -= m
            out[tuple(lowered)] = c
        return _Poly(self.n, out)

    def eval(self, point: Sequence[Fraction]) -> Fraction:
        total = Fraction(0)
        for mono, c in self.terms.items():
            term = c
            for j, e in enumerate(mono):
                for _ in range(e):
                    term *= point[j]
            total += term
        return total


def _growth_bracket(game: GameModel, i: int) -> _Poly:
    """Payoff advantage of strategy i over its group average, as a polynomial."""
    n = game.n
    a = game.payoff
    ax_i = _Poly(n)
    for j in range(n):
        if a[i][j]:
            ax_i = ax_i + _Poly.var(n, j).scale(a[i][j])
    bracket = ax_i
    alpha = game.prism.group_of(i)
    for k in game.prism.group_ranges()[alpha]:
        ax_k = _Poly(n)
        for j in range(n):
            if a[k][j]:
                ax_k = ax_k + _Poly.var(n, j).scale(a[k][j])
        bracket = bracket - _Poly.var(n, k) * ax_k
    return bracket


def _reduce_on_prism(poly_expr: _Poly, prism: PrismType, keep: int) -> _Poly:
    """Substitute one affine prism constraint per group, keeping ``keep`` free.

    For each group the largest-index strategy (avoiding ``keep``) is replaced
    by one minus the sum of the rest, which turns functions on the prism's
    affine hull into canonical polynomials in the remaining coordinates.
    """
    n = prism.n
    out = poly_expr
    for rng in prism.group_ranges():
        members = list(rng)
        candidates = [j for j in members if j != keep]
        if not candidates:
            # singleton group containing ``keep``: its coordinate is
            # identically one on the prism
            elim = keep
        else:
            elim = max(candidates)
        repl = _Poly.const(n, 1)
        for j in members:
            if j != elim:
                repl = repl - _Poly.var(n, j)
        out = out.substitute(elim, repl)
    return out


def skeleton_polymatrix(game: GameModel) -> SkeletonField:
    """Facet orders and corner characters of a polymatrix field.

    The normal component of the field at facet i is x_i times a payoff
    bracket; reducing the bracket modulo the prism's affine constraints and
    extracting the exact power of x_i it still contains gives the order,
    and minus the remaining cofactor evaluated at each vertex of the facet
    gives the characters.
    """
    if game.kind not in ("replicator", "polymatrix"):
        raise GameValidationError("skeleton extraction needs a payoff matrix")
    poly = game.polytope()
    n = game.n
    orders: list = [INFINITE_ORDER] * n
    chars = [[Fraction(0)] * n for _ in range(poly.n_vertices)]
    vertex_points = [
        tuple(Fraction(1 if (j + 1) in lab else 0) for j in range(n))
        for lab in poly.vertex_labels
    ]
    for i in range(n):
        bracket = _reduce_on_prism(_growth_bracket(game, i), game.prism, keep=i)
        if bracket.is_zero():
            continue
        alpha = game.prism.group_of(i)
        if game.prism.groups[alpha] == 1:
            raise AssertionError(
                "bracket must vanish identically on a singleton group"
            )
        m = bracket.min_power(i)
        orders[i] = m + 1
        cofactor = bracket.shift_down(i, m)
        for v in range(poly.n_vertices):
            if i in poly.vertex_facets[v]:
                chars[v][i] = -cofactor.eval(vertex_points[v])
    field = SkeletonField(tuple(orders), tuple(tuple(row) for row in chars))
    validate_skeleton(poly, field)
    return field


def skeleton_replicator(payoff) -> SkeletonField:
    """Single-group closed forms for orders and characters.

    The three mutually exclusive regimes per facet i: first order when the
    bracket survives on the facet, second order when it vanishes there but
    its cofactor does not, infinite order when the shifted payoff matrix is
    skew-symmetric (the facet is flow-invariant to all orders).
    """
    a = matrix(payoff)
    n = len(a)
    if any(len(row) != n for row in a):
        raise GameValidationError("payoff matrix must be square")
    poly = build_simplex(n)
    shifted = [[a[k][j] - a[j][j] for j in range(n)] for k in range(n)]

    def skew_on(indices) -> bool:
        return all(
            shifted[k][j] == -shifted[j][k] for k in indices for j in indices
        )

    orders: list = []
    chars = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        row_matches_diag = all(a[i][j] == a[j][j] for j in range(n))
        others = [j for j in range(n) if j != i]
        if not row_matches_diag or not skew_on(others):
            orders.append(1)
            for j in others:
                chars[j][i] = a[j][j] - a[i][j]
        elif not skew_on(range(n)):
            orders.append(2)
            for j in others:
                chars[j][i] = a[j][i] - a[i][i]
        else:
            orders.append(INFINITE_ORDER)
    field = SkeletonField(tuple(orders), tuple(tuple(row) for row in chars))
    validate_skeleton(poly, field)
    return field


def skeleton_of(game: GameModel) -> SkeletonField:
    if game.kind == "replicator":
        return skeleton_replicator(game.payoff)
    return skeleton_polymatrix(game)


# ---------------------------------------------------------------------------
# equilibria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FaceEquilibrium:
    """Outcome of the equilibrium system on one face of the prism.

    ``support`` lists the active strategies per group (0-based).  ``status``
    is "isolated" when the square system has a unique solution interior to
    the face, "none" when the unique solution leaves the face, and
    "degenerate" when the system is singular (no isolated equilibrium, or a
    continuum).
    """

    support: tuple[tuple[int, ...], ...]
    status: str
    point: tuple[Fraction, ...] | None
    eigenvalues: tuple[complex, ...]

    @property
    def is_interior(self) -> bool:
        return self.point is not None and all(v > 0 for v in self.point)


def _face_supports(prism: PrismType):
    from itertools import product as iproduct

    def subsets(rng):
        members = list(rng)
        out = []
        for mask in range(1, 1 << len(members)):
            out.append(tuple(m for k, m in enumerate(members) if mask >> k & 1))
        out.sort(key=lambda s: (len(s), s))
        return out

    per_group = [subsets(r) for r in prism.group_ranges()]
    faces = list(iproduct(*per_group))
    faces.sort(key=lambda f: (sum(len(s) for s in f), f))
    return faces


def _restricted_spectrum(game: GameModel, point, support) -> tuple[complex, ...]:
    """Eigenvalues of the field's Jacobian on the face's tangent space."""
    dim = sum(len(s) - 1 for s in support)
    if dim == 0:
        return ()
    j = np.array([[float(v) for v in row] for row in jacobian(game, point)])
    basis = []
    for strategies in support:
        for k in range(len(strategies) - 1):
            b = np.zeros(game.n)
            b[strategies[k]] = 1.0
            b[strategies[k + 1]] = -1.0
            basis.append(b)
    b = np.column_stack(basis)
    restricted, *_ = np.linalg.lstsq(b, j @ b, rcond=None)
    eig = np.linalg.eigvals(restricted)
    return tuple(sorted(eig, key=lambda z: (round(z.real, 12), round(z.imag, 12))))


def equilibria(game: GameModel) -> list[FaceEquilibrium]:
    """Equilibria face by face: equal payoffs within each group's support.

    Every face yields a square rational linear system; unique solutions that
    stay strictly positive on the support are isolated equilibria of the
    restricted flow, reported with the spectrum of the restricted Jacobian.
    """
    if game.kind == "generalized":
        raise GameValidationError("equilibria need a payoff matrix")
    a = game.payoff
    n = game.n
    results = []
    for support in _face_supports(game.prism):
        active = [i for s in support for i in s]
        col_of = {i: k for k, i in enumerate(active)}
        rows, rhs = [], []
        for strategies in support:
            row = [Fraction(0)] * len(active)
            for i in strategies:
                row[col_of[i]] = Fraction(1)
            rows.append(tuple(row))
            rhs.append(Fraction(1))
            for k in range(len(strategies) - 1):
                i, ip = strategies[k], strategies[k + 1]
                row = [Fraction(0)] * len(active)
                for j in active:
                    row[col_of[j]] = a[i][j] - a[ip][j]
                rows.append(tuple(row))
                rhs.append(Fraction(0))
        sol = solve(tuple(rows), tuple(rhs))
        if sol is None:
            results.append(FaceEquilibrium(support, "degenerate", None, ()))
            continue
        if any(v <= 0 for v in sol):
            results.append(FaceEquilibrium(support, "none", None, ()))
            continue
        point = [Fraction(0)] * n
        for i, v in zip(active, sol):
            point[i] = v
        point = tuple(point)
        spectrum = _restricted_spectrum(game, point, support)
        results.append(FaceEquilibrium(support, "isolated", point, spectrum))
    return results
