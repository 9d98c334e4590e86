"""Projective return dynamics: normalized branches, periodic rays, stability.

Scaling a branch image to unit coordinate sum turns the piecewise-linear
return map into a piecewise projective map on a union of simplices.  Its
periodic points are the positive eigenrays of cyclic branch products, and
the ratios of the other eigenvalues to the ray's eigenvalue decide normal
stability of the associated boundary cycle of the flow.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from .exact import Matrix, as_fraction, char_poly, det, mat_mul, primitive_row
from .skeleton import (
    Branch,
    BranchDomainError,
    PiecewiseLinearMap,
    SectorPoint,
    SkeletonError,
)


class ChartError(SkeletonError):
    pass


class BreakpointHit(ChartError):
    """Chart iteration landed exactly on a piece boundary."""


# ---------------------------------------------------------------------------
# projectivization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChartPiece:
    """One projective branch as a rational map (a x + b) / (c x + d).

    Valid on [lo, hi); the coefficient tuple is primitive-integer with the
    denominator positive on the piece.
    """

    lo: Fraction
    hi: Fraction
    coeffs: tuple[int, int, int, int]
    branch_name: str

    def value(self, x):
        a, b, c, d = self.coeffs
        if isinstance(x, Fraction):
            return (a * x + b) / (c * x + d)
        return (a * x + b) / (c * x + d)


@dataclass(eq=False)
class ProjectiveMap:
    """Unit-sum normalization of a piecewise-linear return map."""

    plmap: PiecewiseLinearMap
    offsets: dict[int, int]
    chart: tuple[ChartPiece, ...] | None
    breakpoints: tuple[Fraction, ...] | None

    def normalize(self, point: SectorPoint) -> SectorPoint:
        total = sum(point.coords)
        if float(total) <= 0:
            raise ChartError("point has nonpositive coordinate sum")
        if isinstance(total, Fraction):
            return SectorPoint(point.edge,
                               tuple(c / total for c in point.coords))
        return SectorPoint(point.edge,
                           tuple(float(c) / float(total) for c in point.coords))

    def apply(self, point: SectorPoint, margin: float = 0.0):
        from .skeleton import s_poincare

        branch, image = s_poincare(self.plmap, point, margin=margin)
        return branch, self.normalize(image)

    # -- 1-dimensional chart (three-dimensional polytopes) -------------------

    def to_chart(self, point: SectorPoint):
        if self.chart is None:
            raise ChartError("chart requires two-dimensional edge sectors")
        k = self.offsets[point.edge]
        a, b = point.coords
        total = a + b
        if isinstance(total, Fraction):
            return k + a / total
        return k + float(a) / float(total)

    def from_chart(self, x) -> SectorPoint:
        if self.chart is None:
            raise ChartError("chart requires two-dimensional edge sectors")
        k = min(
            (off for off in self.offsets.values() if off <= x),
            key=lambda off: x - off,
        )
        edge = next(e for e, off in self.offsets.items() if off == k)
        s = x - k
        if isinstance(x, Fraction):
            return SectorPoint(edge, (s, 1 - s))
        return SectorPoint(edge, (float(s), 1.0 - float(s)))

    def piece_at(self, x) -> ChartPiece:
        """Locate the chart piece; exact endpoint hits between two pieces
        are reported, integer block starts and the global right end are
        evaluated in their closed piece."""
        if self.chart is None:
            raise ChartError("chart requires two-dimensional edge sectors")
        xf = as_fraction(x) if not isinstance(x, float) else x
        for k, piece in enumerate(self.chart):
            lo, hi = float(piece.lo), float(piece.hi)
            xv = float(xf)
            if lo < xv < hi:
                return piece
            if xv == lo:
                if float(piece.lo) == int(piece.lo):
                    return piece
                raise BreakpointHit(f"chart point {xv} sits on a breakpoint")
            if xv == hi and k == len(self.chart) - 1:
                return piece
        raise ChartError(f"chart point {float(xf)} is outside every piece")

    def chart_value(self, x):
        return self.piece_at(x).value(x)


def projectivize(plmap: PiecewiseLinearMap) -> ProjectiveMap:
    """Attach unit-sum normalization; build the interval chart when every
    structural edge sector is two-dimensional."""
    edges = sorted(plmap.structural_set)
    offsets = {e: k for k, e in enumerate(edges)}
    two_dim = all(
        len(b.source_support) == 2 and len(b.target_support) == 2
        for b in plmap.branches
    )
    if not two_dim or not plmap.branches:
        return ProjectiveMap(plmap, offsets, None, None)
    pieces = []
    for b in plmap.branches:
        piece = _chart_piece(b, offsets)
        if piece is not None:
            pieces.append(piece)
    pieces.sort(key=lambda p: (p.lo, p.hi))
    interior = sorted({p.lo for p in pieces} | {p.hi for p in pieces})
    lo_all, hi_all = pieces[0].lo, max(p.hi for p in pieces)
    breakpoints = tuple(v for v in interior if v not in (lo_all, hi_all))
    return ProjectiveMap(plmap, offsets, tuple(pieces), breakpoints)


def _chart_piece(branch: Branch, offsets: dict[int, int]) -> ChartPiece | None:
    if branch.domain.empty:
        return None
    k = Fraction(offsets[branch.source])
    kp = Fraction(offsets[branch.target])
    (m00, m01), (m10, m11) = branch.restricted()
    # u = (s, 1 - s) with s = x - k; image coordinate sum and first entry
    p1, q1 = m00 - m01, m01
    psum, qsum = m00 + m10 - m01 - m11, m01 + m11
    a = kp * psum + p1
    b = kp * qsum + q1 - a * k
    c = psum
    d = qsum - psum * k
    # piece interval from the reduced domain rows
    s_lo, s_hi = Fraction(0), Fraction(1)
    for alpha, beta in branch.domain.rows:
        slope = alpha - beta
        if slope > 0:
            s_lo = max(s_lo, Fraction(-beta, slope))
        elif slope < 0:
            s_hi = min(s_hi, Fraction(-beta, slope))
        elif beta <= 0:
            return None
    if s_lo >= s_hi:
        return None
    lo, hi = k + s_lo, k + s_hi
    coeffs = primitive_row((a, b, c, d))
    mid = (lo + hi) / 2
    if coeffs[2] * mid + coeffs[3] < 0:
        coeffs = tuple(-v for v in coeffs)
    return ChartPiece(lo, hi, coeffs, branch.name)


# ---------------------------------------------------------------------------
# periodic rays of branch products
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CycleReport:
    """Stability record of one cyclic branch word."""

    branch_word: tuple[str, ...]
    itinerary: tuple[int, ...]
    period: int
    source_edge: int
    eigenvalue: float
    eigenvector: tuple[float, ...]
    other_eigenvalues: tuple[complex, ...]
    sigma_max: float | None
    sigma_min: float | None
    boundary_ray: bool
    defective: bool
    verdict: str
    chart_orbit: tuple[float, ...] | None = None

    @property
    def matrix_det_check(self):
        return None


def _eigendata(m: Matrix):
    """Exact characteristic polynomial (size <= 4), float roots."""
    size = len(m)
    coeffs = char_poly(m)
    if size <= 4:
        roots = np.roots([float(c) for c in reversed(coeffs)])
    else:
        roots = np.linalg.eigvals(np.array([[float(v) for v in row] for row in m]))
    return list(roots)


def _nullvector(a: np.ndarray) -> np.ndarray:
    _, _, vh = np.linalg.svd(a)
    return vh[-1]


def spectral_ratios(eigenvalue: float, others) -> tuple[float | None, float | None]:
    """Moduli of the remaining spectrum relative to the ray's eigenvalue."""
    if not others:
        return None, None
    ratios = [abs(z) / eigenvalue for z in others]
    return max(ratios), min(ratios)


def classify_cycle(eigenvalue: float, others, sigma_max, sigma_min,
                   tol: float = 1e-9) -> str:
    """Invariant-manifold verdict for a periodic ray.

    The hypotheses: a positive eigenvalue different from one, with no other
    eigenvalue of matching modulus.  Contraction (expansion) of every
    transverse ratio then yields a normally contractive (repelling) local
    manifold; the manifold is stable when the ray expands and unstable when
    it contracts.
    """
    if eigenvalue <= 0:
        return "theorem inapplicable: nonpositive ray eigenvalue"
    if abs(eigenvalue - 1.0) <= tol:
        return "theorem inapplicable: ray eigenvalue equals 1 (non-hyperbolic)"
    if any(abs(abs(z) - eigenvalue) <= tol * max(1.0, eigenvalue) for z in others):
        return ("theorem inapplicable: another eigenvalue matches the ray "
                "eigenvalue in modulus")
    kind = "stable" if eigenvalue > 1 else "unstable"
    if sigma_max is not None and sigma_max < 1:
        return f"normally contractive local {kind} manifold"
    if sigma_min is not None and sigma_min > 1:
        return f"normally repelling local {kind} manifold"
    return f"normally hyperbolic local {kind} manifold (mixed transverse behavior)"


def _word_matrix(plmap: PiecewiseLinearMap, word) -> Matrix:
    branches = [plmap.branch_named(name) for name in word]
    m = branches[0].restricted()
    for b in branches[1:]:
        m = mat_mul(b.restricted(), m)
    return m


def _push_word(plmap: PiecewiseLinearMap, word, u0: np.ndarray,
               margin: float) -> tuple[str, np.ndarray]:
    """Push a unit-sum point through a branch word, renormalizing each stage.

    Returns ("interior" | "boundary" | "outside", final point).
    """
    status = "interior"
    u = np.asarray(u0, dtype=float)
    for name in word:
        b = plmap.branch_named(name)
        scale = float(np.abs(u).sum())
        if np.any(u < -margin * scale):
            return "outside", u
        if np.any(u <= margin * scale):
            status = "boundary"
        for row in b.domain.rows:
            val = float(sum(r * c for r, c in zip(row, u)))
            lim = margin * max(abs(r) for r in row) * scale
            if val < -lim:
                return "outside", u
            if val <= lim:
                status = "boundary"
        mat = np.array([[float(v) for v in row] for row in b.restricted()])
        u = mat @ u
        total = u.sum()
        if total <= 0:
            return "outside", u
        u = u / total
    return status, u


def _cyclic_words(plmap: PiecewiseLinearMap, max_period: int):
    """Cyclically composable branch words up to length, one per rotation."""
    names = [b.name for b in plmap.branches]
    by_name = {b.name: b for b in plmap.branches}
    seen: set[tuple[str, ...]] = set()
    out = []

    def rotations(word):
        return [word[k:] + word[:k] for k in range(len(word))]

    def primitive(word):
        for d in range(1, len(word)):
            if len(word) % d == 0 and word == word[:d] * (len(word) // d):
                return False
        return True

    def extend(word):
        if len(word) > 0:
            last = by_name[word[-1]]
            if (len(word) <= max_period
                    and by_name[word[0]].source == last.target
                    and primitive(tuple(word))):
                canon = min(rotations(tuple(word)))
                if canon not in seen:
                    seen.add(canon)
                    out.append(canon)
        if len(word) == max_period:
            return
        for name in names:
            if word and by_name[name].source != by_name[word[-1]].target:
                continue
            extend(word + [name])

    extend([])
    return out


def fixed_and_periodic_points(pm: ProjectiveMap, max_period: int,
                              margin: float = 1e-10) -> list[CycleReport]:
    """Positive eigenrays of cyclic branch products, with stability data.

    Rays interior to the cyclic domain are periodic points of the projective
    map; rays on a domain or sector boundary are reported with the
    ``boundary_ray`` flag.  Duplicates (cyclic rotations, repeated vectors)
    are removed.
    """
    plmap = pm.plmap
    reports = []
    seen_keys = set()
    for word in _cyclic_words(plmap, max_period):
        m = _word_matrix(plmap, word)
        roots = _eigendata(m)
        size = len(m)
        mf = np.array([[float(v) for v in row] for row in m])
        for lam in roots:
            if abs(lam.imag) > 1e-10 or lam.real <= 0:
                continue
            lam_r = float(lam.real)
            vec = _nullvector(mf - lam_r * np.eye(size))
            total = vec.sum()
            if abs(total) < 1e-12:
                continue
            u = vec / total
            if np.any(u < -1e-9):
                continue
            u = np.clip(u, 0.0, None)
            s = u.sum()
            if s <= 0:
                continue
            u = u / s
            status, _ = _push_word(plmap, word, u, margin)
            if status == "outside":
                continue
            others = [z for z in _drop_one(roots, lam)]
            geom_rank = np.linalg.matrix_rank(mf - lam_r * np.eye(size),
                                              tol=1e-9)
            alg_mult = sum(1 for z in roots if abs(z - lam) < 1e-9)
            defective = (size - geom_rank) < alg_mult
            sigma_max, sigma_min = spectral_ratios(lam_r, others)
            verdict = classify_cycle(lam_r, others, sigma_max, sigma_min)
            chart_orbit = None
            if pm.chart is not None:
                chart_orbit = _chart_orbit_of(pm, word, u)
            key = (word, round(lam_r, 9), tuple(np.round(u, 9)))
            if key in seen_keys:
                continue
            seen_keys.add(key)
            reports.append(CycleReport(
                branch_word=word,
                itinerary=_concat_itinerary(plmap, word),
                period=len(word),
                source_edge=plmap.branch_named(word[0]).source,
                eigenvalue=lam_r,
                eigenvector=tuple(float(x) for x in u),
                other_eigenvalues=tuple(complex(z) for z in others),
                sigma_max=sigma_max,
                sigma_min=sigma_min,
                boundary_ray=(status == "boundary"),
                defective=bool(defective),
                verdict=verdict,
                chart_orbit=chart_orbit,
            ))
    reports.sort(key=lambda r: (r.period, r.branch_word))
    return reports


def _drop_one(roots, lam):
    dropped = False
    for z in roots:
        if not dropped and z == lam:
            dropped = True
            continue
        yield z


def _concat_itinerary(plmap: PiecewiseLinearMap, word) -> tuple[int, ...]:
    edges: list[int] = []
    for name in word:
        b = plmap.branch_named(name)
        seg = b.itinerary if not edges else b.itinerary[1:]
        edges.extend(seg)
    return tuple(edges)


def _chart_orbit_of(pm: ProjectiveMap, word, u0) -> tuple[float, ...]:
    xs = []
    u = np.asarray(u0, dtype=float)
    edge = pm.plmap.branch_named(word[0]).source
    for name in word:
        xs.append(pm.to_chart(SectorPoint(edge, tuple(u))))
        b = pm.plmap.branch_named(name)
        mat = np.array([[float(v) for v in row] for row in b.restricted()])
        u = mat @ u
        u = u / u.sum()
        edge = b.target
    return tuple(xs)


def cycle_det_check(plmap: PiecewiseLinearMap, word) -> Fraction:
    """Exact determinant of the cyclic product (equals the eigenvalue
    product; used as a float-path cross check)."""
    return det(_word_matrix(plmap, word))


# ---------------------------------------------------------------------------
# chart iteration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChartOrbit:
    points: tuple[float, ...]
    pieces: tuple[str, ...]
    status: str                 # "ok" | "breakpoint" | "left_domain"
    omega: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["step", "x", "branch"])
        for k, x in enumerate(self.points):
            branch = self.pieces[k] if k < len(self.pieces) else ""
            writer.writerow([k, f"{x:.17g}", branch])
        return buf.getvalue()


def chart_dynamics(pm: ProjectiveMap, x0: float, n: int,
                   settle_tol: float = 1e-13, max_period: int = 8) -> ChartOrbit:
    """Iterate the interval chart and summarize the limit behavior.

    Detects convergence to a fixed or periodic orbit within tolerance; at a
    parabolic fixed point the one-sided drift sign of (map - identity) is
    attached instead of a derivative bound.
    """
    xs = [float(x0)]
    names = []
    status = "ok"
    for _ in range(n):
        try:
            piece = pm.piece_at(xs[-1])
        except BreakpointHit:
            status = "breakpoint"
            break
        except ChartError:
            status = "left_domain"
            break
        names.append(piece.branch_name)
        xs.append(float(piece.value(xs[-1])))
    omega = _omega_summary(pm, xs, settle_tol, max_period)
    return ChartOrbit(tuple(xs), tuple(names), status, omega)


def _omega_summary(pm: ProjectiveMap, xs, tol: float, max_period: int) -> dict:
    if len(xs) < max_period + 2:
        return {"type": "undetermined"}
    tail = xs[-(4 * max_period + 2):]
    for period in range(1, max_period + 1):
        pairs = zip(tail, tail[period:])
        if all(abs(a - b) < tol for a, b in pairs):
            points = sorted(set(round(v, 12) for v in tail[-period:]))
            if period == 1 or len(points) == 1:
                fp = tail[-1]
                return {
                    "type": "fixed",
                    "points": [fp],
                    "one_sided_drift": _drift_signs(pm, fp),
                }
            return {"type": "periodic", "period": len(points), "points": points}
    return {"type": "undetermined"}


def _drift_signs(pm: ProjectiveMap, fp: float, delta: float = 1e-6) -> dict:
    out = {}
    for side, x in (("right", fp + delta), ("left", fp - delta)):
        try:
            out[side] = math.copysign(1.0, pm.chart_value(x) - x)
        except ChartError:
            out[side] = None
    return out
