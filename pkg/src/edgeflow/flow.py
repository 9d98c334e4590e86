"""Numerical side: trajectories, cross-sections, rescaling, limit checks.

Cross-sections sit at a fixed level of one facet coordinate near each
corner; composing section-to-section integrations along an itinerary
realizes the flow's return map, and the blow-up charts compare it against
the exact piecewise-linear prediction on the dual cone.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .games import GameModel, GameValidationError, SkeletonField, field_callable
from .geometry import Polytope, corner_facet
from .skeleton import Branch, FlowGraph, build_flow_graph


class FlowError(RuntimeError):
    pass


class PrecisionError(FlowError):
    """A coordinate underflowed the reliable floating-point range."""


class SectionMiss(FlowError):
    """The orbit failed to reach the expected cross-section."""

    def __init__(self, message, hit=None):
        self.hit = hit  # (vertex, edge) actually reached, when known
        super().__init__(message)


# ---------------------------------------------------------------------------
# the blow-up profile family
# ---------------------------------------------------------------------------

def h(order: int, x: float) -> float:
    """Monotone blow-up profile: logarithmic at first order, power-law above.

    Maps (0, 1] onto [0, inf) with h(1) = 0, strictly decreasing.
    """
    if order < 1 or order != int(order):
        raise ValueError("order must be a positive integer")
    if x <= 0:
        raise ValueError("profile argument must be positive")
    if order == 1:
        return -math.log(x)
    return (x ** (1 - order) - 1.0) / (order - 1)


def h_inv(order: int, y: float) -> float:
    if order < 1 or order != int(order):
        raise ValueError("order must be a positive integer")
    if order == 1:
        return math.exp(-y)
    return (1.0 + (order - 1) * y) ** (-1.0 / (order - 1))


# ---------------------------------------------------------------------------
# rescaling charts and sections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RescaleChart:
    """Blow-up coordinates around one vertex of a prism.

    Facet coordinates on the active set are rescaled through the profile of
    their tangency order, so the dual-cone sector of the vertex becomes the
    chart range; ``level`` sets where the chart (and the cross-sections)
    meet the facet coordinates.
    """

    poly: Polytope
    orders: tuple
    vertex: int
    epsilon: float
    level: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.level <= 1:
            raise ValueError("section level must lie in (0, 1]")
        for f in self.poly.vertex_facets[self.vertex]:
            if not math.isfinite(self.orders[f]):
                raise FlowError(
                    f"facet {self.poly.facet_name(f)} has infinite tangency "
                    "order; the blow-up chart is undefined there"
                )

    def forward(self, state) -> np.ndarray:
        """State near the vertex -> dual-cone sector point (length = #facets)."""
        x = np.asarray(state, dtype=float)
        y = np.zeros(self.poly.n_facets)
        eps2 = self.epsilon ** 2
        for f in self.poly.vertex_facets[self.vertex]:
            ratio = x[f] / self.level
            if ratio <= 0:
                raise FlowError(
                    f"state lies on facet {self.poly.facet_name(f)}; "
                    "the chart blows up"
                )
            if ratio > 1.0 + 1e-9:
                raise FlowError(
                    f"state is outside the chart box at facet "
                    f"{self.poly.facet_name(f)} (coordinate {x[f]})"
                )
            val = eps2 * h(int(self.orders[f]), min(ratio, 1.0))
            y[f] = max(val, 0.0)
        return y

    def inverse(self, sector_point) -> np.ndarray:
        """Sector point -> prism state (canonical prisms only)."""
        if self.poly.groups is None or self.poly.vertex_labels is None:
            raise FlowError("chart inversion needs a canonical prism")
        y = np.asarray(sector_point, dtype=float)
        eps2 = self.epsilon ** 2
        x = np.zeros(self.poly.n_facets)
        active = self.poly.vertex_facets[self.vertex]
        for f in active:
            if y[f] < 0:
                raise FlowError("sector coordinates must be nonnegative")
            x[f] = self.level * h_inv(int(self.orders[f]), y[f] / eps2)
        # the vertex's own strategies absorb the group constraints
        label = self.poly.vertex_labels[self.vertex]
        start = 0
        for g, size in enumerate(self.poly.groups):
            members = range(start, start + size)
            own = label[g] - 1
            x[own] = 1.0 - sum(x[m] for m in members if m != own)
            start += size
        return x


@dataclass(frozen=True)
class Section:
    """Cross-section near a corner: one facet coordinate pinned at a level."""

    vertex: int
    edge: int
    facet: int
    level: float


def make_section(poly: Polytope, vertex: int, edge: int, level: float) -> Section:
    return Section(vertex, edge, corner_facet(poly, vertex, edge), level)


def section_point_on_edge(poly: Polytope, section: Section) -> np.ndarray:
    """Where the section meets its edge (canonical prisms)."""
    if poly.vertex_labels is None:
        raise FlowError("edge points need a canonical prism")
    v = section.vertex
    w = poly.other_endpoint(section.edge, v)
    xv = _vertex_state(poly, v)
    xw = _vertex_state(poly, w)
    return xv + section.level * (xw - xv)


def _vertex_state(poly: Polytope, v: int) -> np.ndarray:
    x = np.zeros(poly.n_facets)
    for j in poly.vertex_labels[v]:
        x[j - 1] = 1.0
    return x


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowConfig:
    """Numerical policy shared by the section-to-section machinery."""

    rtol: float = 1e-10
    atol: float | None = None       # None: scale to the smallest coordinate
    level: float = 0.25
    time_cap: float = 500.0
    underflow: float = 1e-300
    boundary_margin: float = 1e-12

    def cap_for(self, epsilon: float | None) -> float:
        if epsilon is None:
            return self.time_cap
        return max(self.time_cap, 10.0 / epsilon ** 2)

    def atol_for(self, x0) -> float:
        """Absolute tolerance below the smallest nonzero coordinate, so the
        error norm stays relative on near-vertex states (which reach
        1e-100-scale legitimately) while exact zeros on invariant faces do
        not produce 0/0 scales."""
        if self.atol is not None:
            return self.atol
        x = np.abs(np.asarray(x0, dtype=float))
        positive = x[x > 0]
        if positive.size == 0:
            return 1e-30
        return max(5e-324, float(positive.min()) * self.rtol * 1e-2)


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray                    # shape (len(t), n)
    events: list = field(default_factory=list)   # (time, state, label)
    status: str = "ok"
    nfev: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        n = self.states.shape[1]
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["event"])
        marks = {round(t, 15): label for t, _, label in self.events}
        for t, row in zip(self.t, self.states):
            writer.writerow(
                [f"{t:.17g}"] + [f"{v:.17g}" for v in row]
                + [marks.get(round(t, 15), "")]
            )
        return buf.getvalue()


def _crossing_event(facet: int, level: float, direction: int):
    def g(t, x):
        return x[facet] - level
    g.direction = direction
    g.terminal = True
    return g


def _check_underflow(states: np.ndarray, limit: float) -> None:
    if states.size and np.any(np.abs(states[states != 0.0]) < limit):
        raise PrecisionError(
            "a coordinate fell below the reliable floating-point range; "
            "tighten epsilon or start closer to the section"
        )


def integrate(game: GameModel, x0, *, t_max: float,
              config: FlowConfig = FlowConfig(), events=(),
              samples: int = 0) -> Trajectory:
    """Adaptive fifth-order Runge-Kutta with embedded error control and
    dense-output event location; faces are preserved up to clipping at
    zero within 1e-14."""
    rhs = field_callable(game)
    x0 = np.asarray(x0, dtype=float)
    t_eval = np.linspace(0.0, t_max, samples) if samples else None
    sol = solve_ivp(
        rhs, (0.0, t_max), x0, method="RK45", rtol=config.rtol,
        atol=config.atol_for(x0), dense_output=True, events=list(events),
        t_eval=t_eval,
    )
    if sol.status == -1:
        raise FlowError(f"integration failed: {sol.message}")
    states = sol.y.T.copy()
    tiny = (states < 0) & (states > -1e-14)
    states[tiny] = 0.0
    _check_underflow(states, config.underflow)
    traj = Trajectory(sol.t.copy(), states, status="ok", nfev=sol.nfev)
    for k, (te, ye) in enumerate(zip(sol.t_events, sol.y_events)):
        for t, y in zip(te, ye):
            traj.events.append((float(t), np.asarray(y, dtype=float), f"event{k}"))
    return traj


def _renorm_interval(game: GameModel) -> float:
    """Re-projection cadence onto the prism.

    The off-prism directions can be as unstable as the payoff scale, so a
    roundoff-sized deviation must be projected away before it amplifies by
    more than a few orders of magnitude.
    """
    if game.payoff is None:
        return 0.05
    scale = max(
        (abs(float(v)) for row in game.payoff for v in row), default=1.0
    )
    return 8.0 / max(scale, 1.0)


def _integrate_to_events(game, poly, x0, events, t_cap, config):
    """Run until one terminal event fires; returns (index, t, state).

    Integration is chunked, re-projecting group sums to one between chunks;
    without this the unstable off-prism modes amplify roundoff over long
    vertex passages.
    """
    rhs = field_callable(game)
    x = np.asarray(x0, dtype=float)
    chunk = _renorm_interval(game)
    t_done = 0.0
    while t_done < t_cap:
        t_seg = min(chunk, t_cap - t_done)
        sol = solve_ivp(rhs, (0.0, t_seg), x, method="RK45",
                        rtol=config.rtol, atol=config.atol_for(x),
                        dense_output=False, events=list(events))
        if sol.status == -1:
            raise FlowError(f"integration failed: {sol.message}")
        _check_underflow(sol.y.T, config.underflow)
        for k, te in enumerate(sol.t_events):
            if len(te):
                return (k, t_done + float(te[0]),
                        np.asarray(sol.y_events[k][0], dtype=float))
        x = _renormalize(poly, sol.y[:, -1])
        t_done += float(sol.t[-1])
    return None, t_cap, x


def _renormalize(poly: Polytope, x: np.ndarray) -> np.ndarray:
    out = np.clip(np.asarray(x, dtype=float), 0.0, None)
    start = 0
    for size in poly.groups:
        block = slice(start, start + size)
        total = out[block].sum()
        if total <= 0:
            raise FlowError("state degenerated to the empty group")
        out[block] /= total
        start += size
    return out


# ---------------------------------------------------------------------------
# section-to-section composition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HopRecord:
    kind: str        # "edge" | "vertex"
    vertex: int
    edge: int        # the section's edge
    time: float


@dataclass
class HopResult:
    status: str                  # ok | mismatch | timeout
    itinerary: tuple[int, ...]   # edges actually traversed
    final_state: np.ndarray | None
    hops: list[HopRecord]
    total_time: float
    message: str = ""


def _edge_passage(game, poly, graph, edge, state, config, epsilon):
    """From the source-end section of a flowing edge to its target end."""
    v_to = graph.target(edge)
    facet = corner_facet(poly, v_to, edge)
    ev = _crossing_event(facet, config.level, -1)
    idx, t, y = _integrate_to_events(game, poly, state, [ev],
                                     config.cap_for(epsilon), config)
    if idx is None:
        raise SectionMiss(
            f"orbit missed the far section of edge {poly.edge_name(edge)} "
            f"within the time cap"
        )
    return t, _renormalize(poly, y)


def _vertex_passage(game, poly, graph, vertex, entry_edge, state, config,
                    epsilon):
    """Across a vertex neighborhood; returns the exit edge taken."""
    entry_facet = corner_facet(poly, vertex, entry_edge)
    exit_facets = [
        f for f in sorted(poly.vertex_facets[vertex]) if f != entry_facet
    ]
    events = [_crossing_event(f, config.level, +1) for f in exit_facets]
    idx, t, y = _integrate_to_events(game, poly, state, events,
                                     config.cap_for(epsilon), config)
    if idx is None:
        raise SectionMiss(
            f"orbit never left the neighborhood of "
            f"{poly.vertex_name(vertex)} within the time cap"
        )
    exit_facet = exit_facets[idx]
    exit_edge = next(
        e for e in poly.vertex_edges(vertex)
        if corner_facet(poly, vertex, e) == exit_facet
    )
    return t, _renormalize(poly, y), exit_edge


def numeric_poincare(game: GameModel, skel: SkeletonField, poly: Polytope,
                     itinerary, x0, *, config: FlowConfig = FlowConfig(),
                     epsilon: float | None = None) -> HopResult:
    """Follow a prescribed itinerary of flowing edges through the sections.

    Starts on the source-end section of the first edge and ends on the
    source-end section of the last edge; any divergence from the expected
    hop is reported as a mismatch naming the section actually hit.  A
    single-edge itinerary degenerates to the plain edge passage between the
    two sections of that edge.
    """
    itinerary = tuple(itinerary)
    graph = build_flow_graph(skel, poly, strict=True)
    state = np.asarray(x0, dtype=float)
    hops: list[HopRecord] = []
    taken: list[int] = [itinerary[0]]
    total = 0.0
    if len(itinerary) == 1:
        try:
            t, state = _edge_passage(game, poly, graph, itinerary[0], state,
                                     config, epsilon)
        except SectionMiss as err:
            return HopResult("timeout", tuple(taken), None, hops, 0.0, str(err))
        hops.append(HopRecord("edge", graph.target(itinerary[0]),
                              itinerary[0], t))
        return HopResult("ok", tuple(taken), state, hops, t)
    try:
        for j, edge in enumerate(itinerary[:-1]):
            t, state = _edge_passage(game, poly, graph, edge, state, config,
                                     epsilon)
            total += t
            hops.append(HopRecord("edge", graph.target(edge), edge, t))
            vertex = graph.target(edge)
            t, state, exit_edge = _vertex_passage(
                game, poly, graph, vertex, edge, state, config, epsilon
            )
            total += t
            hops.append(HopRecord("vertex", vertex, exit_edge, t))
            expected = itinerary[j + 1]
            taken.append(exit_edge)
            if exit_edge != expected:
                return HopResult(
                    "mismatch", tuple(taken), state, hops, total,
                    f"expected section of {poly.edge_name(expected)} at "
                    f"{poly.vertex_name(vertex)}, hit "
                    f"{poly.edge_name(exit_edge)}",
                )
    except SectionMiss as err:
        return HopResult("timeout", tuple(taken), None, hops, total, str(err))
    return HopResult("ok", tuple(taken), state, hops, total)


def follow_to_structural_section(game: GameModel, skel: SkeletonField,
                                 poly: Polytope, structural, start_edge: int,
                                 x0, *, config: FlowConfig = FlowConfig(),
                                 epsilon: float | None = None,
                                 max_hops: int = 64) -> HopResult:
    """Let the flow choose the exits until it returns to a structural-edge
    source section; used to compare realized and predicted itineraries."""
    structural = set(structural)
    graph = build_flow_graph(skel, poly, strict=True)
    state = np.asarray(x0, dtype=float)
    hops: list[HopRecord] = []
    taken = [start_edge]
    total = 0.0
    edge = start_edge
    try:
        for _ in range(max_hops):
            t, state = _edge_passage(game, poly, graph, edge, state, config,
                                     epsilon)
            total += t
            hops.append(HopRecord("edge", graph.target(edge), edge, t))
            vertex = graph.target(edge)
            t, state, exit_edge = _vertex_passage(
                game, poly, graph, vertex, edge, state, config, epsilon
            )
            total += t
            hops.append(HopRecord("vertex", vertex, exit_edge, t))
            taken.append(exit_edge)
            arc = graph.arc_by_edge.get(exit_edge)
            if arc is None or arc[0] != vertex:
                return HopResult(
                    "mismatch", tuple(taken), state, hops, total,
                    f"orbit exited through {poly.edge_name(exit_edge)}, "
                    "which does not flow out of "
                    f"{poly.vertex_name(vertex)}",
                )
            edge = exit_edge
            if edge in structural:
                return HopResult("ok", tuple(taken), state, hops, total)
        return HopResult("timeout", tuple(taken), state, hops, total,
                         "hop budget exhausted")
    except SectionMiss as err:
        return HopResult("timeout", tuple(taken), None, hops, total, str(err))


# ---------------------------------------------------------------------------
# asymptotics of the rescaled return map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerificationRow:
    epsilon: float
    sample: int
    sector_point: tuple[float, ...]
    error: float | None
    status: str      # ok | mismatch | timeout | skipped


@dataclass(frozen=True)
class VerificationReport:
    branch_name: str
    itinerary: tuple[int, ...]
    rows: tuple[VerificationRow, ...]
    max_error: dict[float, float]
    mean_error: dict[float, float]
    skipped: dict[float, int]
    monotone: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["epsilon", "sample", "error", "status"])
        for row in self.rows:
            err = "" if row.error is None else f"{row.error:.17g}"
            writer.writerow([f"{row.epsilon:.17g}", row.sample, err, row.status])
        return buf.getvalue()


def _sample_branch_points(branch: Branch, n_samples: int, lo: float,
                          rng: np.random.Generator, interior_margin: float,
                          max_tries: int = 20_000) -> list[np.ndarray]:
    """Seeded draws on the source support, at least ``lo`` in every
    coordinate and inside the branch's open cone with a relative margin.

    The box has no natural upper edge (the sector is a cone), so it grows
    until enough of it meets the domain; thin wedges force the requested
    margin down until the slice is samplable."""
    dim = len(branch.source_support)
    margin = interior_margin
    while margin >= 1e-9:
        hi = max(2.0 * lo, 1.5)
        for _ in range(4):
            out = []
            for _ in range(max_tries):
                if len(out) == n_samples:
                    return out
                u = rng.uniform(lo, hi, size=dim)
                if branch.domain.contains(tuple(u), margin=margin):
                    out.append(u)
            hi *= 2.0
        margin /= 2.0
    raise FlowError(
        f"could not draw {n_samples} points inside the branch domain at "
        f"depth {lo}; the domain is too thin there"
    )


def verify_asymptotics(game: GameModel, skel: SkeletonField, poly: Polytope,
                       branch: Branch, eps_schedule, n_samples: int,
                       seed: int, *, depth_exponent: float = 0.5,
                       interior_margin: float = 0.1,
                       config: FlowConfig = FlowConfig()) -> VerificationReport:
    """Measure how far the rescaled return map sits from its linear limit.

    For each epsilon of the (strictly decreasing) schedule a seeded sample
    set is drawn inside the branch cone at depth epsilon**depth_exponent;
    the sup-norm error against the branch matrix is tabulated per epsilon.
    """
    eps_schedule = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("epsilon schedule must be strictly decreasing")
    rng = np.random.default_rng(seed)
    samples = {
        eps: _sample_branch_points(branch, n_samples,
                                   eps ** depth_exponent, rng,
                                   interior_margin)
        for eps in eps_schedule
    }
    graph = build_flow_graph(skel, poly, strict=True)
    v0 = graph.source(branch.source)
    vm = graph.source(branch.target)
    mat = np.array([[float(v) for v in row] for row in branch.restricted()])

    jobs = [(eps, k) for eps in eps_schedule for k in range(n_samples)]

    def run(job):
        eps, k = job
        y = samples[eps][k]
        chart0 = RescaleChart(poly, skel.orders, v0, eps, config.level)
        chart1 = RescaleChart(poly, skel.orders, vm, eps, config.level)
        sector = np.zeros(poly.n_facets)
        for val, f in zip(y, branch.source_support):
            sector[f] = val
        try:
            x0 = chart0.inverse(sector)
            hop = numeric_poincare(game, skel, poly, branch.itinerary, x0,
                                   config=config, epsilon=eps)
            if hop.status != "ok":
                return VerificationRow(eps, k, tuple(y), None, hop.status)
            y_num = chart1.forward(hop.final_state)
        except (FlowError, GameValidationError) as err:
            del err
            return VerificationRow(eps, k, tuple(y), None, "skipped")
        predicted = np.zeros(poly.n_facets)
        for val, f in zip(mat @ y, branch.target_support):
            predicted[f] = val
        active = sorted(poly.vertex_facets[vm])
        err = float(np.max(np.abs(y_num[active] - predicted[active])))
        return VerificationRow(eps, k, tuple(y), err, "ok")

    workers = int(os.environ.get("EDGEFLOW_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(job) for job in jobs]

    max_error, mean_error, skipped = {}, {}, {}
    for eps in eps_schedule:
        errs = [r.error for r in rows if r.epsilon == eps and r.error is not None]
        skipped[eps] = sum(
            1 for r in rows if r.epsilon == eps and r.error is None
        )
        max_error[eps] = max(errs) if errs else math.nan
        mean_error[eps] = float(np.mean(errs)) if errs else math.nan
    maxima = [max_error[eps] for eps in eps_schedule]
    monotone = all(
        not (math.isnan(a) or math.isnan(b)) and b < a
        for a, b in zip(maxima, maxima[1:])
    )
    return VerificationReport(
        branch_name=branch.name,
        itinerary=branch.itinerary,
        rows=tuple(rows),
        max_error=max_error,
        mean_error=mean_error,
        skipped=skipped,
        monotone=monotone,
    )


def rescaled_field_error(game: GameModel, skel: SkeletonField, poly: Polytope,
                         vertex: int, epsilon: float, sector_point,
                         config: FlowConfig = FlowConfig(),
                         delta: float = 1e-7) -> float:
    """Finite-difference push-forward of the field through the blow-up chart
    compared with the constant character vector (sup norm on the active
    facets)."""
    chart = RescaleChart(poly, skel.orders, vertex, epsilon, config.level)
    x = chart.inverse(np.asarray(sector_point, dtype=float))
    from .games import eval_field

    vfield = np.asarray(eval_field(game, x, check=False), dtype=float)
    step = delta / max(1.0, float(np.max(np.abs(vfield))))
    y0 = chart.forward(x)
    y1 = chart.forward(x + step * vfield)
    pushed = (y1 - y0) / (step * epsilon ** 2)
    active = sorted(poly.vertex_facets[vertex])
    chi = np.array([float(skel.character[vertex][f]) for f in active])
    return float(np.max(np.abs(pushed[active] - chi)))


def graph_for(game: GameModel, skel: SkeletonField,
              poly: Polytope) -> FlowGraph:
    return build_flow_graph(skel, poly, strict=True)


__all__ = [
    "FlowConfig", "FlowError", "PrecisionError", "SectionMiss", "HopResult",
    "HopRecord", "RescaleChart", "Section", "Trajectory", "VerificationReport",
    "VerificationRow", "follow_to_structural_section", "h", "h_inv",
    "integrate", "make_section", "numeric_poincare", "rescaled_field_error",
    "section_point_on_edge", "verify_asymptotics",
]
