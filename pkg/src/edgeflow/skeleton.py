"""Edge dynamics on the dual cone: classification, transitions, return maps.

The corner characters orient each edge of the polytope; composing the exact
linear crossing maps at the vertices along paths between a chosen set of
"structural" edges yields a piecewise-linear return map on the edge sectors
of the dual cone.  Everything here is exact rational arithmetic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import networkx as nx

from .exact import (
    Matrix,
    as_fraction,
    format_fraction,
    identity,
    mat_mul,
    primitive_row,
)
from .games import SkeletonField, validate_skeleton
from .geometry import Polytope, SectorSupport, corner_facet, dual_support

SCHEMA_ID = "edge-poincare-map/1"


class SkeletonError(ValueError):
    pass


class SkeletonNotRegular(SkeletonError):
    def __init__(self, undefined_edges):
        self.undefined_edges = tuple(undefined_edges)
        super().__init__(
            "skeleton is not regular; undefined edges: "
            + ", ".join(f"g{e + 1}" for e in self.undefined_edges)
        )


class StructuralSetError(SkeletonError):
    def __init__(self, message, cycle=None):
        self.cycle = cycle
        super().__init__(message)


class BranchDomainError(SkeletonError):
    """Point on a branch-domain boundary, or outside every branch."""

    def __init__(self, message, kind):
        self.kind = kind  # "boundary" | "escape"
        super().__init__(message)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeClass:
    tag: str                   # flowing|neutral|attracting|repelling|undefined
    source: int | None = None  # endpoints, set for flowing edges only
    target: int | None = None


def classify_vertex(field: SkeletonField, poly: Polytope, v: int) -> str:
    """Sign pattern of the character vector: sink, source or saddle."""
    values = [field.character[v][f] for f in poly.vertex_facets[v]]
    if all(c <= 0 for c in values):
        return "repelling"
    if all(c >= 0 for c in values):
        return "attractive"
    return "saddle"


def classify_edge(field: SkeletonField, poly: Polytope, e: int) -> EdgeClass:
    a, b = poly.edges[e]
    ca = field.character[a][corner_facet(poly, a, e)]
    cb = field.character[b][corner_facet(poly, b, e)]
    if ca * cb < 0:
        src, tgt = (a, b) if ca < 0 else (b, a)
        return EdgeClass("flowing", src, tgt)
    if ca == 0 and cb == 0:
        return EdgeClass("neutral")
    if ca < 0 and cb < 0:
        return EdgeClass("attracting")
    if ca > 0 and cb > 0:
        return EdgeClass("repelling")
    return EdgeClass("undefined")


@dataclass(frozen=True)
class FlowGraph:
    """Directed graph of flowing edges over the polytope's vertex set."""

    n_vertices: int
    arcs: tuple[tuple[int, int, int], ...]   # (edge, source, target)
    undefined: tuple[int, ...]

    @property
    def regular(self) -> bool:
        return not self.undefined

    @cached_property
    def arc_by_edge(self) -> dict[int, tuple[int, int]]:
        return {e: (s, t) for e, s, t in self.arcs}

    @cached_property
    def out_arcs(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {v: [] for v in range(self.n_vertices)}
        for e, s, _ in self.arcs:
            out[s].append(e)
        return {v: tuple(sorted(es)) for v, es in out.items()}

    def source(self, e: int) -> int:
        return self.arc_by_edge[e][0]

    def target(self, e: int) -> int:
        return self.arc_by_edge[e][1]

    def digraph(self, skip_edges=()) -> nx.DiGraph:
        # polytope edges never run parallel, so a plain DiGraph suffices
        g = nx.DiGraph()
        g.add_nodes_from(range(self.n_vertices))
        for e, s, t in self.arcs:
            if e not in skip_edges:
                g.add_edge(s, t, edge=e)
        return g


def build_flow_graph(field: SkeletonField, poly: Polytope,
                     strict: bool = False) -> FlowGraph:
    validate_skeleton(poly, field)
    arcs, undefined = [], []
    for e in range(poly.n_edges):
        cls = classify_edge(field, poly, e)
        if cls.tag == "flowing":
            arcs.append((e, cls.source, cls.target))
        elif cls.tag == "undefined":
            undefined.append(e)
    if strict and undefined:
        raise SkeletonNotRegular(undefined)
    return FlowGraph(poly.n_vertices, tuple(arcs), tuple(undefined))


# ---------------------------------------------------------------------------
# cone domains and transition matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConeDomain:
    """Open subcone of an edge sector: strict inequalities over its support.

    Rows are primitive integer vectors a with meaning a . u > 0, u being the
    coordinates on ``support.coords``; u >= 0 (nonzero) is implicit.
    ``empty`` marks an infeasible system.
    """

    support: SectorSupport
    rows: tuple[tuple[int, ...], ...]
    empty: bool = False

    def contains(self, u, margin: float = 0.0) -> bool:
        """Strict membership; ``margin`` is a relative (angular) cushion on
        every inequality, used for float inputs and interior sampling."""
        if self.empty:
            return False
        scale = math.sqrt(sum(float(c) ** 2 for c in u))
        if scale == 0 or any(float(c) < -margin * scale for c in u):
            return False
        for row in self.rows:
            val = sum(r * c for r, c in zip(row, u))
            norm = math.sqrt(sum(float(r) ** 2 for r in row))
            if margin > 0.0:
                if float(val) <= margin * norm * scale:
                    return False
            elif val <= 0:
                return False
        return True


def _reduce_rows(dim: int, raw_rows) -> tuple[tuple[tuple[int, ...], ...], bool]:
    """Drop redundant inequality rows over the positive orthant.

    Rows with no negative entry are implied by positivity; in two dimensions
    the system collapses exactly to at most one lower and one upper bound on
    the coordinate ratio.
    """
    rows = []
    seen = set()
    for row in raw_rows:
        if all(v == 0 for v in row):
            continue
        prim = primitive_row(row)
        if all(v <= 0 for v in prim):
            return (prim,), True
        if all(v >= 0 for v in prim):
            continue
        if prim not in seen:
            seen.add(prim)
            rows.append(prim)
    if dim != 2 or not rows:
        return tuple(rows), False
    # ratio t = u_b / u_a on the open quadrant: alpha*u_a + beta*u_b > 0
    lower: Fraction | None = None
    upper: Fraction | None = None
    for alpha, beta in rows:
        if beta > 0:
            bound = Fraction(-alpha, beta)
            lower = bound if lower is None or bound > lower else lower
        elif beta < 0:
            bound = Fraction(-alpha, beta)
            upper = bound if upper is None or bound < upper else upper
        else:
            if alpha <= 0:
                return ((alpha, beta),), True
    if upper is not None and lower is not None and lower >= upper:
        return (rows[0],), True
    out = []
    if lower is not None and lower > 0:
        out.append(primitive_row((-lower, Fraction(1))))
    if upper is not None:
        if upper <= 0:
            return (rows[0],), True
        out.append(primitive_row((upper, Fraction(-1))))
    return tuple(out), False


@dataclass(frozen=True)
class TransitionMatrix:
    """Linear crossing map at a vertex, stored full-size over all facets."""

    full: Matrix
    pivot: int
    source_support: tuple[int, ...]
    target_support: tuple[int, ...]

    def restricted(self) -> Matrix:
        return tuple(
            tuple(self.full[r][c] for c in self.source_support)
            for r in self.target_support
        )

    def apply(self, u):
        """Map support coordinates of the source edge to the target edge."""
        cols = self.source_support
        return tuple(
            sum(self.full[r][cols[j]] * as_fraction(u[j]) for j in range(len(cols)))
            for r in self.target_support
        )


def transition_map(field: SkeletonField, poly: Polytope, e_in: int,
                   e_out: int) -> tuple[ConeDomain, TransitionMatrix]:
    """Crossing map from one edge sector to the next through their vertex.

    The pivot coordinate (the facet cutting the outgoing edge at the vertex)
    is eliminated linearly; the domain collects the positivity conditions of
    the image over the incoming support.
    """
    graph_in = classify_edge(field, poly, e_in)
    graph_out = classify_edge(field, poly, e_out)
    if graph_in.tag != "flowing" or graph_out.tag != "flowing":
        raise SkeletonError("transition maps need two flowing edges")
    v = graph_in.target
    if graph_out.source != v:
        raise SkeletonError(
            f"edges g{e_in + 1} and g{e_out + 1} are not composable at a "
            "common vertex"
        )
    pivot = corner_facet(poly, v, e_out)
    chi_pivot = field.character[v][pivot]
    if chi_pivot == 0:
        raise SkeletonError("pivot character vanishes")
    n = poly.n_facets
    ratios = [field.character[v][s] / chi_pivot for s in range(n)]
    full = tuple(
        tuple(
            (Fraction(1) if r == c else Fraction(0))
            - (ratios[r] if c == pivot else Fraction(0))
            for c in range(n)
        )
        for r in range(n)
    )
    src = dual_support(poly, edge=e_in)
    tgt = dual_support(poly, edge=e_out)
    raw = []
    for f in poly.vertex_facets[v]:
        if f == pivot:
            continue
        row = [Fraction(0)] * len(src.coords)
        for j, c in enumerate(src.coords):
            if c == f:
                row[j] += 1
            if c == pivot:
                row[j] -= ratios[f]
        raw.append(tuple(row))
    rows, empty = _reduce_rows(len(src.coords), raw)
    domain = ConeDomain(src, rows, empty)
    return domain, TransitionMatrix(full, pivot, src.coords, tgt.coords)


# ---------------------------------------------------------------------------
# structural sets and branches
# ---------------------------------------------------------------------------

def _has_cycle(graph: FlowGraph, skip) -> list[int] | None:
    """A directed cycle of the flowing graph avoiding ``skip`` edges, or None."""
    g = graph.digraph(skip_edges=set(skip))
    try:
        cyc = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        return None
    return [g.edges[u, w]["edge"] for u, w in cyc]


def is_structural_set(graph: FlowGraph, edges) -> bool:
    """Certificate: removal kills every cycle, and each member is needed."""
    edges = set(edges)
    if not edges.issubset(graph.arc_by_edge):
        return False
    if _has_cycle(graph, edges) is not None:
        return False
    return all(
        _has_cycle(graph, edges - {e}) is not None for e in edges
    )


def find_structural_sets(graph: FlowGraph, limit: int = 64,
                         work_budget: int = 200_000) -> list[tuple[int, ...]]:
    """Inclusion-minimal edge sets meeting every directed cycle.

    Enumerated as minimal hitting sets of the simple-cycle family by
    branching on an uncovered cycle's edges, then certified (removal kills
    all cycles, each member is needed) and listed in (size, lexicographic)
    order up to ``limit`` sets.  An acyclic graph has nothing to cut and
    yields the empty list.
    """
    if not graph.regular:
        raise SkeletonNotRegular(graph.undefined)
    cycles = [frozenset(keys) for keys in _simple_cycle_edge_sets(graph)]
    if not cycles:
        return []
    cycles.sort(key=len)
    found: set[frozenset[int]] = set()
    steps = 0

    def branch(chosen: frozenset[int]):
        nonlocal steps
        steps += 1
        if steps > work_budget or len(found) >= limit * 8:
            return
        uncovered = next((c for c in cycles if not c & chosen), None)
        if uncovered is None:
            if not any(prev <= chosen for prev in found):
                if is_structural_set(graph, chosen):
                    found.add(chosen)
            return
        for e in sorted(uncovered):
            branch(chosen | {e})

    branch(frozenset())
    ordered = sorted((tuple(sorted(s)) for s in found), key=lambda s: (len(s), s))
    return ordered[:limit]


def _simple_cycle_edge_sets(graph: FlowGraph):
    g = graph.digraph()
    for nodes in nx.simple_cycles(g):
        yield [
            g.edges[u, nodes[(i + 1) % len(nodes)]]["edge"]
            for i, u in enumerate(nodes)
        ]


def enumerate_branches(graph: FlowGraph, structural) -> list[tuple[int, ...]]:
    """All flowing paths that start and end on the structural set with no
    structural edge in between.  Termination relies on acyclicity off the
    set, which is verified first."""
    structural = tuple(sorted(structural))
    missing = [e for e in structural if e not in graph.arc_by_edge]
    if missing:
        raise StructuralSetError(
            f"edges {[f'g{e + 1}' for e in missing]} are not flowing arcs"
        )
    cycle = _has_cycle(graph, structural)
    if cycle is not None:
        raise StructuralSetError(
            "set is not structural; untouched cycle: "
            + ", ".join(f"g{e + 1}" for e in cycle),
            cycle=cycle,
        )
    branches: list[tuple[int, ...]] = []

    def walk(path: tuple[int, ...]):
        v = graph.target(path[-1])
        for e in graph.out_arcs.get(v, ()):
            if e in structural:
                branches.append(path + (e,))
            else:
                walk(path + (e,))

    for e0 in structural:
        walk((e0,))
    branches.sort(key=lambda it: (it[0], it[-1], it))
    return branches


# ---------------------------------------------------------------------------
# the piecewise-linear return map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Branch:
    """One linear branch of the return map along a specific itinerary."""

    name: str
    itinerary: tuple[int, ...]
    source: int
    target: int
    domain: ConeDomain
    matrix_full: Matrix
    source_support: tuple[int, ...]
    target_support: tuple[int, ...]

    def restricted(self) -> Matrix:
        return tuple(
            tuple(self.matrix_full[r][c] for c in self.source_support)
            for r in self.target_support
        )

    def apply(self, u):
        cols = self.source_support
        return tuple(
            sum(self.matrix_full[r][cols[j]] * as_fraction(u[j])
                for j in range(len(cols)))
            for r in self.target_support
        )


def branch_map(field: SkeletonField, poly: Polytope,
               itinerary, name: str = "") -> Branch:
    """Compose the vertex crossing maps along a flowing path.

    The domain accumulates each step's positivity conditions pulled back
    through the partial products, then reduces to a minimal system on the
    source-edge support.
    """
    itinerary = tuple(itinerary)
    if len(itinerary) < 2:
        raise SkeletonError("an itinerary needs at least two edges")
    n = poly.n_facets
    src = dual_support(poly, edge=itinerary[0])
    product = identity(n)
    raw_rows: list[tuple[Fraction, ...]] = []
    for e_in, e_out in zip(itinerary, itinerary[1:]):
        _, step = transition_map(field, poly, e_in, e_out)
        v = classify_edge(field, poly, e_in).target
        chi_pivot = field.character[v][step.pivot]
        for f in poly.vertex_facets[v]:
            if f == step.pivot:
                continue
            ratio = field.character[v][f] / chi_pivot
            # condition (e_f - ratio * e_pivot) . (partial product @ u) > 0
            row = tuple(
                product[f][c] - ratio * product[step.pivot][c]
                for c in src.coords
            )
            raw_rows.append(row)
        product = mat_mul(step.full, product)
    tgt = dual_support(poly, edge=itinerary[-1])
    rows, empty = _reduce_rows(len(src.coords), raw_rows)
    return Branch(
        name=name,
        itinerary=itinerary,
        source=itinerary[0],
        target=itinerary[-1],
        domain=ConeDomain(src, rows, empty),
        matrix_full=product,
        source_support=src.coords,
        target_support=tgt.coords,
    )


@dataclass(frozen=True)
class SectorPoint:
    """A dual-cone point on an edge sector, in support coordinates."""

    edge: int
    coords: tuple

    def as_floats(self) -> tuple[float, ...]:
        return tuple(float(c) for c in self.coords)


@dataclass(eq=False)
class PiecewiseLinearMap:
    """Return map to the structural edge sectors, one matrix per branch."""

    field: SkeletonField
    poly: Polytope
    structural_set: tuple[int, ...]
    branches: tuple[Branch, ...]

    def branches_from(self, edge: int) -> list[Branch]:
        return [b for b in self.branches if b.source == edge]

    def branch_named(self, name: str) -> Branch:
        for b in self.branches:
            if b.name == name:
                return b
        raise SkeletonError(f"no branch named {name!r}")

    @cached_property
    def inverse(self) -> "PiecewiseLinearMap":
        """Return map of the sign-flipped skeleton; exact inverse of self."""
        return build_poincare_map(self.field.negate(), self.poly,
                                  self.structural_set)


def build_poincare_map(field: SkeletonField, poly: Polytope,
                       structural) -> PiecewiseLinearMap:
    graph = build_flow_graph(field, poly, strict=True)
    itineraries = enumerate_branches(graph, structural)
    branches = tuple(
        branch_map(field, poly, it, name=f"xi{k + 1}")
        for k, it in enumerate(itineraries)
    )
    return PiecewiseLinearMap(field, poly, tuple(sorted(structural)), branches)


def locate_branch(plmap: PiecewiseLinearMap, point: SectorPoint,
                  margin: float = 0.0) -> Branch:
    hits = [
        b for b in plmap.branches_from(point.edge)
        if b.domain.contains(point.coords, margin=margin)
    ]
    if len(hits) == 1:
        return hits[0]
    if not hits:
        kind = "boundary" if any(
            not b.domain.empty for b in plmap.branches_from(point.edge)
        ) else "escape"
        raise BranchDomainError(
            "point lies on a branch-domain boundary or escapes the network",
            kind=kind,
        )
    raise BranchDomainError("point matched several branch domains", "boundary")


def s_poincare(plmap: PiecewiseLinearMap, point: SectorPoint,
               margin: float = 0.0) -> tuple[Branch, SectorPoint]:
    """One application of the return map; raises on boundary points."""
    branch = locate_branch(plmap, point, margin=margin)
    return branch, SectorPoint(branch.target, branch.apply(point.coords))


@dataclass(frozen=True)
class IterationResult:
    points: tuple[SectorPoint, ...]
    branch_names: tuple[str, ...]
    status: str          # "ok" | "boundary"
    steps: int
    message: str = ""


def iterate(plmap: PiecewiseLinearMap, point: SectorPoint, n: int,
            direction: str = "forward", margin: float = 0.0) -> IterationResult:
    """Repeated return map, forward or through the exact inverse."""
    active = plmap if direction == "forward" else plmap.inverse
    pts = [point]
    names = []
    for k in range(n):
        try:
            branch, point = s_poincare(active, point, margin=margin)
        except BranchDomainError as err:
            return IterationResult(tuple(pts), tuple(names), "boundary", k,
                                   f"stopped at step {k}: {err}")
        pts.append(point)
        names.append(branch.name)
    return IterationResult(tuple(pts), tuple(names), "ok", n)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def graph_to_dot(graph: FlowGraph, poly: Polytope) -> str:
    lines = ["digraph skeleton {"]
    for v in range(poly.n_vertices):
        lines.append(f'  {poly.vertex_name(v)};')
    for e, s, t in graph.arcs:
        lines.append(
            f'  {poly.vertex_name(s)} -> {poly.vertex_name(t)} '
            f'[label="{poly.edge_name(e)}"];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def poincare_map_to_json(plmap: PiecewiseLinearMap) -> dict:
    poly = plmap.poly
    return {
        "schema": SCHEMA_ID,
        "structural_set": [poly.edge_name(e) for e in plmap.structural_set],
        "branches": [
            {
                "name": b.name,
                "itinerary": [poly.edge_name(e) for e in b.itinerary],
                "source": poly.edge_name(b.source),
                "target": poly.edge_name(b.target),
                "source_support": [poly.facet_name(f) for f in b.source_support],
                "target_support": [poly.facet_name(f) for f in b.target_support],
                "matrix": [
                    [format_fraction(v) for v in row] for row in b.restricted()
                ],
                "domain": [list(row) for row in b.domain.rows],
                "domain_empty": b.domain.empty,
            }
            for b in plmap.branches
        ],
    }


def poincare_map_json_text(plmap: PiecewiseLinearMap) -> str:
    return json.dumps(poincare_map_to_json(plmap), indent=2, sort_keys=False)
