"""Combinatorics of simple polytopes: prisms, simplexes, corners, dual supports.

Only the incidence data consumed by the edge-dynamics pipeline is
materialized: vertices with their active facet sets, edges with endpoints,
and the corner triples they determine.  Prisms (products of simplexes) are
built natively in canonical representation, where the i-th defining function
is the coordinate projection x_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, product


class PolytopeError(ValueError):
    """Raised when incidence data violates the simple-polytope invariants."""


@dataclass(frozen=True)
class PrismType:
    """A product of simplexes, one factor per strategy group."""

    groups: tuple[int, ...]

    def __post_init__(self):
        if len(self.groups) == 0:
            raise PolytopeError("prism type needs at least one group")
        if any(g < 1 for g in self.groups):
            raise PolytopeError("group sizes must be >= 1")
        object.__setattr__(self, "groups", tuple(int(g) for g in self.groups))

    @property
    def n(self) -> int:
        return sum(self.groups)

    @property
    def p(self) -> int:
        return len(self.groups)

    @property
    def dim(self) -> int:
        return self.n - self.p

    def group_ranges(self) -> list[range]:
        """Global strategy indices (0-based) of each group."""
        ranges, start = [], 0
        for g in self.groups:
            ranges.append(range(start, start + g))
            start += g
        return ranges

    def group_of(self, strategy: int) -> int:
        for a, r in enumerate(self.group_ranges()):
            if strategy in r:
                return a
        raise IndexError(strategy)


@dataclass(frozen=True)
class SectorSupport:
    """Facet coordinates on which a dual-cone sector may be nonzero."""

    kind: str                 # "vertex" | "edge"
    index: int
    coords: tuple[int, ...]   # facet indices, ascending


@dataclass(frozen=True)
class Polytope:
    """A simple polytope as vertex/edge/facet incidence data.

    ``vertex_facets[v]`` is the set of facets through vertex v (exactly
    ``dim`` of them), ``edges[e]`` the endpoint pair.  ``vertex_labels``
    carries the strategy tuples of a prism when built canonically.
    """

    dim: int
    n_facets: int
    vertex_facets: tuple[frozenset[int], ...]
    edges: tuple[tuple[int, int], ...]
    groups: tuple[int, ...] | None = None
    vertex_labels: tuple[tuple[int, ...], ...] | None = None
    _edge_index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        validate_incidence(self.dim, self.n_facets, self.vertex_facets, self.edges)
        self._edge_index.update(
            {frozenset(vw): e for e, vw in enumerate(self.edges)}
        )

    # -- basic queries ------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_facets)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_between(self, v: int, w: int) -> int:
        return self._edge_index[frozenset((v, w))]

    def other_endpoint(self, e: int, v: int) -> int:
        a, b = self.edges[e]
        if v == a:
            return b
        if v == b:
            return a
        raise PolytopeError(f"vertex {self.vertex_name(v)} is not an endpoint "
                            f"of edge {self.edge_name(e)}")

    def vertex_edges(self, v: int) -> list[int]:
        return [e for e, (a, b) in enumerate(self.edges) if v in (a, b)]

    def corner_triples(self):
        """All (vertex, edge, facet) corners."""
        for e in range(self.n_edges):
            for v in self.edges[e]:
                yield v, e, corner_facet(self, v, e)

    # -- naming, mirroring the usual v1/g1/s1 enumeration -------------------

    def vertex_name(self, v: int) -> str:
        return f"v{v + 1}"

    def edge_name(self, e: int) -> str:
        return f"g{e + 1}"

    def facet_name(self, f: int) -> str:
        return f"s{f + 1}"

    def parse_edge_name(self, name: str) -> int:
        token = name.strip().lower().lstrip("g")
        e = int(token) - 1
        if not 0 <= e < self.n_edges:
            raise PolytopeError(f"no edge named {name!r}")
        return e


def validate_incidence(dim, n_facets, vertex_facets, edges) -> None:
    if dim < 0:
        raise PolytopeError("dimension must be nonnegative")
    for v, fv in enumerate(vertex_facets):
        if not all(0 <= f < n_facets for f in fv):
            raise PolytopeError(f"vertex {v}: facet index out of range")
        if len(fv) != dim:
            raise PolytopeError(
                f"vertex {v} lies on {len(fv)} facets, expected {dim} "
                "(not a simple polytope)"
            )
    seen = set()
    for e, (a, b) in enumerate(edges):
        if a == b or not (0 <= a < len(vertex_facets)) or not (0 <= b < len(vertex_facets)):
            raise PolytopeError(f"edge {e}: bad endpoints {(a, b)}")
        key = frozenset((a, b))
        if key in seen:
            raise PolytopeError(f"duplicate edge {(a, b)}")
        seen.add(key)
        common = vertex_facets[a] & vertex_facets[b]
        if len(common) != dim - 1:
            raise PolytopeError(
                f"edge {e}: endpoints share {len(common)} facets, "
                f"expected {dim - 1}"
            )


def build_prism(prism: PrismType | tuple[int, ...]) -> Polytope:
    """Canonical prism: one facet per strategy, vertices labeled by the
    tuple of active strategies (1-based), lexicographic vertex order.

    Edges join vertices differing in exactly one group and are enumerated
    group by group, the last group varying first, fixed coordinates in
    lexicographic order; this reproduces the conventional numbering of the
    cube's edge table for type (2, 2, 2).
    """
    if not isinstance(prism, PrismType):
        prism = PrismType(tuple(prism))
    ranges = prism.group_ranges()
    labels = [tuple(j + 1 for j in combo) for combo in product(*ranges)]
    index_of = {lab: i for i, lab in enumerate(labels)}
    all_facets = frozenset(range(prism.n))
    vertex_facets = tuple(
        frozenset(all_facets - {j - 1 for j in lab}) for lab in labels
    )

    edges: list[tuple[int, int]] = []
    for alpha in range(prism.p - 1, -1, -1):
        fixed_groups = [ranges[b] for b in range(prism.p) if b != alpha]
        for fixed in product(*fixed_groups):
            for j, jp in combinations(ranges[alpha], 2):
                lab_a = list(fixed)
                lab_b = list(fixed)
                lab_a.insert(alpha, j)
                lab_b.insert(alpha, jp)
                a = index_of[tuple(x + 1 for x in lab_a)]
                b = index_of[tuple(x + 1 for x in lab_b)]
                edges.append((a, b))

    return Polytope(
        dim=prism.dim,
        n_facets=prism.n,
        vertex_facets=vertex_facets,
        edges=tuple(edges),
        groups=prism.groups,
        vertex_labels=tuple(labels),
    )


def build_simplex(n: int) -> Polytope:
    """The (n-1)-simplex as the single-group prism."""
    return build_prism(PrismType((n,)))


def corner_facet(poly: Polytope, v: int, e: int) -> int:
    """The unique facet meeting edge e exactly in its endpoint v."""
    w = poly.other_endpoint(e, v)
    only = poly.vertex_facets[v] - poly.vertex_facets[w]
    if len(only) != 1:
        raise PolytopeError(
            f"corner of ({poly.vertex_name(v)}, {poly.edge_name(e)}) "
            "is not unique; incidence data is inconsistent"
        )
    return next(iter(only))


def dual_support(poly: Polytope, *, vertex: int | None = None,
                 edge: int | None = None) -> SectorSupport:
    """Nonzero coordinate set of the dual-cone sector of a vertex or edge."""
    if (vertex is None) == (edge is None):
        raise PolytopeError("pass exactly one of vertex= or edge=")
    if vertex is not None:
        return SectorSupport("vertex", vertex,
                             tuple(sorted(poly.vertex_facets[vertex])))
    a, b = poly.edges[edge]
    common = poly.vertex_facets[a] & poly.vertex_facets[b]
    return SectorSupport("edge", edge, tuple(sorted(common)))
