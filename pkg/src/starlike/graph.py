"""Star-like graphs: a finite compact component with half-line branches.

Vertices are addressed by :class:`VertexId`. ``VertexId(0, k)`` is compact
vertex ``k``; ``VertexId(i, n)`` with ``i >= 1`` and ``n >= 1`` is the vertex
at depth ``n`` on branch ``i``. Depth 0 of branch ``i`` is the compact
attachment vertex, so it never appears as a branch address. Tuple ordering
of this encoding puts compact vertices first and then sorts branch vertices
by ``(i, n)``, which is the canonical output order everywhere in the package.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

__all__ = [
    "VertexId",
    "compact",
    "on_branch",
    "BranchCoefficients",
    "CompactComponent",
    "StarLikeGraph",
    "GraphError",
    "PathExplosionError",
    "build_star_like",
    "star_graph",
    "enumerate_paths",
    "beta_coefficient",
    "build_sht",
    "sphere_sizes",
    "tree_dimension",
    "TreeDimension",
]

DEFAULT_PATH_CAP = 12
DEFAULT_BALL_CAP = 10_000
# number of sites checked against the declared bound when a rule is validated
_RULE_PROBE = 512


class GraphError(ValueError):
    """Invalid graph data or an invalid vertex query."""


class PathExplosionError(GraphError):
    """Path enumeration would exceed the configured length or ball cap."""


class VertexId(NamedTuple):
    branch: int
    index: int

    @property
    def is_compact(self) -> bool:
        return self.branch == 0

    @property
    def depth(self) -> int:
        return 0 if self.branch == 0 else self.index

    def __repr__(self) -> str:
        if self.branch == 0:
            return f"K{self.index}"
        return f"B{self.branch}.{self.index}"


def compact(k: int) -> VertexId:
    return VertexId(0, int(k))


def on_branch(i: int, n: int) -> VertexId:
    if n < 1:
        raise GraphError("branch depth must be >= 1; depth 0 is the compact attachment vertex")
    return VertexId(int(i), int(n))


Blocks = Callable[[int, int], Iterator[tuple[int, int, int]]]


def _eval(fn, n):
    out = np.asarray(fn(np.asarray(n, dtype=np.int64)), dtype=float)
    return out if np.ndim(n) else float(out.reshape(-1)[0])


@dataclass(frozen=True, eq=False)
class BranchCoefficients:
    """Coefficient rule of one half-line.

    ``a(n)`` is the weight of the edge between depth ``n-1`` and depth ``n``
    and ``b(n)`` the potential at depth ``n``, for ``n >= 1``. Both callables
    take and return integer/float numpy arrays and must be pure functions of
    ``n``.

    ``blocks``, when given, describes runs of repeated structure:
    ``blocks(start, stop)`` yields ``(s, period, reps)`` triples tiling
    ``[start, stop)`` in order, such that ``a`` and ``b`` repeat with the
    given period on ``[s, s + period*reps)`` (``a`` also one site past the
    end). Solvers use it to jump over long free or periodic stretches.
    """

    a: Callable[[np.ndarray], np.ndarray]
    b: Callable[[np.ndarray], np.ndarray]
    bound: float
    blocks: Blocks | None = None
    label: str = "custom"
    params: tuple = field(default=())

    def a_at(self, n):
        return _eval(self.a, n)

    def b_at(self, n):
        return _eval(self.b, n)

    def window(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients ``a(n), b(n)`` for ``start <= n < stop``."""
        n = np.arange(start, stop, dtype=np.int64)
        a = np.broadcast_to(np.asarray(self.a(n), dtype=float), n.shape)
        b = np.broadcast_to(np.asarray(self.b(n), dtype=float), n.shape)
        return np.array(a), np.array(b)

    def shifted(self, k: int) -> "BranchCoefficients":
        """Rule re-indexed so that new depth ``n`` reads old depth ``n + k``."""
        if k == 0:
            return self
        a, b, blocks = self.a, self.b, self.blocks

        def a_s(n):
            return a(np.asarray(n) + k)

        def b_s(n):
            return b(np.asarray(n) + k)

        blocks_s = None
        if blocks is not None:
            def blocks_s(start, stop):
                for s, p, r in blocks(start + k, stop + k):
                    yield s - k, p, r

        return BranchCoefficients(a_s, b_s, self.bound, blocks_s,
                                  label=f"{self.label}>>{k}", params=self.params + (("shift", k),))

    def validate(self, probe: int = _RULE_PROBE) -> None:
        if not math.isfinite(self.bound) or self.bound <= 0:
            raise GraphError(f"branch rule {self.label!r} declares an unbounded or non-positive bound")
        a, b = self.window(1, probe + 1)
        if not np.all(a > 0):
            raise GraphError(f"branch rule {self.label!r} has a non-positive edge weight")
        if np.any(np.abs(a) > self.bound) or np.any(np.abs(b) > self.bound):
            raise GraphError(f"branch rule {self.label!r} exceeds its declared bound {self.bound}")


@dataclass(frozen=True)
class CompactComponent:
    size: int
    edges: tuple[tuple[int, int, float], ...]
    potential: tuple[float, ...]
    attachments: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(u), int(v), float(w)) for u, v, w in self.edges))
        object.__setattr__(self, "potential", tuple(float(x) for x in self.potential))
        object.__setattr__(self, "attachments", tuple(int(x) for x in self.attachments))


@dataclass(frozen=True, eq=False)
class StarLikeGraph:
    compact: CompactComponent
    branches: tuple[BranchCoefficients, ...]

    @property
    def m(self) -> int:
        return len(self.branches)

    @property
    def size(self) -> int:
        """Number of compact vertices."""
        return self.compact.size

    @cached_property
    def _adj(self) -> list[dict[int, float]]:
        adj: list[dict[int, float]] = [dict() for _ in range(self.size)]
        for u, v, w in self.compact.edges:
            adj[u][v] = w
            adj[v][u] = w
        return adj

    @cached_property
    def _attached(self) -> dict[int, int]:
        return {k: i + 1 for i, k in enumerate(self.compact.attachments)}

    @cached_property
    def compact_distances(self) -> np.ndarray:
        n = self.size
        dist = np.full((n, n), -1, dtype=np.int64)
        for s in range(n):
            dist[s, s] = 0
            queue = deque([s])
            while queue:
                x = queue.popleft()
                for y in self._adj[x]:
                    if dist[s, y] < 0:
                        dist[s, y] = dist[s, x] + 1
                        queue.append(y)
        return dist

    def compact_vertices(self) -> list[VertexId]:
        return [compact(k) for k in range(self.size)]

    def attachment(self, i: int) -> int:
        """Compact index of the attachment vertex of branch ``i`` (1-based)."""
        return self.compact.attachments[i - 1]

    def is_valid(self, v) -> bool:
        if not isinstance(v, tuple) or len(v) != 2:
            return False
        i, n = v
        if i == 0:
            return 0 <= n < self.size
        return 1 <= i <= self.m and n >= 1

    def check(self, v) -> VertexId:
        if not self.is_valid(v):
            raise GraphError(f"invalid vertex {v!r}")
        return VertexId(*v)

    def potential(self, v: VertexId) -> float:
        v = self.check(v)
        if v.branch == 0:
            return self.compact.potential[v.index]
        return float(self.branches[v.branch - 1].b_at(v.index))

    def neighbors(self, v: VertexId) -> list[tuple[VertexId, float]]:
        """Neighbours of ``v`` with edge weights, in canonical vertex order."""
        v = self.check(v)
        out: list[tuple[VertexId, float]] = []
        if v.branch == 0:
            out.extend((compact(k), w) for k, w in self._adj[v.index].items())
            i = self._attached.get(v.index)
            if i is not None:
                out.append((VertexId(i, 1), float(self.branches[i - 1].a_at(1))))
        else:
            rule = self.branches[v.branch - 1]
            n = v.index
            prev = compact(self.attachment(v.branch)) if n == 1 else VertexId(v.branch, n - 1)
            out.append((prev, float(rule.a_at(n))))
            out.append((VertexId(v.branch, n + 1), float(rule.a_at(n + 1))))
        out.sort(key=lambda t: t[0])
        return out

    def weight(self, u: VertexId, v: VertexId) -> float:
        """Edge weight ``a_{u,v}``; 0 when ``u`` and ``v`` are not adjacent."""
        for w, a in self.neighbors(u):
            if w == v:
                return a
        return 0.0

    def f(self, v: VertexId) -> int:
        """Weight function ``dist(v, K) + 1``."""
        return self.check(v).depth + 1

    def _base(self, v: VertexId) -> int:
        return v.index if v.branch == 0 else self.attachment(v.branch)

    def distance(self, u: VertexId, v: VertexId) -> int:
        u, v = self.check(u), self.check(v)
        if u.branch != 0 and u.branch == v.branch:
            return abs(u.index - v.index)
        return u.depth + int(self.compact_distances[self._base(u), self._base(v)]) + v.depth

    def ball(self, v: VertexId, n: int, cap: int = DEFAULT_BALL_CAP) -> list[VertexId]:
        """Vertices within distance ``n`` of ``v``, sorted canonically."""
        v = self.check(v)
        seen = {v: 0}
        queue = deque([v])
        while queue:
            x = queue.popleft()
            if seen[x] == n:
                continue
            for y, _ in self.neighbors(x):
                if y not in seen:
                    seen[y] = seen[x] + 1
                    if len(seen) > cap:
                        raise PathExplosionError(f"ball B_{n}({v!r}) exceeds {cap} vertices")
                    queue.append(y)
        return sorted(seen)

    @cached_property
    def operator_bound(self) -> float:
        """Upper bound ``max degree * sup a + sup |b|`` for the operator norm."""
        a_sup = max([w for _, _, w in self.compact.edges] + [r.bound for r in self.branches] + [0.0])
        b_sup = max([abs(x) for x in self.compact.potential] + [r.bound for r in self.branches])
        deg = max([len(self._adj[k]) + (k in self._attached) for k in range(self.size)] + [2])
        return deg * a_sup + b_sup


def build_star_like(compact_part: CompactComponent,
                    branches: Sequence[BranchCoefficients]) -> StarLikeGraph:
    """Validate ``compact_part`` and ``branches`` and assemble the graph."""
    c = compact_part
    branches = tuple(branches)
    if c.size < 1:
        raise GraphError("compact component needs at least one vertex")
    if len(c.potential) != c.size:
        raise GraphError(f"potential has {len(c.potential)} entries, expected {c.size}")
    if not all(math.isfinite(x) for x in c.potential):
        raise GraphError("compact potential must be finite")
    if len(branches) < 1:
        raise GraphError("a star-like graph needs at least one branch")
    if len(c.attachments) != len(branches):
        raise GraphError(f"{len(c.attachments)} attachments for {len(branches)} branches")
    if len(set(c.attachments)) != len(c.attachments):
        raise GraphError(f"duplicate attachment vertex in {list(c.attachments)}")
    if any(not 0 <= k < c.size for k in c.attachments):
        raise GraphError("attachment index out of range")
    seen = set()
    for u, v, w in c.edges:
        if u == v:
            raise GraphError(f"self-loop at compact vertex {u}")
        if not (0 <= u < c.size and 0 <= v < c.size):
            raise GraphError(f"edge ({u}, {v}) references a missing vertex")
        if not (w > 0 and math.isfinite(w)):
            raise GraphError(f"non-positive weight {w} on edge ({u}, {v})")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise GraphError(f"edge {key} listed twice")
        seen.add(key)
    for rule in branches:
        rule.validate()
    g = StarLikeGraph(c, branches)
    if np.any(g.compact_distances < 0):
        raise GraphError("compact component is disconnected")
    return g


def star_graph(branches: Sequence[BranchCoefficients], centre_potential: float = 0.0,
               attachment_potentials: Sequence[float] | None = None,
               weights: Sequence[float] | None = None) -> StarLikeGraph:
    """Star graph: a centre ``o`` (compact 0) joined to ``m`` attachment vertices.

    The compact component is ``{o, phi_1(0), ..., phi_m(0)}`` with attachment
    ``i`` at compact index ``i``.
    """
    m = len(branches)
    pots = [0.0] * m if attachment_potentials is None else list(attachment_potentials)
    ws = [1.0] * m if weights is None else list(weights)
    comp = CompactComponent(
        size=m + 1,
        edges=tuple((0, i + 1, ws[i]) for i in range(m)),
        potential=(centre_potential, *pots),
        attachments=tuple(range(1, m + 1)),
    )
    return build_star_like(comp, branches)


def enumerate_paths(g: StarLikeGraph, v: VertexId, w: VertexId, n: int,
                    max_length: int = DEFAULT_PATH_CAP,
                    ball_cap: int = DEFAULT_BALL_CAP) -> list[tuple[VertexId, ...]]:
    """All walks ``(x_0=v, ..., x_n=w)`` of ``n`` steps, in lexicographic order."""
    if n < 1:
        raise GraphError("path length must be >= 1")
    if n > max_length:
        raise PathExplosionError(f"path length {n} exceeds cap {max_length}")
    v, w = g.check(v), g.check(w)
    g.ball(v, n, cap=ball_cap)  # raises when the search region is too large
    if g.distance(v, w) > n:
        return []
    out: list[tuple[VertexId, ...]] = []
    path = [v]

    def extend(x: VertexId, left: int) -> None:
        if left == 0:
            if x == w:
                out.append(tuple(path))
            return
        for y, _ in g.neighbors(x):
            if g.distance(y, w) <= left - 1:
                path.append(y)
                extend(y, left - 1)
                path.pop()

    extend(v, n)
    return out


def beta_coefficient(g: StarLikeGraph, v: VertexId, w: VertexId, n: int) -> float:
    """Sum over all ``n``-step paths from ``v`` to ``w`` of the product of weights.

    Requires ``dist(v, w) == n``; every such path is then a geodesic and the
    sum is accumulated layer by layer.
    """
    v, w = g.check(v), g.check(w)
    if g.distance(v, w) != n:
        raise GraphError(f"{w!r} is not on the sphere of radius {n} around {v!r}")
    layer = {v: 1.0}
    for step in range(n):
        left = n - step - 1
        nxt: dict[VertexId, float] = {}
        for x, s in layer.items():
            for y, a in g.neighbors(x):
                if g.distance(y, w) == left:
                    nxt[y] = nxt.get(y, 0.0) + s * a
        layer = nxt
    return layer[w]


# -- spherically homogeneous trees -------------------------------------------

def sphere_sizes(branching: Sequence[int] | Callable[[int], int], n_max: int) -> list[int]:
    """``|S_0|, ..., |S_{n_max}|`` as exact integers."""
    out = [1]
    for n in range(1, n_max + 1):
        bn = branching(n) if callable(branching) else (branching[n - 1] if n <= len(branching) else 1)
        out.append(out[-1] * int(bn))
    return out


def build_sht(branching: Sequence[int], coeff_rules: BranchCoefficients | None = None) -> StarLikeGraph:
    """Spherically homogeneous tree with eventually-1 branching, in star-like form.

    ``branching`` lists ``b_1, ..., b_N``; every later branching number is 1.
    ``coeff_rules``, indexed by level, gives radially symmetric coefficients:
    ``a(n)`` weights the edges between levels ``n-1`` and ``n`` and ``b(n)``
    is the potential on level ``n`` (``b(0)`` is read for the root). Defaults
    to unit weights and zero potential.

    The compact component is the ball ``B_N(o)`` in breadth-first order; each
    level-``N`` vertex carries one branch.
    """
    if callable(branching) or not isinstance(branching, Sequence):
        raise GraphError("branching must be an explicit finite sequence (implicitly followed by 1s); "
                         "cannot verify that it is eventually 1")
    bs = [int(x) for x in branching]
    if any(x < 1 for x in bs):
        raise GraphError("branching numbers must be >= 1")
    while bs and bs[-1] == 1:
        bs.pop()
    depth = len(bs)
    if coeff_rules is None:
        from .operator import make_potential
        coeff_rules = make_potential("free")

    levels = [[0]]
    edges: list[tuple[int, int, float]] = []
    count = 1
    for n in range(1, depth + 1):
        weight = float(coeff_rules.a_at(n))
        new = []
        for parent in levels[-1]:
            for _ in range(bs[n - 1]):
                edges.append((parent, count, weight))
                new.append(count)
                count += 1
        levels.append(new)
    level_of = np.zeros(count, dtype=np.int64)
    for n, vs in enumerate(levels):
        level_of[vs] = n
    potential = tuple(float(x) for x in coeff_rules.b(level_of))
    comp = CompactComponent(count, tuple(edges), potential, tuple(levels[-1]))
    branch_rule = coeff_rules.shifted(depth)
    return build_star_like(comp, [branch_rule] * len(levels[-1]))


@dataclass(frozen=True)
class TreeDimension:
    value: float
    partial: np.ndarray  # log|B_n| / log n for n = 2..n_max


def tree_dimension(branching: Sequence[int] | Callable[[int], int], n_max: int) -> TreeDimension:
    """Running value of ``log|B_n| / log n`` up to ``n_max``.

    ``branching`` may be a callable ``n -> b_n`` for trees that are not
    star-like (diagnostics only).
    """
    if n_max < 2:
        raise GraphError("n_max must be >= 2")
    sizes = sphere_sizes(branching, n_max)
    ball = 0
    partial = []
    for n, s in enumerate(sizes):
        ball += s
        if n >= 2:
            partial.append(math.log(ball) / math.log(n))
    arr = np.array(partial)
    return TreeDimension(float(arr[-1]), arr)
