"""The Jacobi operator on a star-like graph: action, truncations, potentials."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import (BranchCoefficients, CompactComponent, GraphError, StarLikeGraph, VertexId,
                    build_star_like, compact)

__all__ = [
    "FinVector",
    "apply",
    "moment",
    "delta",
    "inner",
    "norm",
    "Truncation",
    "assemble_truncated",
    "make_potential",
    "paste_halflines",
    "DEFAULT_MATRIX_CAP",
]

FinVector = dict  # VertexId -> float | complex, finite support, no zero entries

DEFAULT_MATRIX_CAP = 2_000_000


def delta(v: VertexId) -> FinVector:
    return {VertexId(*v): 1.0}


def inner(psi: Mapping, phi: Mapping) -> complex:
    """``<psi, phi>``, conjugate-linear in the first slot."""
    if len(phi) < len(psi):
        return sum(np.conj(psi[k]) * x for k, x in phi.items() if k in psi)
    return sum(np.conj(x) * phi[k] for k, x in psi.items() if k in phi)


def norm(psi: Mapping) -> float:
    return math.sqrt(sum(abs(x) ** 2 for x in psi.values()))


def apply(g: StarLikeGraph, psi: Mapping) -> FinVector:
    """``(J psi)(v) = sum_{w ~ v} a_{v,w} psi(w) + b_v psi(v)``."""
    out: dict[VertexId, complex] = {}
    for v, x in psi.items():
        if x == 0:
            continue
        v = g.check(v)
        bv = g.potential(v)
        if bv != 0:
            out[v] = out.get(v, 0.0) + bv * x
        for w, a in g.neighbors(v):
            out[w] = out.get(w, 0.0) + a * x
    return {k: out[k] for k in sorted(out) if out[k] != 0}


def moment(g: StarLikeGraph, v: VertexId, w: VertexId, n: int) -> float:
    """``<delta_w, J^n delta_v>`` by ``n`` repeated applications."""
    if n < 0:
        raise ValueError("moment order must be >= 0")
    psi = delta(v)
    for _ in range(n):
        psi = apply(g, psi)
    return float(np.real(psi.get(VertexId(*w), 0.0)))


@dataclass(frozen=True)
class Truncation:
    """Dirichlet restriction of ``J`` to ``K`` plus branch depths ``<= depth``."""

    matrix: sp.csr_matrix
    vertices: tuple[VertexId, ...]
    depth: int

    @property
    def index(self) -> dict[VertexId, int]:
        return {v: k for k, v in enumerate(self.vertices)}

    @property
    def dimension(self) -> int:
        return len(self.vertices)

    def to_coo_text(self) -> str:
        """One ``row col value`` line per stored entry, 17 significant digits."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}" for k in order]
        return "\n".join(lines) + "\n"


def assemble_truncated(g: StarLikeGraph, depth: int, cap: int = DEFAULT_MATRIX_CAP) -> Truncation:
    if depth < 0:
        raise ValueError("truncation depth must be >= 0")
    dim = g.size + g.m * depth
    if dim > cap:
        raise MemoryError(f"truncated dimension {dim} exceeds cap {cap}")
    vertices = [compact(k) for k in range(g.size)]
    for i in range(1, g.m + 1):
        vertices.extend(VertexId(i, n) for n in range(1, depth + 1))
    rows, cols, vals = [], [], []
    for u, v, w in g.compact.edges:
        rows += [u, v]
        cols += [v, u]
        vals += [w, w]
    for k, b in enumerate(g.compact.potential):
        if b != 0:
            rows.append(k)
            cols.append(k)
            vals.append(b)
    offset = g.size
    for i, rule in enumerate(g.branches, start=1):
        if depth == 0:
            continue
        a, b = rule.window(1, depth + 1)
        idx = offset + np.arange(depth)
        prev = np.concatenate([[g.attachment(i)], idx[:-1]])
        rows += list(idx) + list(prev)
        cols += list(prev) + list(idx)
        vals += list(a) + list(a)
        nz = b != 0
        rows += list(idx[nz])
        cols += list(idx[nz])
        vals += list(b[nz])
        offset += depth
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return Truncation(mat, tuple(vertices), depth)


# -- coefficient rules ------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _uniform01(seed: int, stream: int, n: np.ndarray) -> np.ndarray:
    """Counter-based uniforms on [0, 1) keyed by ``(seed, stream, n)``."""
    key = _splitmix64(np.array([seed], dtype=np.uint64))
    key = _splitmix64(key ^ np.uint64(stream & 0xFFFFFFFFFFFFFFFF))
    with np.errstate(over="ignore"):
        z = _splitmix64(key + np.asarray(n).astype(np.uint64))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def _constant_blocks(start, stop):
    if stop > start:
        yield start, 1, stop - start


def make_potential(kind: str, params: Mapping | None = None, seed: int | None = None) -> BranchCoefficients:
    """Half-line coefficient rule with constant hopping ``a`` (default 1).

    kinds:
      ``free``          ``b = 0``
      ``periodic``      ``values``: list, ``b(n) = values[(n-1) % p]``
      ``sparse_power``  ``h``, ``gamma``, ``L0``: ``b(L0**k) = h k**gamma``, else 0
      ``iid_uniform``   ``low``, ``high`` (or ``range``), ``stream``; needs ``seed``
    """
    p = dict(params or {})
    hop = float(p.pop("a", 1.0))
    if not hop > 0:
        raise ValueError("hopping a must be positive")
    ones = lambda n: np.full(np.shape(n), hop)  # noqa: E731

    if kind == "free":
        _no_extra(kind, p)
        return BranchCoefficients(ones, lambda n: np.zeros(np.shape(n)), hop, _constant_blocks,
                                  label="free", params=(("a", hop),))

    if kind == "periodic":
        values = p.pop("values", None)
        _no_extra(kind, p)
        if values is None or len(values) == 0:
            raise ValueError("periodic potential needs a non-empty 'values' list")
        vals = np.asarray(values, dtype=float)
        period = len(vals)

        def b(n):
            return vals[(np.asarray(n) - 1) % period]

        def blocks(start, stop):
            s = start
            head = min(stop, start + (-(start - 1)) % period)
            if head > s:
                yield s, head - s, 1
                s = head
            reps = (stop - s) // period
            if reps:
                yield s, period, reps
                s += reps * period
            if stop > s:
                yield s, stop - s, 1

        bound = max(hop, float(np.max(np.abs(vals))))
        return BranchCoefficients(ones, b, bound, blocks, label="periodic",
                                  params=(("a", hop), ("values", tuple(vals.tolist()))))

    if kind == "sparse_power":
        h = float(p.pop("h", 1.0))
        gamma = float(p.pop("gamma", 0.5))
        base = int(p.pop("L0", 2))
        _no_extra(kind, p)
        if base < 2:
            raise ValueError("sparse_power needs L0 >= 2")
        if gamma < 0:
            raise ValueError("sparse_power needs gamma >= 0")
        sites = [base ** k for k in range(int(62 / math.log2(base)) + 1)]
        heights = {s: h * float(k) ** gamma for k, s in enumerate(sites)}
        site_arr = np.array(sites, dtype=np.int64)
        height_arr = np.array([heights[s] for s in sites])

        def b(n):
            n = np.asarray(n, dtype=np.int64)
            pos = np.searchsorted(site_arr, n)
            pos = np.minimum(pos, len(site_arr) - 1)
            return np.where(site_arr[pos] == n, height_arr[pos], 0.0)

        def blocks(start, stop):
            s = start
            for site in sites:
                if site < start:
                    continue
                if site >= stop:
                    break
                if site > s:
                    yield s, 1, site - s
                yield site, 1, 1
                s = site + 1
            if stop > s:
                yield s, 1, stop - s

        bound = max(hop, float(np.max(np.abs(height_arr))))
        return BranchCoefficients(ones, b, bound, blocks, label="sparse_power",
                                  params=(("a", hop), ("h", h), ("gamma", gamma), ("L0", base)))

    if kind == "iid_uniform":
        rng = p.pop("range", None)
        low, high = (rng if rng is not None else (p.pop("low", -1.0), p.pop("high", 1.0)))
        p.pop("low", None)
        p.pop("high", None)
        stream = int(p.pop("stream", 0))
        _no_extra(kind, p)
        if seed is None:
            raise ValueError("iid_uniform potential needs an explicit seed")
        low, high = float(low), float(high)
        if not high >= low:
            raise ValueError("iid_uniform needs low <= high")

        def b(n):
            return low + (high - low) * _uniform01(int(seed), stream, n)

        bound = max(hop, abs(low), abs(high))
        return BranchCoefficients(ones, b, bound, None, label="iid_uniform",
                                  params=(("a", hop), ("low", low), ("high", high),
                                          ("seed", int(seed)), ("stream", stream)))

    raise ValueError(f"unknown potential kind {kind!r}")


def _no_extra(kind, p):
    if p:
        raise ValueError(f"unexpected parameters for {kind}: {sorted(p)}")


def paste_halflines(factors: Sequence[BranchCoefficients], coupling) -> StarLikeGraph:
    """Pasting of half-line Jacobi operators along a weighted coupling graph.

    Factor ``i`` acts on sites ``1, 2, ...`` with cyclic vector ``delta_1``.
    Its first site becomes compact vertex ``i-1`` (potential ``b_i(1)``),
    compact vertices are joined with weights ``coupling[i][j]`` and the rest
    of factor ``i`` continues as branch ``i``.
    """
    A = np.asarray(coupling, dtype=float)
    n = len(factors)
    if A.shape != (n, n):
        raise GraphError(f"coupling must be {n}x{n}, got {A.shape}")
    if np.any(A < 0):
        raise GraphError("coupling weights must be non-negative")
    if not np.array_equal(A, A.T):
        raise GraphError("coupling must be symmetric")
    if np.any(np.diag(A) != 0):
        raise GraphError("coupling must have zero diagonal")
    edges = tuple((i, j, A[i, j]) for i in range(n) for j in range(i + 1, n) if A[i, j] > 0)
    potential = tuple(float(f.b_at(1)) for f in factors)
    comp = CompactComponent(n, edges, potential, tuple(range(n)))
    return build_star_like(comp, [f.shifted(1) for f in factors])
