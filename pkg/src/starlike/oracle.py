"""Brute-force references.

Nothing here calls into the operator, halfline or spectral kernels. Graphs
are read through their raw fields (edge list, potentials, branch rule
callables) and turned into dense numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import GraphError, StarLikeGraph, VertexId

__all__ = [
    "DENSE_CAP",
    "DenseSpectrum",
    "dense_eig",
    "dense_resolvent",
    "eigen_resolvent",
    "atomic_measures",
    "residue_ratio",
    "dense_truncation",
    "truncated_resolvent_K",
    "brute_paths",
    "dense_reconstruct",
    "dirichlet_line",
]

DENSE_CAP = 5000


@dataclass(frozen=True)
class DenseSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    dimension: int


def _dense(A) -> np.ndarray:
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("need a square matrix")
    if A.shape[0] > DENSE_CAP:
        raise MemoryError(f"dimension {A.shape[0]} exceeds dense cap {DENSE_CAP}")
    return A


def dense_eig(A) -> DenseSpectrum:
    A = _dense(A)
    w, V = np.linalg.eigh(A)
    return DenseSpectrum(w, V, A.shape[0])


def dense_resolvent(A, z: complex, u: int, v: int) -> complex:
    """``((A - z)^-1)_{uv}`` by a linear solve."""
    A = _dense(A)
    if complex(z).imag == 0:
        raise ValueError("need Im z != 0")
    rhs = np.zeros(A.shape[0], dtype=complex)
    rhs[v] = 1.0
    return complex(np.linalg.solve(A - z * np.eye(A.shape[0]), rhs)[u])


def eigen_resolvent(spec: DenseSpectrum, z: complex, u: int, v: int) -> complex:
    """Same entry from the eigen-expansion ``sum_k V_uk V_vk / (l_k - z)``."""
    V = spec.eigenvectors
    return complex(np.sum(V[u] * V[v] / (spec.eigenvalues - z)))


def atomic_measures(A, u: int, v: int, merge_tol: float = 1e-9) -> list[tuple[float, float]]:
    """Atoms of ``mu_uv``: ``<P_k delta_u, delta_v>`` per distinct eigenvalue.

    Eigenvalues closer than ``merge_tol * max(1, |A|)`` share one projection.
    """
    spec = dense_eig(A)
    out = []
    for E, cols in _clusters(spec, merge_tol):
        V = spec.eigenvectors[:, cols]
        out.append((E, float(V[u] @ V[v])))
    return out


def _clusters(spec: DenseSpectrum, merge_tol: float):
    w = spec.eigenvalues
    scale = max(1.0, float(np.max(np.abs(w)))) if len(w) else 1.0
    groups, start = [], 0
    for k in range(1, len(w) + 1):
        if k == len(w) or w[k] - w[k - 1] > merge_tol * scale:
            groups.append((float(np.mean(w[start:k])), list(range(start, k))))
            start = k
    return groups


def residue_ratio(A, E_index: int, merge_tol: float = 1e-9) -> tuple[float, np.ndarray]:
    """Eigenvalue cluster ``E_index`` and ``P_k / tr P_k`` at that cluster."""
    spec = dense_eig(A)
    E, cols = _clusters(spec, merge_tol)[E_index]
    V = spec.eigenvectors[:, cols]
    P = V @ V.T
    return E, P / np.trace(P)


# -- graphs ------------------------------------------------------------------------

def dense_truncation(g: StarLikeGraph, depth: int) -> tuple[np.ndarray, list]:
    """Dense Dirichlet truncation, vertex order ``K`` then branches by depth."""
    K = g.compact.size
    labels = [VertexId(0, k) for k in range(K)]
    for i in range(1, len(g.branches) + 1):
        labels += [VertexId(i, n) for n in range(1, depth + 1)]
    N = len(labels)
    if N > DENSE_CAP:
        raise MemoryError(f"dimension {N} exceeds dense cap {DENSE_CAP}")
    A = np.zeros((N, N))
    for k in range(K):
        A[k, k] = g.compact.potential[k]
    for u, v, w in g.compact.edges:
        A[u, v] += w
        A[v, u] += w
    pos = K
    for i, rule in enumerate(g.branches):
        if depth == 0:
            continue
        n = np.arange(1, depth + 1)
        a = np.asarray(rule.a(n), dtype=float)
        b = np.asarray(rule.b(n), dtype=float)
        prev = g.compact.attachments[i]
        for j in range(depth):
            row = pos + j
            A[row, row] = b[j]
            A[row, prev] = A[prev, row] = a[j]
            prev = row
        pos += depth
    return A, labels


def truncated_resolvent_K(g: StarLikeGraph, z: complex, depth: int) -> np.ndarray:
    """``K x K`` block of ``(A_N - z)^-1`` for the depth-``depth`` truncation."""
    A, _ = dense_truncation(g, depth)
    K = g.compact.size
    rhs = np.zeros((A.shape[0], K), dtype=complex)
    rhs[:K, :K] = np.eye(K)
    X = np.linalg.solve(A - z * np.eye(A.shape[0]), rhs)
    return X[:K]


def _raw_adjacency(g: StarLikeGraph, reach: int) -> tuple[dict, dict]:
    """Weighted adjacency of ``K`` plus branch depths ``<= reach``, from raw fields."""
    adj: dict = {}

    def link(x, y, w):
        adj.setdefault(x, {})[y] = w
        adj.setdefault(y, {})[x] = w

    for k in range(g.compact.size):
        adj.setdefault(("K", k), {})
    for u, v, w in g.compact.edges:
        link(("K", u), ("K", v), float(w))
    for i, rule in enumerate(g.branches, start=1):
        prev = ("K", g.compact.attachments[i - 1])
        for n in range(1, reach + 1):
            cur = ("B", i, n)
            link(prev, cur, float(rule.a(np.array([n]))[0]))
            prev = cur
    return adj, {}


def _key(v) -> tuple:
    v = tuple(v)
    return ("K", v[1]) if v[0] == 0 else ("B", v[0], v[1])


def brute_paths(g: StarLikeGraph, v, w, n: int, cap: int = 10 ** 6) -> float:
    """Sum over all length-``n`` walks ``v -> w`` of the product of edge weights,
    required to be geodesic (``n = dist(v, w)``)."""
    src, dst = _key(v), _key(w)
    reach = max(src[-1] if src[0] == "B" else 0, dst[-1] if dst[0] == "B" else 0) + n + 1
    adj, _ = _raw_adjacency(g, reach)
    if src not in adj or dst not in adj:
        raise GraphError("vertex outside the graph")
    # breadth-first distance, independent of the graph module
    dist = {src: 0}
    frontier = [src]
    while frontier and dst not in dist:
        nxt = []
        for x in frontier:
            for y in adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    nxt.append(y)
        frontier = nxt
    if dist.get(dst) != n:
        raise GraphError(f"{w} is not on the sphere of radius {n} about {v}")
    total = 0.0
    count = 0
    stack = [(src, 0, 1.0)]
    while stack:
        x, k, weight = stack.pop()
        if k == n:
            if x == dst:
                total += weight
            continue
        count += 1
        if count > cap:
            raise GraphError("walk enumeration cap exceeded")
        for y, a in adj[x].items():
            stack.append((y, k + 1, weight * a))
    return total


def dense_reconstruct(g: StarLikeGraph, psi_on_K, branch: int, k_max: int, v0: int = 0) -> np.ndarray:
    """Solve the vanishing-moment constraints ``(A^k psi)(v0) = 0`` as one dense system.

    Unknowns are branch values at depths ``1 .. n_target``; moments of order
    ``d .. k_max`` give the equations, with ``A`` a dense truncation deep
    enough that no walk of length ``k_max`` feels the cut.
    """
    psi_K = np.asarray(psi_on_K, dtype=float)
    K = g.compact.size
    A, labels = dense_truncation(g, k_max + 2)
    adj, _ = _raw_adjacency(g, 1)
    dist = {("K", v0): 0}
    frontier = [("K", v0)]
    while frontier:
        nxt = []
        for x in frontier:
            for y in adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    nxt.append(y)
        frontier = nxt
    d = dist[("B", branch, 1)]
    n_target = k_max - d + 1
    cols = [labels.index(VertexId(branch, n)) for n in range(1, n_target + 1)]
    rows, rhs = [], []
    e = np.zeros(A.shape[0])
    e[v0] = 1.0
    r = e
    for k in range(1, k_max + 1):
        r = A @ r           # row of A^k at v0 (A symmetric)
        if k < d:
            continue
        rows.append(r[cols])
        rhs.append(-r[:K] @ psi_K)
    sol = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)[0]
    return sol


def dirichlet_line(a, b) -> np.ndarray:
    """Dense tridiagonal matrix with diagonal ``b`` and off-diagonal ``a``."""
    b = np.asarray(b, dtype=float)
    A = np.diag(b)
    if len(b) > 1:
        off = np.asarray(a, dtype=float)[: len(b) - 1]
        A += np.diag(off, 1) + np.diag(off, -1)
    return A
