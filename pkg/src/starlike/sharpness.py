"""The symmetric star used to show the multiplicity bound is attained.

``m`` copies of a half-line potential ``V0`` hang off a centre ``o``; ray
``i`` has vertices ``v_1^i, v_2^i, ...`` with ``b(v_j^i) = V0(j)`` and unit
weights. In graph terms ``o`` is compact vertex 0, ``v_1^i`` is compact
vertex ``i`` and ``v_j^i`` (``j >= 2``) is branch vertex ``(i, j-1)``.

With ``zeta = exp(2 pi i / m)`` the sector ``H_k`` (``1 <= k < m``) holds the
vectors with ``psi(o) = 0`` and ``psi(v_j^i) = zeta^((i-1) k) psi(v_j^1)``;
``H_0`` holds the symmetric ones, including ``o``.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import oracle
from .graph import BranchCoefficients, StarLikeGraph, VertexId, compact, star_graph
from .halfline import apply_halfline
from .operator import apply, assemble_truncated, norm

__all__ = [
    "SharpnessModel",
    "SectorError",
    "build_sharpness_model",
    "ray_vertex",
    "ray_position",
    "sector_project",
    "check_invariance",
    "intertwine",
    "half_line_image",
    "random_vector",
    "Cluster",
    "DegeneracyReport",
    "degeneracy_experiment",
]


class SectorError(ValueError):
    """Vector not in the requested sector."""


@dataclass(frozen=True)
class SharpnessModel:
    m: int
    v0_rule: BranchCoefficients
    graph: StarLikeGraph = field(repr=False)

    @property
    def zeta(self) -> complex:
        return cmath.exp(2j * math.pi / self.m)

    @property
    def origin(self) -> VertexId:
        return compact(0)


def build_sharpness_model(m: int, v0_rule: BranchCoefficients) -> SharpnessModel:
    if m < 2:
        raise ValueError("sharpness model needs m >= 2")
    if np.any(v0_rule.a(np.arange(1, 65)) != 1.0):
        raise ValueError("V0 rule must have unit hopping")
    tail = v0_rule.shifted(1)
    g = star_graph([tail] * m, centre_potential=0.0,
                   attachment_potentials=[float(v0_rule.b_at(1))] * m)
    return SharpnessModel(m, v0_rule, g)


def ray_vertex(i: int, j: int) -> VertexId:
    """Graph vertex of ``v_j^i`` (``i`` in 1..m, ``j >= 1``)."""
    if j < 1:
        raise ValueError("ray positions start at 1")
    return compact(i) if j == 1 else VertexId(i, j - 1)


def ray_position(v: VertexId) -> tuple[int, int] | None:
    """Inverse of :func:`ray_vertex`; ``None`` for the centre."""
    v = VertexId(*v)
    if v.is_compact:
        return None if v.index == 0 else (v.index, 1)
    return v.branch, v.index + 1


def _check_k(model: SharpnessModel, k: int) -> None:
    if not 0 <= k < model.m:
        raise ValueError(f"sector index {k} outside 0..{model.m - 1}")


def sector_project(model: SharpnessModel, k: int, psi: Mapping) -> dict:
    """``(Pi_k psi)(v_j^i) = (1/m) sum_l zeta^((i-l) k) psi(v_j^l)``; centre kept for ``k = 0`` only."""
    _check_k(model, k)
    m = model.m
    by_depth: dict[int, np.ndarray] = {}
    centre = 0.0
    for v, x in psi.items():
        pos = ray_position(model.graph.check(v))
        if pos is None:
            centre = x
            continue
        i, j = pos
        by_depth.setdefault(j, np.zeros(m, dtype=complex))[i - 1] += x
    phase = np.exp(2j * math.pi * k * np.arange(m) / m)   # zeta^((i-1) k)
    out: dict[VertexId, complex] = {}
    if k == 0 and centre != 0:
        out[model.origin] = complex(centre)
    for j in sorted(by_depth):
        # (1/m) zeta^((i-1)k) sum_l zeta^(-(l-1)k) psi_l
        coeff = np.vdot(phase, by_depth[j]) / m
        if coeff == 0:
            continue
        for i in range(m):
            out[ray_vertex(i + 1, j)] = coeff * phase[i]
    return dict(sorted(out.items()))


def _diff_norm(p: Mapping, q: Mapping) -> float:
    keys = set(p) | set(q)
    return math.sqrt(sum(abs(p.get(x, 0) - q.get(x, 0)) ** 2 for x in keys))


def check_invariance(model: SharpnessModel, k: int, psi_set: Iterable[Mapping]) -> float:
    """``max ||Pi_k J psi - J Pi_k psi|| / ||psi||`` over the test vectors."""
    worst = 0.0
    g = model.graph
    for psi in psi_set:
        scale = norm(psi)
        if scale == 0:
            continue
        lhs = sector_project(model, k, apply(g, psi))
        rhs = apply(g, sector_project(model, k, psi))
        worst = max(worst, _diff_norm(lhs, rhs) / scale)
    return worst


def intertwine(model: SharpnessModel, k: int, psi: Mapping, tol: float = 1e-10) -> np.ndarray:
    """``(U psi)(n) = sqrt(m) psi(v_n^1)`` for ``psi`` in ``H_k``, ``k >= 1``.

    Entry ``n - 1`` of the result holds site ``n``.
    """
    if not 1 <= k < model.m:
        raise ValueError("intertwiner is defined for sectors k = 1..m-1")
    scale = max(norm(psi), 1e-300)
    if _diff_norm(sector_project(model, k, psi), psi) > tol * scale:
        raise SectorError(f"vector is not in sector {k}")
    depth = max((ray_position(v) or (0, 0))[1] for v in psi) if psi else 0
    out = np.zeros(depth, dtype=complex)
    for v, x in psi.items():
        pos = ray_position(v)
        if pos is not None and pos[0] == 1:
            out[pos[1] - 1] = x
    return math.sqrt(model.m) * out


def half_line_image(model: SharpnessModel, u: np.ndarray) -> np.ndarray:
    """``J0 u`` with a Dirichlet condition at site 0 (one entry longer than ``u``)."""
    return apply_halfline(model.v0_rule, u)


def random_vector(model: SharpnessModel, depth: int, rng: np.random.Generator,
                  complex_valued: bool = True, density: float = 1.0) -> dict:
    """Random finitely supported vector on the centre and rays up to ``v_depth``."""
    verts = [model.origin] + [ray_vertex(i, j) for i in range(1, model.m + 1)
                              for j in range(1, depth + 1)]
    out = {}
    for v in verts:
        if rng.random() > density:
            continue
        x = rng.standard_normal()
        if complex_valued:
            x = x + 1j * rng.standard_normal()
        out[v] = x
    return dict(sorted(out.items()))


# -- truncated degeneracy ---------------------------------------------------------

@dataclass(frozen=True)
class Cluster:
    energy: float
    size: int
    matched_index: int      # 1-based index into the half-line spectrum, -1 if none
    gap: float              # distance to the nearest other cluster


@dataclass(frozen=True)
class DegeneracyReport:
    m: int
    N: int
    cluster_tol: float
    match_tol: float
    clusters: list[Cluster]
    halfline_eigenvalues: np.ndarray = field(repr=False)
    multiplicity_at_halfline: np.ndarray = field(repr=False)

    @property
    def matched_degenerate(self) -> int:
        """Clusters of size exactly ``m - 1`` sitting on a half-line eigenvalue."""
        return sum(1 for c in self.clusters if c.size == self.m - 1 and c.matched_index > 0)

    @property
    def all_halfline_covered(self) -> bool:
        return bool(np.all(self.multiplicity_at_halfline >= self.m - 1))


def degeneracy_experiment(model: SharpnessModel, N: int, cluster_tol: float | None = None,
                          match_tol: float | None = None) -> DegeneracyReport:
    """Dense spectrum of the star cut after ``v_N`` on every ray, clustered.

    The reference spectrum is that of ``J0`` cut to sites ``1..N`` with a
    Dirichlet condition at 0, which in exact arithmetic occurs ``m - 1``
    times, once per non-symmetric sector.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    trunc = assemble_truncated(model.graph, N - 1, cap=oracle.DENSE_CAP)
    spec = oracle.dense_eig(trunc.matrix)
    w = spec.eigenvalues
    bound = float(np.max(np.abs(w))) if len(w) else 1.0
    if cluster_tol is None:
        rough = model.v0_rule.label != "free"
        cluster_tol = (1e-6 if rough else 1e-8) * bound
    if match_tol is None:
        match_tol = cluster_tol
    sites = np.arange(1, N + 1)
    ref = oracle.dense_eig(oracle.dirichlet_line(np.ones(N), model.v0_rule.b(sites))).eigenvalues

    groups = []
    start = 0
    for k in range(1, len(w) + 1):
        if k == len(w) or w[k] - w[k - 1] > cluster_tol:
            groups.append(w[start:k])
            start = k
    centres = np.array([float(np.mean(gr)) for gr in groups])
    clusters = []
    for c, (centre, gr) in enumerate(zip(centres, groups)):
        j = int(np.argmin(np.abs(ref - centre)))
        matched = j + 1 if abs(ref[j] - centre) <= match_tol else -1
        others = np.delete(centres, c)
        gap = float(np.min(np.abs(others - centre))) if len(others) else math.inf
        clusters.append(Cluster(float(centre), len(gr), matched, gap))
    mult = np.array([int(np.sum(np.abs(w - E) <= match_tol)) for E in ref])
    return DegeneracyReport(model.m, N, float(cluster_tol), float(match_tol), clusters, ref, mult)
