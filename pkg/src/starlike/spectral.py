"""Spectral data on the compact component.

Resolvent entries over ``K x K`` come from a Schur complement: each branch
contributes ``a_i(1)^2 m_i(z)`` on the diagonal at its attachment vertex,
where ``m_i`` is the Weyl m-function of the branch beyond depth 0. Ratios of
Borel transforms along a shrinking ``eps`` schedule estimate the density
matrix ``P(E) = d mu_uv / d mu`` with respect to the trace measure.

Every routine that takes a graph also accepts a finite real symmetric
matrix, in which case ``K`` is the full index set.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import halfline
from .graph import GraphError, StarLikeGraph, VertexId, compact
from .halfline import MFunctionError
from .operator import apply, delta

__all__ = [
    "ResolventMatrixK",
    "EpsSchedule",
    "SpectralSample",
    "PoltoratskiiRatio",
    "GeneralizedEigenfunction",
    "NonSingularError",
    "compact_matrix",
    "resolvent_K",
    "resolvent_batch",
    "borel_uv",
    "poltoratskii_ratio",
    "p_matrix",
    "multiplicity_profile",
    "rank_histogram",
    "generalized_eigenfunction",
    "branch_scalars",
    "subordinate_system",
    "subordinate_space_dim",
    "reconstruct_branch",
    "stieltjes_density",
]

DEFAULT_RANK_TOL = 1e-3
GROWTH_FACTOR = 1.5      # singular-regime detector: per-step growth of Im trace
SHRINK_FACTOR = 1.5      # convergence: successive ratio differences must shrink by this
DETECT_STEPS = 3


class NonSingularError(ValueError):
    """Requested a singular-regime quantity at an energy where none is detected."""


@dataclass(frozen=True)
class EpsSchedule:
    eps_0: float = 1e-1
    factor: float = 0.5
    count: int = 20

    def __post_init__(self):
        if not self.eps_0 > 0:
            raise ValueError("eps_0 must be positive")
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.count < 3:
            raise ValueError("schedule needs at least 3 steps")

    @classmethod
    def ending_at(cls, eps_min: float, factor: float = 0.5, count: int = 20) -> "EpsSchedule":
        return cls(eps_min / factor ** (count - 1), factor, count)

    @property
    def eps(self) -> np.ndarray:
        return self.eps_0 * self.factor ** np.arange(self.count)

    @property
    def eps_min(self) -> float:
        return float(self.eps[-1])


def _depth_cap(eps_min: float) -> int:
    return max(2 ** 20, 2 ** math.ceil(math.log2(1e3 / eps_min)))


# -- sources -------------------------------------------------------------------

def compact_matrix(g: StarLikeGraph) -> np.ndarray:
    """``J`` restricted to ``K`` (no branch terms)."""
    A = np.diag(np.array(g.compact.potential, dtype=float))
    for u, v, w in g.compact.edges:
        A[u, v] = A[v, u] = w
    return A


def _index(source, u) -> int:
    if isinstance(source, StarLikeGraph):
        if isinstance(u, tuple):
            v = source.check(u)
            if not v.is_compact:
                raise GraphError(f"{v!r} is not a compact vertex; off-K entries need a dense truncation")
            return v.index
        if not 0 <= int(u) < source.size:
            raise GraphError(f"compact index {u} out of range")
        return int(u)
    n = np.asarray(source).shape[0]
    if not 0 <= int(u) < n:
        raise IndexError(f"index {u} out of range for a {n}x{n} matrix")
    return int(u)


def _size(source) -> int:
    return source.size if isinstance(source, StarLikeGraph) else np.asarray(source).shape[0]


def resolvent_batch(source, z, tol: float = 1e-12, max_depth: int | None = None) -> np.ndarray:
    """``<(J - z)^-1 delta_v, delta_u>`` over ``K x K`` for each ``z``; shape (nz, K, K)."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z.imag <= 0):
        raise ValueError("resolvent needs Im z > 0")
    if isinstance(source, StarLikeGraph):
        g = source
        if max_depth is None:
            max_depth = _depth_cap(float(np.min(z.imag)))
        base = compact_matrix(g).astype(complex)
        A = np.broadcast_to(base, (len(z),) + base.shape).copy()
        cache: dict[int, np.ndarray] = {}
        for i, rule in enumerate(g.branches, start=1):
            key = id(rule)
            if key not in cache:
                cache[key] = np.asarray(halfline.m_function(rule, z, tol=tol, max_depth=max_depth))
            k = g.attachment(i)
            A[:, k, k] -= float(rule.a_at(1)) ** 2 * cache[key]
    else:
        base = np.asarray(source, dtype=float)
        if base.ndim != 2 or base.shape[0] != base.shape[1] or not np.allclose(base, base.T):
            raise ValueError("matrix source must be real symmetric")
        A = np.broadcast_to(base.astype(complex), (len(z),) + base.shape).copy()
    idx = np.arange(A.shape[1])
    A[:, idx, idx] -= z[:, None]
    try:
        return np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:  # not reachable for Im z > 0
        raise ArithmeticError(f"singular Schur complement: {exc}") from exc


@dataclass(frozen=True)
class ResolventMatrixK:
    z: complex
    entries: np.ndarray

    @property
    def trace(self) -> complex:
        """Borel transform of the trace measure ``mu = sum_{v in K} mu_v``."""
        return complex(np.trace(self.entries))


def resolvent_K(source, z: complex, tol: float = 1e-12, max_depth: int | None = None) -> ResolventMatrixK:
    return ResolventMatrixK(complex(z), resolvent_batch(source, [z], tol, max_depth)[0])


def borel_uv(source, z: complex, u, v, tol: float = 1e-12) -> complex:
    """Borel transform of ``mu_uv`` at ``z`` for ``u, v`` in ``K``."""
    i, j = _index(source, u), _index(source, v)
    return complex(resolvent_K(source, z, tol).entries[i, j])


# -- Poltoratskii ratios and P(E) ------------------------------------------------

def _ratio_history(source, E: float, schedule: EpsSchedule, tol: float = 1e-12):
    z = E + 1j * schedule.eps
    R = resolvent_batch(source, z, tol=tol)
    tr = np.trace(R, axis1=1, axis2=2)
    return R / tr[:, None, None], tr


def _singular_regime(im_trace: np.ndarray) -> bool:
    tail = im_trace[-(DETECT_STEPS + 1):]
    return bool(np.all(tail[1:] >= GROWTH_FACTOR * tail[:-1]))


def _extrapolate(hist: np.ndarray, factor: float):
    """Richardson step on the last two entries plus a shrink-rate convergence test."""
    d1 = np.max(np.abs(hist[-2] - hist[-3]))
    d2 = np.max(np.abs(hist[-1] - hist[-2]))
    converged = bool(d2 <= d1 / SHRINK_FACTOR or d2 < 1e-12)
    if converged:
        value = (hist[-1] - factor * hist[-2]) / (1 - factor)
    else:
        value = hist[-1]
    return value, converged


@dataclass(frozen=True)
class PoltoratskiiRatio:
    value: float
    history: np.ndarray
    converged: bool
    singular: bool
    imag_residue: float


def poltoratskii_ratio(source, E: float, schedule: EpsSchedule, u, v) -> PoltoratskiiRatio:
    """Estimate ``d mu_uv / d mu (E)`` from ``M_uv(E + i eps) / M(E + i eps)``.

    ``value`` is the real part of a one-step Richardson extrapolation when the
    history settles and the last ratio otherwise.
    """
    i, j = _index(source, u), _index(source, v)
    ratios, tr = _ratio_history(source, E, schedule)
    hist = ratios[:, i, j]
    value, converged = _extrapolate(hist[:, None, None], schedule.factor)
    value = complex(value.ravel()[0])
    return PoltoratskiiRatio(value.real, hist, converged, _singular_regime(tr.imag), value.imag)


@dataclass(frozen=True)
class SpectralSample:
    E: float
    schedule: EpsSchedule
    p_matrix: np.ndarray
    history: np.ndarray = field(repr=False)
    im_trace: np.ndarray = field(repr=False)
    rank: int
    singular_values: np.ndarray
    converged: bool
    singular: bool
    error: str = ""

    def row(self) -> list:
        """``E, eps_min, converged, rank, sv_1..sv_K, P (row-major), singular``."""
        return ([self.E, self.schedule.eps_min, int(self.converged), self.rank]
                + list(self.singular_values) + list(self.p_matrix.ravel()) + [int(self.singular)])


def _psd_part(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    w = np.clip(w, 0.0, None)
    return (V * w) @ V.T, np.sort(w)[::-1]


def p_matrix(source, E: float, schedule: EpsSchedule | None = None,
             rank_tol: float = DEFAULT_RANK_TOL) -> SpectralSample:
    """Sample ``P(E)`` with its numerical rank.

    The ratio matrix is extrapolated, symmetrised and projected onto the PSD
    cone. The rank counts eigenvalues above ``rank_tol`` times the largest
    one and is reported as 0 outside the singular regime.
    """
    schedule = schedule or EpsSchedule()
    K = _size(source)
    try:
        ratios, tr = _ratio_history(source, E, schedule)
    except MFunctionError as exc:
        nan = np.full((K, K), np.nan)
        return SpectralSample(float(E), schedule, nan, np.empty((0, K, K)), np.empty(0), 0,
                              np.full(K, np.nan), False, False, error=str(exc))
    value, converged = _extrapolate(ratios, schedule.factor)
    P, sv = _psd_part(value.real)
    singular = _singular_regime(tr.imag)
    rank = int(np.sum(sv > rank_tol * sv[0])) if singular and sv[0] > 0 else 0
    return SpectralSample(float(E), schedule, P, ratios, tr.imag, rank, sv, converged, singular)


def multiplicity_profile(source, E_grid: Sequence[float], schedule: EpsSchedule | None = None,
                         rank_tol: float = DEFAULT_RANK_TOL, threads: int = 1) -> list[SpectralSample]:
    """``p_matrix`` over a grid; output order follows ``E_grid`` for any thread count."""
    schedule = schedule or EpsSchedule()
    grid = [float(E) for E in E_grid]
    if threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda E: p_matrix(source, E, schedule, rank_tol), grid))
    return [p_matrix(source, E, schedule, rank_tol) for E in grid]


def rank_histogram(samples: Sequence[SpectralSample], converged_only: bool = True) -> dict[int, int]:
    """Counts of ``rank`` over singular-regime samples."""
    hist: dict[int, int] = {}
    for s in samples:
        if s.singular and (s.converged or not converged_only):
            hist[s.rank] = hist.get(s.rank, 0) + 1
    return dict(sorted(hist.items()))


# -- generalized eigenfunctions ----------------------------------------------------

@dataclass(frozen=True)
class GeneralizedEigenfunction:
    E: float
    values: dict
    residuals: dict
    sample: SpectralSample = field(repr=False)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)


def _relative_residual(terms: list[float]) -> float:
    scale = sum(abs(t) for t in terms)
    return abs(sum(terms)) / scale if scale > 0 else 0.0


def generalized_eigenfunction(source, E: float, v, schedule: EpsSchedule | None = None,
                              horizon: int = 50, rank_tol: float = DEFAULT_RANK_TOL,
                              sample: SpectralSample | None = None) -> GeneralizedEigenfunction:
    """``P(E) delta_v`` on ``K``, continued along every branch by the recursion.

    Residuals of the eigenvalue equation are relative to the sum of absolute
    values of its terms and are reported at every vertex whose neighbours are
    all inside the computed region.
    """
    sample = sample or p_matrix(source, E, schedule, rank_tol)
    if not sample.singular:
        raise NonSingularError(f"no singular regime detected at E={E}")
    col = sample.p_matrix[:, _index(source, v)]
    if not isinstance(source, StarLikeGraph):
        A = np.asarray(source, dtype=float)
        values = {k: float(col[k]) for k in range(len(col))}
        res = {k: _relative_residual(list(A[k] * col) + [-E * col[k]]) for k in range(len(col))}
        return GeneralizedEigenfunction(float(E), values, res, sample)

    g = source
    values: dict[VertexId, float] = {compact(k): float(col[k]) for k in range(g.size)}
    for i, rule in enumerate(g.branches, start=1):
        k = g.attachment(i)
        x = compact(k)
        known = sum(w * values[y] for y, w in g.neighbors(x) if y.is_compact)
        a1 = float(rule.a_at(1))
        head = ((E - g.potential(x)) * values[x] - known) / a1
        sol = halfline.solve(rule, E, initial=(values[x], head), horizon=horizon)
        for n, val in enumerate(sol.values[1:], start=1):
            values[VertexId(i, n)] = float(val)
    residuals = {}
    for x in sorted(values):
        if x.depth >= horizon:
            continue
        terms = [w * values[y] for y, w in g.neighbors(x)]
        terms.append((g.potential(x) - E) * values[x])
        residuals[x] = _relative_residual(terms)
    return GeneralizedEigenfunction(float(E), values, residuals, sample)


def branch_scalars(g: StarLikeGraph, gef, E: float, L: float, fit_tol: float = 1e-3):
    """Least-squares scalars ``lambda_i`` with ``gef(phi_i(n)) ~ lambda_i g_i(n)``.

    ``g_i`` is the minimal-norm direction of branch ``i`` at scale ``L`` with
    boundary data ``(-sin theta, cos theta)``. Returns ``(lambdas, residuals,
    flags)``; a flag marks a branch whose relative fit residual exceeds
    ``fit_tol``.
    """
    values = gef.values if isinstance(gef, GeneralizedEigenfunction) else gef
    lambdas, residuals, flags = [], [], []
    for i, rule in enumerate(g.branches, start=1):
        depths = sorted(x.index for x in values if x.branch == i)
        n_fit = min(int(math.floor(L)), depths[-1] if depths else 0)
        y = np.array([values.get(VertexId(i, n), 0.0) for n in range(1, n_fit + 1)])
        if n_fit < 1 or not np.any(y):
            lambdas.append(0.0)
            residuals.append(0.0)
            flags.append(False)
            continue
        theta, _ = halfline.subordinate_direction(rule, E, max(2.0, L))
        gi = halfline.solve(rule, E, theta, horizon=max(2, n_fit)).values[1:n_fit + 1]
        lam = float(gi @ y / (gi @ gi))
        res = float(np.linalg.norm(y - lam * gi) / np.linalg.norm(y))
        lambdas.append(lam)
        residuals.append(res)
        flags.append(res > fit_tol)
    return lambdas, residuals, flags


def subordinate_system(g: StarLikeGraph, E: float, L: float) -> np.ndarray:
    """Linear system whose null space models subordinate solutions at scale ``L``.

    Unknowns: values on ``K`` then one scalar per branch; branch ``i`` carries
    ``lambda_i g_i`` with ``g_i`` the minimal-norm direction at scale ``L``.
    Rows: the eigenvalue equation at each compact vertex, then at depths 1
    and 2 of every branch.
    """
    K, m = g.size, g.m
    rows = []
    dirs = []
    for rule in g.branches:
        theta, _ = halfline.subordinate_direction(rule, E, L)
        dirs.append(halfline.solve(rule, E, theta, horizon=4).values)
    for k in range(K):
        row = np.zeros(K + m)
        x = compact(k)
        row[k] += g.potential(x) - E
        for y, w in g.neighbors(x):
            if y.is_compact:
                row[y.index] += w
            else:
                row[K + y.branch - 1] += w * dirs[y.branch - 1][1]
        rows.append(row)
    for i, rule in enumerate(g.branches, start=1):
        gi = dirs[i - 1]
        a, b = rule.window(1, 4)
        row = np.zeros(K + m)
        row[g.attachment(i)] = a[0]
        row[K + i - 1] = (b[0] - E) * gi[1] + a[1] * gi[2]
        rows.append(row)
        row = np.zeros(K + m)
        row[K + i - 1] = a[1] * gi[1] + (b[1] - E) * gi[2] + a[2] * gi[3]
        rows.append(row)
    return np.array(rows)


def subordinate_space_dim(g: StarLikeGraph, E: float, L: float, tol: float = 1e-6,
                          return_singular_values: bool = False):
    """Nullity of :func:`subordinate_system` (singular values below ``tol * max``)."""
    if L < 2:
        raise ValueError("L must be >= 2")
    A = subordinate_system(g, E, L)
    sv = np.linalg.svd(A, compute_uv=False)
    nullity = int(np.sum(sv < tol * sv[0])) + max(0, A.shape[1] - len(sv))
    return (nullity, sv) if return_singular_values else nullity


# -- reconstruction from vanishing moments -----------------------------------------

def reconstruct_branch(g: StarLikeGraph, psi_on_K: Sequence[float], branch: int, k_max: int,
                       v0: int = 0) -> np.ndarray:
    """Branch values forced by ``(J^k psi)(v0) = 0`` for ``k <= k_max``.

    With ``d = dist(v0, phi_i(1))``, the moment of order ``d + n - 1`` is the
    first to reach depth ``n`` and does so with the positive path weight
    ``beta``, so depths ``1 .. k_max - d + 1`` are solved one at a time.
    ``psi`` is taken to vanish on the other branches.
    """
    psi_K = np.asarray(psi_on_K, dtype=float)
    if psi_K.shape != (g.size,):
        raise ValueError(f"need {g.size} compact values")
    origin = compact(v0)
    d = g.distance(origin, VertexId(branch, 1))
    n_target = k_max - d + 1
    if n_target < 1:
        raise ValueError(f"k_max={k_max} too small: branch head is at distance {d}")
    # rows r_k(w) = (J^k delta_v0)(w) = <delta_v0, J^k delta_w>
    rows = [delta(origin)]
    for _ in range(k_max):
        rows.append(apply(g, rows[-1]))
    out = np.zeros(n_target)
    for n in range(1, n_target + 1):
        r = rows[d + n - 1]
        known = sum(r.get(compact(k), 0.0) * psi_K[k] for k in range(g.size))
        known += sum(r.get(VertexId(branch, j), 0.0) * out[j - 1] for j in range(1, n))
        coef = r.get(VertexId(branch, n), 0.0)
        if coef == 0:
            raise ArithmeticError(f"zero path weight reaching depth {n}; rank deficient")
        out[n - 1] = -known / coef
    return out


# -- Stieltjes inversion ----------------------------------------------------------

def stieltjes_density(source, E_grid, eps: float, tol: float = 1e-10) -> np.ndarray:
    """``(1/pi) Im M(E + i eps)`` of the trace measure at each grid point."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    E = np.asarray(E_grid, dtype=float)
    out = np.empty(len(E))
    step = 2048
    for s in range(0, len(E), step):
        R = resolvent_batch(source, E[s:s + step] + 1j * eps, tol=tol)
        out[s:s + step] = np.trace(R, axis1=1, axis2=2).imag / math.pi
    return out
