"""Half-line Jacobi recursion: solutions, subordinacy diagnostics, m-functions.

Site ``n >= 1`` of a half-line sees ``a(n)`` on its left edge, ``a(n+1)`` on
its right edge and potential ``b(n)``; site 0 is the boundary (the attachment
vertex for a branch). Solutions satisfy

    a(n) g(n-1) + b(n) g(n) + a(n+1) g(n+1) = E g(n),   n >= 1.

Growing solutions are stored as mantissas times ``exp(log_scale)`` with the
scale refreshed every :data:`RENORM_EVERY` sites.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .graph import BranchCoefficients

__all__ = [
    "HalfLineSolution",
    "MFunctionError",
    "RENORM_EVERY",
    "transfer",
    "transfer_product",
    "solve",
    "fundamental_pair",
    "wronskian",
    "jl_norm",
    "log_jl_norm",
    "subordinacy_ratio",
    "subordinacy_trend",
    "jl_gram",
    "subordinate_direction",
    "jl_length",
    "m_function",
    "apply_halfline",
]

RENORM_EVERY = 64
DEFAULT_MAX_DEPTH = 2 ** 20


class MFunctionError(ArithmeticError):
    """Continued fraction did not settle within the depth cap."""


@dataclass(frozen=True, eq=False)
class HalfLineSolution:
    coeffs: BranchCoefficients
    energy: float
    initial: tuple[float, float]
    mantissa: np.ndarray
    log_scale: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.mantissa) - 1

    @property
    def values(self) -> np.ndarray:
        """``g(0), ..., g(horizon)``; may overflow to inf for growing solutions."""
        with np.errstate(over="ignore"):
            return self.mantissa * np.exp(self.log_scale)

    def log_abs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.mantissa)) + self.log_scale


def transfer(coeffs: BranchCoefficients, E: float, n: int) -> np.ndarray:
    """Matrix taking ``(g(n-1), g(n))`` to ``(g(n), g(n+1))``."""
    a0, a1, b = float(coeffs.a_at(n)), float(coeffs.a_at(n + 1)), float(coeffs.b_at(n))
    return np.array([[0.0, 1.0], [-a0 / a1, (E - b) / a1]])


def transfer_product(coeffs: BranchCoefficients, E: float, n: int) -> np.ndarray:
    """``T(n) ... T(1)``, mapping ``(g(0), g(1))`` to ``(g(n), g(n+1))``."""
    out = np.eye(2)
    for k in range(1, n + 1):
        out = transfer(coeffs, E, k) @ out
    return out


def _propagate(coeffs: BranchCoefficients, E: float, init: np.ndarray, horizon: int):
    """Run the recursion for the columns of ``init`` (shape (2, k))."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    a, b = coeffs.window(1, horizon + 1)
    cols = init.shape[1]
    out = np.empty((horizon + 1, cols))
    scale = np.empty(horizon + 1)
    out[0], out[1] = init[0], init[1]
    s = 0.0
    scale[0] = scale[1] = 0.0
    prev = [float(x) for x in init[0]]
    cur = [float(x) for x in init[1]]
    for n in range(1, horizon):
        an, an1, dn = a[n - 1], a[n], E - b[n - 1]
        nxt = [(dn * cur[j] - an * prev[j]) / an1 for j in range(cols)]
        if n % RENORM_EVERY == 0:
            big = max(max(abs(x) for x in nxt), max(abs(x) for x in cur))
            if big > 0 and (big > 1e100 or big < 1e-100):
                ls = math.log(big)
                s += ls
                inv = 1.0 / big
                nxt = [x * inv for x in nxt]
                cur = [x * inv for x in cur]
                out[n] = cur  # rewrite g(n) on the new scale
                scale[n] = s
        out[n + 1] = nxt
        scale[n + 1] = s
        prev, cur = cur, nxt
    return out, scale


def solve(coeffs: BranchCoefficients, E: float, theta: float | None = None, horizon: int = 100,
          initial: tuple[float, float] | None = None) -> HalfLineSolution:
    """Solution with ``(g(0), g(1)) = (-sin theta, cos theta)`` or given ``initial``."""
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    if initial is None:
        if theta is None:
            raise ValueError("give either theta or initial")
        initial = (-math.sin(theta), math.cos(theta))
    init = np.array([[initial[0]], [initial[1]]], dtype=float)
    vals, scale = _propagate(coeffs, float(E), init, horizon)
    return HalfLineSolution(coeffs, float(E), (float(initial[0]), float(initial[1])), vals[:, 0], scale)


def fundamental_pair(coeffs: BranchCoefficients, E: float, horizon: int):
    """Solutions for ``theta = 0`` and ``theta = pi/2`` on a shared scale."""
    init = np.array([[0.0, -1.0], [1.0, 0.0]])
    return _propagate(coeffs, float(E), init, horizon)


def wronskian(coeffs: BranchCoefficients, E: float, horizon: int) -> np.ndarray:
    """``a(n+1) (u1(n) u2(n+1) - u1(n+1) u2(n))`` for ``n = 0 .. horizon-1``."""
    vals, scale = fundamental_pair(coeffs, E, horizon)
    a, _ = coeffs.window(1, horizon + 1)
    u1, u2 = vals[:, 0], vals[:, 1]
    w = u1[:-1] * u2[1:] - u1[1:] * u2[:-1]
    return a * w * np.exp(scale[:-1] + scale[1:])


def _check_L(sol: HalfLineSolution, L: float) -> tuple[int, float]:
    if L < 1:
        raise ValueError("L must be >= 1")
    fl = int(math.floor(L))
    if sol.horizon < fl + 1:
        raise ValueError(f"horizon {sol.horizon} too short for L={L}; need {fl + 1}")
    return fl, L - fl


def log_jl_norm(sol: HalfLineSolution, L: float) -> float:
    fl, frac = _check_L(sol, L)
    la = sol.log_abs()[1:fl + 2]
    w = np.ones(fl + 1)
    w[-1] = frac
    keep = np.isfinite(la) & (w > 0)
    if not np.any(keep):
        return -math.inf
    return 0.5 * float(logsumexp(2 * la[keep], b=w[keep]))


def jl_norm(sol: HalfLineSolution, L: float) -> float:
    """``(sum_{k<=floor L} |g(k)|^2 + (L - floor L) |g(floor L + 1)|^2)^(1/2)``."""
    return math.exp(log_jl_norm(sol, L))


def subordinacy_ratio(coeffs: BranchCoefficients, E: float, theta: float, eta: float, L: float) -> float:
    """``||g_theta||_L / ||g_eta||_L``."""
    if math.isclose(theta % math.pi, eta % math.pi, rel_tol=0, abs_tol=1e-15):
        raise ValueError("equal angles: the ratio compares two different solutions")
    horizon = max(2, int(math.floor(L)) + 1)
    ln = log_jl_norm(solve(coeffs, E, theta, horizon), L)
    ld = log_jl_norm(solve(coeffs, E, eta, horizon), L)
    if ln < math.log(1e-300) and ld < math.log(1e-300):
        raise ArithmeticError("both solutions vanish numerically; ratio undefined")
    return math.exp(ln - ld)


def subordinacy_trend(coeffs: BranchCoefficients, E: float, theta: float, eta: float, L: float,
                      threshold: float = 1e-6, doublings: int = 3) -> tuple[bool, np.ndarray]:
    """Threshold-plus-trend check of subordinacy at scale ``L``.

    Returns the flag and the ratios at ``L / 2**doublings, ..., L/2, L``. The
    flag is set when the last ratio is below ``threshold`` and the ratios
    strictly decrease across each of the ``doublings`` steps.
    """
    scales = [L / 2 ** j for j in range(doublings, -1, -1)]
    ratios = np.array([subordinacy_ratio(coeffs, E, theta, eta, max(1.0, s)) for s in scales])
    ok = bool(ratios[-1] < threshold and np.all(np.diff(ratios) < 0))
    return ok, ratios


# -- block-accelerated Gram matrices ------------------------------------------

class _Seg:
    """Transfer matrix ``T`` and Gram form ``G`` of a run of sites.

    For input state ``x = (g(s-1), g(s))`` the run maps ``x -> T x`` and
    ``sum of g(n)^2 over the run = x^T G x``. Both carry log scales.
    """

    __slots__ = ("T", "tlog", "G", "glog")

    def __init__(self, T, tlog, G, glog):
        self.T, self.tlog, self.G, self.glog = T, tlog, G, glog

    @classmethod
    def identity(cls):
        return cls(np.eye(2), 0.0, np.zeros((2, 2)), -math.inf)

    @classmethod
    def site(cls, a0, a1, b, E):
        T = np.array([[0.0, 1.0], [-a0 / a1, (E - b) / a1]])
        return cls(T, 0.0, np.array([[0.0, 0.0], [0.0, 1.0]]), 0.0)

    def then(self, other: "_Seg") -> "_Seg":
        T = other.T @ self.T
        big = np.max(np.abs(T))
        tlog = self.tlog + other.tlog
        if big > 0:
            T = T / big
            tlog += math.log(big)
        Gb = self.T.T @ other.G @ self.T
        glog_b = other.glog + 2 * self.tlog
        G, glog = _add_scaled(self.G, self.glog, Gb, glog_b)
        return _Seg(T, tlog, G, glog)


def _add_scaled(A, la, B, lb):
    if la == -math.inf:
        A, la = np.zeros((2, 2)), lb
    top = max(la, lb)
    if top == -math.inf:
        return np.zeros((2, 2)), -math.inf
    S = A * math.exp(la - top) + B * math.exp(lb - top)
    big = np.max(np.abs(S))
    if big > 0:
        return S / big, top + math.log(big)
    return S, -math.inf


def _seg_power(seg: _Seg, r: int) -> _Seg:
    out = _Seg.identity()
    base = seg
    while r:
        if r & 1:
            out = out.then(base)
        r >>= 1
        if r:
            base = base.then(base)
    return out


def _run_segment(coeffs: BranchCoefficients, E: float, start: int, stop: int) -> _Seg:
    """Composite segment for sites ``start <= n < stop``."""
    seg = _Seg.identity()
    if stop <= start:
        return seg
    blocks = coeffs.blocks(start, stop) if coeffs.blocks is not None else [(start, stop - start, 1)]
    for s, p, r in blocks:
        a, b = coeffs.window(s, s + p + 1)
        pattern = _Seg.identity()
        for j in range(p):
            pattern = pattern.then(_Seg.site(a[j], a[j + 1], b[j], E))
        seg = seg.then(_seg_power(pattern, r) if r > 1 else pattern)
    return seg


_X0 = np.array([[0.0, -1.0], [1.0, 0.0]])  # columns: initial data of theta=0, pi/2


def _log_gram(coeffs: BranchCoefficients, E: float, L: float) -> tuple[np.ndarray, float]:
    fl = int(math.floor(L))
    frac = L - fl
    seg = _run_segment(coeffs, float(E), 1, fl + 1)
    G = _X0.T @ seg.G @ _X0
    glog = seg.glog
    if frac > 0:
        last = (seg.T @ _X0)[1]
        G, glog = _add_scaled(G, glog, frac * np.outer(last, last), 2 * seg.tlog)
    return G, glog


def jl_gram(coeffs: BranchCoefficients, E: float, L: float) -> np.ndarray:
    """Gram matrix of the ``theta = 0, pi/2`` solutions in the ``||.||_L`` product."""
    if L < 1:
        raise ValueError("L must be >= 1")
    G, glog = _log_gram(coeffs, E, L)
    with np.errstate(over="ignore"):
        return G * math.exp(glog) if glog != -math.inf else G


def subordinate_direction(coeffs: BranchCoefficients, E: float, L: float) -> tuple[float, float]:
    """Angle minimising ``||g_theta||_L`` and the Gram eigenvalue ratio.

    ``g_theta = cos(theta) u1 + sin(theta) u2``, so the minimiser is the
    lowest eigenvector of the Gram matrix. A ratio near 0 means one direction
    is strongly subordinate at this scale; a degenerate Gram matrix reports
    ``theta = 0``.
    """
    if L < 2:
        raise ValueError("L must be >= 2")
    G, _ = _log_gram(coeffs, E, L)
    G = 0.5 * (G + G.T)
    w, V = np.linalg.eigh(G)
    if w[1] <= 0 or (w[1] - w[0]) <= 1e-12 * w[1]:
        return 0.0, 1.0
    c = V[:, 0]
    theta = math.atan2(c[1], c[0]) % math.pi
    if theta >= math.pi - 1e-15:
        theta = 0.0
    return theta, max(0.0, float(w[0] / w[1]))


def jl_length(coeffs: BranchCoefficients, E: float, eps: float, max_L: float = 2.0 ** 40) -> float:
    """Scale ``L`` with ``||u1||_L ||u2||_L = 1 / (2 eps)``.

    This is the length at which the subordinacy ratios reflect the boundary
    behaviour of the m-function at ``E + i eps``.
    """
    target = -math.log(2 * eps)

    def logprod(L):
        G, glog = _log_gram(coeffs, E, L)
        return 0.5 * (math.log(max(G[0, 0], 1e-300)) + math.log(max(G[1, 1], 1e-300))) + glog

    lo, hi = 1.0, 2.0
    while logprod(hi) < target:
        lo, hi = hi, hi * 2
        if hi > max_L:
            return max_L
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if logprod(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6 * hi:
            break
    return hi


# -- Weyl m-function ----------------------------------------------------------

def _normalise(M):
    big = np.max(np.abs(M), axis=(-2, -1), keepdims=True)
    big[big == 0] = 1.0
    return M / big


def _mobius_sites(a_next, b, z):
    """Stack of site maps ``w -> 1 / (b - z - a_next^2 w)``; shape (nz, p, 2, 2)."""
    nz, p = len(z), len(b)
    M = np.zeros((nz, p, 2, 2), dtype=complex)
    M[:, :, 0, 1] = 1.0
    M[:, :, 1, 0] = -(a_next ** 2)[None, :]
    M[:, :, 1, 1] = b[None, :] - z[:, None]
    return M


def _ordered_product(M):
    """Ordered product ``M[:, 0] @ M[:, 1] @ ...`` by pairwise reduction."""
    while M.shape[1] > 1:
        if M.shape[1] % 2:
            eye = np.broadcast_to(np.eye(2, dtype=complex), (M.shape[0], 1, 2, 2))
            M = np.concatenate([M, eye], axis=1)
        M = _normalise(M[:, 0::2] @ M[:, 1::2])
    return M[:, 0]


def _mat_power(Q, r):
    out = np.broadcast_to(np.eye(2, dtype=complex), Q.shape).copy()
    base = Q
    while r:
        if r & 1:
            out = _normalise(out @ base)
        r >>= 1
        if r:
            base = _normalise(base @ base)
    return out


_CHUNK_ELEMENTS = 1 << 20


def _mobius_range(coeffs: BranchCoefficients, z: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Normalised product of site maps for ``start <= n < stop``; shape (nz, 2, 2)."""
    nz = len(z)
    out = np.broadcast_to(np.eye(2, dtype=complex), (nz, 2, 2)).copy()
    chunk = max(1, _CHUNK_ELEMENTS // max(1, nz))
    if coeffs.blocks is not None:
        blocks = list(coeffs.blocks(start, stop))
    else:
        blocks = [(s, min(chunk, stop - s), 1) for s in range(start, stop, chunk)]
    for s, p, r in blocks:
        pattern = np.broadcast_to(np.eye(2, dtype=complex), (nz, 2, 2)).copy()
        for c0 in range(0, p, chunk):
            c1 = min(p, c0 + chunk)
            a, b = coeffs.window(s + c0, s + c1 + 1)
            pattern = _normalise(pattern @ _ordered_product(_mobius_sites(a[1:], b[:-1], z)))
        out = _normalise(out @ (_mat_power(pattern, r) if r > 1 else pattern))
    return out


def m_function(coeffs: BranchCoefficients, z, tol: float = 1e-10,
               max_depth: int = DEFAULT_MAX_DEPTH, start_depth: int = 32):
    """``<delta_1, (J0 - z)^-1 delta_1>`` for the half-line with these coefficients.

    Downward continued fraction ``m_n = 1 / (b(n) - z - a(n+1)^2 m_{n+1})``
    with the tail seeded at 0; the depth doubles until successive values
    agree to ``tol * max(1, |m|)``. Accepts a scalar or an array of ``z``.
    """
    z_arr = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z_arr.imag <= 0):
        raise ValueError("m_function needs Im z > 0")
    flat = z_arr.ravel()
    result = np.empty_like(flat)
    active = np.arange(len(flat))
    prod = _mobius_range(coeffs, flat, 1, start_depth + 1)
    depth = start_depth
    prev = prod[:, 0, 1] / prod[:, 1, 1]
    while True:
        nxt_depth = 2 * depth
        ext = _mobius_range(coeffs, flat[active], depth + 1, nxt_depth + 1)
        prod = _normalise(prod @ ext)
        cur = prod[:, 0, 1] / prod[:, 1, 1]
        diff = np.abs(cur - prev)
        done = diff < tol * np.maximum(1.0, np.abs(cur))
        result[active[done]] = cur[done]
        keep = ~done
        active, prod, prev = active[keep], prod[keep], cur[keep]
        depth = nxt_depth
        if len(active) == 0:
            break
        if depth >= max_depth:
            worst = int(np.argmax(diff[keep]))
            raise MFunctionError(
                f"m-function not converged at depth {depth} for z={flat[active[worst]]!r}: "
                f"successive difference {diff[keep][worst]:.3e} > tol {tol:.1e} "
                f"({len(active)} of {len(flat)} points unsettled)")
    result = result.reshape(z_arr.shape)
    return complex(result[0]) if np.ndim(z) == 0 else result


def apply_halfline(coeffs: BranchCoefficients, vec) -> np.ndarray:
    """Half-line operator with a Dirichlet boundary at site 0.

    ``vec[k]`` is the value at site ``k + 1``; the result is one entry longer.
    """
    vec = np.asarray(vec)
    n = len(vec) + 1
    a, b = coeffs.window(1, n + 2)
    x = np.concatenate([vec, [0.0]]).astype(np.result_type(vec, float))
    out = b[:n] * x
    out[1:] += a[1:n] * x[:-1]       # a(k) psi(k-1) at site k >= 2
    out[:-1] += a[1:n] * x[1:]       # a(k+1) psi(k+1) at site k
    return out
