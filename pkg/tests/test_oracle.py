import math

import numpy as np
import pytest

from _gen import random_graph
from starlike import GraphError, beta_coefficient, compact, make_potential, on_branch, star_graph
from starlike import oracle


def test_dirichlet_line_chebyshev():
    n = 12
    w = np.linalg.eigvalsh(oracle.dirichlet_line(np.ones(n), np.zeros(n)))
    assert np.allclose(w, np.sort(2 * np.cos(np.arange(1, n + 1) * math.pi / (n + 1))), atol=1e-13)
    assert oracle.dirichlet_line([], [4.0]).tolist() == [[4.0]]


def test_dense_resolvent_small_cases():
    D = np.diag([1.0, -2.0, 3.0])
    z = 0.5 + 1j
    assert oracle.dense_resolvent(D, z, 1, 1) == pytest.approx(1 / (-2 - z))
    assert oracle.dense_resolvent(D, z, 0, 2) == 0
    S = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert oracle.dense_resolvent(S, z, 0, 1) == pytest.approx(0.5 * (1 / (1 - z) - 1 / (-1 - z)))
    with pytest.raises(ValueError):
        oracle.dense_resolvent(S, 1.0, 0, 0)


def test_solve_matches_eigen_expansion():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 30))
        X = rng.standard_normal((n, n))
        A = X + X.T
        z = complex(rng.uniform(-5, 5), rng.uniform(0.05, 2))
        u, v = rng.integers(0, n, size=2)
        a = oracle.dense_resolvent(A, z, u, v)
        b = oracle.eigen_resolvent(oracle.dense_eig(A), z, u, v)
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    assert worst < 1e-10


def test_atomic_measures():
    S = np.array([[0.0, 1.0], [1.0, 0.0]])
    atoms = dict(oracle.atomic_measures(S, 0, 1))
    assert atoms[-1.0] == pytest.approx(-0.5) and atoms[1.0] == pytest.approx(0.5)
    rng = np.random.default_rng(6)
    X = rng.standard_normal((8, 8))
    A = X + X.T
    assert sum(w for _, w in oracle.atomic_measures(A, 3, 3)) == pytest.approx(1.0)
    assert abs(sum(w for _, w in oracle.atomic_measures(A, 2, 5))) < 1e-12


def test_residue_ratio_degenerate():
    A = np.diag([1.0, 1.0, 2.0])
    E, R = oracle.residue_ratio(A, 0)
    assert E == 1.0
    assert np.allclose(R, np.diag([0.5, 0.5, 0.0]))


def test_dense_cap():
    with pytest.raises(MemoryError):
        oracle.dense_eig(np.zeros((oracle.DENSE_CAP + 1, 1)).reshape(-1, 1) @ np.zeros((1, oracle.DENSE_CAP + 1)))


def test_truncation_symmetric_and_labelled():
    rng = np.random.default_rng(7)
    for _ in range(10):
        g = random_graph(rng)
        A, labels = oracle.dense_truncation(g, 4)
        assert np.array_equal(A, A.T)
        assert len(labels) == g.size + 4 * g.m
        assert labels[: g.size] == g.compact_vertices()


def test_brute_paths_agree_with_beta():
    rng = np.random.default_rng(8)
    for _ in range(30):
        g = random_graph(rng, max_size=6)
        v = compact(int(rng.integers(g.size)))
        w = on_branch(int(rng.integers(1, g.m + 1)), int(rng.integers(1, 4)))
        n = g.distance(v, w)
        assert oracle.brute_paths(g, v, w, n) == pytest.approx(beta_coefficient(g, v, w, n), rel=1e-12)


def test_brute_paths_rejects_off_sphere():
    g = star_graph([make_potential("free")] * 2)
    with pytest.raises(GraphError):
        oracle.brute_paths(g, compact(0), on_branch(1, 3), 2)


def test_vanishing_moments_determine_branch():
    # a finitely supported vector whose moments vanish at v0 must itself vanish off K
    g = star_graph([make_potential("periodic", {"values": [0.3, -0.1]})])
    assert np.allclose(oracle.dense_reconstruct(g, [0.0, 0.0], 1, 6), 0.0)
