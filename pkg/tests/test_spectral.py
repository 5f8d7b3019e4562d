import math

import numpy as np
import pytest

from _gen import random_compact, random_graph, random_rule
from starlike import (EpsSchedule, borel_uv, build_star_like, compact, generalized_eigenfunction,
                      make_potential, multiplicity_profile, on_branch, p_matrix, poltoratskii_ratio,
                      reconstruct_branch, resolvent_K, star_graph, stieltjes_density,
                      subordinate_space_dim)
from starlike import oracle
from starlike.spectral import NonSingularError, branch_scalars, rank_histogram, resolvent_batch
from starlike.sharpness import build_sharpness_model

FREE = make_potential("free")
GOLD = (math.sqrt(5) - 1) / 2
SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def test_schur_examples():
    # single-vertex K with three branches, written with K = {o, phi_i(0)} (distinct attachments)
    g = star_graph([FREE] * 3)
    expected = 1 / (-1j - 3j * GOLD)
    assert resolvent_K(g, 1j).entries[0, 0] == pytest.approx(expected, abs=1e-12)
    assert abs(expected - 0.350373j) < 1e-6
    g1 = star_graph([FREE])
    assert resolvent_K(g1, 1j).entries[0, 0] == pytest.approx(1j * GOLD, abs=1e-12)


def test_resolvent_invariants():
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = random_graph(rng)
        z = complex(rng.uniform(-3, 3), 5 * g.operator_bound)
        R = resolvent_K(g, z)
        assert np.allclose(R.entries, R.entries.T, atol=1e-14)
        assert np.linalg.norm(R.entries, 2) <= 1 / z.imag * (1 + 1e-12)
        z2 = complex(rng.uniform(-3, 3), rng.uniform(0.05, 1))
        assert resolvent_K(g, z2).trace.imag > 0
        u, v = compact(0), compact(g.size - 1)
        assert borel_uv(g, z2, u, u).imag > 0
        assert borel_uv(g, z2, u, v) == resolvent_K(g, z2).entries[0, g.size - 1]


def test_schur_matches_truncation_localised():
    rng = np.random.default_rng(12)
    for _ in range(10):
        g = random_graph(rng, kinds=("iid_uniform",))
        z = complex(rng.uniform(-2, 2), 0.1)
        D = oracle.truncated_resolvent_K(g, z, 50 + math.ceil(8 / 0.1))
        assert np.max(np.abs(resolvent_K(g, z).entries - D)) < 1e-6


def test_borel_off_K_rejected():
    g = star_graph([FREE])
    with pytest.raises(ValueError):
        borel_uv(g, 1j, compact(0), on_branch(1, 2))


def test_borel_finite_matrix_and_mass_bound():
    z = 0.3 + 0.2j
    assert borel_uv(SWAP, z, 0, 1) == pytest.approx(0.5 * (1 / (1 - z) - 1 / (-1 - z)))
    g = star_graph([make_potential("periodic", {"values": [0.5, -0.5]})] * 2)
    for eps in EpsSchedule().eps:
        assert eps * abs(borel_uv(g, 0.4 + 1j * eps, compact(1), compact(2))) <= 1


def test_poltoratskii_examples():
    r = poltoratskii_ratio(SWAP, 1.0, EpsSchedule.ending_at(1e-7), 0, 1)
    assert r.value == pytest.approx(0.5, abs=1e-6) and r.singular and r.converged
    g = star_graph([FREE] * 2)
    far = poltoratskii_ratio(g, 10 * g.operator_bound, EpsSchedule(), compact(0), compact(0))
    assert not far.singular


def test_p_matrix_examples():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((6, 6))
    A = X + X.T
    w = np.linalg.eigvalsh(A)
    s = p_matrix(A, w[2])
    assert s.singular and s.rank == 1
    assert np.allclose(s.p_matrix, s.p_matrix.T)
    g = star_graph([FREE] * 2)
    out = p_matrix(g, 10 * g.operator_bound)
    assert not out.singular and out.rank == 0
    assert multiplicity_profile(g, []) == []


def test_sharpness_m2_at_atom_has_rank_one():
    # the half-line with a single barrier has one eigenvalue above the band; in the m=2 star
    # it is shared by the antisymmetric sector
    rule = make_potential("sparse_power", {"h": 3.0, "gamma": 0.0, "L0": 2})
    model = build_sharpness_model(2, rule)
    trunc = oracle.dirichlet_line(np.ones(400), rule.b(np.arange(1, 401)))
    E = float(np.max(np.linalg.eigvalsh(trunc)))
    s = p_matrix(model.graph, E)
    assert s.singular and s.rank == 1
    gef = generalized_eigenfunction(model.graph, E, compact(1), sample=s, horizon=20)
    assert abs(gef.values[compact(0)]) < 1e-6 * abs(gef.values[compact(1)])
    assert gef.values[compact(2)] == pytest.approx(-gef.values[compact(1)], rel=1e-6)
    assert gef.max_residual < 1e-6
    lam, res, flags = branch_scalars(model.graph, gef, E, 20)
    assert lam[0] == pytest.approx(-lam[1], rel=1e-6)
    lam2, _, _ = branch_scalars(model.graph, {k: 3 * x for k, x in gef.values.items()}, E, 20)
    assert np.allclose(lam2, 3 * np.array(lam), rtol=1e-12)


def test_gef_on_finite_matrix_is_eigenvector():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((5, 5))
    A = X + X.T
    w, V = np.linalg.eigh(A)
    gef = generalized_eigenfunction(A, w[1], 0)
    vec = np.array([gef.values[k] for k in range(5)])
    assert abs(abs(vec @ V[:, 1]) - np.linalg.norm(vec)) < 1e-8 * np.linalg.norm(vec)
    with pytest.raises(NonSingularError):
        generalized_eigenfunction(A, w[1] + 0.3, 0)


def test_branch_scalars_zero_branch():
    g = star_graph([FREE] * 2)
    values = {compact(0): 1.0, compact(1): 0.5, on_branch(1, 1): 0.2, on_branch(1, 2): 0.1}
    lam, _, _ = branch_scalars(g, values, 3.0, 8)
    assert lam[1] == 0.0


def test_subordinate_space_dim_examples():
    g = star_graph([FREE] * 3)
    assert subordinate_space_dim(g, 3.0, 40) == 0
    # sharpness model with a barrier: the half-line eigenvalue gives m-1 sector solutions
    rule = make_potential("sparse_power", {"h": 3.0, "gamma": 0.0, "L0": 2})
    model = build_sharpness_model(3, rule)
    trunc = oracle.dirichlet_line(np.ones(400), rule.b(np.arange(1, 401)))
    E = float(np.max(np.linalg.eigvalsh(trunc)))
    assert subordinate_space_dim(model.graph, E, 200, 1e-6) >= 2
    with pytest.raises(ValueError):
        subordinate_space_dim(g, 0.0, 1.5)


def test_finite_support_eigenvector_counts():
    # a 4-cycle attached at one corner: the antisymmetric vector on the two side corners
    # is an eigenvector of J with eigenvalue 0, supported in K
    comp_edges = ((0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0))
    from starlike import CompactComponent
    g = build_star_like(CompactComponent(4, comp_edges, (0.0,) * 4, (0,)), [make_potential("periodic", {"values": [2.5]})])
    assert subordinate_space_dim(g, 0.0, 50) >= 1
    w = np.linalg.eigvalsh(oracle.dense_truncation(g, 60)[0])
    assert np.min(np.abs(w)) < 1e-12


def test_reconstruction_examples():
    line = build_star_like(random_compact(np.random.default_rng(0), 1, 1), [FREE])
    assert np.all(reconstruct_branch(line, [0.0], 1, 6) == 0)
    from starlike import CompactComponent
    tri = build_star_like(CompactComponent(3, ((0, 1, 1.0), (1, 2, 2.0), (0, 2, 0.5)), (0.1, 0.0, -0.3), (2,)),
                          [FREE])
    psi = np.array([0.0, 1.0, -0.4])
    got = reconstruct_branch(tri, psi, 1, 6, v0=0)
    assert np.allclose(got, oracle.dense_reconstruct(tri, psi, 1, 6, v0=0), rtol=1e-10)
    rng = np.random.default_rng(1)
    p1, p2 = rng.standard_normal(3), rng.standard_normal(3)
    lhs = reconstruct_branch(tri, 2.5 * p1 + p2, 1, 6)
    rhs = 2.5 * reconstruct_branch(tri, p1, 1, 6) + reconstruct_branch(tri, p2, 1, 6)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12 * np.max(np.abs(lhs)))
    with pytest.raises(ValueError):
        reconstruct_branch(tri, psi, 1, 0)


def test_stieltjes():
    g = star_graph([FREE])   # M_oo is the free m-function: semicircle density
    E = np.linspace(-1.9, 1.9, 39)
    d = stieltjes_density(g, E, 1e-6)
    # K = {o, phi_1(0)} both see the same a.c. density shape; trace = 2 copies up to the
    # two-site structure, compare the o-entry alone
    Roo = resolvent_batch(g, E + 1e-6j)[:, 0, 0]
    assert np.allclose(Roo.imag / math.pi, np.sqrt(4 - E ** 2) / (2 * math.pi), atol=1e-5)
    assert np.all(d > 0)
    far = stieltjes_density(g, [20.0], 1e-3)[0]
    assert far <= 1e-3 / (20 - g.operator_bound) ** 2 * g.size


def test_threads_deterministic():
    model = build_sharpness_model(2, make_potential("sparse_power"))
    grid = np.linspace(-2, 2, 9)
    a = multiplicity_profile(model.graph, grid, threads=1)
    b = multiplicity_profile(model.graph, grid, threads=4)
    assert [s.row() for s in a] == [s.row() for s in b]
    assert isinstance(rank_histogram(a), dict)
