from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridaladin.errors import InfeasibleQpError, PreconditionError, RankDeficientError
from gridaladin.experiments import random_instance
from gridaladin.model import HouseholdParams, build_grid_problem
from gridaladin.qpkernel import (
    ActiveSetSolver,
    DenseQp,
    enumerate_centralized,
    full_qp_data,
    solve_active_set,
    solve_centralized,
    solve_equality_kkt,
)


def brute_force_qp(Q, q, D, d, tol=1e-9):
    """Every row subset solved as an equality QP; keep the KKT point."""
    n, m = Q.shape[0], D.shape[0]
    for size in range(0, n + 1):
        for W in combinations(range(m), size):
            DW = D[list(W)]
            if size and np.linalg.matrix_rank(DW) < size:
                continue
            K = np.block([[Q, DW.T], [DW, np.zeros((size, size))]])
            sol = np.linalg.solve(K, np.concatenate([-q, d[list(W)]]))
            v, kap = sol[:n], sol[n:]
            if np.all(D @ v <= d + tol) and np.all(kap >= -tol):
                return v
    raise AssertionError("no KKT point found")


def random_qp(seed, n, m):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.5 * np.eye(n)
    D = rng.normal(size=(m, n))
    d = rng.uniform(0.1, 1.0, m)  # origin strictly feasible
    return Q, rng.normal(size=n) * 2, D, d


class TestActiveSet:
    def test_interior(self):
        sol = solve_active_set(DenseQp([[1.0]], [0.0], [[1.0]], [1.0]))
        assert sol.v[0] == 0.0 and sol.kappa[0] == 0.0 and sol.active == ()

    def test_bound_active(self):
        sol = solve_active_set(DenseQp([[1.0]], [-1.0], [[1.0]], [0.5]))
        assert sol.v[0] == pytest.approx(0.5)
        assert sol.kappa[0] == pytest.approx(0.5)
        assert sol.active == (0,)

    def test_origin_optimal_box(self):
        D = np.vstack([np.eye(2), -np.eye(2)])
        sol = solve_active_set(DenseQp([[2, 0.95], [0.95, 1.9025]], [0, 0], D, np.full(4, 0.5)))
        np.testing.assert_allclose(sol.v, 0.0)
        np.testing.assert_allclose(sol.kappa, 0.0)

    def test_infeasible(self):
        D = np.array([[1.0], [-1.0]])
        with pytest.raises(InfeasibleQpError):
            solve_active_set(DenseQp([[1.0]], [0.0], D, [-1.0, -1.0]))

    def test_non_finite_data(self):
        with pytest.raises(PreconditionError):
            solve_active_set(DenseQp([[1.0]], [np.nan], [[1.0]], [1.0]))

    def test_infeasible_origin_phase1(self):
        # feasible region [1, 2] excludes the origin
        D = np.array([[1.0], [-1.0]])
        sol = solve_active_set(DenseQp([[1.0]], [0.0], D, [2.0, -1.0]))
        assert sol.v[0] == pytest.approx(1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 8))
    def test_matches_enumeration(self, seed, n, m):
        Q, q, D, d = random_qp(seed, n, m)
        sol = solve_active_set(DenseQp(Q, q, D, d))
        np.testing.assert_allclose(sol.v, brute_force_qp(Q, q, D, d), atol=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 12))
    def test_kkt_conditions(self, seed, n, m):
        Q, q, D, d = random_qp(seed, n, m)
        sol = solve_active_set(DenseQp(Q, q, D, d))
        assert np.max(np.abs(Q @ sol.v + q + D.T @ sol.kappa)) <= 1e-10 * (1 + np.abs(q).max())
        assert np.all(D @ sol.v <= d + 1e-10)
        assert np.all(sol.kappa >= -1e-12)
        assert np.max(np.abs(sol.kappa * (D @ sol.v - d))) <= 1e-10
        inactive = np.setdiff1d(np.arange(m), sol.active)
        assert np.all(sol.kappa[inactive] == 0.0)

    def test_warm_start_same_answer(self):
        Q, q, D, d = random_qp(7, 4, 8)
        solver = ActiveSetSolver(Q, D)
        cold = solver.solve(q, d)
        warm = solver.solve(q, d, x0=cold.v, working=cold.working)
        np.testing.assert_allclose(warm.v, cold.v, atol=1e-12)
        assert warm.iterations <= cold.iterations

    def test_deterministic(self):
        Q, q, D, d = random_qp(11, 4, 8)
        a = solve_active_set(DenseQp(Q, q, D, d))
        b = solve_active_set(DenseQp(Q, q, D, d))
        assert np.array_equal(a.v, b.v) and a.active == b.active


class TestEqualityKkt:
    def test_hand_example(self):
        x, lam = solve_equality_kkt(np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]), np.array([2.0]))
        np.testing.assert_allclose(x, [1, 1])
        np.testing.assert_allclose(lam, [-1])

    def test_unconstrained(self):
        H = np.array([[2.0, 0.5], [0.5, 1.0]])
        g = np.array([1.0, -1.0])
        x, lam = solve_equality_kkt(H, g, np.zeros((0, 2)), np.zeros(0))
        np.testing.assert_allclose(x, -np.linalg.solve(H, g))
        assert lam.size == 0

    def test_rank_deficient(self):
        A = np.array([[1.0, 1.0], [2.0, 2.0]])
        with pytest.raises(RankDeficientError):
            solve_equality_kkt(np.eye(2), np.zeros(2), A, np.ones(2))

    @settings(max_examples=40)
    @given(st.integers(0, 2**31), st.integers(2, 16))
    def test_residuals(self, seed, n):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(n, n))
        H = M @ M.T + np.eye(n)
        p = int(rng.integers(1, n))
        A = rng.normal(size=(p, n))
        g, b = rng.normal(size=n), rng.normal(size=p)
        x, lam = solve_equality_kkt(H, g, A, b)
        scale = 1 + np.abs(g).max() + np.abs(b).max()
        assert np.max(np.abs(H @ x + g + A.T @ lam)) <= 1e-10 * scale
        assert np.max(np.abs(A @ x - b)) <= 1e-10 * scale

    @settings(max_examples=30)
    @given(st.integers(0, 2**31), st.integers(2, 96))
    def test_cholesky_solve_accuracy(self, seed, n):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(n, n))
        H = M @ M.T / n + np.eye(n)
        x = rng.normal(size=n)
        y, _ = solve_equality_kkt(H, -x, np.zeros((0, n)), np.zeros(0))
        assert np.max(np.abs(H @ y - x)) <= 1e-10 * np.abs(x).max()


def kkt_residual(grid, sol):
    """Stationarity, coupling, feasibility and complementarity of the coupled QP."""
    r = 0.0
    zres = 2 * grid.f0_weight * (sol.z_bar - grid.zeta) + sol.lam
    r = max(r, np.abs(zres).max(), np.abs(grid.coupling_residual(sol.z_bar, sol.u)).max())
    for loc, u, k in zip(grid.locals, sol.u, sol.kappa):
        r = max(r, np.abs(loc.Q @ u + loc.D.T @ k - loc.A.T @ sol.lam).max())
        r = max(r, max(0.0, (loc.D @ u - loc.d).max()), max(0.0, -k.min()))
        r = max(r, np.abs(k * (loc.D @ u - loc.d)).max())
    return r


class TestCentralized:
    def test_zero_instance(self):
        g = build_grid_problem([HouseholdParams()], [1.0], np.zeros((1, 3)), np.zeros(3), 0.5, 1.0)
        sol = solve_centralized(g)
        np.testing.assert_allclose(sol.u[0], 0.0, atol=1e-12)
        np.testing.assert_allclose(sol.z_bar, 0.0, atol=1e-12)
        np.testing.assert_allclose(sol.lam, 0.0, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from([(2, 2), (2, 4), (5, 2), (5, 4), (8, 6)]))
    def test_kkt_point(self, seed, size):
        grid = random_instance(seed, *size)
        sol = solve_centralized(grid)
        assert kkt_residual(grid, sol) <= 1e-10 * (1 + np.abs(sol.lam).max())

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_full_qp(self, seed):
        grid = random_instance(seed, 2, 4)
        sol = solve_centralized(grid)
        H, q, D, d = full_qp_data(grid)
        full = solve_active_set(DenseQp(H, q, D, d))
        np.testing.assert_allclose(np.concatenate(sol.u), full.v, atol=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_enumeration(self, seed):
        grid = random_instance(20_000 + seed, 2, 2)
        sol = solve_centralized(grid)
        enum = enumerate_centralized(grid)
        assert enum.valid >= 1 and enum.spread <= 1e-9
        np.testing.assert_allclose(enum.lam, sol.lam, atol=1e-9)
        for a, b in zip(enum.u, sol.u):
            np.testing.assert_allclose(a, b, atol=1e-9)

    def test_enumeration_needs_two_agents(self):
        with pytest.raises(ValueError):
            enumerate_centralized(random_instance(0, 5, 2))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10**6))
    def test_permutation_symmetry(self, seed):
        grid = random_instance(seed, 5, 2)
        order = np.random.default_rng(seed).permutation(grid.I)
        a = solve_centralized(grid)
        b = solve_centralized(grid.permuted(order))
        np.testing.assert_allclose(b.lam, a.lam, atol=1e-9)
        np.testing.assert_allclose(b.z_bar, a.z_bar, atol=1e-9)
        for j, i in enumerate(order):
            np.testing.assert_allclose(b.u[j], a.u[i], atol=1e-9)

    def test_reports_complementarity(self):
        grid = random_instance(0, 2, 2)
        sol = solve_centralized(grid)
        assert isinstance(sol.strictly_complementary, bool)
        assert sol.min_active_kappa >= 0.0
