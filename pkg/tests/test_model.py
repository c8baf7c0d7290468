import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridaladin.errors import PreconditionError
from gridaladin.model import (
    HouseholdParams,
    advance_soc,
    build_Ai,
    build_grid_problem,
    build_Qi,
    build_Qi_inv,
    build_reference,
    condense_constraints,
    coupling_jacobian,
    eval_f0,
    eval_fi,
    soc_trajectory_matrix,
)

gammas = st.floats(1e-3, 1.0)
sigmas = st.floats(1e-2, 1e2)


class TestParams:
    def test_defaults(self):
        p = HouseholdParams()
        assert (p.alpha, p.beta, p.gamma, p.capacity, p.u_min, p.u_max, p.sigma) == (
            0.99, 0.95, 0.95, 2.0, -0.5, 0.5, 1.0)

    @pytest.mark.parametrize("kw", [
        {"alpha": 0.0}, {"beta": 1.2}, {"gamma": -0.1}, {"capacity": -1.0},
        {"u_min": 0.1}, {"u_max": -0.1}, {"sigma": 0.0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(PreconditionError):
            HouseholdParams(**kw)


class TestCondense:
    def test_soc_hi_row_first_step(self):
        p = HouseholdParams(alpha=0.99, beta=0.95, capacity=2.0)
        D, d = condense_constraints(p, 1.0, 2, 0.5)
        np.testing.assert_allclose(D[0, :2], [0.475, 0.5])
        np.testing.assert_allclose(D[0, 2:], 0.0)
        assert d[0] == pytest.approx(1.01)

    def test_mix_hi_row_first_step(self):
        D, d = condense_constraints(HouseholdParams(u_min=-0.5, u_max=0.5), 1.0, 2, 0.5)
        np.testing.assert_allclose(D[6, :2], [2.0, -2.0])
        assert d[6] == pytest.approx(1.0)

    def test_shape_and_row_kinds(self):
        N = 3
        D, d = condense_constraints(HouseholdParams(), 1.0, N, 0.5)
        assert D.shape == (8 * N, 2 * N) and d.shape == (8 * N,)
        # rate rows of step 1 act on (u+(1), u-(1)) only
        np.testing.assert_allclose(D[8 + 2], [0, 0, 1, 0, 0, 0])
        np.testing.assert_allclose(D[8 + 5], [0, 0, 0, -1, 0, 0])

    @given(st.floats(0.0, 1.0), st.integers(2, 6))
    def test_idle_feasible(self, frac, N):
        p = HouseholdParams()
        D, d = condense_constraints(p, frac * p.capacity, N, 0.5)
        assert np.all(d >= -1e-15)

    @pytest.mark.parametrize("x_hat", [-0.1, 2.1])
    def test_soc_outside_range(self, x_hat):
        with pytest.raises(PreconditionError):
            condense_constraints(HouseholdParams(), x_hat, 2, 0.5)

    def test_rows_match_simulation(self):
        rng = np.random.default_rng(3)
        p = HouseholdParams()
        N, T, x0 = 5, 0.5, 0.8
        S, s0 = soc_trajectory_matrix(p, x0, N, T)
        u = rng.uniform(-0.3, 0.3, 2 * N)
        x, traj = x0, []
        for n in range(N):
            x = advance_soc(p, x, u[2 * n : 2 * n + 2], T)
            traj.append(x)
        np.testing.assert_allclose(S @ u + s0, traj, rtol=1e-14)


class TestQA:
    def test_q_examples(self):
        np.testing.assert_allclose(build_Qi(HouseholdParams(gamma=0.95), 1), [[2, 0.95], [0.95, 1.9025]])
        np.testing.assert_allclose(build_Qi(HouseholdParams(gamma=1.0), 1), [[2, 1], [1, 2]])

    def test_a_example(self):
        np.testing.assert_allclose(build_Ai(HouseholdParams(gamma=0.95), 2),
                                   [[1, 0.95, 0, 0], [0, 0, 1, 0.95]])

    @settings(max_examples=50)
    @given(gammas, sigmas, st.integers(1, 6))
    def test_q_inverse_closed_form(self, g, s, N):
        p = HouseholdParams(gamma=g, sigma=s)
        Q = build_Qi(p, N)
        ref = np.linalg.inv(Q)
        np.testing.assert_allclose(build_Qi_inv(s, g, N), ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())
        assert np.linalg.eigvalsh(Q).min() >= s * (1 - 1e-12)

    @settings(max_examples=50)
    @given(gammas, sigmas, st.integers(1, 6))
    def test_dual_scalar(self, g, s, N):
        p = HouseholdParams(gamma=g, sigma=s)
        A, Q = build_Ai(p, N), build_Qi(p, N)
        np.testing.assert_allclose(A @ np.linalg.solve(Q, A.T), p.dual_scalar * np.eye(N),
                                   rtol=1e-12, atol=1e-12 * p.dual_scalar)
        np.testing.assert_allclose(A @ build_Qi_inv(s, g, N), A / (s * (2 + g * g)), rtol=1e-12, atol=1e-15)
        assert np.linalg.matrix_rank(A) == N


class TestReference:
    def test_hand_example(self):
        np.testing.assert_allclose(build_reference(np.array([[1.0, 3.0, 5.0]]), 1, 2), [2, 4])

    def test_constant(self):
        w = np.full((4, 10), 0.7)
        np.testing.assert_allclose(build_reference(w, 3, 4), 4 * 0.7)

    def test_needs_history(self):
        with pytest.raises(PreconditionError):
            build_reference(np.ones((1, 10)), 1, 3)

    @given(st.integers(0, 2**31), st.integers(2, 5), st.integers(1, 4))
    def test_brute_force(self, seed, N, I):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(I, 3 * N))
        k = int(rng.integers(N - 1, 2 * N + 1))
        ref = [sum(w[i, j] for i in range(I) for j in range(n - N + 1, n + 1)) / N
               for n in range(k, k + N)]
        np.testing.assert_allclose(build_reference(w, k, N), ref, atol=1e-12)

    def test_shift_identity(self):
        rng = np.random.default_rng(0)
        N = 4
        w = rng.normal(size=(3, 4 * N))
        a, b = build_reference(w, N, N), build_reference(w, N + 1, N)
        np.testing.assert_allclose(b[:-1], a[1:], atol=1e-14)


class TestObjectives:
    def _grid(self, I=100, N=24):
        p = HouseholdParams()
        w = np.zeros((I, N))
        return build_grid_problem([p] * I, [1.0] * I, w, np.zeros(N), 0.5, 2.4e6)

    def test_f0_unit_residual(self):
        g = self._grid()
        assert eval_f0(np.ones(24), g) == pytest.approx(240.0)
        assert eval_f0(g.zeta, g) == 0.0

    def test_fi_zero(self):
        g = self._grid(I=1, N=2)
        assert eval_fi(np.zeros(4), g.locals[0]) == 0.0

    def test_jacobian_full_row_rank(self):
        g = self._grid(I=3, N=4)
        J = coupling_jacobian(g)
        assert J.shape == (4, 4 + 3 * 8)
        assert np.linalg.matrix_rank(J) == 4

    def test_w_bar_is_sum(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(3, 4))
        g = build_grid_problem([HouseholdParams()] * 3, [1.0] * 3, w, np.zeros(4), 0.5, 1.0)
        np.testing.assert_allclose(g.w_bar, w.sum(axis=0))

    def test_horizon_too_short(self):
        with pytest.raises(PreconditionError):
            build_grid_problem([HouseholdParams()], [1.0], np.zeros((1, 1)), np.zeros(1), 0.5, 1.0)


class TestAdvance:
    def test_hand_step(self):
        p = HouseholdParams(alpha=0.99, beta=0.95)
        assert advance_soc(p, 1.0, np.array([0.2, 0.0]), 0.5) == pytest.approx(1.085)
