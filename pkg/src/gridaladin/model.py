"""Residential battery model and the data of the grid-level peak-shaving QP.

Each household ``i`` owns a battery with inputs ``u_i(n) = (u+(n), u-(n))``
(charge / discharge rate, kW).  Over a horizon of ``N`` steps the inputs are
stacked time-major into a ``2N`` vector ``(u+(0), u-(0), u+(1), u-(1), ...)``.
Everything the distributed solvers need is condensed into

* ``Q_i``  local cost Hessian, ``f_i(u) = 0.5 u' Q_i u``
* ``A_i``  coupling map, household contribution to the aggregate demand
* ``D_i, d_i``  all state and input constraints, ``D_i u <= d_i``

and the grid operator tracks the moving-average reference ``zeta`` with
``f_0(z) = sigma_0 / (N I^2) ||z - zeta||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import PreconditionError

#: Row labels of one time step of ``D_i``; rows are time-major in this order.
ROW_KINDS = ("soc_hi", "soc_lo", "chg_hi", "chg_lo", "dis_hi", "dis_lo", "mix_hi", "mix_lo")
ROWS_PER_STEP = len(ROW_KINDS)


@dataclass(frozen=True)
class HouseholdParams:
    """Physical battery parameters of one household (defaults are the reference fleet values)."""

    alpha: float = 0.99
    beta: float = 0.95
    gamma: float = 0.95
    capacity: float = 2.0
    u_min: float = -0.5
    u_max: float = 0.5
    sigma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise PreconditionError(f"{name} must lie in (0, 1], got {value}")
        if self.capacity < 0:
            raise PreconditionError(f"capacity must be >= 0, got {self.capacity}")
        if not self.u_min < 0.0 < self.u_max:
            raise PreconditionError(
                f"need u_min < 0 < u_max, got u_min={self.u_min}, u_max={self.u_max}"
            )
        if self.sigma <= 0:
            raise PreconditionError(f"sigma must be > 0, got {self.sigma}")

    @property
    def dual_scalar(self) -> float:
        """Diagonal value of ``A_i Q_i^{-1} A_i'``, i.e. ``(1+g^2) / (s (2+g^2))``."""
        g2 = self.gamma**2
        return (1.0 + g2) / (self.sigma * (2.0 + g2))


@dataclass(frozen=True)
class HouseholdState:
    """Measured state of charge plus the net-consumption window around ``k``."""

    soc: float
    history: np.ndarray
    forecast: np.ndarray


@dataclass
class LocalProblem:
    """Condensed data of one subsystem for a fixed time ``k``."""

    Q: np.ndarray
    A: np.ndarray
    D: np.ndarray
    d: np.ndarray
    w: np.ndarray
    sigma: float
    gamma: float
    params: HouseholdParams | None = None
    x_hat: float | None = None

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def dual_scalar(self) -> float:
        g2 = self.gamma**2
        return (1.0 + g2) / (self.sigma * (2.0 + g2))

    def Q_inv(self) -> np.ndarray:
        return build_Qi_inv(self.sigma, self.gamma, self.N)

    def cost(self, u: np.ndarray) -> float:
        return eval_fi(u, self)


@dataclass
class GridProblem:
    """One instance of the coupled peak-shaving QP."""

    N: int
    T: float
    sigma0: float
    zeta: np.ndarray
    w_bar: np.ndarray
    locals: list[LocalProblem] = field(default_factory=list)

    def __post_init__(self):
        if self.N < 2:
            raise PreconditionError(f"horizon N must be >= 2, got {self.N}")
        if len(self.locals) < 1:
            raise PreconditionError("grid problem needs at least one subsystem")
        if self.sigma0 <= 0:
            raise PreconditionError(f"sigma0 must be > 0, got {self.sigma0}")
        self.zeta = np.asarray(self.zeta, dtype=float)
        self.w_bar = np.asarray(self.w_bar, dtype=float)

    @property
    def I(self) -> int:  # noqa: E743 - matches the usual symbol for the agent count
        return len(self.locals)

    @property
    def f0_weight(self) -> float:
        """``sigma0 / (N I^2)``, the coefficient of ``||z - zeta||^2``."""
        return self.sigma0 / (self.N * self.I**2)

    @property
    def z_scale(self) -> float:
        """``N I^2 / (2 sigma0)``; the aggregate demand reacts as ``z = zeta - z_scale * lam``."""
        return self.N * self.I**2 / (2.0 * self.sigma0)

    def coupling_residual(self, z_bar: np.ndarray, u: Sequence[np.ndarray]) -> np.ndarray:
        """``z_bar - w_bar - sum_i A_i u_i`` (zero at any feasible point)."""
        total = self.w_bar.copy()
        for loc, ui in zip(self.locals, u):
            total += loc.A @ ui
        return z_bar - total

    def permuted(self, order: Sequence[int]) -> "GridProblem":
        return GridProblem(
            N=self.N,
            T=self.T,
            sigma0=self.sigma0,
            zeta=self.zeta.copy(),
            w_bar=self.w_bar.copy(),
            locals=[self.locals[j] for j in order],
        )


def soc_trajectory_matrix(params: HouseholdParams, x_hat: float, N: int, T: float):
    """Affine map ``u -> (x(k+1), ..., x(k+N))`` returned as ``(S, s0)``.

    ``x(k+n) = alpha^n x_hat + T sum_{l<n} alpha^(n-1-l) (beta, 1) u(l)``.
    """
    S = np.zeros((N, 2 * N))
    powers = params.alpha ** np.arange(N)
    for n in range(1, N + 1):
        for ell in range(n):
            a = T * powers[n - 1 - ell]
            S[n - 1, 2 * ell] = a * params.beta
            S[n - 1, 2 * ell + 1] = a
    s0 = params.alpha ** np.arange(1, N + 1) * x_hat
    return S, s0


def condense_constraints(params: HouseholdParams, x_hat: float, N: int, T: float):
    """Stack state and input limits over the horizon into ``D u <= d``.

    Rows are grouped per step ``n`` in the order of :data:`ROW_KINDS`, giving
    ``D`` of shape ``(8N, 2N)``.
    """
    if not 0.0 <= x_hat <= params.capacity:
        raise PreconditionError(
            f"initial state of charge {x_hat} outside [0, {params.capacity}]"
        )
    if N < 1:
        raise PreconditionError(f"horizon must be positive, got {N}")
    S, s0 = soc_trajectory_matrix(params, x_hat, N, T)
    D = np.zeros((ROWS_PER_STEP * N, 2 * N))
    d = np.zeros(ROWS_PER_STEP * N)
    inv_hi, inv_lo = 1.0 / params.u_max, 1.0 / params.u_min
    for t in range(N):
        r = ROWS_PER_STEP * t
        p, m = 2 * t, 2 * t + 1
        D[r] = S[t]
        d[r] = params.capacity - s0[t]
        D[r + 1] = -S[t]
        d[r + 1] = s0[t]
        D[r + 2, p] = 1.0
        d[r + 2] = params.u_max
        D[r + 3, p] = -1.0
        D[r + 4, m] = 1.0
        D[r + 5, m] = -1.0
        d[r + 5] = -params.u_min
        D[r + 6, p], D[r + 6, m] = inv_hi, inv_lo
        d[r + 6] = 1.0
        D[r + 7, p], D[r + 7, m] = -inv_hi, -inv_lo
    return D, d


def _gamma_block(gamma: float) -> np.ndarray:
    return np.array([[1.0, gamma], [gamma, gamma**2]])


def build_Qi(params: HouseholdParams, N: int) -> np.ndarray:
    """``sigma (I_2N + I_N kron [[1, g], [g, g^2]])``."""
    return params.sigma * (np.eye(2 * N) + np.kron(np.eye(N), _gamma_block(params.gamma)))


def build_Qi_inv(sigma: float, gamma: float, N: int) -> np.ndarray:
    """Closed-form inverse of ``Q_i`` via the rank-one Sherman-Morrison identity."""
    g2 = gamma**2
    block = np.array([[1.0 + g2, -gamma], [-gamma, 2.0]]) / (sigma * (2.0 + g2))
    return np.kron(np.eye(N), block)


def build_Ai(params: HouseholdParams, N: int) -> np.ndarray:
    return np.kron(np.eye(N), np.array([[1.0, params.gamma]]))


def build_local_problem(
    params: HouseholdParams, x_hat: float, w: np.ndarray, T: float
) -> LocalProblem:
    w = np.asarray(w, dtype=float)
    N = w.shape[0]
    D, d = condense_constraints(params, x_hat, N, T)
    return LocalProblem(
        Q=build_Qi(params, N),
        A=build_Ai(params, N),
        D=D,
        d=d,
        w=w,
        sigma=params.sigma,
        gamma=params.gamma,
        params=params,
        x_hat=float(x_hat),
    )


def build_reference(w: np.ndarray, k: int, N: int) -> np.ndarray:
    """Moving average of the aggregate net consumption over the last ``N`` samples.

    ``w`` holds net consumption indexed by absolute time ``j`` along its last
    axis; a 2-D array ``(I, L)`` is summed over households first.  Returns
    ``zeta(n) = (1/N) sum_{j=n-N+1}^{n} sum_i w_i(j)`` for ``n in [k, k+N-1]``.
    """
    w = np.asarray(w, dtype=float)
    agg = w.sum(axis=0) if w.ndim == 2 else w
    if k < N - 1:
        raise PreconditionError(f"reference needs k >= N-1 = {N - 1}, got k={k}")
    if agg.shape[0] < k + N:
        raise PreconditionError(
            f"reference needs samples up to index {k + N - 1}, got {agg.shape[0]}"
        )
    window = agg[k - N + 1 : k + N]
    return np.lib.stride_tricks.sliding_window_view(window, N).mean(axis=1)


def build_grid_problem(
    params: Sequence[HouseholdParams],
    x_hat: Sequence[float],
    forecasts: np.ndarray,
    zeta: np.ndarray,
    T: float,
    sigma0: float,
) -> GridProblem:
    forecasts = np.atleast_2d(np.asarray(forecasts, dtype=float))
    locals_ = [
        build_local_problem(p, x, w, T) for p, x, w in zip(params, x_hat, forecasts)
    ]
    return GridProblem(
        N=forecasts.shape[1],
        T=T,
        sigma0=sigma0,
        zeta=np.asarray(zeta, dtype=float),
        w_bar=forecasts.sum(axis=0),
        locals=locals_,
    )


def eval_f0(z_bar: np.ndarray, grid: GridProblem) -> float:
    r = np.asarray(z_bar) - grid.zeta
    return float(grid.f0_weight * (r @ r))


def eval_fi(u: np.ndarray, local: LocalProblem) -> float:
    return float(0.5 * u @ (local.Q @ u))


def coupling_jacobian(grid: GridProblem) -> np.ndarray:
    """``[-I_N, A_1, ..., A_I]``, the Jacobian of the coupling constraint."""
    return np.hstack([-np.eye(grid.N)] + [loc.A for loc in grid.locals])


def advance_soc(params: HouseholdParams, soc: float, u: np.ndarray, T: float) -> float:
    """One step of the battery recursion with input ``u = (u+, u-)``."""
    return params.alpha * soc + T * (params.beta * u[0] + u[1])
