"""Distributed ALADIN for the coupled battery QP.

Each iteration alternates

1. an agent step: solve the local augmented-Lagrangian QP, form the modified
   gradient, refresh the slack weight ``mu_i`` and the curvature
   ``H_i = Q_i + mu_i D_act' D_act``, and upload a fixed-size sensitivity
   payload;
2. a CE step: check termination, evaluate the l1 merit function to decide
   whether the curvature update is accepted (``Pi``), and solve the
   equality-constrained consensus QP in closed form.

The consensus QP never grows with the number of active constraints: its
only coupled unknown is the ``N``-vector dual ``lam``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .model import GridProblem, LocalProblem, eval_f0
from .qpkernel import ActiveSetSolver, QpSolution, active_rows, solve_equality_kkt
from .simnet import CE, Message, MessageLedger, Transport, agent_id, tree_sum


@dataclass
class AladinConfig:
    eps: float = 1e-6
    eps_hat: float = 1e-12
    eta: float = 0.1
    descent_rule: str = "practical"
    mu_max: float = 1e8
    max_iters: int = 100
    lambda_bar_init: float = 1.0
    tol_den: float = 1e-14
    #: rows entering the denominator of the slack-weight update: ``"active"``
    #: (the rows carrying ``kappa``) or ``"all"`` rows of ``D_i``
    mu_rows: str = "active"
    #: ``False`` pins ``Pi = 0`` (plain ``mu = 0`` ALADIN) for the whole run
    curvature_updates: bool = True
    #: stop as soon as the oracle distance reaches this value (needs an oracle)
    stop_dist: float | None = None
    #: initial ``z_bar``: ``"coupling"`` uses ``w_bar + sum A_i u_i^0``;
    #: ``"dual"`` uses ``zeta - z_scale lam^0`` when a dual guess is supplied
    z_init: str = "coupling"

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if self.mu_max <= 0:
            raise ValueError("mu_max must be positive")
        if self.mu_rows not in ("active", "all"):
            raise ValueError(f"unknown mu_rows {self.mu_rows!r}")
        if self.descent_rule not in ("practical", "armijo"):
            raise ValueError(f"unknown descent rule {self.descent_rule!r}")
        if self.z_init not in ("coupling", "dual"):
            raise ValueError(f"unknown z_init {self.z_init!r}")


class Curvature:
    """``H = Q + mu D' D`` held through ``Q^{-1}`` and a small Woodbury core.

    Only ``K = I + mu D Q^{-1} D'`` (size ``n_act``) is factorized, so
    ``H^{-1}`` products and ``A H^{-1} A'`` never require a dense inverse of
    ``H``.
    """

    def __init__(self, local: LocalProblem, Q_inv: np.ndarray, D_act: np.ndarray, mu: float):
        self.local = local
        self.Q_inv = Q_inv
        self.D_act = D_act
        self.mu = float(mu)
        self.n_act = D_act.shape[0]
        self._trivial = self.mu == 0.0 or self.n_act == 0
        g2 = local.gamma**2
        self._aq = 1.0 / (local.sigma * (2.0 + g2))  # A Q^{-1} = aq * A
        if not self._trivial:
            self.B = D_act @ Q_inv  # D Q^{-1}
            K = np.eye(self.n_act) + self.mu * self.B @ D_act.T
            self._chol = np.linalg.cholesky(0.5 * (K + K.T))
            assert np.all(np.diag(self._chol) > 0)

    def solve(self, x: np.ndarray) -> np.ndarray:
        """``H^{-1} x``."""
        y = self.Q_inv @ x
        if self._trivial:
            return y
        t = sla.cho_solve((self._chol, True), self.B @ x, check_finite=False)
        return y - self.mu * (self.B.T @ t)

    def low_rank_factor(self) -> np.ndarray:
        """``F`` (``n_act x N``) with ``A H^{-1} A' = s I - F' F``."""
        N = self.local.N
        if self._trivial:
            return np.zeros((self.n_act, N))
        DA = self.D_act @ self.local.A.T
        return np.sqrt(self.mu) * self._aq * sla.solve_triangular(
            self._chol, DA, lower=True, check_finite=False
        )

    def dual_block(self) -> np.ndarray:
        """``A H^{-1} A'`` without the cancellation in ``s I - F' F``.

        With ``Q^{-1} = R R'`` and ``D R = U S V'`` (full ``V``),
        ``A H^{-1} A' = G' diag(1 / (1 + mu s_j^2)) G`` where ``G = V' R' A'``.
        Every term is nonnegative, so the block keeps its relative accuracy
        when large ``mu`` pins most directions and ``s I - F' F`` would lose it.
        """
        if self._trivial:
            return self.local.dual_scalar * np.eye(self.local.N)
        R = np.linalg.cholesky(self.Q_inv)
        _, sv, Vt = np.linalg.svd(self.D_act @ R)
        w = np.ones(Vt.shape[0])
        w[: sv.size] = 1.0 / (1.0 + self.mu * sv**2)
        G = Vt @ (R.T @ self.local.A.T)
        return G.T @ (w[:, None] * G)

    def dense(self) -> np.ndarray:
        return self.local.Q + self.mu * self.D_act.T @ self.D_act


@dataclass
class AgentState:
    index: int
    u: np.ndarray
    lam: np.ndarray
    v: np.ndarray | None = None
    g: np.ndarray | None = None
    kappa: np.ndarray | None = None
    mu: float = 0.0
    active: tuple[int, ...] = ()
    delta: float = np.inf
    H: Curvature | None = None
    qp: QpSolution | None = None
    solver: ActiveSetSolver | None = field(default=None, repr=False)
    Q_inv: np.ndarray | None = field(default=None, repr=False)


def init_agent(index: int, local: LocalProblem, u0=None, lam0=None) -> AgentState:
    N = local.N
    Q_inv = local.Q_inv()
    return AgentState(
        index=index,
        u=np.zeros(2 * N) if u0 is None else np.asarray(u0, dtype=float).copy(),
        lam=np.zeros(N) if lam0 is None else np.asarray(lam0, dtype=float).copy(),
        solver=ActiveSetSolver(2.0 * local.Q, local.D),
        Q_inv=Q_inv,
        H=Curvature(local, Q_inv, np.zeros((0, 2 * N)), 0.0),
    )


def agent_local_step(agent: AgentState, local: LocalProblem, lam: np.ndarray) -> AgentState:
    """Solve ``min f_i(v) - (A v)'lam + 0.5||v - u||_Q^2  s.t.  D v <= d``."""
    Qu = local.Q @ agent.u
    q = -(local.A.T @ lam) - Qu
    prev = agent.qp
    sol = agent.solver.solve(
        q,
        local.d,
        x0=None if prev is None else prev.v,
        working=None if prev is None else prev.working,
    )
    v = sol.v
    g = local.A.T @ lam + Qu - local.Q @ v
    return dataclasses.replace(
        agent,
        lam=np.asarray(lam, dtype=float),
        v=v,
        g=g,
        kappa=sol.kappa,
        active=tuple(int(j) for j in active_rows(local.D, local.d, v)),
        delta=float(np.sum(np.abs(v - agent.u))),
        qp=sol,
    )


def agent_update_mu(agent: AgentState, local: LocalProblem, config: AladinConfig) -> AgentState:
    """``mu = ||kappa||_1 / ||D (v - u)||_1`` (capped) and the matching curvature.

    With ``config.mu_rows == "active"`` the denominator only sums the active
    rows, the same rows that carry nonzero multipliers in the numerator.
    """
    act = list(agent.active)
    k1 = float(np.sum(np.abs(agent.kappa)))
    rows = local.D[act] if config.mu_rows == "active" else local.D
    den = float(np.sum(np.abs(rows @ (agent.v - agent.u)))) if len(rows) else 0.0
    if k1 == 0.0:
        mu = 0.0
    elif den < config.tol_den:
        mu = config.mu_max
    else:
        mu = min(k1 / den, config.mu_max)
    D_act = local.D[act] if act else np.zeros((0, local.D.shape[1]))
    return dataclasses.replace(agent, mu=mu, H=Curvature(local, agent.Q_inv, D_act, mu))


def agent_sensitivities(agent: AgentState, local: LocalProblem) -> dict:
    """Upload payload: ``A v``, ``c1``, ``c2``, low-rank dual block, ``f_i(v)``, ``delta``."""
    A = local.A
    c1 = A @ (agent.H.solve(agent.g) - agent.v)
    c2 = A @ (agent.Q_inv @ agent.g - agent.v)
    return {
        "Av": A @ agent.v,
        "c1": c1,
        "c2": c2,
        "F": agent.H.low_rank_factor(),
        "f": np.float64(0.5 * agent.v @ local.Q @ agent.v),
        "delta": np.float64(agent.delta),
    }


def agent_primal_update(agent: AgentState, local: LocalProblem, lam_next, Pi: int) -> AgentState:
    """``u = v + H^{-1}(A' lam - g)`` with ``H`` if ``Pi`` else ``Q``."""
    r = local.A.T @ lam_next - agent.g
    step = agent.H.solve(r) if Pi else agent.Q_inv @ r
    return dataclasses.replace(agent, u=agent.v + step, lam=np.asarray(lam_next, dtype=float))


@dataclass
class CeState:
    lam: np.ndarray
    z_bar: np.ndarray
    Lambda0_inv_scalar: float
    dual_scalars: np.ndarray
    lambda_bar: float
    psi: float = np.inf
    Pi: int = 0
    Lambda_factor: tuple | None = None
    # reference point of psi: objective part, l1 violation (and data for Armijo)
    ref_obj: float = np.nan
    ref_viol: float = np.nan
    ref_point: tuple | None = None


def ce_precompute_lambda0(dual_scalars, grid: GridProblem) -> float:
    """Scalar ``s`` with ``Lambda_0^{-1} = s I``."""
    return 1.0 / (grid.z_scale + float(np.sum(dual_scalars)))


def ce_dual_update(payloads: list[dict], ce: CeState, grid: GridProblem):
    """Closed-form solution of the consensus QP for ``lam`` and ``z_bar``."""
    if len(payloads) != grid.I:
        from .errors import ProtocolError

        raise ProtocolError(f"expected {grid.I} payloads, got {len(payloads)}")
    base = grid.zeta - grid.w_bar
    if ce.Pi:
        N = grid.N
        grams = tree_sum([p["F"].T @ p["F"] for p in payloads])
        Lam = (grid.z_scale + float(np.sum(ce.dual_scalars))) * np.eye(N) - grams
        ce.Lambda_factor = sla.cho_factor(0.5 * (Lam + Lam.T), lower=True)
        lam = sla.cho_solve(ce.Lambda_factor, base + tree_sum([p["c1"] for p in payloads]))
    else:
        lam = ce.Lambda0_inv_scalar * (base + tree_sum([p["c2"] for p in payloads]))
    z_bar = grid.zeta - grid.z_scale * lam
    return lam, z_bar


def consensus_qp_kkt(grid: GridProblem, agents: list[AgentState], Pi: int):
    """Direct equality-KKT solve of the consensus QP in its slack form.

    ``min f0(z) + sum 0.5||u_i - v_i||^2_{Q_i} + u_i' g_i + mu_i/2 ||s_i||^2``
    ``s.t. z = w_bar + sum A_i u_i,  D_act,i (u_i - v_i) = s_i``; with ``Pi = 0``
    the slacks are dropped (``H_i = Q_i``).  Eliminating ``s_i`` gives the
    condensed problem with ``H_i = Q_i + mu_i D_act' D_act``; the slack form
    keeps every matrix entry exact, whereas forming ``H_i`` rounds away
    ``mu * eps``.  Dense, for small instances.  Returns ``(lam, u_list, z_bar)``.
    """
    N, c = grid.N, grid.f0_weight
    n = 2 * N
    blocks = [2.0 * c * np.eye(N)]
    lin = [-2.0 * c * grid.zeta]
    slack = []
    for a, loc in zip(agents, grid.locals):
        blocks.append(loc.Q)
        lin.append(a.g - loc.Q @ a.v)
        use = Pi and a.H.mu > 0 and a.H.n_act > 0
        slack.append(use)
    for a, use in zip(agents, slack):
        if use:
            blocks.append(a.H.mu * np.eye(a.H.n_act))
            lin.append(np.zeros(a.H.n_act))
    Hb = sla.block_diag(*blocks)
    n_s = sum(a.H.n_act for a, use in zip(agents, slack) if use)
    n_x = N + grid.I * n + n_s
    rows = [np.hstack([np.eye(N)] + [-loc.A for loc in grid.locals] + [np.zeros((N, n_s))])]
    rhs = [grid.w_bar]
    off = N + grid.I * n
    for i, (a, use) in enumerate(zip(agents, slack)):
        if not use:
            continue
        r = np.zeros((a.H.n_act, n_x))
        r[:, N + i * n : N + (i + 1) * n] = a.H.D_act
        r[:, off : off + a.H.n_act] = -np.eye(a.H.n_act)
        rows.append(r)
        rhs.append(a.H.D_act @ a.v)
        off += a.H.n_act
    x, lam = solve_equality_kkt(Hb, np.concatenate(lin), np.vstack(rows), np.concatenate(rhs),
                                refine=2)
    u = [x[N + i * n : N + (i + 1) * n] for i in range(grid.I)]
    return lam[:N], u, x[:N]


def merit_parts(z_bar, Av_sum, f_sum, grid: GridProblem):
    """Objective and l1 coupling violation whose weighted sum is the merit value."""
    obj = eval_f0(z_bar, grid) + f_sum
    viol = float(np.sum(np.abs(z_bar - grid.w_bar - Av_sum)))
    return obj, viol


def merit(z_bar, v_all, grid: GridProblem, lambda_bar: float) -> float:
    """``f0(z) + sum f_i(v_i) + lambda_bar ||z - w_bar - sum A_i v_i||_1``."""
    Av = tree_sum([loc.A @ v for loc, v in zip(grid.locals, v_all)])
    f = float(sum(0.5 * v @ loc.Q @ v for loc, v in zip(grid.locals, v_all)))
    obj, viol = merit_parts(z_bar, Av, f, grid)
    return obj + lambda_bar * viol


def _merit_directional_derivative(ce: CeState, z_bar, v_all, grid: GridProblem) -> float:
    z_r, v_r = ce.ref_point
    dz = z_bar - z_r
    dv = [v - vr for v, vr in zip(v_all, v_r)]
    grad = 2.0 * grid.f0_weight * (z_r - grid.zeta) @ dz
    grad += sum(float((loc.Q @ vr) @ d) for loc, vr, d in zip(grid.locals, v_r, dv))
    c_r = z_r - grid.w_bar - tree_sum([loc.A @ vr for loc, vr in zip(grid.locals, v_r)])
    dc = dz - tree_sum([loc.A @ d for loc, d in zip(grid.locals, dv)])
    tiny = 1e-14 * (1.0 + np.max(np.abs(c_r)))
    nz = np.abs(c_r) > tiny
    pen = float(np.sum(np.sign(c_r[nz]) * dc[nz]) + np.sum(np.abs(dc[~nz])))
    return float(grad + ce.lambda_bar * pen)


def ce_merit_and_descent(
    ce: CeState,
    z_bar,
    Av_sum,
    f_sum: float,
    config: AladinConfig,
    iteration: int,
    grid: GridProblem,
    v_all=None,
) -> tuple[int, float]:
    """Decide ``Pi``; returns ``(Pi, merit value)`` and updates ``psi`` / ``lambda_bar``."""
    # lambda_bar follows 10 ||lam||_inf every iteration (never decreasing); psi is
    # re-evaluated at its reference point so both sides of the test share the weight
    lb = max(ce.lambda_bar, 10.0 * float(np.max(np.abs(ce.lam))))
    if lb != ce.lambda_bar:
        ce.lambda_bar = lb
        if iteration > 0:
            ce.psi = ce.ref_obj + lb * ce.ref_viol
    obj, viol = merit_parts(z_bar, Av_sum, f_sum, grid)
    value = obj + ce.lambda_bar * viol
    if iteration == 0:
        ce.psi, ce.ref_obj, ce.ref_viol = value, obj, viol
        ce.ref_point = (z_bar.copy(), [v.copy() for v in v_all]) if v_all is not None else None
        ce.Pi = 0
        return 0, value
    if not config.curvature_updates:
        ce.Pi = 0
        return 0, value
    if config.descent_rule == "practical":
        accept = value <= ce.psi - config.eps_hat * max(1.0, abs(ce.psi))
    else:
        slope = _merit_directional_derivative(ce, z_bar, v_all, grid)
        accept = value <= ce.psi + config.eta * slope
    if accept:
        ce.psi, ce.ref_obj, ce.ref_viol = value, obj, viol
        if v_all is not None:
            ce.ref_point = (z_bar.copy(), [v.copy() for v in v_all])
    ce.Pi = int(accept)
    return ce.Pi, value


def lyapunov_L(u_all, lam, oracle_u, oracle_lam, Lambda0_scalar: float, grid: GridProblem) -> float:
    """``||lam - lam*||^2_{Lambda_0} + sum_i ||u_i - u_i*||^2_{Q_i}`` (``Lambda_0 = scalar I``)."""
    dl = np.asarray(lam) - oracle_lam
    val = Lambda0_scalar * float(dl @ dl)
    for loc, u, us in zip(grid.locals, u_all, oracle_u):
        e = u - us
        val += float(e @ loc.Q @ e)
    return val


@dataclass
class IterationRecord:
    iter: int
    delta_max: float
    merit: float
    Pi: int
    dist_to_opt: float
    fwd_floats: int
    bwd_floats: int
    n_act: list[int] = field(default_factory=list)
    mu: list[float] = field(default_factory=list)
    lambda_bar: float = np.nan
    lyapunov: float = np.nan
    lam: np.ndarray | None = None


HISTORY_HEADER = ["iter", "delta_max", "merit", "Pi", "dist_to_opt", "fwd_floats", "bwd_floats"]


def history_rows(history):
    for r in history:
        yield (r.iter, repr(r.delta_max), repr(r.merit), r.Pi, repr(r.dist_to_opt), r.fwd_floats, r.bwd_floats)


def write_history(path, history) -> None:
    from .data import write_csv

    write_csv(path, HISTORY_HEADER, history_rows(history))


def iterations_to(history, tol: float) -> int | None:
    """First iteration index whose oracle distance is ``<= tol``."""
    for r in history:
        if r.dist_to_opt <= tol:
            return r.iter
    return None


@dataclass
class AladinResult:
    v: list[np.ndarray]
    u: list[np.ndarray]
    lam: np.ndarray
    z_bar: np.ndarray
    status: str
    iterations: int
    history: list[IterationRecord]
    ledger: MessageLedger
    agents: list[AgentState] = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "target")


def _oracle_parts(oracle):
    if oracle is None:
        return None, None
    if hasattr(oracle, "u"):
        return oracle.u, getattr(oracle, "lam", None)
    return oracle, None


def run_aladin(
    grid: GridProblem,
    config: AladinConfig | None = None,
    transport: Transport | None = None,
    oracle=None,
    u0=None,
    lam0=None,
    callback: Callable | None = None,
    dual_update: Callable = ce_dual_update,
) -> AladinResult:
    """Run the distributed ALADIN iteration on ``grid``.

    ``oracle`` (a centralized solution or a list of ``u_i*``) only feeds the
    recorded distance / Lyapunov values and the optional ``stop_dist`` rule.
    ``callback(ell, ce, agents, grid)`` is invoked after every CE dual update.
    ``dual_update`` replaces the closed-form consensus step (fault injection).
    """
    config = config or AladinConfig()
    transport = transport or Transport()
    I, N = grid.I, grid.N
    ids = list(range(I))
    for i in ids:
        transport.register(agent_id(i))
    u_star, lam_star = _oracle_parts(oracle)

    agents = [
        init_agent(i, loc, None if u0 is None else u0[i], lam0) for i, loc in enumerate(grid.locals)
    ]

    # -- initialization: w_i, A_i u_i^0 and the dual scalar go up, lam^0 comes down
    def setup(i, inbox):
        a, loc = agents[i], grid.locals[i]
        yield Message(agent_id(i), CE, "setup", {
            "w": loc.w, "Au0": loc.A @ a.u, "s": np.float64(loc.dual_scalar)}, -1)

    transport.exchange(setup, ids)
    ups = transport.gather([agent_id(i) for i in ids], "setup")
    dual_scalars = np.array([float(m.payload["s"]) for m in ups])
    lam = np.zeros(N) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    z_bar = tree_sum([grid.w_bar] + [m.payload["Au0"] for m in ups])
    if config.z_init == "dual" and lam0 is not None:
        z_bar = grid.zeta - grid.z_scale * lam
    ce = CeState(
        lam=lam,
        z_bar=z_bar,
        Lambda0_inv_scalar=ce_precompute_lambda0(dual_scalars, grid),
        dual_scalars=dual_scalars,
        lambda_bar=config.lambda_bar_init,
    )
    for i in ids:
        transport.send(CE, agent_id(i), "setup", {"lam": lam}, -1)
    for i in ids:
        transport.receive(agent_id(i), "setup")

    history: list[IterationRecord] = []
    status = "max_iters"
    ell = 0
    while True:
        def work(i, inbox, ell=ell):
            a, loc = agents[i], grid.locals[i]
            if ell > 0:
                (msg,) = inbox
                a = agent_primal_update(a, loc, msg.payload["lam"], int(msg.payload["Pi"]))
            a = agent_local_step(a, loc, a.lam)
            a = agent_update_mu(a, loc, config)
            agents[i] = a
            yield Message(agent_id(i), CE, "fwd_sensitivities", agent_sensitivities(a, loc), ell)

        transport.exchange(work, ids)
        msgs = transport.gather([agent_id(i) for i in ids], "fwd_sensitivities")
        payloads = [m.payload for m in msgs]
        delta_max = max(float(p["delta"]) for p in payloads)
        Av_sum = tree_sum([p["Av"] for p in payloads])
        f_sum = float(tree_sum([np.atleast_1d(p["f"]) for p in payloads])[0])
        fwd = sum(m.float_count for m in msgs)

        dist = np.nan
        lyap = np.nan
        if u_star is not None:
            dist = max(float(np.max(np.abs(a.v - us))) for a, us in zip(agents, u_star))
            if lam_star is not None:
                lyap = lyapunov_L([a.u for a in agents], ce.lam, u_star, lam_star,
                                  1.0 / ce.Lambda0_inv_scalar, grid)
        v_all = [a.v for a in agents] if config.descent_rule == "armijo" else None
        rec = IterationRecord(
            iter=ell, delta_max=delta_max, merit=np.nan, Pi=0, dist_to_opt=dist,
            fwd_floats=fwd, bwd_floats=0, n_act=[len(a.active) for a in agents],
            mu=[a.mu for a in agents], lambda_bar=ce.lambda_bar, lyapunov=lyap, lam=ce.lam.copy(),
        )
        history.append(rec)

        # z_bar stationarity and coupling hold by construction once ell >= 1 (the
        # latter up to delta); at the initial point a warm start can satisfy the
        # local step (v = u) while lam or the coupling is still off
        z_stat = float(np.max(np.abs(ce.z_bar - grid.zeta + grid.z_scale * ce.lam)))
        if ell == 0:
            z_stat = max(z_stat, float(np.max(np.abs(ce.z_bar - grid.w_bar - Av_sum))))
        if delta_max < config.eps and z_stat < config.eps:
            obj, viol = merit_parts(ce.z_bar, Av_sum, f_sum, grid)
            rec.merit = obj + ce.lambda_bar * viol
            status = "converged"
            break
        if config.stop_dist is not None and dist <= config.stop_dist:
            obj, viol = merit_parts(ce.z_bar, Av_sum, f_sum, grid)
            rec.merit = obj + ce.lambda_bar * viol
            status = "target"
            break
        Pi, value = ce_merit_and_descent(
            ce, ce.z_bar, Av_sum, f_sum, config, ell, grid, v_all=v_all
        )
        rec.merit, rec.Pi, rec.lambda_bar = value, Pi, ce.lambda_bar
        if ell + 1 >= config.max_iters:
            break
        lam_next, z_next = dual_update(payloads, ce, grid)
        ce.lam, ce.z_bar = lam_next, z_next
        if callback is not None:
            callback(ell, ce, agents, grid)
        bwd = 0
        for i in ids:
            bwd += transport.send(CE, agent_id(i), "bwd_dual",
                                  {"lam": lam_next, "Pi": np.float64(Pi)}, ell).float_count
        rec.bwd_floats = bwd
        ell += 1

    return AladinResult(
        v=[a.v for a in agents],
        u=[a.u for a in agents],
        lam=ce.lam,
        z_bar=ce.z_bar,
        status=status,
        iterations=ell,
        history=history,
        ledger=transport.ledger,
        agents=agents,
    )
