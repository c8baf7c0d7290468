"""Sharing-form ADMM baseline for the coupled battery QP.

Households hold the shares ``A_i u_i``; the CE owns the aggregate ``z_bar``
and the dual ``lam``.  With ``r = (z_bar - w_bar - sum_j A_j u_j) / I + lam / rho``
one iteration reads

* agent:  ``u_i+ = argmin f_i(u) + rho/2 ||A_i u - A_i u_i - r||^2  s.t.  D_i u <= d_i``
* CE:     ``z_bar+ = argmin f0(z) + rho/(2I) ||z - w_bar - sum A_i u_i+ + I lam / rho||^2``
* CE:     ``lam+ = lam + rho (z_bar+ - w_bar - sum A_i u_i+) / I``

so that ``z_bar = zeta - N I^2 / (2 sigma0) lam`` holds at a fixed point, the
same sign convention as the ALADIN module.  Each round moves ``N`` floats up
(the share) and ``N`` floats down (the offset ``r``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aladin import IterationRecord, iterations_to
from .model import GridProblem
from .qpkernel import ActiveSetSolver, QpSolution
from .simnet import CE, Message, MessageLedger, Transport, agent_id, tree_sum

RHO_GRID = (0.1, 1.0, 10.0)


@dataclass
class AdmmConfig:
    rho: float = 1.0
    max_iters: int = 500
    eps: float = 1e-6
    #: stop once the oracle distance reaches this value (needs an oracle)
    stop_dist: float | None = None

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class AdmmState:
    u: list[np.ndarray]
    shares: list[np.ndarray]
    z_bar: np.ndarray
    lam: np.ndarray
    primal_residual: float = np.inf
    dual_residual: float = np.inf


@dataclass
class AdmmResult:
    u: list[np.ndarray]
    lam: np.ndarray
    z_bar: np.ndarray
    status: str
    iterations: int
    history: list[IterationRecord]
    ledger: MessageLedger
    state: AdmmState | None = field(default=None, repr=False)

    @property
    def v(self):
        return self.u

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "target")


def _offset(grid: GridProblem, z_bar, share_sum, lam, rho) -> np.ndarray:
    return (z_bar - grid.w_bar - share_sum) / grid.I + lam / rho


def z_update(grid: GridProblem, share_sum, lam, rho) -> np.ndarray:
    """Proximal step of ``f0`` against the new aggregate."""
    c2 = 2.0 * grid.f0_weight
    a = rho / grid.I
    return (c2 * grid.zeta + a * (grid.w_bar + share_sum) - lam) / (c2 + a)


def run_admm(
    grid: GridProblem,
    config: AdmmConfig | None = None,
    transport: Transport | None = None,
    oracle=None,
    u0=None,
    lam0=None,
) -> AdmmResult:
    config = config or AdmmConfig()
    transport = transport or Transport()
    I, N, rho = grid.I, grid.N, config.rho
    ids = list(range(I))
    for i in ids:
        transport.register(agent_id(i))
    u_star = getattr(oracle, "u", oracle)

    u = [np.zeros(2 * N) if u0 is None else np.asarray(u0[i], dtype=float).copy() for i in ids]
    solvers = [ActiveSetSolver(loc.Q + rho * loc.A.T @ loc.A, loc.D) for loc in grid.locals]
    last: list[QpSolution | None] = [None] * I

    def setup(i, inbox):
        loc = grid.locals[i]
        yield Message(agent_id(i), CE, "setup", {"w": loc.w, "Au0": loc.A @ u[i]}, -1)

    transport.exchange(setup, ids)
    ups = transport.gather([agent_id(i) for i in ids], "setup")
    shares = [m.payload["Au0"] for m in ups]
    share_sum = tree_sum(shares)
    lam = np.zeros(N) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    z_bar = grid.w_bar + share_sum
    r = _offset(grid, z_bar, share_sum, lam, rho)
    for i in ids:
        transport.send(CE, agent_id(i), "setup", {"r": r}, -1)

    history: list[IterationRecord] = []
    status = "max_iters"
    k = 0
    primal = dual = np.inf
    while True:
        def work(i, inbox, k=k):
            (msg,) = inbox
            loc = grid.locals[i]
            target = loc.A @ u[i] + msg.payload["r"]
            q = -rho * (loc.A.T @ target)
            prev = last[i]
            sol = solvers[i].solve(
                q, loc.d,
                x0=None if prev is None else prev.v,
                working=None if prev is None else prev.working,
            )
            last[i] = sol
            u[i] = sol.v
            yield Message(agent_id(i), CE, "admm_fwd", {"Au": loc.A @ sol.v}, k)

        transport.exchange(work, ids)
        msgs = transport.gather([agent_id(i) for i in ids], "admm_fwd")
        new_shares = [m.payload["Au"] for m in msgs]
        new_sum = tree_sum(new_shares)
        z_bar = z_update(grid, new_sum, lam, rho)
        resid = z_bar - grid.w_bar - new_sum
        lam = lam + rho * resid / I
        primal = float(np.max(np.abs(resid)))
        dual = rho * max(float(np.max(np.abs(a - b))) for a, b in zip(new_shares, shares))
        shares, share_sum = new_shares, new_sum

        dist = np.nan
        if u_star is not None:
            dist = max(float(np.max(np.abs(ui - us))) for ui, us in zip(u, u_star))
        obj = grid.f0_weight * float((z_bar - grid.zeta) @ (z_bar - grid.zeta))
        obj += sum(0.5 * float(ui @ loc.Q @ ui) for ui, loc in zip(u, grid.locals))
        rec = IterationRecord(
            iter=k, delta_max=max(primal, dual), merit=obj, Pi=0, dist_to_opt=dist,
            fwd_floats=sum(m.float_count for m in msgs), bwd_floats=0, lam=lam.copy(),
        )
        history.append(rec)
        if max(primal, dual) < config.eps:
            status = "converged"
            break
        if config.stop_dist is not None and dist <= config.stop_dist:
            status = "target"
            break
        if k + 1 >= config.max_iters:
            break
        r = _offset(grid, z_bar, share_sum, lam, rho)
        rec.bwd_floats = sum(
            transport.send(CE, agent_id(i), "admm_bwd", {"r": r}, k).float_count for i in ids
        )
        k += 1

    return AdmmResult(
        u=[ui.copy() for ui in u],
        lam=lam,
        z_bar=z_bar,
        status=status,
        iterations=k,
        history=history,
        ledger=transport.ledger,
        state=AdmmState(u=u, shares=shares, z_bar=z_bar, lam=lam,
                        primal_residual=primal, dual_residual=dual),
    )


def best_rho(grid: GridProblem, oracle, tol: float, rhos=RHO_GRID, max_iters: int = 500, **kw):
    """Run ADMM for each ``rho`` and keep the one reaching ``tol`` first.

    Later candidates are capped at the best count found so far, since they can
    only win by finishing earlier.  Returns ``(rho, iterations or None, result)``.
    """
    best = None
    cap = max_iters
    for rho in rhos:
        res = run_admm(grid, AdmmConfig(rho=rho, max_iters=cap, stop_dist=tol), oracle=oracle, **kw)
        its = iterations_to(res.history, tol)
        key = its if its is not None else np.inf
        if best is None or key < best[0]:
            best = (key, rho, its, res)
            if its is not None:
                cap = its
    _, rho, its, res = best
    return rho, its, res
