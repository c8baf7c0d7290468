"""Receding-horizon peak shaving with the distributed solvers in the loop.

Every step measures the state of charge, builds the grid problem at time
``k``, solves it distributedly, applies the first input of every household,
advances the batteries and shifts the solution into the next warm start.
Perfect forecasts are assumed: the plant follows the prediction model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .admm import AdmmConfig, run_admm
from .aladin import AladinConfig, iterations_to, run_aladin
from .data import Scenario, write_csv, write_json
from .model import advance_soc, build_grid_problem, build_reference
from .qpkernel import solve_centralized
from .simnet import Transport

REFERENCE_MODES = ("reference-online", "reference-external")
#: closed-loop ALADIN defaults; a warm-started dual also seeds ``z_bar``
MPC_ALADIN = {"eps": 1e-8, "z_init": "dual"}
#: relative SoC overshoot treated as roundoff; larger violations still raise
SOC_ROUNDOFF = 1e-9


@dataclass
class PlantState:
    soc: np.ndarray
    k: int
    last_input: np.ndarray | None = None  # (I, 2)

    def copy(self) -> "PlantState":
        return PlantState(self.soc.copy(), self.k, None if self.last_input is None else self.last_input.copy())


@dataclass
class WarmStart:
    u: list[np.ndarray]
    lam: np.ndarray


def shift_warm_start(u_all, lam) -> WarmStart:
    """Drop the first step and repeat the last one, for inputs and duals."""
    shifted = []
    for u in u_all:
        steps = np.asarray(u, dtype=float).reshape(-1, 2)
        shifted.append(np.vstack([steps[1:], steps[-1:]]).ravel())
    lam = np.asarray(lam, dtype=float)
    return WarmStart(shifted, np.concatenate([lam[1:], lam[-1:]]))


@dataclass
class MpcLogEntry:
    k: int
    applied: np.ndarray  # (I, 2)
    soc: np.ndarray  # state after applying the input
    zeta: float
    z_bar: float
    aggregate: float  # realized demand w_bar(k) + sum_i A_i u_i(k)
    uncontrolled: float  # w_bar(k)
    iterations: int | None  # first iteration within the target of the oracle
    solver_iterations: int
    status: str
    fwd_floats: int
    bwd_floats: int
    cold_iterations: int | None = None
    pi_pattern: str = ""
    gaps: list[float] = field(default_factory=list)
    flagged: bool = False


class MpcLog:
    """Append-only record of a closed-loop run."""

    CSV_HEADER = [
        "k", "zeta", "z_bar", "aggregate", "uncontrolled", "iterations", "cold_iterations",
        "solver_iterations", "status", "flagged", "fwd_floats", "bwd_floats",
        "soc_min", "soc_max", "pi_pattern",
    ]

    def __init__(self, solver: str, target: float, first_stat_step: int):
        self.solver = solver
        self.target = target
        self.first_stat_step = first_stat_step
        self.entries: list[MpcLogEntry] = []

    def append(self, entry: MpcLogEntry) -> None:
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def stat_entries(self) -> list[MpcLogEntry]:
        return [e for e in self.entries if e.k >= self.first_stat_step]

    def rows(self):
        for e in self.entries:
            yield (
                e.k, repr(e.zeta), repr(e.z_bar), repr(e.aggregate), repr(e.uncontrolled),
                "" if e.iterations is None else e.iterations,
                "" if e.cold_iterations is None else e.cold_iterations,
                e.solver_iterations, e.status, int(e.flagged), e.fwd_floats, e.bwd_floats,
                repr(float(e.soc.min())), repr(float(e.soc.max())), e.pi_pattern,
            )

    def summary(self) -> dict:
        stats = self.stat_entries()
        its = [e.iterations for e in stats if e.iterations is not None]
        pairs = [(e.iterations, e.cold_iterations) for e in stats
                 if e.iterations is not None and e.cold_iterations is not None]
        agg = np.array([e.aggregate for e in stats])
        unc = np.array([e.uncontrolled for e in stats])
        return {
            "solver": self.solver,
            "target": self.target,
            "steps": len(self.entries),
            "stat_steps": len(stats),
            "first_stat_step": self.first_stat_step,
            "mean_iterations": float(np.mean(its)) if its else None,
            "missed_target": sum(e.iterations is None for e in stats),
            "flagged_steps": sum(e.flagged for e in self.entries),
            "warm_not_worse_fraction": (
                float(np.mean([w <= c for w, c in pairs])) if pairs else None
            ),
            "mean_cold_iterations": (
                float(np.mean([c for _, c in pairs])) if pairs else None
            ),
            "variance_controlled": float(np.var(agg)) if len(agg) else None,
            "variance_uncontrolled": float(np.var(unc)) if len(unc) else None,
            "fwd_floats": int(sum(e.fwd_floats for e in self.entries)),
            "bwd_floats": int(sum(e.bwd_floats for e in self.entries)),
        }

    def write(self, directory) -> None:
        from pathlib import Path

        d = Path(directory)
        write_csv(d / "mpc_log.csv", self.CSV_HEADER, self.rows())
        write_csv(
            d / "mpc_inputs.csv",
            ["k", "household", "u_plus", "u_minus", "soc"],
            (
                (e.k, i + 1, repr(float(e.applied[i, 0])), repr(float(e.applied[i, 1])), repr(float(e.soc[i])))
                for e in self.entries
                for i in range(e.applied.shape[0])
            ),
        )
        write_csv(
            d / "mpc_gaps.csv",
            ["k", "iter", "gap"],
            ((e.k, j, repr(g)) for e in self.entries for j, g in enumerate(e.gaps)),
        )
        write_json(d / "summary.json", self.summary())


def _reference(scenario: Scenario, k: int, mode: str, zeta_stream):
    N = scenario.N
    if mode == "reference-online":
        return build_reference(scenario.series, k, N)
    if mode == "reference-external":
        if zeta_stream is None:
            raise ValueError("reference-external mode needs a zeta stream")
        z = np.asarray(zeta_stream, dtype=float)
        if z.shape[0] < k + N:
            raise ValueError(f"zeta stream too short for step {k}")
        return z[k : k + N]
    raise ValueError(f"unknown reference mode {mode!r}; choose from {REFERENCE_MODES}")


def _clip_roundoff(params, x: float) -> float:
    """Snap a state within solver roundoff of ``[0, C]`` back onto the box."""
    tol = SOC_ROUNDOFF * params.capacity
    if -tol <= x < 0.0:
        return 0.0
    if params.capacity < x <= params.capacity + tol:
        return params.capacity
    return x


def _input_feasible(params, soc, u, T) -> bool:
    up, um = u
    if not (0.0 <= up <= params.u_max and params.u_min <= um <= 0.0):
        return False
    if up / params.u_max + um / params.u_min > 1.0 + 1e-12:
        return False
    x = advance_soc(params, soc, u, T)
    return -1e-12 <= x <= params.capacity + 1e-12


def mpc_step(
    scenario: Scenario,
    plant: PlantState,
    warm: WarmStart | None,
    solver: str = "aladin",
    aladin_config: AladinConfig | None = None,
    admm_config: AdmmConfig | None = None,
    target: float = 1e-4,
    cold_compare: bool = False,
    mode: str = "reference-online",
    zeta_stream=None,
    transport_mode: str = "seq",
):
    """One pass of measure, solve, apply, shift.  Returns ``(plant, warm, entry)``."""
    k, N = plant.k, scenario.N
    if k < N - 1:
        raise ValueError(f"closed loop needs k >= N-1 = {N - 1}")
    zeta = _reference(scenario, k, mode, zeta_stream)
    w = scenario.series[:, k : k + N]
    grid = build_grid_problem(scenario.households, plant.soc, w, zeta, scenario.T, scenario.sigma0)
    oracle = solve_centralized(grid)

    def solve(init: WarmStart | None):
        u0 = None if init is None else init.u
        lam0 = None if init is None else init.lam
        with Transport(transport_mode) as tr:
            if solver == "aladin":
                return run_aladin(grid, aladin_config or AladinConfig(**MPC_ALADIN), tr, oracle=oracle, u0=u0, lam0=lam0)
            if solver == "admm":
                return run_admm(grid, admm_config or AdmmConfig(rho=10.0), tr, oracle=oracle, u0=u0, lam0=lam0)
        raise ValueError(f"unknown solver {solver!r}")

    res = solve(warm)
    cold = None
    if cold_compare:
        cold = iterations_to(solve(None).history, target) if warm is not None else None
    totals = res.ledger.totals()
    I = grid.I
    flagged = not res.converged
    if flagged:
        prev = plant.last_input if plant.last_input is not None else np.zeros((I, 2))
        applied = np.array([
            prev[i] if _input_feasible(p, plant.soc[i], prev[i], scenario.T) else np.zeros(2)
            for i, p in enumerate(scenario.households)
        ])
        next_warm = None
    else:
        applied = np.array([v[:2] for v in res.v])
        next_warm = shift_warm_start(res.v, res.lam)
    soc = np.array([
        _clip_roundoff(p, advance_soc(p, x, u, scenario.T))
        for p, x, u in zip(scenario.households, plant.soc, applied)
    ])
    gammas = np.array([p.gamma for p in scenario.households])
    wk = float(scenario.series[:, k].sum())
    entry = MpcLogEntry(
        k=k,
        applied=applied,
        soc=soc,
        zeta=float(zeta[0]),
        z_bar=float(res.z_bar[0]),
        aggregate=wk + float(np.sum(applied[:, 0] + gammas * applied[:, 1])),
        uncontrolled=wk,
        iterations=iterations_to(res.history, target),
        solver_iterations=res.iterations,
        status=res.status,
        fwd_floats=totals["online_fwd"],
        bwd_floats=totals["online_bwd"],
        cold_iterations=cold,
        pi_pattern="".join(str(h.Pi) for h in res.history) if solver == "aladin" else "",
        gaps=[h.dist_to_opt for h in res.history],
        flagged=flagged,
    )
    return PlantState(soc, k + 1, applied), next_warm, entry


def run_closed_loop(
    scenario: Scenario,
    steps: int = 60,
    solver: str = "aladin",
    warm_start: bool = True,
    cold_compare: bool = False,
    target: float = 1e-4,
    aladin_config: AladinConfig | None = None,
    admm_config: AdmmConfig | None = None,
    mode: str = "reference-online",
    zeta_stream=None,
    transport_mode: str = "seq",
    progress=None,
) -> MpcLog:
    """Closed loop from ``k = N - 1``; statistics cover ``k >= N`` only."""
    N = scenario.N
    start = N - 1
    if scenario.length < start + steps + N:
        raise ValueError(
            f"scenario has {scenario.length} samples, need {start + steps + N} for {steps} steps"
        )
    log = MpcLog(solver, target, first_stat_step=N)
    plant = PlantState(np.asarray(scenario.x0, dtype=float).copy(), start)
    warm = None
    for _ in range(steps):
        plant, nxt, entry = mpc_step(
            scenario, plant, warm if warm_start else None, solver, aladin_config, admm_config,
            target, cold_compare, mode, zeta_stream, transport_mode,
        )
        warm = nxt
        log.append(entry)
        if progress is not None:
            progress(entry)
    return log
