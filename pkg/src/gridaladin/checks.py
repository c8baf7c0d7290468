"""Invariant checks shared by ``--experiment verify`` and the test suite.

Every check returns a :class:`CheckResult` with a machine-readable detail
dict.  The instances come from the seeded corpus in :mod:`.experiments`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .admm import AdmmConfig, run_admm
from .aladin import (
    AladinConfig,
    Curvature,
    agent_primal_update,
    ce_dual_update,
    consensus_qp_kkt,
    run_aladin,
)
from .errors import GridAladinError
from .experiments import corpus, random_instance
from .model import HouseholdParams, build_Ai, build_local_problem, build_Qi, build_Qi_inv
from .qpkernel import enumerate_centralized, solve_centralized
from .simnet import Transport, admm_expected, aladin_expected, audit


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={_fmt(v)}" for k, v in self.detail.items())
        return f"{status} {self.name}: {info}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    return str(v)


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def flipped_dual_update(payloads, ce, grid):
    """Fault injection: the closed-form dual update with the sign of ``sum c`` flipped."""
    key = "c1" if ce.Pi else "c2"
    flipped = [{**p, key: -p[key]} for p in payloads]
    return ce_dual_update(flipped, ce, grid)


@_timed
def check_oracle_equivalence(count: int = 100, eps: float = 1e-7, tol: float = 1e-6,
                             enumerate_count: int = 3) -> CheckResult:
    """Distributed ALADIN against the centralized oracle; oracle against enumeration."""
    worst = 0.0
    failures = []
    for seed, grid in corpus(count):
        oracle = solve_centralized(grid)
        res = run_aladin(grid, AladinConfig(eps=eps, max_iters=300), oracle=oracle)
        dist = max(float(np.max(np.abs(v - u))) for v, u in zip(res.v, oracle.u))
        worst = max(worst, dist)
        if dist > tol or res.status != "converged":
            failures.append(seed)
    enum_worst = 0.0
    for j in range(enumerate_count):
        grid = random_instance(10_000 + j, 2, 2)
        oracle = solve_centralized(grid)
        ref = enumerate_centralized(grid)
        gap = max(float(np.max(np.abs(a - b))) for a, b in zip(ref.u, oracle.u))
        enum_worst = max(enum_worst, gap, float(np.max(np.abs(ref.lam - oracle.lam))))
    ok = not failures and enum_worst <= 1e-9
    return CheckResult("oracle_equivalence", ok, {
        "instances": count, "max_dist": worst, "failures": len(failures),
        "enumeration_max_gap": enum_worst,
    })


@_timed
def check_consensus_identity(count: int = 20, tol: float = 1e-10, mutate: bool = False,
                             max_iters: int = 40) -> CheckResult:
    """Closed-form consensus step against a direct KKT solve on every iteration."""
    worst = 0.0
    steps = 0
    aborted = 0
    update = flipped_dual_update if mutate else ce_dual_update

    for _, grid in corpus(count):
        def callback(ell, ce, agents, grid):
            nonlocal worst, steps
            lam_ref, u_ref, z_ref = consensus_qp_kkt(grid, agents, ce.Pi)
            err = float(np.max(np.abs(ce.lam - lam_ref)))
            err = max(err, float(np.max(np.abs(ce.z_bar - z_ref))))
            for a, loc, ur in zip(agents, grid.locals, u_ref):
                up = agent_primal_update(a, loc, ce.lam, ce.Pi).u
                err = max(err, float(np.max(np.abs(up - ur))))
            worst = max(worst, err)
            steps += 1

        try:
            run_aladin(grid, AladinConfig(eps=1e-9, max_iters=max_iters), callback=callback,
                       dual_update=update)
        except GridAladinError:
            # a corrupted step can drive the iterates out of reach of the local solver
            aborted += 1
    return CheckResult("consensus_identity", worst <= tol and aborted == 0,
                       {"instances": count, "iterations": steps, "max_err": worst,
                        "aborted": aborted, "mutated": mutate})


def _mp_inverse(M):
    return mpmath.matrix(M.tolist()) ** -1


def _mp_rel_err(approx, ref) -> float:
    diff = mpmath.matrix(approx.tolist()) - ref
    num = max(abs(x) for x in diff)
    den = max(abs(x) for x in ref)
    return float(num / den) if den else float(num)


@_timed
def check_structure_identities(trials: int = 60, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    """``Q^{-1}``, ``A Q^{-1} A'`` and ``A H^{-1} A'`` against 50-digit references."""
    rng = np.random.default_rng(seed)
    worst = {"Q_inv": 0.0, "AQA": 0.0, "AHA": 0.0}
    with mpmath.workdps(50):
        for _ in range(trials):
            N = int(rng.integers(2, 6))
            gamma = float(rng.uniform(1e-3, 1.0))
            sigma = float(10.0 ** rng.uniform(-2, 2))
            mu = 0.0 if rng.random() < 0.1 else float(10.0 ** rng.uniform(-3, 8))
            p = HouseholdParams(gamma=gamma, sigma=sigma)
            loc = build_local_problem(p, p.capacity * rng.uniform(0, 1), np.zeros(N), 0.5)
            Q, A = build_Qi(p, N), build_Ai(p, N)
            Qi_mp = _mp_inverse(Q)
            worst["Q_inv"] = max(worst["Q_inv"], _mp_rel_err(build_Qi_inv(sigma, gamma, N), Qi_mp))
            A_mp = mpmath.matrix(A.tolist())
            worst["AQA"] = max(worst["AQA"], _mp_rel_err(loc.dual_scalar * np.eye(N),
                                                         A_mp * Qi_mp * A_mp.T))
            n_act = int(rng.integers(0, min(2 * N, loc.D.shape[0]) + 1))
            rows = np.sort(rng.choice(loc.D.shape[0], size=n_act, replace=False))
            D_act = loc.D[rows]
            curv = Curvature(loc, loc.Q_inv(), D_act, mu)
            D_mp = mpmath.matrix(D_act.tolist()) if D_act.shape[0] else None
            H_mp = mpmath.matrix(Q.tolist())
            if D_mp is not None:
                H_mp = H_mp + mpmath.mpf(mu) * D_mp.T * D_mp
            ref = A_mp * H_mp**-1 * A_mp.T
            worst["AHA"] = max(worst["AHA"], _mp_rel_err(curv.dual_block(), ref))
    ok = all(v <= tol for v in worst.values())
    return CheckResult("structure_identities", ok, {"trials": trials, **{f"max_rel_{k}": v for k, v in worst.items()}})


@_timed
def check_lyapunov_descent(count: int = 50, max_iters: int = 60, rel_tol: float = 1e-12) -> CheckResult:
    """With ``Pi`` pinned to 0 the Lyapunov function never increases."""
    violations = []
    worst = 0.0
    for seed, grid in corpus(count, start=200):
        oracle = solve_centralized(grid)
        res = run_aladin(grid, AladinConfig(eps=1e-10, max_iters=max_iters, curvature_updates=False),
                         oracle=oracle)
        L = np.array([h.lyapunov for h in res.history])
        inc = np.diff(L) / np.maximum(L[:-1], 1e-300)
        if len(inc):
            worst = max(worst, float(np.max(inc)))
            scale = rel_tol * np.maximum(L[:-1], 1.0)
            if np.any(np.diff(L) > scale):
                violations.append(seed)
    return CheckResult("lyapunov_descent", not violations,
                       {"instances": count, "violations": len(violations),
                        "max_rel_increase": worst})


@_timed
def check_merit_exactness(count: int = 20, max_iters: int = 60) -> CheckResult:
    """``Psi(z*, u*)`` lower-bounds every iterate's merit once ``lambda_bar > ||lam*||``."""
    violations = 0
    worst = -np.inf
    checked = 0
    for _, grid in corpus(count, start=400):
        oracle = solve_centralized(grid)
        lb0 = 2.0 * float(np.max(np.abs(oracle.lam))) + 1.0
        res = run_aladin(grid, AladinConfig(eps=1e-10, max_iters=max_iters, lambda_bar_init=lb0),
                         oracle=oracle)
        d = oracle.z_bar - grid.zeta
        psi_star = grid.f0_weight * float(d @ d) + sum(
            0.5 * float(u @ loc.Q @ u) for u, loc in zip(oracle.u, grid.locals))
        for h in res.history:
            if not np.isfinite(h.merit):
                continue
            checked += 1
            gap = psi_star - h.merit
            worst = max(worst, gap / max(1.0, abs(psi_star)))
            if gap > 1e-12 * max(1.0, abs(psi_star)):
                violations += 1
    return CheckResult("merit_exactness", violations == 0,
                       {"instances": count, "iterations": checked, "violations": violations,
                        "max_rel_excess": worst})


def aladin_ledger_report(res, N: int):
    n_act = {(h.iter, i): n for h in res.history for i, n in enumerate(h.n_act)}
    return audit(res.ledger, aladin_expected(N, n_act))


@_timed
def check_ledger(count: int = 10, admm_iters: int = 30) -> CheckResult:
    """Per-message float counts against the communication table, zero tolerance."""
    bad = 0
    checked = 0
    for _, grid in corpus(count, start=600):
        with Transport() as tr:
            res = run_aladin(grid, AladinConfig(eps=1e-9, max_iters=40), tr)
        rep = aladin_ledger_report(res, grid.N)
        per_round = len(res.ledger.online())
        want_round = len(res.history) * grid.I + (len(res.history) - 1) * grid.I
        bad += len(rep.mismatches) + int(per_round != want_round)
        checked += rep.checked
        with Transport() as tr:
            ares = run_admm(grid, AdmmConfig(rho=1.0, max_iters=admm_iters), tr)
        rep = audit(ares.ledger, admm_expected(grid.N))
        bad += len(rep.mismatches)
        checked += rep.checked
    return CheckResult("ledger_audit", bad == 0, {"messages": checked, "mismatches": bad})


def _fingerprint(res):
    parts = [np.concatenate([np.ravel(v) for v in res.v]).tobytes(), np.asarray(res.lam).tobytes()]
    for h in res.history:
        parts.append(np.array([h.delta_max, h.merit, h.Pi, h.dist_to_opt]).tobytes())
    return parts, list(res.ledger.rows())


@_timed
def check_determinism(count: int = 8) -> CheckResult:
    """Sequential and threaded transports give bitwise-identical runs."""
    mismatches = 0
    for _, grid in corpus(count, start=800):
        oracle = solve_centralized(grid)
        fps = []
        for mode in ("seq", "par"):
            with Transport(mode) as tr:
                a = run_aladin(grid, AladinConfig(eps=1e-9, max_iters=40), tr, oracle=oracle)
            with Transport(mode) as tr:
                b = run_admm(grid, AdmmConfig(rho=1.0, max_iters=30), tr, oracle=oracle)
            fps.append((_fingerprint(a), _fingerprint(b)))
        mismatches += int(fps[0] != fps[1])
    return CheckResult("determinism", mismatches == 0, {"instances": count, "mismatches": mismatches})


SUITE = {
    "oracle_equivalence": check_oracle_equivalence,
    "consensus_identity": check_consensus_identity,
    "structure_identities": check_structure_identities,
    "lyapunov_descent": check_lyapunov_descent,
    "merit_exactness": check_merit_exactness,
    "ledger_audit": check_ledger,
    "determinism": check_determinism,
}


def run_suite(names=None, mutate: bool = False, quick: bool = False) -> list[CheckResult]:
    """Run the named checks (all by default); ``mutate`` injects the dual-update sign fault."""
    names = list(SUITE) if names is None else list(names)
    out = []
    for name in names:
        fn = SUITE[name]
        kw = {}
        if name == "consensus_identity":
            kw["mutate"] = mutate
        if quick:
            kw.update({
                "oracle_equivalence": {"count": 20, "enumerate_count": 1},
                "consensus_identity": {"count": 6},
                "structure_identities": {"trials": 20},
                "lyapunov_descent": {"count": 10},
                "merit_exactness": {"count": 6},
                "ledger_audit": {"count": 3},
                "determinism": {"count": 2},
            }[name])
        out.append(fn(**kw))
    return out
