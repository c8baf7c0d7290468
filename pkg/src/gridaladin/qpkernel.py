"""Dense QP kernel: primal active-set solver, equality KKT solves, centralized oracle.

The active-set method is the textbook range-space variant: with the inverse
Hessian cached, each working-set change costs one small Cholesky
factorization of ``D_W H^{-1} D_W'``.  It is deterministic and warm-startable
from a previous primal point and working set, which the distributed solvers
exploit heavily since their local Hessians are constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .errors import InfeasibleQpError, PreconditionError, QpNonConvergenceError, RankDeficientError

TOL_KKT = 1e-10
TOL_ACT = 1e-8


@dataclass
class DenseQp:
    """``min 0.5 v'Qv + q'v  s.t.  D v <= d``."""

    Q: np.ndarray
    q: np.ndarray
    D: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        self.d = np.asarray(self.d, dtype=float).ravel()
        n = self.Q.shape[0]
        if self.Q.shape != (n, n) or self.q.shape != (n,):
            raise ValueError("Q must be n x n and q length n")
        if self.D.size == 0:
            self.D = np.zeros((0, n))
        if self.D.shape[1] != n or self.D.shape[0] != self.d.shape[0]:
            raise ValueError("D must be m x n and d length m")


@dataclass
class QpSolution:
    v: np.ndarray
    kappa: np.ndarray
    active: tuple[int, ...]
    kkt_residual: float
    iterations: int
    working: tuple[int, ...] = ()
    weakly_active: tuple[int, ...] = ()

    @property
    def min_active_kappa(self) -> float:
        if not self.active:
            return np.inf
        return float(np.min(self.kappa[list(self.active)]))


def active_rows(D: np.ndarray, d: np.ndarray, v: np.ndarray, tol: float = TOL_ACT) -> np.ndarray:
    """Indices of rows with ``d_j - D_j v <= tol (1 + |d_j|)``, ties counted active."""
    slack = d - D @ v
    return np.flatnonzero(slack <= tol * (1.0 + np.abs(d)))


class ActiveSetSolver:
    """Primal active-set solver for a fixed ``(Q, D)`` pair.

    ``q`` and ``d`` are supplied per call so that a solver built once per
    subsystem can be reused across iterations with a cached ``Q^{-1}``.
    """

    def __init__(self, Q, D, tol_kkt=TOL_KKT, tol_act=TOL_ACT, max_iter=None):
        self.Q = np.asarray(Q, dtype=float)
        self.D = np.atleast_2d(np.asarray(D, dtype=float))
        n = self.Q.shape[0]
        if self.D.size == 0:
            self.D = np.zeros((0, n))
        self._chol = sla.cho_factor(self.Q, lower=True)
        self.H_inv = sla.cho_solve(self._chol, np.eye(n))
        self.H_inv = 0.5 * (self.H_inv + self.H_inv.T)
        self.row_norm = np.linalg.norm(self.D, axis=1)
        self.tol_kkt = tol_kkt
        self.tol_act = tol_act
        m = self.D.shape[0]
        self.max_iter = max_iter if max_iter is not None else 10 * (m + n) + 50

    # -- helpers -----------------------------------------------------------
    def _eqp(self, q, d, W):
        """Minimizer on ``D_W v = d_W`` and its multipliers."""
        if not W:
            return -self.H_inv @ q, np.zeros(0)
        DW = self.D[W]
        G = DW @ self.H_inv
        M = G @ DW.T
        rhs = -(d[W] + G @ q)
        try:
            L = np.linalg.cholesky(M)
            kap = sla.solve_triangular(
                L.T, sla.solve_triangular(L, rhs, lower=True, check_finite=False),
                lower=False, check_finite=False,
            )
        except np.linalg.LinAlgError:
            kap = np.linalg.lstsq(M, rhs, rcond=None)[0]
        v = -self.H_inv @ (q + DW.T @ kap)
        return v, kap

    def _phase1(self, d, x0):
        n = self.Q.shape[0]
        if x0 is not None:
            x0 = np.asarray(x0, dtype=float)
            if np.all(self.D @ x0 - d <= self.tol_act * (1.0 + np.abs(d))):
                return x0
        zero = np.zeros(n)
        if np.all(d >= -self.tol_act * (1.0 + np.abs(d))):
            return zero
        # min t  s.t.  D x - t <= d, t >= 0
        m = self.D.shape[0]
        c = np.zeros(n + 1)
        c[-1] = 1.0
        A_ub = np.hstack([self.D, -np.ones((m, 1))])
        bounds = [(None, None)] * n + [(0, None)]
        res = linprog(c, A_ub=A_ub, b_ub=d, bounds=bounds, method="highs")
        if res.status != 0 or res.x[-1] > 1e-9 * (1.0 + np.abs(d).max()):
            raise InfeasibleQpError("phase-1 found no feasible point for D v <= d")
        return res.x[:n]

    # -- main ----------------------------------------------------------------
    def solve(self, q, d, x0=None, working: Sequence[int] | None = None) -> QpSolution:
        q = np.asarray(q, dtype=float)
        d = np.asarray(d, dtype=float)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(d))):
            raise PreconditionError("QP data q, d must be finite")
        D = self.D
        m = D.shape[0]
        x, W = self._start(q, d, x0, working)

        bland_after = 2 * (m + len(q))
        in_W = np.zeros(m, dtype=bool)
        in_W[W] = True
        kap_W = np.zeros(0)
        dropped = -1
        for it in range(1, self.max_iter + 1):
            x_eq, kap_W = self._eqp(q, d, W)
            p = x_eq - x
            pn = np.max(np.abs(p)) if p.size else 0.0
            if pn <= 1e-9 * (1.0 + np.max(np.abs(x), initial=0.0)):
                x = x_eq
                neg = np.flatnonzero(kap_W < -self.tol_kkt)
                if neg.size == 0:
                    return self._finish(q, d, x, W, kap_W, it)
                if it > bland_after:
                    drop = min(neg, key=lambda j: W[j])
                else:
                    worst = kap_W[neg].min()
                    ties = neg[kap_W[neg] <= worst + 1e-14 * abs(worst)]
                    drop = min(ties, key=lambda j: W[j])
                dropped = W[drop]
                in_W[dropped] = False
                del W[drop]
                continue
            Dp = D @ p
            # a row just released with a negative multiplier cannot block
            # (up to roundoff); rows nearly parallel to the working span are skipped
            thresh = 1e-9 * self.row_norm * pn
            eligible = ~in_W
            if dropped >= 0:
                eligible[dropped] = False
                dropped = -1
            cand = np.flatnonzero(eligible & (Dp > thresh))
            alpha, block = 1.0, -1
            if cand.size:
                slack = np.maximum(d[cand] - D[cand] @ x, 0.0)
                ratios = slack / Dp[cand]
                rmin = ratios.min()
                if rmin < 1.0:
                    alpha = rmin
                    ties = cand[ratios <= rmin + 1e-14]
                    block = int(ties.min())
            x = x + alpha * p
            if block >= 0:
                W.append(block)
                in_W[block] = True
        raise QpNonConvergenceError(
            f"active-set solver exceeded {self.max_iter} iterations",
            iterations=self.max_iter,
            working=tuple(W),
        )

    def _start(self, q, d, x0, working):
        tol = self.tol_act * (1.0 + np.abs(d))
        x0_ok = x0 is not None and np.all(self.D @ np.asarray(x0, dtype=float) - d <= tol)
        if working is not None and len(working) and not x0_ok:
            # warm start from an index set alone: begin at the EQP point if feasible
            W = self._independent(sorted(set(int(j) for j in working)))
            if len(W) <= self.D.shape[1]:
                xw, _ = self._eqp(q, d, W)
                if np.all(self.D @ xw - d <= tol):
                    return xw, W
        x = self._phase1(d, x0)
        W = self._admissible_working(d, x, working) if working is not None else []
        return x, W

    def _independent(self, rows):
        if not rows:
            return []
        s = np.linalg.svd(self.D[rows], compute_uv=False)
        if len(rows) <= self.D.shape[1] and s[-1] > 1e-9 * s[0]:
            return list(rows)
        W: list[int] = []
        for j in rows:
            s = np.linalg.svd(self.D[W + [j]], compute_uv=False)
            if s[-1] > 1e-9 * s[0]:
                W.append(j)
        return W

    def _admissible_working(self, d, x, working):
        """Subset of ``working`` active at ``x`` with linearly independent rows."""
        slack = d - self.D @ x
        tight = [
            j for j in sorted(set(int(j) for j in working))
            if slack[j] <= self.tol_act * (1.0 + abs(d[j]))
        ]
        return self._independent(tight)

    def _refine(self, q, d, x, W, kap_W):
        # one correction step on the working-set KKT system
        r1 = -(self.Q @ x + q)
        if W:
            DW = self.D[W]
            r1 -= DW.T @ kap_W
            r2 = d[W] - DW @ x
            G = DW @ self.H_inv
            dk = np.linalg.lstsq(G @ DW.T, G @ r1 - r2, rcond=None)[0]
            dx = self.H_inv @ (r1 - DW.T @ dk)
            return x + dx, kap_W + dk
        return x + self.H_inv @ r1, kap_W

    def _finish(self, q, d, x, W, kap_W, it):
        x, kap_W = self._refine(q, d, x, W, kap_W)
        m = self.D.shape[0]
        kappa = np.zeros(m)
        if W:
            kappa[W] = np.maximum(kap_W, 0.0)
        stat = self.Q @ x + q + self.D.T @ kappa
        viol = np.max(self.D @ x - d, initial=0.0)
        comp = np.max(np.abs(kappa * (self.D @ x - d)), initial=0.0)
        res = float(max(np.max(np.abs(stat)), max(viol, 0.0), comp))
        act = active_rows(self.D, d, x, self.tol_act)
        weak = tuple(int(j) for j in act if kappa[j] <= self.tol_act)
        return QpSolution(
            v=x,
            kappa=kappa,
            active=tuple(int(j) for j in act),
            kkt_residual=res,
            iterations=it,
            working=tuple(W),
            weakly_active=weak,
        )


def solve_active_set(qp: DenseQp, warm_active=None, x0=None, **kw) -> QpSolution:
    """Solve a dense strongly convex QP with the primal active-set method."""
    solver = ActiveSetSolver(qp.Q, qp.D, **kw)
    return solver.solve(qp.q, qp.d, x0=x0, working=warm_active)


def solve_equality_kkt(H, g, A, b, refine: int = 1):
    """Solve ``H x + g + A' lam = 0, A x = b`` via Cholesky and a Schur complement.

    ``refine`` steps of iterative refinement use residuals accumulated in
    extended precision, which keeps the oracle accurate for ill-conditioned
    ``H``.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    n = H.shape[0]
    chol = sla.cho_factor(H, lower=True)
    if A.size == 0 or A.shape[0] == 0:
        return -sla.cho_solve(chol, g), np.zeros(0)
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise RankDeficientError("equality constraint matrix is rank deficient")
    HiAt = sla.cho_solve(chol, A.T)
    S = A @ HiAt
    S = 0.5 * (S + S.T)
    schol = sla.cho_factor(S, lower=True)

    def solve(r1, r2):
        # H x + A' l = r1, A x = r2
        Hir1 = sla.cho_solve(chol, r1)
        lam = sla.cho_solve(schol, A @ Hir1 - r2)
        x = Hir1 - HiAt @ lam
        return x, lam

    x, lam = solve(-g, b)
    if refine:
        Hl, Al = H.astype(np.longdouble), A.astype(np.longdouble)
        gl, bl = g.astype(np.longdouble), b.astype(np.longdouble)
        for _ in range(refine):
            xl, ll = x.astype(np.longdouble), lam.astype(np.longdouble)
            r1 = -(Hl @ xl + gl + Al.T @ ll)
            r2 = bl - Al @ xl
            dx, dl = solve(r1.astype(float), r2.astype(float))
            x, lam = x + dx, lam + dl
    return x, lam


@dataclass
class CentralizedSolution:
    z_bar: np.ndarray
    u: list[np.ndarray]
    lam: np.ndarray
    kappa: list[np.ndarray]
    active: list[tuple[int, ...]]
    kkt_residual: float
    iterations: int
    local: list[QpSolution] = field(default_factory=list)

    @property
    def strictly_complementary(self) -> bool:
        return all(not s.weakly_active for s in self.local)

    @property
    def min_active_kappa(self) -> float:
        return min((s.min_active_kappa for s in self.local), default=np.inf)


def _interior_point_start(grid):
    """Moderate-accuracy primal-dual point of the coupled QP from Clarabel."""
    import clarabel
    import scipy.sparse as sp

    N, I = grid.N, grid.I
    c = grid.f0_weight
    P = sp.block_diag([2 * c * sp.eye(N)] + [sp.csc_matrix(loc.Q) for loc in grid.locals])
    q = np.concatenate([-2 * c * grid.zeta] + [np.zeros(2 * N)] * I)
    A_eq = sp.hstack([sp.eye(N)] + [sp.csc_matrix(-loc.A) for loc in grid.locals])
    D_all = sp.block_diag([sp.csc_matrix(loc.D) for loc in grid.locals])
    A_in = sp.hstack([sp.csc_matrix((D_all.shape[0], N)), D_all])
    A = sp.vstack([A_eq, A_in]).tocsc()
    b = np.concatenate([grid.w_bar] + [loc.d for loc in grid.locals])
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    cones = [clarabel.ZeroConeT(N), clarabel.NonnegativeConeT(A.shape[0] - N)]
    sol = clarabel.DefaultSolver(sp.triu(P).tocsc(), q, A, b, cones, settings).solve()
    x = np.asarray(sol.x)
    y = np.asarray(sol.z)
    u = [x[N + 2 * N * i : N + 2 * N * (i + 1)] for i in range(I)]
    return y[:N], u


def solve_centralized(
    grid, tol: float = 1e-12, max_iter: int = 200, warm: bool = True
) -> CentralizedSolution:
    """Exact solution of the coupled QP by a damped Newton method on its dual.

    For fixed ``lam`` the problem separates: ``z(lam) = zeta - z_scale lam``
    and every ``u_i(lam)`` solves a small QP.  The dual function is concave,
    piecewise quadratic and continuously differentiable, so Newton steps with
    the active-set generalized Hessian and backtracking terminate after
    finitely many pieces.  With ``warm`` the Newton iteration starts from an
    interior-point estimate, after which it typically needs one or two
    steps.  The returned point satisfies the full KKT system of the coupled QP.
    """
    N, I = grid.N, grid.I
    c = grid.f0_weight
    zs = grid.z_scale
    solvers = [ActiveSetSolver(loc.Q, loc.D) for loc in grid.locals]
    prev: list[QpSolution | None] = [None] * I
    start: list[tuple | None] = [None] * I
    lam0 = np.zeros(N)
    if warm:
        lam0, u_ip = _interior_point_start(grid)
        for i, (loc, ui) in enumerate(zip(grid.locals, u_ip)):
            start[i] = tuple(np.flatnonzero(loc.d - loc.D @ ui <= 1e-7 * (1 + np.abs(loc.d))))

    def evaluate(lam):
        sols = []
        for i, (loc, sol) in enumerate(zip(grid.locals, solvers)):
            p = prev[i]
            x0 = p.v if p is not None else None
            ws = p.working if p is not None else start[i]
            sols.append(sol.solve(-loc.A.T @ lam, loc.d, x0=x0, working=ws))
        z = grid.zeta - zs * lam
        agg = grid.w_bar + sum(loc.A @ s.v for loc, s in zip(grid.locals, sols))
        grad = z - agg
        dz = z - grid.zeta
        phi = c * dz @ dz + lam @ z - lam @ grid.w_bar
        for loc, s in zip(grid.locals, sols):
            phi += 0.5 * s.v @ loc.Q @ s.v - lam @ (loc.A @ s.v)
        return phi, grad, sols

    lam = lam0
    phi, grad, sols = evaluate(lam)
    scale = 1.0 + np.max(np.abs(grid.w_bar)) + np.max(np.abs(grid.zeta))
    it = 0
    for it in range(1, max_iter + 1):
        prev = sols
        if np.max(np.abs(grad)) <= tol * scale:
            break
        S = zs * np.eye(N)
        for loc, s, solver in zip(grid.locals, sols, solvers):
            W = list(s.working)
            Qi = solver.H_inv
            if W:
                DW = loc.D[W]
                G = DW @ Qi
                M = Qi - G.T @ np.linalg.solve(G @ DW.T, G)
            else:
                M = Qi
            S += loc.A @ M @ loc.A.T
        step = np.linalg.solve(S, grad)
        slope = grad @ step
        t = 1.0
        while True:
            lam_t = lam + t * step
            phi_t, grad_t, sols_t = evaluate(lam_t)
            # near the optimum phi differences drown in roundoff; a reduced
            # gradient is then the reliable acceptance signal
            if phi_t >= phi + 1e-4 * t * slope or np.max(np.abs(grad_t)) < 0.5 * np.max(
                np.abs(grad)
            ):
                break
            if t < 1e-10:
                break
            t *= 0.5
        lam, phi, grad, sols = lam_t, phi_t, grad_t, sols_t
    else:
        raise QpNonConvergenceError("dual Newton oracle did not converge", iterations=max_iter)

    u = [s.v for s in sols]
    z_bar = grid.w_bar + sum(loc.A @ ui for loc, ui in zip(grid.locals, u))
    res = np.max(np.abs(2 * c * (z_bar - grid.zeta) + lam))
    for loc, s in zip(grid.locals, sols):
        res = max(res, s.kkt_residual)
    return CentralizedSolution(
        z_bar=z_bar,
        u=u,
        lam=lam,
        kappa=[s.kappa for s in sols],
        active=[s.active for s in sols],
        kkt_residual=float(res),
        iterations=it,
        local=sols,
    )


def full_qp_data(grid):
    """Reduced dense form of the coupled QP with ``z`` eliminated.

    Returns ``(H, q, D, d)`` over the stacked ``u`` for small instances (testing
    and brute-force oracles only).
    """
    A = np.hstack([loc.A for loc in grid.locals])
    c = grid.f0_weight
    H = sla.block_diag(*[loc.Q for loc in grid.locals]) + 2 * c * A.T @ A
    q = 2 * c * A.T @ (grid.w_bar - grid.zeta)
    D = sla.block_diag(*[loc.D for loc in grid.locals])
    d = np.concatenate([loc.d for loc in grid.locals])
    return H, q, D, d


@dataclass
class EnumerationResult:
    u: list[np.ndarray]
    lam: np.ndarray
    z_bar: np.ndarray
    valid: int  # candidate active-set combinations satisfying the full KKT system
    checked: int
    spread: float  # largest deviation between valid candidates


def _local_affine_pieces(loc):
    """Every linearly independent row subset of one agent with its KKT point affine in ``lam``."""
    n, m = loc.D.shape[1], loc.D.shape[0]
    pieces = []
    for size in range(0, n + 1):
        for W in combinations(range(m), size):
            DW = loc.D[list(W)]
            if size and np.linalg.matrix_rank(DW) < size:
                continue
            K = np.block([[loc.Q, DW.T], [DW, np.zeros((size, size))]])
            rhs = np.zeros((n + size, 1 + loc.N))
            rhs[n:, 0] = loc.d[list(W)]
            rhs[:n, 1:] = loc.A.T
            sol = np.linalg.solve(K, rhs)
            u0, M = sol[:n, 0], sol[:n, 1:]
            k0, Km = sol[n:, 0], sol[n:, 1:]
            pieces.append((W, u0, M, k0, Km))
    return pieces


def enumerate_centralized(grid, tol: float = 1e-9) -> EnumerationResult:
    """Exhaustive active-set enumeration for two-agent instances.

    For fixed per-agent active sets every primal and dual quantity is affine
    in the coupling dual ``lam``, which the coupling constraint then fixes.
    All products of linearly independent per-agent subsets are tried; a
    convex QP with a unique solution has at least one such product that
    satisfies primal and dual feasibility.  Cost grows as ``(sum_k C(8N,k))^2``.
    """
    if grid.I != 2:
        raise ValueError("exhaustive enumeration is implemented for I = 2 only")
    N = grid.N
    locs = grid.locals
    parts = []
    for loc in locs:
        pcs = _local_affine_pieces(loc)
        P = np.array([loc.A @ p[2] for p in pcs])  # A M, (S, N, N)
        p0 = np.array([loc.A @ p[1] for p in pcs])  # A u0
        s0 = np.array([loc.d - loc.D @ p[1] for p in pcs])  # slack constant
        G = np.array([loc.D @ p[2] for p in pcs])  # slack slope
        parts.append((pcs, P, p0, s0, G))
    (pc1, P1, p01, s01, G1), (pc2, P2, p02, s02, G2) = parts
    rhs0 = grid.zeta - grid.w_bar
    eye = grid.z_scale * np.eye(N)
    found = []
    for a in range(len(pc1)):
        S = eye + P1[a] + P2
        lam = np.linalg.solve(S, (rhs0 - p01[a] - p02)[..., None])[..., 0]  # (S2, N)
        ok = np.all(s02 - np.einsum("bmn,bn->bm", G2, lam) >= -tol, axis=1)
        ok &= np.all(s01[a] - lam @ G1[a].T >= -tol, axis=1)
        _, _, _, k0, Km = pc1[a]
        if len(k0):
            ok &= np.all(k0 + lam @ Km.T >= -tol, axis=1)
        for b in np.flatnonzero(ok):
            _, _, _, k0b, Kmb = pc2[b]
            if len(k0b) and np.any(k0b + Kmb @ lam[b] < -tol):
                continue
            found.append((a, int(b), lam[b]))
    checked = len(pc1) * len(pc2)
    if not found:
        raise InfeasibleQpError("no active-set combination satisfies the KKT system")
    sols = []
    for a, b, lam in found:
        u1 = pc1[a][1] + pc1[a][2] @ lam
        u2 = pc2[b][1] + pc2[b][2] @ lam
        sols.append((u1, u2, lam))
    ref = sols[0]
    spread = max(
        max(np.max(np.abs(s[0] - ref[0])), np.max(np.abs(s[1] - ref[1])), np.max(np.abs(s[2] - ref[2])))
        for s in sols
    )
    u = [ref[0], ref[1]]
    return EnumerationResult(
        u=u,
        lam=ref[2],
        z_bar=grid.zeta - grid.z_scale * ref[2],
        valid=len(sols),
        checked=checked,
        spread=float(spread),
    )
