"""ALADIN against ADMM on one open-loop peak-shaving problem.

Builds a 20-household fleet, solves it centrally, then prints how many
iterations each distributed method needs to reach a few distances from the
centralized optimum and how many floats crossed the network.

    python3 demos/openloop_comparison.py
"""

from gridaladin.aladin import AladinConfig, iterations_to, run_aladin
from gridaladin.experiments import admm_iterations, grid_at, openloop_scenario, openloop_time
from gridaladin.qpkernel import solve_centralized
from gridaladin.simnet import Transport

I, SEED = 20, 0
TARGETS = (1e-2, 1e-4, 1e-6)

sc = openloop_scenario(I, SEED)
# sigma0 is sized for 100 households; the tracking weight scales like sigma0 / I
sc.sigma0 *= I / 100
k = openloop_time(sc)
grid = grid_at(sc, k)
oracle = solve_centralized(grid)
print(f"{I} households, horizon N={grid.N}, start k={k}, ||lam*||_inf={abs(oracle.lam).max():.3f}")

with Transport("seq") as tr:
    res = run_aladin(grid, AladinConfig(eps=1e-12, max_iters=100), tr, oracle=oracle)
    sent = tr.ledger.totals()
admm, rho, _ = admm_iterations(grid, oracle, TARGETS)

print("target    ALADIN   ADMM (best rho)")
for t in TARGETS:
    print(f"{t:<9.0e} {iterations_to(res.history, t)!s:<8} {admm[t]!s} (rho={rho[t]})")
print("ALADIN traffic:", sent)
