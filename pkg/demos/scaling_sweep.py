"""Iteration counts as the fleet grows.

Smaller fleets are prefixes of the largest one, so every row solves the same
kind of problem. ALADIN stays flat; ADMM needs several times more iterations
and its count varies with the instance.

    python3 demos/scaling_sweep.py
"""

from gridaladin.experiments import run_sweep, sweep_medians

AGENTS = (5, 20, 50)
points = run_sweep(AGENTS, seeds=range(3))
al, ad = sweep_medians(points, "aladin", 1e-3), sweep_medians(points, "admm", 1e-3)
print("agents  ALADIN  ADMM   (median iterations to 1e-3 over 3 seeds)")
for I in AGENTS:
    print(f"{I:<7} {al[I]:<7.1f} {ad[I]:.1f}")
