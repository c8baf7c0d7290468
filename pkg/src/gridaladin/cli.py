"""Command-line entry point: ``gridaladin --experiment KIND [options]``.

Experiments write into ``--out`` (default ``$GRIDALADIN_OUT/<experiment>`` or
``runs/<experiment>``)::

    history.csv    per-iteration solver trace (long format, one row per iterate)
    ledger.csv     per-iteration float counts
    mpc_log.csv    closed-loop step log (closedloop only)
    summary.json   resolved configuration and results

Exit codes: 0 success, 1 check failure, 2 usage error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import checks
from .admm import AdmmConfig
from .aladin import AladinConfig, HISTORY_HEADER
from .data import generate_synthetic, load_scenario, output_root, write_csv, write_json
from .errors import GridAladinError, PreconditionError, ScenarioLoadError
from .experiments import (
    SWEEP_TARGETS,
    OPENLOOP_TARGETS,
    format_openloop,
    run_openloop,
    run_sweep,
    sweep_medians,
    openloop_summary,
)
from .mpc import MPC_ALADIN, REFERENCE_MODES, run_closed_loop

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NONCONV = 0, 1, 2, 3
EXPERIMENTS = ("openloop", "compare", "sweep", "closedloop", "verify")


class UsageError(Exception):
    pass


def parse_int_list(text: str) -> list[int]:
    """``"0-4,7"`` -> ``[0, 1, 2, 3, 4, 7]``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def parse_float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gridaladin",
        description="Distributed peak-shaving experiments (ALADIN vs ADMM).",
    )
    p.add_argument("--config", type=Path, help="JSON config; command-line flags override it")
    p.add_argument("--experiment", choices=EXPERIMENTS, help="experiment kind")
    p.add_argument("--solver", choices=("aladin", "admm", "both"), help="solver selection")
    p.add_argument("--agents", help="household counts, e.g. 100 or 10,50,100")
    p.add_argument("--seeds", help="seed list, e.g. 0-19 or 1,2,3")
    p.add_argument("--accuracy", help="accuracy targets, e.g. 1e-2,1e-4,1e-6")
    p.add_argument("--steps", type=int, help="closed-loop MPC steps")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--transport", choices=("seq", "par"), help="message transport mode")
    p.add_argument("--mode", choices=REFERENCE_MODES, help="closed-loop reference source")
    p.add_argument("--compare-cold", action="store_true",
                   help="closedloop: also solve every step from zero and log its iterations")
    p.add_argument("--mutate", action="store_true",
                   help="verify: inject a sign fault into the dual update")
    p.add_argument("--quick", action="store_true", help="verify: smaller instance counts")
    p.add_argument("--svg", action="store_true", help="also write SVG charts (needs matplotlib)")
    return p


DEFAULTS = {
    "experiment": "openloop",
    "solver": "both",
    "agents": [100],
    "seeds": [0],
    "accuracy": None,
    "steps": 60,
    "transport": "seq",
    "mode": "reference-online",
    "aladin": {},
    "admm": {"max_iters": 500},
    "scenario": None,
    "zeta_csv": None,
    "name": None,
}


def resolve(args) -> dict:
    """Merge defaults, the JSON config and command-line flags."""
    cfg = json.loads(json.dumps(DEFAULTS))
    base = Path(".")
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
        base = args.config.parent
    for key in ("experiment", "solver", "steps", "transport", "mode"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    try:
        if args.agents is not None:
            cfg["agents"] = parse_int_list(args.agents)
        if args.seeds is not None:
            cfg["seeds"] = parse_int_list(args.seeds)
        if args.accuracy is not None:
            cfg["accuracy"] = parse_float_list(args.accuracy)
    except ValueError as exc:
        raise UsageError(f"malformed list argument: {exc}") from exc
    if not cfg["seeds"]:
        raise UsageError("seed list is empty")
    if not cfg["agents"] or min(cfg["agents"]) < 1:
        raise UsageError("agent counts must be positive")
    if cfg["accuracy"] is None:
        cfg["accuracy"] = list(SWEEP_TARGETS if cfg["experiment"] == "sweep" else OPENLOOP_TARGETS)
    if not cfg["accuracy"] or not all(0.0 < a < 1.0 for a in cfg["accuracy"]):
        raise UsageError("accuracy targets must lie in (0, 1)")
    if cfg["steps"] < 1:
        raise UsageError("steps must be positive")
    if isinstance(cfg["scenario"], str):
        cfg["scenario"] = str((base / cfg["scenario"]).resolve())
    if cfg["zeta_csv"] is not None:
        cfg["zeta_csv"] = str((base / cfg["zeta_csv"]).resolve())
    if cfg["mode"] == "reference-external" and cfg["zeta_csv"] is None:
        raise UsageError("reference-external mode needs zeta_csv in the config")
    try:
        AladinConfig(**cfg["aladin"])
        AdmmConfig(**cfg["admm"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid solver config: {exc}") from exc
    out = args.out or output_root() / (cfg["name"] or cfg["experiment"])
    cfg["out"] = str(out)
    return cfg


def solvers_of(cfg) -> tuple[str, ...]:
    return ("aladin", "admm") if cfg["solver"] == "both" else (cfg["solver"],)


def _history_rows(solver, seed, rho, history):
    for h in history:
        yield (solver, seed, rho, h.iter, repr(h.delta_max), repr(h.merit), h.Pi,
               repr(h.dist_to_opt), h.fwd_floats, h.bwd_floats)


LONG_HISTORY = ["solver", "seed", "rho"] + HISTORY_HEADER
LONG_LEDGER = ["solver", "seed", "rho", "iteration", "fwd_floats", "bwd_floats"]


def _ledger_rows(solver, seed, rho, history):
    for h in history:
        yield (solver, seed, rho, h.iter, h.fwd_floats, h.bwd_floats)


def _openloop_runs(cfg, log):
    I = cfg["agents"][0]
    solvers = solvers_of(cfg)
    targets = tuple(sorted(cfg["accuracy"], reverse=True))
    acfg = AladinConfig(**{"eps": 1e-12, "max_iters": 100, **cfg["aladin"]})
    runs = []
    for seed in cfg["seeds"]:
        t0 = time.perf_counter()
        run = run_openloop(
            I, seed, targets, solvers, aladin_config=acfg,
            admm_max_iters=cfg["admm"].get("max_iters", 500), transport_mode=cfg["transport"],
        )
        runs.append(run)
        log(f"seed {seed}: aladin {run.aladin or '-'} admm {run.admm or '-'} "
            f"({time.perf_counter() - t0:.1f}s)")
    return runs, targets


def _write_runs(out: Path, runs):
    hist, ledg = [], []
    for r in runs:
        if r.aladin_history:
            hist.extend(_history_rows("aladin", r.seed, "", r.aladin_history))
            ledg.extend(_ledger_rows("aladin", r.seed, "", r.aladin_history))
        for rho, h in r.admm_histories.items():
            hist.extend(_history_rows("admm", r.seed, rho, h))
            ledg.extend(_ledger_rows("admm", r.seed, rho, h))
    write_csv(out / "history.csv", LONG_HISTORY, hist)
    write_csv(out / "ledger.csv", LONG_LEDGER, ledg)


def _missed(runs, solvers, tight) -> bool:
    for r in runs:
        for s in solvers:
            if getattr(r, s).get(tight) is None:
                return True
    return False


def cmd_openloop(cfg, log) -> int:
    out = Path(cfg["out"])
    runs, targets = _openloop_runs(cfg, log)
    _write_runs(out, runs)
    rows = openloop_summary(runs, targets)
    log(format_openloop(rows))
    solvers = solvers_of(cfg)
    write_json(out / "summary.json", {
        "config": cfg,
        "table": rows,
        "per_seed": [
            {"seed": r.seed, "k": r.k, **{s: {str(t): getattr(r, s).get(t) for t in targets}
                                          for s in solvers},
             **({"admm_rho": {str(t): r.admm_rho.get(t) for t in targets}} if "admm" in solvers else {})}
            for r in runs
        ],
    })
    if cfg.get("svg"):
        _svg_convergence(out / "convergence.svg", runs[0])
    return EXIT_NONCONV if _missed(runs, solvers, min(targets)) else EXIT_OK


def cmd_compare(cfg, log) -> int:
    """Single-instance convergence curves for both solvers."""
    cfg = {**cfg, "seeds": cfg["seeds"][:1], "solver": "both"}
    out = Path(cfg["out"])
    runs, targets = _openloop_runs(cfg, log)
    _write_runs(out, runs)
    run = runs[0]
    best_rho = run.admm_rho.get(min(targets))
    if best_rho is None:
        best_rho = min(run.admm_histories, key=lambda r: run.admm_histories[r][-1].dist_to_opt)
    ah = {h.iter: h.dist_to_opt for h in run.aladin_history}
    bh = {h.iter: h.dist_to_opt for h in run.admm_histories[best_rho]}
    n = max(len(ah), len(bh))
    write_csv(out / "convergence.csv", ["iter", "aladin", "admm"], (
        (j, repr(ah[j]) if j in ah else "", repr(bh[j]) if j in bh else "") for j in range(n)
    ))
    write_json(out / "summary.json", {
        "config": cfg, "seed": run.seed, "k": run.k, "admm_rho": best_rho,
        "aladin": {str(t): run.aladin.get(t) for t in targets},
        "admm": {str(t): run.admm.get(t) for t in targets},
    })
    log(f"aladin {run.aladin}  admm(rho={best_rho}) {run.admm}")
    if cfg.get("svg"):
        _svg_convergence(out / "convergence.svg", run)
    return EXIT_NONCONV if _missed(runs, ("aladin", "admm"), min(targets)) else EXIT_OK


def cmd_sweep(cfg, log) -> int:
    out = Path(cfg["out"])
    solvers = solvers_of(cfg)
    targets = tuple(sorted(cfg["accuracy"], reverse=True))
    points = run_sweep(cfg["agents"], cfg["seeds"], targets, solvers,
                       admm_max_iters=cfg["admm"].get("max_iters", 500),
                       transport_mode=cfg["transport"])
    rows = []
    for p in points:
        for s in solvers:
            for t in targets:
                rho = p.admm_rho.get(t, "") if s == "admm" else ""
                its = getattr(p, s).get(t)
                rows.append((p.I, p.seed, s, t, "" if its is None else its, "" if rho is None else rho))
    write_csv(out / "sweep.csv", ["agents", "seed", "solver", "target", "iterations", "rho"], rows)
    medians = {s: {str(t): sweep_medians(points, s, t) for t in targets} for s in solvers}
    write_json(out / "summary.json", {"config": cfg, "medians": medians})
    for s in solvers:
        for t in targets:
            log(f"{s} {t:g}: " + ", ".join(f"I={I}: {m:g}" for I, m in sweep_medians(points, s, t).items()))
    missed = any(getattr(p, s).get(min(targets)) is None for p in points for s in solvers)
    return EXIT_NONCONV if missed else EXIT_OK


def _closedloop_scenario(cfg):
    if cfg["scenario"] is not None:
        return load_scenario(cfg["scenario"])
    return generate_synthetic(cfg["agents"][0], days=3.0, seed=cfg["seeds"][0])


def _zeta_stream(cfg):
    if cfg["zeta_csv"] is None:
        return None
    data = np.genfromtxt(cfg["zeta_csv"], delimiter=",", names=True)
    if "zeta" not in data.dtype.names:
        raise UsageError("zeta_csv needs a 'zeta' column")
    zeta = np.atleast_1d(np.asarray(data["zeta"], dtype=float))
    if not np.all(np.isfinite(zeta)):
        raise UsageError(f"zeta_csv has non-numeric or non-finite values in row {int(np.argmin(np.isfinite(zeta))) + 2}")
    return zeta


def cmd_closedloop(cfg, log) -> int:
    out = Path(cfg["out"])
    scenario = _closedloop_scenario(cfg)
    zeta = _zeta_stream(cfg)
    solvers = solvers_of(cfg)
    summaries = {}
    flagged = 0
    for s in solvers:
        t0 = time.perf_counter()

        def progress(e, s=s):
            log(f"{s} k={e.k}: {e.iterations} its to target, status {e.status}"
                + (f", cold {e.cold_iterations}" if e.cold_iterations is not None else ""))

        mpc = run_closed_loop(
            scenario, cfg["steps"], s, cold_compare=cfg.get("compare_cold", False),
            aladin_config=AladinConfig(**{**MPC_ALADIN, **cfg["aladin"]}),
            admm_config=AdmmConfig(**{"rho": 10.0, **cfg["admm"]}),
            mode=cfg["mode"], zeta_stream=zeta, transport_mode=cfg["transport"], progress=progress,
        )
        target = out if len(solvers) == 1 else out / s
        mpc.write(target)
        summaries[s] = {**mpc.summary(), "seconds": time.perf_counter() - t0}
        flagged += summaries[s]["flagged_steps"]
        log(f"{s}: mean iterations {summaries[s]['mean_iterations']}, "
            f"variance {summaries[s]['variance_controlled']:.4g} vs "
            f"{summaries[s]['variance_uncontrolled']:.4g} uncontrolled")
    write_json(out / "summary.json", {"config": cfg, "results": summaries})
    return EXIT_NONCONV if flagged else EXIT_OK


def cmd_verify(cfg, log) -> int:
    out = Path(cfg["out"])
    results = checks.run_suite(mutate=cfg.get("mutate", False), quick=cfg.get("quick", False))
    for r in results:
        log(r.line() + f" [{r.seconds:.1f}s]")
    write_json(out / "summary.json", {
        "config": cfg,
        "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail, "seconds": r.seconds}
                   for r in results],
        "passed": all(r.passed for r in results),
    })
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


COMMANDS = {
    "openloop": cmd_openloop,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "closedloop": cmd_closedloop,
    "verify": cmd_verify,
}


def _svg_convergence(path: Path, run) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; skipping SVG output", file=sys.stderr)
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    if run.aladin_history:
        ax.semilogy([h.iter for h in run.aladin_history],
                    [max(h.dist_to_opt, 1e-16) for h in run.aladin_history], label="ALADIN")
    for rho, hist in run.admm_histories.items():
        ax.semilogy([h.iter for h in hist], [max(h.dist_to_opt, 1e-16) for h in hist],
                    label=f"ADMM rho={rho:g}", alpha=0.7)
    ax.set_xlabel("iteration")
    ax.set_ylabel("max |v - u*|")
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gridaladin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    cfg["svg"] = args.svg
    cfg["compare_cold"] = args.compare_cold or cfg.get("compare_cold", False)
    cfg["mutate"] = args.mutate
    cfg["quick"] = args.quick
    Path(cfg["out"]).mkdir(parents=True, exist_ok=True)

    def log(msg):
        print(msg, flush=True)

    try:
        return COMMANDS[cfg["experiment"]](cfg, log)
    except UsageError as exc:
        print(f"gridaladin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioLoadError, PreconditionError) as exc:
        print(f"gridaladin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GridAladinError as exc:
        print(f"gridaladin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NONCONV


if __name__ == "__main__":
    sys.exit(main())
