"""Command-line experiment runner.

    rmfg run CONFIG [--out DIR] [--seed N] [--npaths N]
    rmfg list-scenarios

The config is an INI file::

    [run]
    scenario = toy-coupled
    pipeline = all          ; solve | verify | nplayer | all
    seed = 0

    [scenario]              ; numeric overrides of the scenario parameters
    kappa = 0.2

    [grid]                  ; steps, dx, xmax
    [mfg]                   ; damping, tol, max_iter, npaths, schedule, quad_nodes
    [verify]                ; npaths, q, levels, shifts
    [nplayer]               ; players, replications

All randomness descends from ``[run] seed``: each stage derives its own
stream from it by label (see ``rmfg.seeding``).  Exit status: 0 when every
check passes, 1 when a check fails, 2 on an unusable config.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .dynamics import RelaxedPolicy, check_assumptions, simulate_reflected
from .errors import InvalidInputError
from .mfg import config_for, self_consistency, solve_fixed_point, solve_with_truncation, truncation_gaps
from .nplayer import GameConfig, estimate_deviation_gain, simulate_nplayer
from .measures import flow_distance
from .scenarios import REGISTRY, get_scenario
from .seeding import derive_seed
from .verify import (
    calibrate_allowance,
    check_boundary_integral_convergence,
    check_martingale,
    check_moment_bounds,
    check_skorokhod,
    probe_continuity,
)

log = logging.getLogger("rmfg")

PIPELINES = ("solve", "verify", "nplayer", "all")


class ConfigError(Exception):
    pass


def _floats(text):
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in _floats(text)]


def load_config(path, seed=None, npaths=None) -> dict:
    """Parse and complete a config file; every effective value ends up in the result."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    known = {"run", "scenario", "grid", "mfg", "verify", "nplayer"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    sec = {s: dict(cp[s]) if cp.has_section(s) else {} for s in known}
    try:
        name = sec["run"].get("scenario")
        if not name:
            raise ConfigError("[run] scenario is required")
        sc = get_scenario(name)
        pipeline = sec["run"].get("pipeline", "all")
        if pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {pipeline!r}")
        root = int(sec["run"].get("seed", 0)) if seed is None else int(seed)
        params = sc.parameters(**{k: float(v) for k, v in sec["scenario"].items()})
        g = sec["grid"]
        grid = {
            "steps": int(g.get("steps", sc.steps)),
            "dx": float(g.get("dx", sc.state_dx)),
            "xmax": float(g["xmax"]) if "xmax" in g else None,
        }
        m = sec["mfg"]
        d = sc.mfg
        mfg = {
            "damping": float(m.get("damping", d["damping"])),
            "tol": float(m.get("tol", d["tol"])),
            "max_iter": int(m.get("max_iter", d["max_iter"])),
            "npaths": int(m.get("npaths", d["npaths"])) if npaths is None else int(npaths),
            "schedule": _floats(m.get("schedule", "")),
            "quad_nodes": int(m.get("quad_nodes", 7)),
        }
        v = sec["verify"]
        verify = {
            "npaths": int(v.get("npaths", 20000)) if npaths is None else int(npaths),
            "q": float(v.get("q", 1.0)),
            "levels": _floats(v.get("levels", "0.01, 0.005, 0.0025")),
            "shifts": _floats(v.get("shifts", "0.01, 0.02, 0.04")),
        }
        n = sec["nplayer"]
        nplayer = {
            "players": _ints(n.get("players", "8, 32, 128")),
            "replications": int(n.get("replications", 200)),
        }
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return {
        "scenario": name,
        "pipeline": pipeline,
        "seed": root,
        "params": params,
        "grid": grid,
        "mfg": mfg,
        "verify": verify,
        "nplayer": nplayer,
    }


class _Run:
    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        self.out = out
        self.checks: list[tuple[str, float, float, bool]] = []
        self.info: dict = {}

    def check(self, name, value, threshold, passed):
        self.checks.append((name, float(value), float(threshold), bool(passed)))
        log.info("%-34s %-12.6g %-12.6g %s", name, value, threshold, "pass" if passed else "FAIL")


def _fmt(x):
    return repr(float(x))


def _solve(run: _Run):
    cfg = run.cfg
    sc = get_scenario(cfg["scenario"])
    c = sc.coefficients(**cfg["params"])
    cg = sc.control_grid(**cfg["params"])
    g = cfg["grid"]
    mcfg = config_for(c, sc.grid(g["steps"]), cg, dx=g["dx"], xmax=g["xmax"], seed=cfg["seed"],
                      damping=cfg["mfg"]["damping"], tol=cfg["mfg"]["tol"], max_iter=cfg["mfg"]["max_iter"],
                      npaths=cfg["mfg"]["npaths"], schedule=tuple(cfg["mfg"]["schedule"]),
                      quad_nodes=cfg["mfg"]["quad_nodes"])
    run.info["effective"] = mcfg.echo()
    rep = check_assumptions(c, cg, seed=derive_seed(cfg["seed"], "assumptions"), T=mcfg.grid.horizon)
    run.check("assumption_spot_check", max(v for k, v in rep.items() if k != "passed"), 1.0, rep["passed"])
    if mcfg.schedule:
        levels = solve_with_truncation(c, mcfg)
        gaps = truncation_gaps(levels)
        with open(run.out / "truncation.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "value", "converged", "gap_to_previous"])
            for i, (n, s) in enumerate(levels):
                w.writerow([_fmt(n), _fmt(s.value), int(s.converged), _fmt(gaps[i - 1]) if i else ""])
        if len(gaps) >= 2:
            mono = all(b <= a for a, b in zip(gaps[1:], gaps[2:]))
            run.check("truncation_gaps_nonincreasing", gaps[-1], gaps[1], mono)
        sol = levels[-1][1]
    else:
        sol = solve_fixed_point(c, mcfg)
    sol.flow.to_csv(run.out / "flow.csv")
    sol.policy.to_csv(run.out / "policy.csv")
    sol.dp.value_to_csv(run.out / "value.csv")
    sol.residuals_to_csv(run.out / "residuals.csv")
    run.info["value"] = sol.value
    run.info["converged"] = sol.converged
    run.info["iterations"] = sol.iterations
    run.info["nondirac_fraction"] = sol.policy.nondirac_fraction()
    last = sol.residuals[-1] if sol.residuals else math.inf
    run.check("fixed_point_converged", last, mcfg.tol, sol.converged)
    dist, noise = self_consistency(c, sol, mcfg)
    run.check("self_consistency", dist, mcfg.tol + 3 * noise, dist <= mcfg.tol + 3 * noise)
    run.check("state_grid_clamp_fraction", sol.clamp_fraction, 1e-3, sol.clamp_fraction <= 1e-3)
    return c, cg, mcfg, sol


def _verify(run: _Run, c, mcfg, sol):
    v = run.cfg["verify"]
    seed = run.cfg["seed"]
    pb = simulate_reflected(c, sol.flow, sol.policy, v["npaths"], derive_seed(seed, "verify", "bundle"))
    sk = check_skorokhod(pb)
    run.check("skorokhod_negativity", sk["max_negativity"], 0.0, sk["max_negativity"] == 0.0)
    run.check("skorokhod_monotone_K", sk["max_decrease"], 0.0, sk["max_decrease"] == 0.0)
    run.check("skorokhod_complementarity", sk["max_complementarity"], 0.0, sk["max_complementarity"] == 0.0)
    allow = calibrate_allowance(c, sol.flow, sol.policy, v["npaths"], derive_seed(seed, "verify", "calibration"))
    mr = check_martingale(pb, c, sol.flow, allowance=allow)
    mr.to_csv(run.out / "martingale.csv")
    run.check("martingale_pass_fraction", mr.pass_fraction, 0.9, mr.pass_fraction >= 0.9)
    mb = check_moment_bounds(pb, c, v["q"], mu=sol.flow)
    run.check("moment_bound_ratio", mb["ratio"], 1.0, mb["passed"])
    bc = check_boundary_integral_convergence(c, sol.flow, sol.policy, v["levels"],
                                             derive_seed(seed, "verify", "refinement"), npaths=v["npaths"])
    with open(run.out / "refinement.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dt", "sum_x_dk", "int_h_dk"])
        for row in zip(bc["dt"], bc["x_dk"], bc["h_dk"]):
            w.writerow([_fmt(x) for x in row])
    run.check("boundary_integral_cauchy", bc["cauchy_h_dk"][-1], bc["cauchy_h_dk"][0], bc["passed"])
    pc = probe_continuity(c, sol.flow, sol.policy, v["shifts"], derive_seed(seed, "verify", "continuity"),
                          npaths=v["npaths"])
    with open(run.out / "continuity.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shift", "cost", "delta", "ratio"])
        for r in pc["rows"]:
            w.writerow([_fmt(r[k]) for k in ("shift", "cost", "delta", "ratio")])
    worst = max((r["ratio"] / r["envelope"] for r in pc["rows"] if r.get("envelope")), default=0.0)
    run.check("continuity_envelope", worst, 1.0, pc["passed"])


def _nplayer(run: _Run, c, mcfg, sol):
    n = run.cfg["nplayer"]
    seed = run.cfg["seed"]
    players = sorted(n["players"])
    reports = []
    path = run.out / "nplayer.csv"
    for i, N in enumerate(players):
        gc = GameConfig(N, n["replications"], seed)
        if N < 2:
            res = simulate_nplayer(c, sol.policy, gc)
            run.info.setdefault("nplayer_degenerate", []).append(N)
            log.info("N=%d is degenerate (player sees only itself); mean cost %.6g", N, res.mean_costs[0])
            continue
        rep = estimate_deviation_gain(c, sol.policy, gc)
        rep.to_csv(path, append=bool(reports))
        reports.append(rep)
    if len(reports) >= 2:
        ok = all(b.gap <= a.gap + 3 * math.hypot(a.gap_stderr, b.gap_stderr) for a, b in zip(reports, reports[1:]))
        run.check("nash_gap_nonincreasing", reports[-1].gap, reports[0].gap, ok)
        run.check("nash_gap_last_below_first", reports[-1].gap, reports[0].gap, reports[-1].gap < reports[0].gap)
    elif reports:
        r = reports[0]
        run.check("nash_gap", r.gap, 3 * r.gap_stderr, r.gap <= 3 * r.gap_stderr)


def execute(cfg: dict, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, out)
    c, cg, mcfg, sol = _solve(run)
    if cfg["pipeline"] in ("verify", "all"):
        _verify(run, c, mcfg, sol)
    if cfg["pipeline"] in ("nplayer", "all"):
        _nplayer(run, c, mcfg, sol)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "value", "threshold", "pass"])
        for name, value, thr, ok in run.checks:
            w.writerow([name, _fmt(value), _fmt(thr), int(ok)])
    ok = all(ch[3] for ch in run.checks)
    manifest = {
        "version": __version__,
        "backend": BACKEND,
        "config": cfg,
        "effective": run.info.pop("effective", {}),
        "results": run.info,
        "checks": {name: bool(p) for name, _, _, p in run.checks},
        "passed": ok,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return 0 if ok else 1


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def list_scenarios(stream=None) -> str:
    lines = []
    for name, sc in REGISTRY.items():
        params = ", ".join(f"{k}={v:g}" for k, v in sc.params.items())
        lines.append(f"{name}: {sc.summary}")
        lines.append(f"    parameters: {params}")
        lines.append(f"    grid: T={sc.horizon:g}, steps={sc.steps}, dx={sc.state_dx:g}")
    text = "\n".join(lines) + "\n"
    if stream is not None:
        stream.write(text)
    return text


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="rmfg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the pipeline described by a config file")
    r.add_argument("config")
    r.add_argument("--out", default="runs/out", help="artifact directory (default: runs/out)")
    r.add_argument("--seed", type=int, help="override [run] seed")
    r.add_argument("--npaths", type=int, help="override particle/path counts")
    r.add_argument("-q", "--quiet", action="store_true")
    sub.add_parser("list-scenarios", help="print the scenario registry")
    args = ap.parse_args(argv)
    if args.cmd == "list-scenarios":
        list_scenarios(sys.stdout)
        return 0
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, npaths=args.npaths)
    except ConfigError as exc:
        print(f"rmfg: {exc}", file=sys.stderr)
        return 2
    try:
        return execute(cfg, Path(args.out))
    except InvalidInputError as exc:
        print(f"rmfg: invalid configuration: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
