"""Command-line front end: ``ccdlqr {analyze,grad-check,optimize,pareto} --config FILE``.

Exit codes: 0 success, 1 check failure, 2 config error, 3 analysis failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .cltraj import write_trajectory_csv
from .config import load_config
from .errors import CCDError, ConfigError, OptimizationAborted
from .optimize import (HoverPower, InequalityConstraint, OptProblem, PipelineObjective,
                       hover_power_constraint, linear_constraints, minimize,
                       minimize_hover_power, pareto_sweep)
from .pipeline import analyze, grad_check

logger = logging.getLogger("ccdlqr")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_ANALYSIS = 0, 1, 2, 3


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _error_payload(exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("cond", "norm", "step"):
        if hasattr(exc, attr):
            payload[attr] = getattr(exc, attr)
    return payload


def _prepare(args):
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    cfg.raw["output_dir"] = out
    return cfg, out


def _analysis_summary(a):
    eig = a.ric.eigenvalues
    return {
        "design": a.d.tolist(),
        "cost": a.cost,
        "equilibrium": {"x_tgt": a.eq.x_tgt.tolist(), "u_tgt": a.eq.u_tgt.tolist(),
                        "residual_norm": a.eq.residual_norm, "iterations": a.eq.iterations},
        "riccati": {"P": a.ric.P.tolist(), "W": a.ric.W.tolist(),
                    "residual_norm": a.ric.residual_norm, "iterations": a.ric.iterations},
        "closed_loop_eigenvalues": [[float(z.real), float(z.imag)] for z in eig],
        "hurwitz": bool(np.max(eig.real) < 0),
    }


def cmd_analyze(cfg, out, args):
    a = analyze(cfg.setup, cfg.d0)
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), a.traj, a.ric.W)
    summary = _analysis_summary(a)
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"cost = {a.cost!r}")
    print(f"max closed-loop Re(lambda) = {max(z[0] for z in summary['closed_loop_eigenvalues'])!r}")
    return EXIT_OK


def cmd_grad_check(cfg, out, args):
    gc = cfg.raw["grad_check"]
    threshold, rel_step = gc["threshold"], gc["rel_step"]
    points = [cfg.d0]
    if gc["samples"]:
        rng = np.random.default_rng(args.seed)
        points += [cfg.lower + rng.random(cfg.d0.size) * (cfg.upper - cfg.lower)
                   for _ in range(gc["samples"])]
    reports, worst = [], 0.0
    text = []
    for d in points:
        res = grad_check(cfg.setup, d, rel_step=rel_step, threads=args.threads)
        worst = max(worst, res.max_rel_error)
        block = f"design = {d.tolist()}\ncost = {res.cost!r}\n{res.table()}\n"
        text.append(block)
        print(block)
        reports.append({"design": d.tolist(), **res.to_dict()})
    passed = worst < threshold
    verdict = f"max relative error {worst:.3e} {'<' if passed else '>='} threshold {threshold:g}"
    print(verdict)
    with open(os.path.join(out, "grad_check.txt"), "w") as fh:
        fh.write("\n".join(text) + verdict + "\n")
    _write_json(os.path.join(out, "grad_check.json"),
                {"points": reports, "max_rel_error": worst, "threshold": threshold,
                 "passed": passed})
    return EXIT_OK if passed else EXIT_CHECK


def _power_minimum(cfg):
    """Cached ``(P_min, d_min)`` from the config, or a fresh single-objective run."""
    par = cfg.raw["pareto"]
    if par.get("P_min") is not None and par.get("d_min") is not None:
        return float(par["P_min"]), np.asarray(par["d_min"], dtype=float)
    if not hasattr(cfg.plant, "hover_power"):
        raise ConfigError(f"plant {cfg.raw['plant']['name']!r} has no hover-power model")
    hist = minimize_hover_power(cfg.setup, cfg.d0, cfg.lower, cfg.upper)
    if not hist.success:
        raise OptimizationAborted(f"hover-power minimization failed: {hist.reason}", hist)
    par["P_min"], par["d_min"] = float(hist.f), hist.d.tolist()
    return float(hist.f), hist.d


def _write_history(path, hist):
    with open(path, "w") as fh:
        for r in hist.records:
            fh.write(json.dumps(r.__dict__, sort_keys=True) + "\n")


def cmd_optimize(cfg, out, args):
    opt = cfg.raw["optimizer"]
    names = tuple(cfg.plant.design_names)
    lin = opt["linear_constraints"]
    cons = linear_constraints(lin["A"], lin["b"]) if lin["b"] else []
    power_info = None
    if opt.get("power_eps") is not None:
        P_min, _ = _power_minimum(cfg)
        eps = float(opt["power_eps"])
        power = HoverPower(cfg.setup)
        cons.append(InequalityConstraint(
            lambda d: hover_power_constraint(power, d, eps, P_min), name="hover_power",
            scale=P_min))
        power_info = (power, eps, P_min)
    problem = OptProblem(d0=cfg.d0, lower=cfg.lower, upper=cfg.upper,
                         objective=PipelineObjective(cfg.setup), constraints=cons, names=names)
    try:
        hist = minimize(problem, tol_kkt=opt["tol_kkt"], max_iter=opt["max_iter"],
                        ctol=opt["ctol"])
    except OptimizationAborted as exc:
        _write_history(os.path.join(out, "history.jsonl"), exc.history)
        raise
    _write_history(os.path.join(out, "history.jsonl"), hist)
    base = analyze(cfg.setup, cfg.d0)
    best = analyze(cfg.setup, hist.d)
    write_trajectory_csv(os.path.join(out, "trajectory_baseline.csv"), base.traj, base.ric.W)
    write_trajectory_csv(os.path.join(out, "trajectory_optimized.csv"), best.traj, best.ric.W)
    summary = hist.summary(names)
    summary["baseline"] = {"design": cfg.d0.tolist(), "f": base.cost}
    summary["cost_reduction"] = 1.0 - best.cost / base.cost
    summary["active_constraints"] = [c.name for c, v in zip(cons, hist.constraints)
                                     if abs(v) <= 1e-6 * max(1.0, c.scale)]
    if power_info is not None:
        power, eps, P_min = power_info
        P, _ = power(hist.d)
        summary["hover_power"] = {"P_hover": P, "P_min": P_min, "eps": eps,
                                  "active": "hover_power" in summary["active_constraints"]}
    _write_json(os.path.join(out, "optimize_summary.json"), summary)
    print(json.dumps(summary["design"]))
    print(f"f = {hist.f!r}  (baseline {base.cost!r}, reduction {100 * summary['cost_reduction']:.2f}%)")
    print(f"termination: {hist.reason}")
    return EXIT_OK if hist.success else EXIT_CHECK


def cmd_pareto(cfg, out, args):
    eps_list = cfg.raw["pareto"]["eps_list"]
    if not eps_list:
        raise ConfigError("pareto.eps_list is empty")
    P_min, d_min = _power_minimum(cfg)
    opt = cfg.raw["optimizer"]
    points = pareto_sweep(cfg.setup, eps_list, cfg.d0, cfg.lower, cfg.upper, P_min,
                          d_min=d_min, tol_kkt=opt["tol_kkt"], max_iter=opt["max_iter"])
    names = list(cfg.plant.design_names)
    with open(os.path.join(out, "pareto.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "f_lqr", "P_hover"] + names + ["success", "message"])
        for p in points:
            w.writerow([repr(p.eps), repr(float(p.f_lqr)), repr(float(p.P_hover))]
                       + [repr(float(v)) for v in p.d] + [int(p.success), p.message])
    for p in points:
        flag = "ok" if p.success else "FAILED"
        print(f"eps={p.eps:<8g} f_lqr={p.f_lqr:.10g} P_hover={p.P_hover:.10g} {flag}")
    return EXIT_OK if any(p.success for p in points) else EXIT_ANALYSIS


COMMANDS = {"analyze": cmd_analyze, "grad-check": cmd_grad_check,
            "optimize": cmd_optimize, "pareto": cmd_pareto}


def build_parser():
    parser = argparse.ArgumentParser(prog="ccdlqr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for finite-difference checks")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for randomized grad-check sample designs")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = None
    try:
        cfg, out = _prepare(args)
        _write_json(os.path.join(out, "resolved_config.json"), cfg.resolved())
        code = COMMANDS[args.command](cfg, out, args)
        _write_json(os.path.join(out, "resolved_config.json"), cfg.resolved())
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if out:
            _write_json(os.path.join(out, "error.json"), _error_payload(exc))
        return EXIT_CONFIG
    except CCDError as exc:
        print(f"analysis failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        _write_json(os.path.join(out, "error.json"), _error_payload(exc))
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
