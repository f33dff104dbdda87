"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 numerical or convergence
failure. Every subcommand writes its files under ``--out`` and prints a JSON
summary on stdout.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import plotting, serialize
from .bayesopt import Budget, GpConfig, OptimizationError, OptimizationTrace, EvaluationRecord, optimize_policy
from .compliance import (
    ComplianceData,
    LogitPosterior,
    PadLikeSpec,
    SimConfig,
    TruncNormPosterior,
    fit_compliance_model,
    fit_outcome_model_bayes,
    generate_pad_like_data,
    value_posterior,
    write_diagnostics,
)
from .dgp import DgpSpec, generate_dataset, oracle_grid, oracle_value, oracle_value_quadrature
from .errors import ConvergenceError, EstimationError, NumericalError
from .estimators import ADDITIVE_RECIPE, ESTIMATORS, TrajectoryData, fmt, make_evaluator
from .mcmc import MCMCConfig
from .policy import ParamBox, ThresholdPolicy, TwoFeaturePolicy
from .simbench import (
    GRID_RESOLUTION,
    TABLE_GAMMA0,
    StudyCell,
    characterize_policy_class,
    export_grid,
    render_contour_svg,
    run_cell,
)

PAD_BOX = ParamBox((0.0, 0.1), (1.0, 100.0), ("theta1", "theta2"))
GLOBAL_DEFAULTS = {"seed": 0, "config": None, "out": "."}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _globals(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed (default 0)")
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config with dgp/budget/gp/mcmc/bench/sim/pad blocks")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default .)")


def _dgp_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--setting", type=int, choices=(1, 2, 3))
    p.add_argument("--w", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--gamma0", type=float)
    p.add_argument("--gamma1", type=float)
    p.add_argument("--corrected", action="store_true", default=None, help="use the corrected setting-1 indicator")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dtrgp", description="GP-surrogate policy search and characterization")
    _globals(parser)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a simulated dataset as CSV")
    _globals(p)
    _dgp_flags(p)
    p.add_argument("--pad", action="store_true", help="simulate the synthetic compliance cohort instead")

    p = sub.add_parser("oracle", help="print the true value of a threshold policy")
    _globals(p)
    _dgp_flags(p)
    p.add_argument("--beta1", type=float, required=True)
    p.add_argument("--beta2", type=float, required=True)
    p.add_argument("--method", choices=("closed-form", "quadrature"), default="closed-form")

    p = sub.add_parser("optimize", help="expected-improvement policy search")
    _globals(p)
    _dgp_flags(p)
    p.add_argument("--data", help="trajectory CSV (default: simulate from the DGP)")
    p.add_argument("--estimator", choices=ESTIMATORS)

    p = sub.add_parser("characterize", help="surrogate value surface over the policy class")
    _globals(p)
    _dgp_flags(p)
    p.add_argument("--trace", help="trace JSON from optimize (default: run optimize first)")
    p.add_argument("--data", help="trajectory CSV used when no trace is given")
    p.add_argument("--estimator", choices=ESTIMATORS)
    p.add_argument("--resolution", type=int, default=GRID_RESOLUTION)
    p.add_argument("--no-truth", action="store_true", help="do not attach the true value surface")

    p = sub.add_parser("bench", help="simulation-study cell")
    _globals(p)
    _dgp_flags(p)
    p.add_argument("--estimator", choices=ESTIMATORS)
    p.add_argument("--runs", type=int)
    p.add_argument("--characterize", action="store_true", default=None)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("compliance-fit", help="fit compliance and outcome posteriors")
    _globals(p)
    p.add_argument("--data", required=True, help="compliance CSV")

    p = sub.add_parser("compliance-value", help="value posteriors of compliance/wound-size rules")
    _globals(p)
    p.add_argument("--data", required=True, help="compliance CSV")
    p.add_argument("--regime", action="append", required=True, metavar="THETA1,THETA2",
                   help="policy thresholds; repeat for several regimes")
    p.add_argument("--posteriors", help="directory with draws from compliance-fit (default: refit)")
    return parser


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _dgp_spec(args, cfg: dict, default_gamma0: float = 0.0) -> DgpSpec:
    d = {"gamma0": default_gamma0, **cfg.get("dgp", {})}
    for key, attr in (("setting", "setting"), ("w", "w"), ("n", "n"), ("gamma0", "gamma0"),
                      ("gamma1", "gamma1"), ("setting1_corrected", "corrected")):
        v = getattr(args, attr, None)
        if v is not None:
            d[key] = v
    return DgpSpec(**d)


def _gp_config(cfg: dict) -> GpConfig:
    return GpConfig.from_dict(cfg["gp"]) if "gp" in cfg else GpConfig()


def _budget(cfg: dict) -> Budget:
    return Budget(**cfg.get("budget", {}))


def _path(args, name: str) -> str:
    return os.path.join(args.out, name)


def _emit(obj) -> None:
    sys.stdout.write(serialize.dumps(obj) + "\n")


def _estimator(args, cfg) -> str:
    return args.estimator or cfg.get("bench", {}).get("estimator", "sipw")


def cmd_simulate(args, cfg) -> dict:
    if args.pad:
        spec = PadLikeSpec.from_dict(cfg["pad"]) if "pad" in cfg else PadLikeSpec()
        n = args.n or cfg.get("dgp", {}).get("n", 1000)
        data = generate_pad_like_data(spec, n, args.seed)
        path = _path(args, "compliance.csv")
        data.to_csv(path)
        return {"dataset": path, "n": n, "treated": int(data.a1.sum()), "outcome_mean": float(data.y.mean())}
    spec = _dgp_spec(args, cfg)
    data = generate_dataset(spec, args.seed)
    path = _path(args, "dataset.csv")
    data.to_csv(path)
    return {"dataset": path, "dgp": spec.to_dict()}


def cmd_oracle(args, cfg) -> str:
    spec = _dgp_spec(args, cfg)
    policy = ThresholdPolicy(args.beta1, args.beta2)
    fn = oracle_value if args.method == "closed-form" else oracle_value_quadrature
    return fmt(fn(spec, policy).value)


def _optimize(args, cfg):
    box = ParamBox.unit(2, ("beta1", "beta2"))
    if args.data:
        data = TrajectoryData.from_csv(args.data)
    else:
        data = generate_dataset(_dgp_spec(args, cfg), [args.seed, 0])
    recipe = tuple(cfg.get("bench", {}).get("recipe", ADDITIVE_RECIPE))
    evaluator = make_evaluator(data, _estimator(args, cfg), recipe)
    return optimize_policy(evaluator, box, _budget(cfg), _gp_config(cfg), seed=[args.seed, 1]), box


def cmd_optimize(args, cfg) -> dict:
    trace, box = _optimize(args, cfg)
    trace.to_json(_path(args, "trace.json"))
    trace.to_csv(_path(args, "trace.csv"), box.names)
    plotting.plot_trace(trace, _path(args, "trace.png"))
    return {"best_theta": list(trace.best_theta), "best_value": trace.best_value,
            "budget_used": trace.budget_used, "stopped_early": trace.stopped_early}


def _read_trace(path) -> OptimizationTrace:
    with open(path) as fh:
        doc = json.load(fh)
    recs = [EvaluationRecord(tuple(r["theta"]), r["value"], r["std_dev"], r["source"]) for r in doc["records"]]
    return OptimizationTrace(recs)


def cmd_characterize(args, cfg) -> dict:
    box = ParamBox.unit(2, ("beta1", "beta2"))
    trace = _read_trace(args.trace) if args.trace else _optimize(args, cfg)[0]
    truth = None
    if not args.no_truth and not args.data:
        spec = _dgp_spec(args, cfg)
        truth = lambda g: oracle_grid(spec, g)  # noqa: E731
    grid = characterize_policy_class(
        trace.thetas(), trace.values(), box, args.resolution, _gp_config(cfg).tune,
        truth=truth, std_devs=trace.std_devs(), seed=[args.seed, 2],
    )
    export_grid(grid, _path(args, "grid.csv"))
    render_contour_svg(grid, _path(args, "contour.svg"))
    plotting.plot_surface(grid, _path(args, "contour.png"))
    return {"l1": grid.l1, "l2": grid.l2, "levels": sorted({int(v) for v in grid.levels}),
            "best_theta": list(grid.best_theta)}


def cmd_bench(args, cfg) -> dict:
    bench = cfg.get("bench", {})
    spec = _dgp_spec(args, cfg, default_gamma0=bench.get("gamma0", TABLE_GAMMA0))
    runs = args.runs or bench.get("runs", 200)
    characterize = args.characterize if args.characterize is not None else bench.get("characterize", False)
    summary = run_cell(
        StudyCell(spec.setting, spec.n, spec.w, _estimator(args, cfg)), runs, _budget(cfg), _gp_config(cfg),
        seed=args.seed, gamma0=spec.gamma0, gamma1=spec.gamma1, characterize=characterize,
        recipe=tuple(bench.get("recipe", ADDITIVE_RECIPE)), setting1_corrected=spec.setting1_corrected,
        workers=args.workers or bench.get("workers", 1),
    )
    serialize.write_json(_path(args, "summary.json"), summary.to_dict())
    summary.to_csv(_path(args, "runs.csv"))
    if summary.runs:
        plotting.plot_study(summary, _path(args, "study.png"))
    keys = ("setting", "n", "w", "estimator", "runs", "mse", "mc_error", "regret_mse", "regret_mc_error",
            "optimal_value", "excluded")
    out = {k: getattr(summary, k) for k in keys}
    out.update(mean_l1=summary.mean_l1, mean_l2=summary.mean_l2)
    return out


def _fit_posteriors(args, cfg, data):
    mcmc = MCMCConfig.from_dict(cfg["mcmc"]) if "mcmc" in cfg else MCMCConfig()
    cp = fit_compliance_model(data, mcmc_config=mcmc, seed=[args.seed, 0])
    op = fit_outcome_model_bayes(data, mcmc_config=mcmc, seed=[args.seed, 1])
    return cp, op


def cmd_compliance_fit(args, cfg) -> dict:
    data = ComplianceData.from_csv(args.data)
    cp, op = _fit_posteriors(args, cfg, data)
    cp.to_csv(_path(args, "compliance_draws.csv"))
    op.to_csv(_path(args, "outcome_draws.csv"))
    write_diagnostics(_path(args, "diagnostics.json"), cp, op)
    plotting.plot_chains(cp.chains, _path(args, "compliance_chains.png"))
    plotting.plot_chains(op.chains, _path(args, "outcome_chains.png"))
    return {"compliance": cp.diagnostics(), "outcome": op.diagnostics()}


def _parse_regime(text: str) -> TwoFeaturePolicy:
    try:
        t1, t2 = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"regime must be THETA1,THETA2, got {text!r}") from None
    return TwoFeaturePolicy(t1, t2)


def cmd_compliance_value(args, cfg) -> dict:
    data = ComplianceData.from_csv(args.data)
    policies = [_parse_regime(r) for r in args.regime]
    if args.posteriors:
        cp = TruncNormPosterior.from_csv(os.path.join(args.posteriors, "compliance_draws.csv"))
        op = LogitPosterior.from_csv(os.path.join(args.posteriors, "outcome_draws.csv"))
    else:
        cp, op = _fit_posteriors(args, cfg, data)
    sim = SimConfig.from_dict(cfg["sim"]) if "sim" in cfg else SimConfig()
    posts = [value_posterior(data, pol, (cp, op), sim, seed=[args.seed, 2, k]) for k, pol in enumerate(policies)]
    labels = [f"{p.theta1:g},{p.theta2:g}" for p in policies]
    doc = {"regimes": [{"theta": list(p.theta), **vp.summary()} for p, vp in zip(policies, posts)],
           "observed_mean": float(data.y.mean())}
    serialize.write_json(_path(args, "value.json"), doc)
    with open(_path(args, "value_draws.csv"), "w") as fh:
        fh.write("draw," + ",".join(f"\"{lab}\"" for lab in labels) + "\n")
        for i in range(sim.n_value_draws):
            fh.write(f"{i}," + ",".join(fmt(vp.draws[i]) for vp in posts) + "\n")
    plotting.plot_value_posteriors(labels, posts, _path(args, "value.png"))
    return doc


COMMANDS = {
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "optimize": cmd_optimize,
    "characterize": cmd_characterize,
    "bench": cmd_bench,
    "compliance-fit": cmd_compliance_fit,
    "compliance-value": cmd_compliance_value,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for k, v in GLOBAL_DEFAULTS.items():
            if not hasattr(args, k):
                setattr(args, k, v)
        if args.command is None:
            raise UsageError(parser.format_usage())
        cfg = _load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        result = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip() + "\n")
        return 1
    except (NumericalError, ConvergenceError, EstimationError, OptimizationError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        diag = getattr(exc, "diagnostics", None)
        if diag:
            sys.stderr.write(serialize.dumps(diag) + "\n")
        return 2
    except (ValueError, OSError, KeyError, TypeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    if isinstance(result, str):
        sys.stdout.write(result + "\n")
    else:
        _emit(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
