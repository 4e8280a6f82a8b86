"""Command-line front end.

Subcommands: ``fig1`` (step-size instability sweep), ``lj`` (rare-event
cluster study), ``filter`` (Lorenz twin experiment), ``compare``
(variance/workload comparison of the two branching modes), ``oracle``
(branching-free reference estimate).

Every run writes its full resolved configuration into the output header, so
outputs are self-describing and byte-identical under reruns with the same
seed.  Exit codes: 0 success, 1 configuration error, 2 runtime error
(population explosion, degenerate weights, overflow, singularity).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments, models, oracle
from .errors import ConfigurationError, SimulationError
from .rng import substream
from .weights import IncrementChi, ZeroChi

PAPER_EPS = 1e-4


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"configuration error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return str(value).lower()
    return str(value)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    elif isinstance(obj, (np.integer,)):
        return int(obj)
    elif isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None  # strict JSON has no NaN / Infinity
    return obj


def _config_lines(config: dict) -> list[str]:
    return [f"# {key}={_fmt(config[key])}" for key in sorted(config)]


def write_csv(path: Path, config: dict, columns: list[str], rows: list[list]) -> Path:
    """CSV with the resolved configuration echoed as comment header lines."""
    lines = _config_lines(config)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def write_plot_data(path: Path, points: list[tuple[float, float]]) -> Path:
    """Two-column whitespace-separated plot data."""
    path.write_text("".join(f"{repr(x)} {repr(y)}\n" for x, y in points))
    return path


# ---------------------------------------------------------------------------
# Per-report emitters


def emit_fig1(report: experiments.Fig1Report, fmt: str, out: Path) -> list[Path]:
    paths = []
    payload = {
        "config": report.config,
        "slopes": report.slopes,
        "points": {
            alg: [vars(p) for p in pts] for alg, pts in report.points.items()
        },
    }
    paths.append(write_json(out / "fig1_summary.json", payload))
    if fmt == "csv":
        columns = [
            "algorithm", "eps", "neg_log_eps", "second_moment",
            "second_moment_stderr", "log_second_moment", "replicas", "censored",
        ]
        rows = []
        for alg, pts in report.points.items():
            for p in pts:
                rows.append([alg, p.eps, p.neg_log_eps, p.second_moment,
                             p.second_moment_stderr, p.log_second_moment,
                             p.replicas, p.censored])
        paths.append(write_csv(out / "fig1_points.csv", report.config, columns, rows))
        for alg, pts in report.points.items():
            data = [(p.neg_log_eps, p.log_second_moment) for p in pts if not p.censored]
            paths.append(write_plot_data(out / f"fig1_{alg}.dat", data))
    return paths


def emit_lj(report: experiments.LJRareEventReport, fmt: str, out: Path) -> list[Path]:
    paths = [write_json(out / "lj_summary.json", vars(report))]
    if fmt == "csv":
        columns = [
            "algorithm", "gamma", "lambda", "eps", "estimate", "estimate_stderr",
            "estimator_variance", "mean_scaled_workload",
            "half_variance_times_workload", "brute_force_variance",
            "efficiency_ratio", "extinction_fraction", "replicas", "clamp_warnings",
        ]
        cfg = report.config
        row = [
            report.algorithm, cfg["gamma"], cfg["lambda"], cfg["eps"],
            report.estimate, report.estimate_stderr, report.estimator_variance,
            report.mean_scaled_workload, report.half_variance_times_workload,
            report.brute_force_variance, report.efficiency_ratio,
            report.extinction_fraction, report.replicas, report.clamp_warnings,
        ]
        paths.append(write_csv(out / "lj.csv", cfg, columns, [row]))
    return paths


def emit_filter(report: experiments.FilterReport, observations, fmt: str, out: Path) -> list[Path]:
    summary = {
        "config": report.config,
        "rmse": report.rmse,
        "hidden_std": report.hidden_std,
        "mean_distinct_count": report.mean_distinct_count,
        "mean_population": report.mean_population,
        "extinction_step": report.extinction_step,
        "clamp_warnings": report.clamp_warnings,
    }
    paths = [write_json(out / "filter_summary.json", summary)]
    if fmt == "csv":
        columns = ["k", "y1", "y2", "y3", "r1", "r2", "r3"]
        rows = [
            [k, *report.hidden[k], *report.reconstruction[k]]
            for k in range(report.hidden.shape[0])
        ]
        paths.append(write_csv(out / "filter_path.csv", report.config, columns, rows))
        models.write_hidden_csv(report.hidden, out / "hidden_path.csv")
        paths.append(out / "hidden_path.csv")
        observations.write_csv(out / "observations.csv")
        paths.append(out / "observations.csv")
    return paths


def emit_compare(results: list[experiments.CaseComparison], fmt: str, out: Path) -> list[Path]:
    payload = {
        "cases": [
            {
                "name": r.name,
                "config": r.config,
                "estimate": r.estimate,
                "estimate_stderr": r.estimate_stderr,
                "variance": {
                    **r.variance,
                    "z": r.variance_z,
                    "tdmc_dominates_99": r.variance_dominates_99,
                },
                "workload": {
                    **r.mean_workload,
                    "stderr": r.workload_stderr,
                    "diff": r.workload_diff,
                    "tolerance": r.workload_tolerance,
                    "consistent": r.workload_consistent,
                },
            }
            for r in results
        ]
    }
    paths = [write_json(out / "compare_summary.json", payload)]
    if fmt == "csv":
        columns = [
            "case", "eps", "replicas", "estimate_dmc", "estimate_tdmc",
            "variance_dmc", "variance_tdmc", "variance_z", "variance_dominates_99",
            "workload_dmc", "workload_tdmc", "workload_diff", "workload_tolerance",
            "workload_consistent",
        ]
        rows = [
            [
                r.name, r.eps, r.replicas,
                r.estimate["dmc"], r.estimate["tdmc"],
                r.variance["dmc"], r.variance["tdmc"], r.variance_z,
                r.variance_dominates_99,
                r.mean_workload["dmc"], r.mean_workload["tdmc"],
                r.workload_diff, r.workload_tolerance, r.workload_consistent,
            ]
            for r in results
        ]
        config = results[0].config if results else {"experiment": "compare"}
        paths.append(write_csv(out / "compare.csv", config, columns, rows))
    return paths


def emit_oracle(result: oracle.ReferenceEstimate, config: dict, fmt: str, out: Path) -> list[Path]:
    payload = {"config": config, "estimate": vars(result)}
    if "analytic" in config:
        payload["analytic"] = config["analytic"]
    paths = [write_json(out / "oracle_summary.json", payload)]
    if fmt == "csv":
        columns = ["value", "stderr", "n_samples", "workload"]
        rows = [[result.value, result.stderr, result.n_samples, result.workload]]
        paths.append(write_csv(out / "oracle.csv", config, columns, rows))
    return paths


def emit_outputs(report, fmt: str, out_dir) -> list[Path]:
    """Dispatch a report object to its writer; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(report, experiments.Fig1Report):
        return emit_fig1(report, fmt, out)
    if isinstance(report, experiments.LJRareEventReport):
        return emit_lj(report, fmt, out)
    if isinstance(report, tuple) and isinstance(report[0], experiments.FilterReport):
        return emit_filter(report[0], report[1], fmt, out)
    if isinstance(report, list) and all(isinstance(r, experiments.CaseComparison) for r in report):
        return emit_compare(report, fmt, out)
    raise ConfigurationError(f"no emitter for report type {type(report).__name__}")


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> _Parser:
    parser = _Parser(prog="branchmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, eps_default=None):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        if eps_default is not None:
            p.add_argument("--eps", type=float, default=eps_default)

    p = sub.add_parser("fig1", help="population second-moment sweep over step sizes")
    p.add_argument("--algorithm", choices=["dmc", "tdmc", "both"], default="both")
    p.add_argument("--replicas", type=int, default=10**4)
    p.add_argument("--pop-cap", type=int, default=experiments.DEFAULT_POP_CAP)
    common(p)

    p = sub.add_parser("lj", help="rare-event estimate for the Lennard-Jones cluster")
    p.add_argument("--algorithm", choices=["dmc", "tdmc"], default="tdmc")
    p.add_argument("--gamma", type=float, default=0.4)
    p.add_argument("--lambda", dest="lam", type=float, default=1.9)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--replicas", type=int, default=1000)
    p.add_argument("--horizon", type=float, default=2.0)
    p.add_argument("--paper-eps", action="store_true",
                   help=f"use the full-fidelity step size {PAPER_EPS}")
    p.add_argument("--pop-cap", type=int, default=experiments.DEFAULT_POP_CAP)
    common(p, eps_default=1e-3)

    p = sub.add_parser("filter", help="Lorenz twin experiment with likelihood branching")
    p.add_argument("--algorithm", choices=["dmc", "tdmc"], default="tdmc")
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--horizon", type=float, default=2.0)
    p.add_argument("--paper-eps", action="store_true",
                   help=f"use the full-fidelity step size {PAPER_EPS}")
    sign = p.add_mutually_exclusive_group()
    sign.add_argument("--classical-lorenz", dest="sign_convention",
                      action="store_const", const="classical")
    sign.add_argument("--as-printed", dest="sign_convention",
                      action="store_const", const="as_printed")
    p.set_defaults(sign_convention="classical")
    common(p, eps_default=1e-3)

    p = sub.add_parser("compare", help="variance and workload comparison dmc vs tdmc")
    p.add_argument("--chi", choices=["increment", "potential_difference"],
                   default="increment")
    p.add_argument("--replicas", type=int, default=10**4)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--branch-interval", type=int, default=1)
    common(p, eps_default=0.1)

    p = sub.add_parser("oracle", help="branching-free reference estimate")
    p.add_argument("--model", choices=["walk", "lj"], default="walk")
    p.add_argument("--replicas", type=int, default=10**5,
                   help="number of independent weighted paths")
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.4)
    p.add_argument("--lambda", dest="lam", type=float, default=1.9)
    common(p, eps_default=0.01)

    return parser


def _resolved_eps(args) -> float:
    return PAPER_EPS if getattr(args, "paper_eps", False) else args.eps


def run_subcommand(args) -> list[Path]:
    out = Path(args.out)
    if args.command == "fig1":
        algorithms = ("dmc", "tdmc") if args.algorithm == "both" else (args.algorithm,)
        report = experiments.fig1_second_moment(
            replicas=args.replicas, seed=args.seed, algorithms=algorithms,
            pop_cap=args.pop_cap,
        )
        return emit_outputs(report, args.format, out)

    if args.command == "lj":
        report = experiments.lj_rare_event(
            gamma=args.gamma, lam=args.lam, eps=_resolved_eps(args), M=args.m,
            replicas=args.replicas, seed=args.seed, algorithm=args.algorithm,
            horizon=args.horizon, pop_cap=args.pop_cap,
        )
        return emit_outputs(report, args.format, out)

    if args.command == "filter":
        report, observations = experiments.lorenz_filter(
            M=args.m, eps=_resolved_eps(args), horizon=args.horizon,
            sign_convention=args.sign_convention, seed=args.seed,
            algorithm=args.algorithm, return_observations=True,
        )
        return emit_outputs((report, observations), args.format, out)

    if args.command == "compare":
        cases = experiments.standard_compare_cases(args.eps)
        if args.chi == "increment":
            cases = cases[:1]
        else:
            cases = cases[1:]
        for case in cases:
            case.horizon = args.horizon
            case.branch_interval = args.branch_interval
        results = experiments.variance_workload_compare(
            cases, replicas=args.replicas, seed=args.seed
        )
        return emit_outputs(results, args.format, out)

    # oracle
    eps = args.eps
    config = {
        "experiment": "oracle",
        "model": args.model,
        "eps": eps,
        "horizon": args.horizon,
        "samples": args.replicas,
        "seed": args.seed,
    }
    rng = substream(args.seed, 0)
    cfg = experiments.RunConfig(algorithm="dmc", eps=eps, horizon=args.horizon)
    n_steps = cfg.n_steps()
    if args.model == "walk":
        kernel = models.GaussianWalkKernel(eps)
        result = oracle.reference_estimate(
            kernel, IncrementChi(), lambda s: np.ones(len(s)),
            n_steps, args.replicas, rng, x0=(0.0,),
        )
        config["chi"] = "increment"
        config["analytic"] = oracle.analytic_walk_normalization(args.horizon, eps)
    else:
        params = models.LJParams(gamma=args.gamma, lam=args.lam, eps=eps)
        kernel = models.LennardJonesKernel(params)
        config.update({"gamma": args.gamma, "lambda": args.lam, "chi": "zero"})

        def in_event(states):
            return experiments.lj_event_indicator(states, args.lam, args.gamma)

        result = oracle.reference_estimate(
            kernel, ZeroChi(), in_event, n_steps, args.replicas, rng,
            x0=models.initial_cluster(),
        )
    out.mkdir(parents=True, exist_ok=True)
    return emit_oracle(result, config, args.format, out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        paths = run_subcommand(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except SimulationError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
