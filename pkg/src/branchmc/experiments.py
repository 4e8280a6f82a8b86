"""Experiment drivers: instability sweep, rare-event cluster study,
nonlinear-filter twin experiment, and variance/workload comparisons.

Every driver is a pure function of its arguments plus a master seed;
substreams are derived per (seed, role, index) so reruns reproduce reports
bit-for-bit and replica scheduling cannot change any statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import models
from .engine import (
    DEFAULT_POP_CAP,
    RunConfig,
    advance,
    init_ensemble,
    run_replicas,
)
from .errors import ConfigurationError, PopulationExplosionError
from .oracle import loglog_slope
from .rng import substream
from .weights import (
    FilterLikelihoodChi,
    IncrementChi,
    PotentialDifferenceChi,
    PopulationControl,
)

ALGORITHMS = ("dmc", "tdmc")

# one-sided 99% normal quantile, used by the variance-dominance test
Z_99 = 2.3263478740408408

DEFAULT_FIG1_EPS = tuple(2.0**-k for k in range(4, 13))


def _variance_of_sample_variance(x: np.ndarray) -> float:
    """Large-n variance of the sample variance, (m4 - s^4) / n."""
    n = x.size
    d = x - x.mean()
    m4 = float(np.mean(d**4))
    s2 = float(np.var(x, ddof=1))
    return max((m4 - s2 * s2) / n, 0.0)


# ---------------------------------------------------------------------------
# Instability sweep: second moment of the population at the horizon


@dataclass
class Fig1Point:
    eps: float
    neg_log_eps: float
    second_moment: float
    second_moment_stderr: float
    log_second_moment: float
    replicas: int
    censored: bool = False


@dataclass
class Fig1Report:
    points: dict[str, list[Fig1Point]]
    slopes: dict[str, float]
    config: dict


def fig1_second_moment(
    eps_list: Sequence[float] | None = None,
    replicas: int = 10**4,
    seed: int = 0,
    algorithms: Sequence[str] = ALGORITHMS,
    pop_cap: int = DEFAULT_POP_CAP,
) -> Fig1Report:
    """Sweep the step size on the Gaussian walk with the increment exponent.

    For each eps, M = 1 chains branch every step up to horizon 1; the report
    holds (-log eps, log E N^2) per algorithm (natural logs on both axes, so
    the fitted slope is base-independent).  A population-cap abort censors
    that point instead of failing the sweep.
    """
    eps_list = tuple(eps_list) if eps_list is not None else DEFAULT_FIG1_EPS
    points: dict[str, list[Fig1Point]] = {}
    slopes: dict[str, float] = {}
    for a, algorithm in enumerate(algorithms):
        rows = []
        for i, eps in enumerate(eps_list):
            cfg = RunConfig(
                algorithm=algorithm,
                eps=eps,
                horizon=1.0,
                M=1,
                replicas=replicas,
                seed=seed,
                pop_cap=pop_cap,
            )
            kernel = models.GaussianWalkKernel(eps)
            try:
                batch = run_replicas(
                    cfg, kernel, IncrementChi(), rng=substream(seed, a, i)
                )
            except PopulationExplosionError:
                rows.append(
                    Fig1Point(eps, -math.log(eps), math.nan, math.nan, math.nan,
                              replicas, censored=True)
                )
                continue
            n2 = batch.final_counts.astype(float) ** 2
            mean_n2 = float(n2.mean())
            rows.append(
                Fig1Point(
                    eps=eps,
                    neg_log_eps=-math.log(eps),
                    second_moment=mean_n2,
                    second_moment_stderr=float(n2.std(ddof=1) / math.sqrt(replicas)),
                    log_second_moment=math.log(mean_n2),
                    replicas=replicas,
                )
            )
        points[algorithm] = rows
        ok = [p for p in rows if not p.censored]
        slopes[algorithm] = (
            loglog_slope([p.neg_log_eps for p in ok], [p.log_second_moment for p in ok])
            if len(ok) >= 3
            else math.nan
        )
    config = {
        "experiment": "fig1",
        "eps_list": list(eps_list),
        "replicas": replicas,
        "seed": seed,
        "algorithms": list(algorithms),
        "horizon": 1.0,
        "M": 1,
        "model": "walk",
        "chi": "increment",
        "control": "none",
        "pop_cap": pop_cap,
    }
    return Fig1Report(points=points, slopes=slopes, config=config)


# ---------------------------------------------------------------------------
# Rare-event study on the Lennard-Jones cluster


@dataclass
class RunReport:
    """Replica-aggregated outcome of one branching experiment."""

    algorithm: str
    estimate: float
    estimate_stderr: float
    estimator_variance: float
    mean_workload: float
    workload_stderr: float
    extinction_fraction: float
    mean_final_population: float
    replicas: int
    clamp_warnings: int
    config: dict = field(default_factory=dict)


@dataclass
class LJRareEventReport(RunReport):
    """Adds the scaled-cost and efficiency columns of the cluster study."""

    mean_scaled_workload: float = math.nan
    half_variance_times_workload: float = math.nan
    brute_force_variance: float = math.nan
    efficiency_ratio: float = math.nan


def lj_event_indicator(states: np.ndarray, lam: float, gamma: float) -> np.ndarray:
    """Indicator of the target event: reaction coordinate below 0.1."""
    v = models.lj_reaction_coordinate(states, lam, gamma)
    return (np.asarray(v) < 0.1).astype(float)


def lj_rare_event(
    gamma: float,
    lam: float,
    eps: float = 1e-3,
    M: int = 1,
    replicas: int = 1000,
    seed: int = 0,
    algorithm: str = "tdmc",
    horizon: float = 2.0,
    pop_cap: int = DEFAULT_POP_CAP,
) -> LJRareEventReport:
    """Estimate the probability that the cluster reaches the exchanged
    configuration by the horizon.

    The chain carries chi = V(y) - V(x) with V the scaled distance of the
    outer particles to the centroid, and the estimator reweights the event
    indicator: exp(-V(x0)) * (1/M) * sum_j exp(V(x_j)) * 1_B(x_j).  With
    lam = 0 the weights are identically 1 and the run reduces to brute
    force (scaled workload exactly equal to the horizon).
    """
    params = models.LJParams(gamma=gamma, lam=lam, eps=eps)
    kernel = models.LennardJonesKernel(params)
    x0 = models.initial_cluster()
    v0 = models.lj_reaction_coordinate(x0, lam, gamma)

    def potential(states: np.ndarray) -> np.ndarray:
        return np.asarray(models.lj_reaction_coordinate(states, lam, gamma))

    def estimator(states: np.ndarray) -> np.ndarray:
        v = potential(states)
        return np.where(v < 0.1, np.exp(v - v0), 0.0)

    cfg = RunConfig(
        algorithm=algorithm,
        eps=eps,
        horizon=horizon,
        M=M,
        replicas=replicas,
        seed=seed,
        pop_cap=pop_cap,
        x0=tuple(x0),
        model="lj",
        chi="potential_difference",
        control="none",
    )
    batch = run_replicas(
        cfg, kernel, PotentialDifferenceChi(potential), f=estimator,
        rng=substream(seed, 0),
    )
    est = batch.estimates
    scaled_w = eps * batch.workloads.astype(float)
    estimate = float(est.mean())
    variance = float(np.var(est, ddof=1))
    mean_scaled = float(scaled_w.mean())
    half_vw = 0.5 * variance * mean_scaled
    bf_var = estimate * (1.0 - estimate)
    config = {
        "experiment": "lj",
        "algorithm": algorithm,
        "gamma": gamma,
        "lambda": lam,
        "eps": eps,
        "horizon": horizon,
        "M": M,
        "replicas": replicas,
        "seed": seed,
        "model": "lj",
        "chi": "potential_difference",
        "control": "none",
        "pop_cap": pop_cap,
    }
    return LJRareEventReport(
        algorithm=algorithm,
        estimate=estimate,
        estimate_stderr=float(est.std(ddof=1) / math.sqrt(replicas)),
        estimator_variance=variance,
        mean_workload=float(batch.workloads.mean()),
        workload_stderr=float(batch.workloads.std(ddof=1) / math.sqrt(replicas)),
        extinction_fraction=batch.extinction_fraction,
        mean_final_population=float(batch.final_counts.mean()),
        replicas=replicas,
        clamp_warnings=batch.clamp_warnings,
        config=config,
        mean_scaled_workload=mean_scaled,
        half_variance_times_workload=half_vw,
        brute_force_variance=bf_var,
        efficiency_ratio=(bf_var / half_vw if half_vw > 0 else math.inf),
    )


# ---------------------------------------------------------------------------
# Nonlinear filtering twin experiment


@dataclass
class FilterReport:
    algorithm: str
    reconstruction: np.ndarray  # (K + 1, 3), row 0 = start state
    hidden: np.ndarray          # (K + 1, 3)
    rmse: np.ndarray            # (3,) per component, over steps 1..K
    hidden_std: np.ndarray      # (3,) per component, over steps 1..K
    mean_distinct_count: float
    mean_population: float
    extinction_step: int | None
    clamp_warnings: int
    config: dict


def _distinct_count(states: np.ndarray, tol: float = 1e-8) -> int:
    """Number of states pairwise separated by more than tol (max-norm).

    Clones are bit-identical until their next move, so sorting rows and
    counting gaps is exact for the branching-induced duplicates this
    diagnostic is after.
    """
    n = states.shape[0]
    if n <= 1:
        return n
    order = np.lexsort(states.T[::-1])
    s = states[order]
    gaps = np.abs(np.diff(s, axis=0)).max(axis=1)
    return int(1 + np.count_nonzero(gaps > tol))


def lorenz_filter(
    M: int = 10,
    eps: float = 1e-3,
    horizon: float = 2.0,
    sign_convention: str = "classical",
    seed: int = 0,
    algorithm: str = "tdmc",
    noise_sigma: float = 0.1,
    dynamics_noise_scale: float = models.LORENZ_NOISE_SCALE,
    distinct_tol: float = 1e-8,
    return_observations: bool = False,
):
    """Twin experiment: reconstruct a hidden Lorenz path from increment
    observations with likelihood-weighted branching under mean-M control.

    The hidden path and the observation noise use substreams that depend
    only on the seed, so both algorithms at the same seed see identical
    observations.  The reconstruction at step k is the post-branch ensemble
    mean, conditioning on the increments up to k.  ``noise_sigma`` and
    ``dynamics_noise_scale`` are test hooks (zero both and the posterior
    mean equals the hidden path exactly).
    """
    if algorithm not in ALGORITHMS:
        raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}")
    cfg = RunConfig(
        algorithm=algorithm, eps=eps, horizon=horizon, M=M, seed=seed,
        model="lorenz", chi="filter_likelihood", control="mean_M",
    )
    n_steps = cfg.n_steps()
    hidden = models.simulate_hidden_path(
        n_steps, eps, substream(seed, 100), sign_convention,
        noise_scale=dynamics_noise_scale,
    )
    observations = models.generate_observations(
        hidden, eps, substream(seed, 101), noise_sigma=noise_sigma
    )
    kernel = models.Lorenz63Kernel(eps, sign_convention, noise_scale=dynamics_noise_scale)
    chi = FilterLikelihoodChi(observations)
    control = PopulationControl.mean_m(M)
    rng = substream(seed, 102 if algorithm == "dmc" else 103)
    ens = init_ensemble(hidden[0], M, cfg.mode, rng)

    reconstruction = np.full((n_steps + 1, 3), np.nan)
    reconstruction[0] = hidden[0]
    distinct = np.zeros(n_steps, dtype=np.int64)
    populations = np.zeros(n_steps, dtype=np.int64)
    extinction_step = None
    for k in range(n_steps):
        advance(ens, kernel, chi, control, branch=True)
        populations[k] = len(ens)
        distinct[k] = _distinct_count(ens.states, distinct_tol)
        if len(ens) == 0:
            if extinction_step is None:
                extinction_step = k + 1
            continue
        reconstruction[k + 1] = ens.states.mean(axis=0)

    errors = reconstruction[1:] - hidden[1:]
    rmse = np.sqrt(np.nanmean(errors**2, axis=0))
    config = {
        "experiment": "filter",
        "algorithm": algorithm,
        "eps": eps,
        "horizon": horizon,
        "M": M,
        "seed": seed,
        "sign_convention": sign_convention,
        "noise_sigma": noise_sigma,
        "dynamics_noise_scale": dynamics_noise_scale,
        "model": "lorenz",
        "chi": "filter_likelihood",
        "control": "mean_M",
    }
    report = FilterReport(
        algorithm=algorithm,
        reconstruction=reconstruction,
        hidden=hidden,
        rmse=rmse,
        hidden_std=hidden[1:].std(axis=0),
        mean_distinct_count=float(distinct.mean()),
        mean_population=float(populations.mean()),
        extinction_step=extinction_step,
        clamp_warnings=ens.clamp_warnings,
        config=config,
    )
    if return_observations:
        return report, observations
    return report


# ---------------------------------------------------------------------------
# Variance and workload comparison between the two branching modes


@dataclass
class CompareCase:
    """One (kernel, chi, f) configuration shared by both algorithms."""

    name: str
    kernel: object
    chi: object
    f: Callable[[np.ndarray], np.ndarray]
    eps: float
    horizon: float = 1.0
    M: int = 1
    branch_interval: int = 1
    x0: tuple[float, ...] = (0.0,)


@dataclass
class CaseComparison:
    name: str
    eps: float
    replicas: int
    estimate: dict[str, float]
    estimate_stderr: dict[str, float]
    variance: dict[str, float]
    variance_z: float
    variance_dominates_99: bool
    mean_workload: dict[str, float]
    workload_stderr: dict[str, float]
    workload_diff: float
    workload_tolerance: float
    workload_consistent: bool
    config: dict


def strictly_positive_observable(states: np.ndarray) -> np.ndarray:
    """f(x) = exp(-x^2) + 0.1: bounded and strictly positive."""
    return np.exp(-states[:, 0] ** 2) + 0.1


def standard_compare_cases(eps: float) -> list[CompareCase]:
    """The two walk configurations used by the comparison harness."""

    def square_potential(states: np.ndarray) -> np.ndarray:
        return states[:, 0] ** 2

    return [
        CompareCase(
            name="walk_increment",
            kernel=models.GaussianWalkKernel(eps),
            chi=IncrementChi(),
            f=strictly_positive_observable,
            eps=eps,
        ),
        CompareCase(
            name="walk_potential_difference_x2",
            kernel=models.GaussianWalkKernel(eps),
            chi=PotentialDifferenceChi(square_potential),
            f=strictly_positive_observable,
            eps=eps,
        ),
    ]


def variance_workload_compare(
    cases: Sequence[CompareCase],
    replicas: int = 10**4,
    seed: int = 0,
    pop_cap: int = DEFAULT_POP_CAP,
) -> list[CaseComparison]:
    """Run both branching modes on identical configurations and test that

    * the ticketed estimator variance is no larger than the plain one
      (one-sided z-test on the difference of sample variances at 99%), and
    * the mean workloads agree within 3 combined standard errors.
    """
    results = []
    for c, case in enumerate(cases):
        per_alg: dict[str, dict] = {}
        for a, algorithm in enumerate(ALGORITHMS):
            cfg = RunConfig(
                algorithm=algorithm,
                eps=case.eps,
                horizon=case.horizon,
                M=case.M,
                replicas=replicas,
                branch_interval=case.branch_interval,
                seed=seed,
                pop_cap=pop_cap,
                x0=case.x0,
            )
            batch = run_replicas(
                cfg, case.kernel, case.chi, f=case.f, rng=substream(seed, c, a)
            )
            est = batch.estimates
            w = batch.workloads.astype(float)
            per_alg[algorithm] = {
                "estimate": float(est.mean()),
                "stderr": float(est.std(ddof=1) / math.sqrt(replicas)),
                "variance": float(np.var(est, ddof=1)),
                "var_of_variance": _variance_of_sample_variance(est),
                "w_mean": float(w.mean()),
                "w_se": float(w.std(ddof=1) / math.sqrt(replicas)),
            }
        d, t = per_alg["dmc"], per_alg["tdmc"]
        denom = math.sqrt(d["var_of_variance"] + t["var_of_variance"])
        variance_z = (d["variance"] - t["variance"]) / denom if denom > 0 else 0.0
        w_diff = abs(d["w_mean"] - t["w_mean"])
        w_tol = 3.0 * math.hypot(d["w_se"], t["w_se"])
        equal_by_construction = denom == 0.0 and d["variance"] == t["variance"]
        results.append(
            CaseComparison(
                name=case.name,
                eps=case.eps,
                replicas=replicas,
                estimate={a: per_alg[a]["estimate"] for a in ALGORITHMS},
                estimate_stderr={a: per_alg[a]["stderr"] for a in ALGORITHMS},
                variance={a: per_alg[a]["variance"] for a in ALGORITHMS},
                variance_z=variance_z,
                variance_dominates_99=equal_by_construction or variance_z > Z_99,
                mean_workload={a: per_alg[a]["w_mean"] for a in ALGORITHMS},
                workload_stderr={a: per_alg[a]["w_se"] for a in ALGORITHMS},
                workload_diff=w_diff,
                workload_tolerance=w_tol,
                workload_consistent=w_diff <= w_tol or w_tol == 0.0,
                config={
                    "experiment": "compare",
                    "case": case.name,
                    "eps": case.eps,
                    "horizon": case.horizon,
                    "M": case.M,
                    "branch_interval": case.branch_interval,
                    "replicas": replicas,
                    "seed": seed,
                    "control": "none",
                },
            )
        )
    return results


def law_equivalence_populations(
    eps: float = 0.1,
    n_steps: int = 10,
    runs: int = 10**4,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Final population samples for the law-equivalence check.

    Returns (plain-mode counts, ticketed counts with per-step ticket
    randomization) on the Gaussian walk with the increment exponent; the two
    arrays are equal in distribution.
    """
    horizon = eps * n_steps
    kernel = models.GaussianWalkKernel(eps)
    counts = {}
    for a, (algorithm, randomize) in enumerate([("dmc", False), ("tdmc", True)]):
        cfg = RunConfig(
            algorithm=algorithm, eps=eps, horizon=horizon, M=1,
            replicas=runs, seed=seed,
        )
        batch = run_replicas(
            cfg, kernel, IncrementChi(),
            rng=substream(seed, 50, a),
            randomize_tickets_each_step=randomize,
        )
        counts[algorithm] = batch.final_counts
    return counts["dmc"], counts["tdmc"]
