import math

import numpy as np
import pytest

from branchmc import experiments, models
from branchmc.engine import RunConfig, run_replicas
from branchmc.experiments import (
    CompareCase,
    fig1_second_moment,
    law_equivalence_populations,
    lj_rare_event,
    lorenz_filter,
    standard_compare_cases,
    variance_workload_compare,
)
from branchmc.oracle import reference_estimate, two_sample_ks
from branchmc.rng import substream
from branchmc.weights import PotentialDifferenceChi, ZeroChi


# ---------------------------------------------------------------------------
# fig1 sweep


def test_fig1_small_sweep_axes_and_ordering():
    eps_list = [2.0**-4, 2.0**-5, 2.0**-6]
    report = fig1_second_moment(eps_list, replicas=1500, seed=0)
    for alg in ("dmc", "tdmc"):
        pts = report.points[alg]
        assert [p.eps for p in pts] == eps_list
        for p in pts:
            assert p.neg_log_eps == pytest.approx(-math.log(p.eps))
            assert p.log_second_moment == pytest.approx(math.log(p.second_moment))
    # the plain second moment grows as eps shrinks; the ticketed one does not
    dmc = [p.second_moment for p in report.points["dmc"]]
    assert dmc[-1] > dmc[0]
    assert report.slopes["dmc"] > report.slopes["tdmc"]


def test_fig1_deterministic():
    eps_list = [2.0**-4, 2.0**-5, 2.0**-6]
    a = fig1_second_moment(eps_list, replicas=400, seed=3)
    b = fig1_second_moment(eps_list, replicas=400, seed=3)
    for alg in ("dmc", "tdmc"):
        assert [p.second_moment for p in a.points[alg]] == [
            p.second_moment for p in b.points[alg]
        ]


def test_fig1_censors_population_cap_aborts():
    report = fig1_second_moment(
        [2.0**-4, 2.0**-5], replicas=300, seed=1, algorithms=("dmc",), pop_cap=2
    )
    assert all(p.censored for p in report.points["dmc"])
    assert math.isnan(report.slopes["dmc"])


# ---------------------------------------------------------------------------
# Lennard-Jones rare event


def test_lj_zero_lambda_is_brute_force_with_exact_workload():
    report = lj_rare_event(
        gamma=0.4, lam=0.0, eps=1e-3, M=1, replicas=40, seed=0, horizon=0.5
    )
    # V = 0: every weight is 1, the population never branches, and the scaled
    # workload per replica is exactly the horizon
    assert report.mean_scaled_workload == pytest.approx(0.5, abs=1e-12)
    assert report.workload_stderr == 0.0
    assert report.mean_final_population == 1.0


def test_lj_reweighted_normalization_is_unbiased():
    # with f = exp(V - V(x0)) and no event indicator the estimator has
    # expectation exactly 1 for any kernel and any V
    gamma, lam, eps = 0.4, 1.9, 1e-3
    params = models.LJParams(gamma=gamma, lam=lam, eps=eps)
    kernel = models.LennardJonesKernel(params)
    x0 = models.initial_cluster()
    v0 = models.lj_reaction_coordinate(x0, lam, gamma)

    def potential(states):
        return np.asarray(models.lj_reaction_coordinate(states, lam, gamma))

    def reweight(states):
        return np.exp(potential(states) - v0)

    R = 2000
    for a, algorithm in enumerate(("dmc", "tdmc")):
        cfg = RunConfig(
            algorithm=algorithm, eps=eps, horizon=0.05, M=1, replicas=R,
            seed=4, x0=tuple(x0),
        )
        batch = run_replicas(
            cfg, kernel, PotentialDifferenceChi(potential), f=reweight,
            rng=substream(4, a),
        )
        mean = batch.estimates.mean()
        se = batch.estimates.std(ddof=1) / math.sqrt(R)
        assert abs(mean - 1.0) <= 4 * se, (algorithm, mean, se)


def test_lj_report_fields_consistent():
    report = lj_rare_event(
        gamma=0.4, lam=1.9, eps=1e-3, M=1, replicas=60, seed=5, horizon=0.2
    )
    assert report.algorithm == "tdmc"
    assert report.replicas == 60
    assert report.config["lambda"] == 1.9
    assert report.half_variance_times_workload == pytest.approx(
        0.5 * report.estimator_variance * report.mean_scaled_workload
    )
    assert report.brute_force_variance == pytest.approx(
        report.estimate * (1 - report.estimate)
    )


# ---------------------------------------------------------------------------
# Lorenz filter


def test_filter_noiseless_twin_reconstructs_exactly():
    report = lorenz_filter(
        M=5, eps=1e-3, horizon=0.05, seed=0, algorithm="tdmc",
        noise_sigma=0.0, dynamics_noise_scale=0.0,
    )
    assert np.abs(report.reconstruction - report.hidden).max() < 1e-9
    # all particles ride the same deterministic path: one distinct state
    assert report.mean_distinct_count == 1.0
    assert report.mean_population == 5.0


def test_filter_observations_identical_across_algorithms():
    _, obs_t = lorenz_filter(
        M=3, eps=1e-3, horizon=0.02, seed=7, algorithm="tdmc", return_observations=True
    )
    _, obs_d = lorenz_filter(
        M=3, eps=1e-3, horizon=0.02, seed=7, algorithm="dmc", return_observations=True
    )
    np.testing.assert_array_equal(obs_t.increments, obs_d.increments)


def test_filter_short_noisy_run_tracks():
    report = lorenz_filter(M=10, eps=1e-3, horizon=0.2, seed=1, algorithm="tdmc")
    assert np.all(np.isfinite(report.rmse))
    assert report.extinction_step is None
    assert abs(report.mean_population - 10.0) < 1.0
    # started on the truth with strong observations: stays within a few units
    assert report.rmse.max() < 2.0


def test_filter_rejects_unknown_algorithm():
    with pytest.raises(Exception):
        lorenz_filter(M=2, eps=1e-3, horizon=0.01, algorithm="smc")


def test_distinct_count_clusters_exact_duplicates():
    states = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 5e-9]])
    assert experiments._distinct_count(states, tol=1e-8) == 2
    assert experiments._distinct_count(states[:1], tol=1e-8) == 1
    assert experiments._distinct_count(states[:0], tol=1e-8) == 0


# ---------------------------------------------------------------------------
# variance / workload comparison


def test_compare_zero_chi_exact_equality():
    case = CompareCase(
        name="zero",
        kernel=models.GaussianWalkKernel(0.1),
        chi=ZeroChi(),
        f=lambda s: np.ones(len(s)),
        eps=0.1,
        horizon=0.5,
    )
    (result,) = variance_workload_compare([case], replicas=200, seed=0)
    assert result.variance["dmc"] == 0.0 and result.variance["tdmc"] == 0.0
    assert result.variance_dominates_99  # equal by construction
    assert result.workload_diff == 0.0
    assert result.workload_consistent


def test_compare_standard_cases_are_unbiased():
    eps = 0.1
    cases = standard_compare_cases(eps)
    results = variance_workload_compare(cases, replicas=4000, seed=1)
    for case, result in zip(cases, results):
        ref = reference_estimate(
            case.kernel, case.chi, case.f, int(round(1.0 / eps)), 4000,
            substream(99, hash(case.name) % 1000),
        )
        for alg in ("dmc", "tdmc"):
            se = math.hypot(result.estimate_stderr[alg], ref.stderr)
            assert abs(result.estimate[alg] - ref.value) <= 4 * se, (case.name, alg)


def test_compare_report_shape():
    results = variance_workload_compare(standard_compare_cases(0.1), replicas=500, seed=2)
    assert len(results) == 2
    for r in results:
        assert set(r.estimate) == {"dmc", "tdmc"}
        assert r.workload_tolerance >= 0.0
        assert r.config["experiment"] == "compare"


# ---------------------------------------------------------------------------
# law equivalence


def test_law_equivalence_ks_accepts():
    n_dmc, n_tdmc = law_equivalence_populations(eps=0.1, n_steps=10, runs=4000, seed=5)
    assert n_dmc.shape == n_tdmc.shape == (4000,)
    _, p = two_sample_ks(n_dmc, n_tdmc)
    assert p > 0.01
