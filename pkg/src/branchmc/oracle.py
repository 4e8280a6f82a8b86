"""Branching-free reference estimators and statistical test helpers.

``reference_estimate`` computes the same weighted expectation the branching
engine targets, E[f(y_t) * exp(-sum_k chi_k)], by plain Monte Carlo with one
weighted, non-branching path per sample.  It shares no code with the
branching machinery, so it serves as an independent oracle for both
branching modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, WeightOverflowError
from .weights import clamp_exponents


@dataclass(frozen=True)
class ReferenceEstimate:
    """Reference value with its Monte Carlo standard error."""

    value: float
    stderr: float
    n_samples: int
    workload: int


def reference_estimate(
    kernel,
    chi,
    f,
    n_steps: int,
    n_samples: int,
    rng: np.random.Generator,
    x0=(0.0,),
) -> ReferenceEstimate:
    """Direct Monte Carlo of E[f(y_t) * exp(-sum chi)] over weighted paths.

    Each sample is a single trajectory of the kernel started at x0 whose
    log-weight accumulates -chi per step; no killing or cloning happens, so
    the workload is exactly n_samples * n_steps.
    """
    if n_samples < 2:
        raise ConfigurationError("reference_estimate needs n_samples >= 2")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    states = np.tile(x0, (n_samples, 1))
    log_weights = np.zeros(n_samples)
    for k in range(n_steps):
        moved = kernel.step(states, rng)
        chi_values = np.asarray(chi.evaluate(states, moved, k), dtype=float)
        if not np.all(np.isfinite(chi_values)):
            raise WeightOverflowError(
                "non-finite chi value",
                step=k,
                particle=int(np.argmax(~np.isfinite(chi_values))),
            )
        log_weights -= chi_values
        states = moved
    exponents, _ = clamp_exponents(log_weights)
    values = np.asarray(f(states), dtype=float) * np.exp(exponents)
    value = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(n_samples))
    return ReferenceEstimate(
        value=value,
        stderr=stderr,
        n_samples=n_samples,
        workload=n_samples * n_steps,
    )


def analytic_walk_normalization(horizon: float, eps: float) -> float:
    """Closed-form normalization of the Gaussian walk with the increment
    exponent: a telescoping product of per-step factors exp(eps/2)."""
    if horizon == 0:
        return 1.0
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    ratio = horizon / eps
    n = round(ratio)
    if n < 0 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ConfigurationError(f"horizon {horizon} is not a multiple of eps {eps}")
    return math.exp(0.5 * eps) ** n


def _kolmogorov_sf(x: float, terms: int = 100) -> float:
    """Asymptotic Kolmogorov survival function, series truncated at `terms`."""
    if x <= 0:
        return 1.0
    total = 0.0
    for j in range(1, terms + 1):
        term = math.exp(-2.0 * (j * x) ** 2)
        total += term if j % 2 else -term
        if term == 0.0:
            break
    return min(1.0, max(0.0, 2.0 * total))


def two_sample_ks(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.

    Integer-valued samples (population counts) make the test conservative;
    callers should test at level 0.01 to absorb that.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise DataError("two_sample_ks needs non-empty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    statistic = float(np.max(np.abs(cdf_a - cdf_b)))
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    return statistic, _kolmogorov_sf(en * statistic)


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ys vs xs (log coordinates supplied by caller)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size != ys.size:
        raise DataError("loglog_slope needs equally long coordinate lists")
    if xs.size < 3:
        raise DataError("loglog_slope needs at least 3 points")
    return float(np.polyfit(xs, ys, 1)[0])
