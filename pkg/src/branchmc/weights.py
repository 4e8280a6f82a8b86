"""Step-weight functions (chi) and ensemble-level population control.

The branching engine turns a per-step exponent ``chi(x, y, k)`` into a raw
weight ``w = exp(accumulated_log_weight - chi)`` after every move, rescales
the raw weights of the whole ensemble (population control), and only then
draws offspring counts.  All chi variants are pure functions of the states
before (``x``) and after (``y``) one kernel step; the filter-likelihood
variant additionally reads the observation increment for the arrival step.

Weight exponents are clamped to ``[-700, 700]`` before exponentiation so a
single wild step cannot silently poison an estimate with an infinity; clamp
events are counted and surfaced as warnings on run reports.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    ConfigurationError,
    DataError,
    DegenerateWeightsError,
    WeightOverflowError,
)

# Callables mapping a state block (N, d) to per-state values (N,).
Potential = Callable[[np.ndarray], np.ndarray]

EXPONENT_CLAMP = 700.0


def _as_states(x) -> np.ndarray:
    """Normalize scalar / (d,) / (N, d) input to a (N, d) float block."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    return a


def _require_1d(x: np.ndarray, tag: str) -> None:
    if x.shape[1] != 1:
        raise ConfigurationError(
            f"{tag} weight function is defined for one-dimensional state only, "
            f"got dimension {x.shape[1]}"
        )


class TrapezoidPotentialChi:
    """chi(x, y) = 0.5 * (V(x) + V(y)) * dt.

    Trapezoid accumulation of a potential along the step; the classic
    killing/creation exponent of diffusion Monte Carlo.
    """

    tag = "trapezoid_potential"
    requires_normalized_control = False

    def __init__(self, potential: Potential, dt: float):
        self.potential = potential
        self.dt = float(dt)

    def evaluate(self, x: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
        return 0.5 * (self.potential(x) + self.potential(y)) * self.dt


class StochasticIntegralChi:
    """chi(x, y) = V(x) * (y - x), a left-point stochastic-integral increment.

    One-dimensional state only.
    """

    tag = "stochastic_integral"
    requires_normalized_control = False

    def __init__(self, potential: Potential):
        self.potential = potential

    def evaluate(self, x: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
        _require_1d(x, self.tag)
        return self.potential(x) * (y - x)[:, 0]


class PotentialDifferenceChi:
    """chi(x, y) = V(y) - V(x); telescopes to a reweighting by exp(-V) at the horizon."""

    tag = "potential_difference"
    requires_normalized_control = False

    def __init__(self, potential: Potential):
        self.potential = potential

    def evaluate(self, x: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
        return self.potential(y) - self.potential(x)


class IncrementChi:
    """chi(x, y) = y - x for one-dimensional state."""

    tag = "increment"
    requires_normalized_control = False

    def evaluate(self, x: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
        _require_1d(x, self.tag)
        return (y - x)[:, 0]


class ZeroChi:
    """chi = 0: no killing or cloning; the engine reduces to plain simulation."""

    tag = "zero"
    requires_normalized_control = False

    def evaluate(self, x: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
        return np.zeros(x.shape[0])


class FilterLikelihoodChi:
    """chi(x, y, k) = ||y*eps - D[k+1]||^2 / (0.02*eps).

    Gaussian log-likelihood exponent of the observed increment for the
    arrival step, for an observation process with noise amplitude 0.1.
    ``observations`` must expose ``increments`` (rows indexed so that row k
    is the increment compared against the proposal of engine step k) and
    ``eps``.  Must be paired with a normalized population control.
    """

    tag = "filter_likelihood"
    requires_normalized_control = True

    def __init__(self, observations):
        self.observations = observations

    def evaluate(self, x: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
        increments = self.observations.increments
        if k < 0 or k >= len(increments):
            raise DataError(
                f"no observation increment for step {k} "
                f"(path holds {len(increments)} increments)"
            )
        eps = self.observations.eps
        resid = y * eps - increments[k]
        return np.einsum("nd,nd->n", resid, resid) / (0.02 * eps)


def chi_eval(variant, x, y, k: int = 0):
    """Evaluate a chi variant on states before (x) and after (y) one step.

    Accepts scalars, single states (d,), or blocks (N, d); returns a float
    for single-state input and a (N,) array for block input.
    """
    xs, ys = _as_states(x), _as_states(y)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ConfigurationError("chi_eval requires finite states")
    values = variant.evaluate(xs, ys, k)
    if np.ndim(x) < 2:
        return float(values[0])
    return np.asarray(values)


def clamp_exponents(exponents: np.ndarray) -> tuple[np.ndarray, int]:
    """Clamp weight exponents to [-700, 700]; return (clamped, clamp count)."""
    out_of_range = (exponents < -EXPONENT_CLAMP) | (exponents > EXPONENT_CLAMP)
    n_clamped = int(np.count_nonzero(out_of_range))
    if n_clamped:
        exponents = np.clip(exponents, -EXPONENT_CLAMP, EXPONENT_CLAMP)
    return exponents, n_clamped


def raw_weights(chi_values, carried_log_weights=None) -> tuple[np.ndarray, int]:
    """Raw branching weights w_j = exp(carried_log_weight_j - chi_j).

    The carried accumulator stores -(sum of chi) from deferred steps since
    the last branch event (zero at every branch event), so the composite
    weight exponentiates the full accumulated -chi.  Returns the weights and
    the number of clamped exponents.  Non-finite chi raises
    WeightOverflowError naming the particle.
    """
    chi_values = np.asarray(chi_values, dtype=float)
    bad = ~np.isfinite(chi_values)
    if bad.any():
        raise WeightOverflowError(
            "non-finite chi value", particle=int(np.argmax(bad))
        )
    if carried_log_weights is None:
        exponents = -chi_values
    else:
        exponents = np.asarray(carried_log_weights, dtype=float) - chi_values
    exponents, n_clamped = clamp_exponents(exponents)
    return np.exp(exponents), n_clamped


_CONTROL_KINDS = ("none", "self_normalized", "mean_M", "alpha_power", "exact_M")


@dataclass(frozen=True)
class PopulationControl:
    """Deterministic rescaling of raw weights before branching.

    kinds:
      none             identity
      self_normalized  P_i = w_i / mean(w); sum(P) = N exactly
      mean_M           P_i = M * w_i / sum(w); sum(P) = M exactly
      alpha_power      P_i = (M/N)**alpha * self-normalized P_i
      exact_M          self-normalized weights, then the ensemble is
                       uniformly resampled to exactly M after branching
                       (plain mode only; tickets cannot be duplicated)
    """

    kind: str = "none"
    M: int | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in _CONTROL_KINDS:
            raise ConfigurationError(f"unknown population control {self.kind!r}")
        if self.kind in ("mean_M", "alpha_power", "exact_M"):
            if self.M is None or self.M < 1:
                raise ConfigurationError(f"{self.kind} control requires M >= 1")
        if self.kind == "alpha_power":
            if self.alpha is None or self.alpha < 0:
                raise ConfigurationError("alpha_power control requires alpha >= 0")

    @classmethod
    def none(cls) -> "PopulationControl":
        return cls("none")

    @classmethod
    def self_normalized(cls) -> "PopulationControl":
        return cls("self_normalized")

    @classmethod
    def mean_m(cls, M: int) -> "PopulationControl":
        return cls("mean_M", M=M)

    @classmethod
    def alpha_power(cls, M: int, alpha: float) -> "PopulationControl":
        return cls("alpha_power", M=M, alpha=alpha)

    @classmethod
    def exact_m(cls, M: int) -> "PopulationControl":
        return cls("exact_M", M=M)

    @property
    def is_normalized(self) -> bool:
        return self.kind != "none"


def apply_population_control(raw, control: PopulationControl) -> np.ndarray:
    """Rescale raw weights per the control's formula (``none`` is the identity).

    Raises DegenerateWeightsError when all raw weights are zero (the
    normalizing sum vanishes and the step cannot proceed).
    """
    raw = np.asarray(raw, dtype=float)
    if raw.size == 0:
        raise DataError("population control needs a non-empty weight vector")
    if not np.all(np.isfinite(raw)):
        raise WeightOverflowError(
            "non-finite raw weight", particle=int(np.argmax(~np.isfinite(raw)))
        )
    if np.any(raw < 0):
        raise ConfigurationError("raw weights must be non-negative")
    if control.kind == "none":
        return raw
    total = float(raw.sum())
    if total == 0.0:
        raise DegenerateWeightsError("all raw weights are zero")
    n = raw.size
    if control.kind == "self_normalized" or control.kind == "exact_M":
        return raw * (n / total)
    if control.kind == "mean_M":
        return raw * (control.M / total)
    # alpha_power
    return (control.M / n) ** control.alpha * raw * (n / total)


def check_chi_control(chi, control: PopulationControl) -> None:
    """Reject chi/control pairings that are invalid by construction."""
    if getattr(chi, "requires_normalized_control", False) and not control.is_normalized:
        raise ConfigurationError(
            f"chi variant {getattr(chi, 'tag', type(chi).__name__)!r} requires a "
            "normalized population control (self_normalized, mean_M, alpha_power)"
        )
