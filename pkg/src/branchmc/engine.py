"""Branching-particle engine: plain and ticketed kill/clone dynamics.

One *chain* evolves an ensemble of particles under a Markov kernel; after
every move each particle receives a raw weight ``P = exp(-(accumulated
chi))`` and a branch decision replaces it by ``N`` copies:

* plain mode (``dmc``): ``N = floor(P + u)`` with ``u ~ U(0, 1)``;
* ticketed mode (``tdmc``): each particle carries a ticket ``theta`` in
  [0, 1]; it dies exactly when ``P < theta``, otherwise
  ``N = max(floor(P + u), 1)`` and the first copy inherits ticket
  ``theta / P`` while extra copies draw tickets from ``U(1/P, 1)``.

Both modes produce unbiased estimators of the same weighted expectation;
the ticketed rule suppresses the population-variance blow-up of the plain
rule when per-step weights fluctuate weakly around 1.

Branch events may be deferred: on non-branch steps ``-chi`` accumulates in
each particle's ``log_weight`` and no killing occurs; the next branch event
exponentiates the full accumulated sum.

Random draws are consumed in a fixed order within each step (move draws,
then one uniform per particle, then child tickets in parent order), so a
chain is bit-reproducible from its seed.  ``run_replicas`` evolves many
independent replicas of a chain inside one flat array for speed; it is
statistically equivalent to looping ``run_chain`` over per-replica streams
and is the path the experiment drivers use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateWeightsError,
    EvaluationError,
    ModeError,
    PopulationExplosionError,
    WeightOverflowError,
)
from .rng import substream
from .weights import (
    PopulationControl,
    apply_population_control,
    check_chi_control,
    clamp_exponents,
    raw_weights,
)

PLAIN = "plain"
TICKETED = "ticketed"
_MODES = (PLAIN, TICKETED)

DEFAULT_POP_CAP = 10**6

Observable = Callable[[np.ndarray], np.ndarray]


def ones_observable(states: np.ndarray) -> np.ndarray:
    """f = 1: the estimator counts particles (normalization estimate)."""
    return np.ones(states.shape[0])


@dataclass(frozen=True)
class BranchDecision:
    """Outcome of one branch event for one particle."""

    offspring_count: int
    child_tickets: tuple[float, ...] = ()


@dataclass
class Ensemble:
    """Live particle population of one chain.

    states        (N, d) particle states
    log_weights   (N,) accumulated -chi since the last branch event
    tickets       (N,) survival tickets (ticketed mode only, else None)
    workload      running sum over completed steps of the pre-step count
    """

    states: np.ndarray
    log_weights: np.ndarray
    tickets: np.ndarray | None
    mode: str
    step_index: int = 0
    workload: int = 0
    initial_copies: int = 1
    rng: np.random.Generator | None = None
    clamp_warnings: int = 0

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def init_ensemble(x0, M: int, mode: str, rng: np.random.Generator) -> Ensemble:
    """Start a chain with M copies of x0 (fresh uniform tickets in ticketed mode)."""
    if mode not in _MODES:
        raise ConfigurationError(f"mode must be one of {_MODES}, got {mode!r}")
    if M < 1:
        raise ConfigurationError(f"initial copy count must be >= 1, got {M}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.ndim != 1:
        raise ConfigurationError("x0 must be a single state vector")
    if not np.all(np.isfinite(x0)):
        raise ConfigurationError("x0 must be finite")
    states = np.tile(x0, (M, 1))
    tickets = rng.random(M) if mode == TICKETED else None
    return Ensemble(
        states=states,
        log_weights=np.zeros(M),
        tickets=tickets,
        mode=mode,
        initial_copies=M,
        rng=rng,
    )


# ---------------------------------------------------------------------------
# Offspring rules


def dmc_offspring(P: float, u: float) -> int:
    """Plain offspring count floor(P + u); averaging over u gives mean P."""
    if not np.isfinite(P) or P < 0:
        raise ConfigurationError(f"weight must be finite and non-negative, got {P}")
    if not 0.0 <= u < 1.0:
        raise ConfigurationError(f"u must lie in [0, 1), got {u}")
    return int(np.floor(P + u))


def tdmc_offspring(
    P: float, theta: float, u: float, rng: np.random.Generator
) -> BranchDecision:
    """Ticketed branch decision for one particle.

    Survival requires P >= theta (a tie survives); a fully clamped weight
    P = 0 kills unconditionally (avoids a 0/0 ticket when theta = 0).  The
    first child's ticket is theta / P; children beyond the first (possible
    only when P > 1) draw tickets uniformly from (1/P, 1).
    """
    if not np.isfinite(P) or P < 0:
        raise ConfigurationError(f"weight must be finite and non-negative, got {P}")
    if not 0.0 <= theta <= 1.0:
        raise ConfigurationError(f"ticket must lie in [0, 1], got {theta}")
    if not 0.0 <= u < 1.0:
        raise ConfigurationError(f"u must lie in [0, 1), got {u}")
    if P <= 0.0 or P < theta:
        return BranchDecision(0)
    n = max(int(np.floor(P + u)), 1)
    tickets = [theta / P]
    if n > 1:
        low = 1.0 / P
        tickets.extend(low + rng.random(n - 1) * (1.0 - low))
    return BranchDecision(n, tuple(tickets))


def _plain_counts(P: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.floor(P + u)


def _ticketed_counts(P: np.ndarray, tickets: np.ndarray, u: np.ndarray) -> np.ndarray:
    counts = np.floor(P + u)
    np.maximum(counts, 1.0, out=counts)
    counts[(P < tickets) | (P <= 0.0)] = 0.0
    return counts


def _child_tickets(
    P: np.ndarray,
    tickets: np.ndarray,
    counts: np.ndarray,
    parent: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Tickets for all children, ordered by parent then child index."""
    total = parent.size
    out = np.empty(total)
    if total == 0:
        return out
    has = counts > 0
    first_idx = (np.cumsum(counts) - counts)[has]
    out[first_idx] = tickets[has] / P[has]
    extra = np.ones(total, dtype=bool)
    extra[first_idx] = False
    n_extra = total - first_idx.size
    if n_extra:
        lows = 1.0 / P[parent[extra]]
        out[extra] = lows + rng.random(n_extra) * (1.0 - lows)
    return out


# ---------------------------------------------------------------------------
# Single-chain stepping


def advance(
    ens: Ensemble,
    kernel,
    chi,
    control: PopulationControl | None = None,
    branch: bool = True,
    rng: np.random.Generator | None = None,
    pop_cap: int = DEFAULT_POP_CAP,
) -> Ensemble:
    """Advance the ensemble one step (in place; returns the same object).

    Every particle moves one kernel step; raw weights combine the step chi
    with any deferred accumulation; population control rescales them across
    the whole ensemble; branch decisions apply when ``branch`` is set,
    otherwise ``-chi`` accumulates for a later event.  Workload grows by the
    pre-step particle count.  An empty ensemble is absorbing: only the step
    index moves.
    """
    rng = rng if rng is not None else ens.rng
    control = control if control is not None else PopulationControl.none()
    if control.kind == "exact_M" and ens.mode != PLAIN:
        raise ConfigurationError("exact_M control is restricted to plain mode")
    n_pre = len(ens)
    ens.workload += n_pre
    if n_pre > 0:
        moved = kernel.step(ens.states, rng)
        chi_values = np.asarray(chi.evaluate(ens.states, moved, ens.step_index), dtype=float)
        bad = ~np.isfinite(chi_values)
        if bad.any():
            raise WeightOverflowError(
                "non-finite chi value",
                step=ens.step_index,
                particle=int(np.argmax(bad)),
            )
        if branch:
            w, n_clamped = raw_weights(chi_values, ens.log_weights)
            ens.clamp_warnings += n_clamped
            P = apply_population_control(w, control)
            u = rng.random(n_pre)
            if ens.mode == TICKETED:
                counts_f = _ticketed_counts(P, ens.tickets, u)
            else:
                counts_f = _plain_counts(P, u)
            new_total = float(counts_f.sum())
            if new_total > pop_cap:
                raise PopulationExplosionError(
                    f"population {int(new_total)} exceeds cap {pop_cap}",
                    step=ens.step_index,
                )
            counts = counts_f.astype(np.int64)
            parent = np.repeat(np.arange(n_pre), counts)
            if ens.mode == TICKETED:
                ens.tickets = _child_tickets(P, ens.tickets, counts, parent, rng)
            ens.states = moved[parent]
            ens.log_weights = np.zeros(parent.size)
            if control.kind == "exact_M":
                _resample_exact(ens, control.M, rng)
        else:
            ens.states = moved
            ens.log_weights = ens.log_weights - chi_values
    ens.step_index += 1
    return ens


def _resample_exact(ens: Ensemble, M: int, rng: np.random.Generator) -> None:
    """Uniformly downsample (subset) or upsample (extra copies) to exactly M.

    An extinct ensemble stays extinct: there is nothing to copy.
    """
    n = len(ens)
    if n == 0 or n == M:
        return
    if n > M:
        idx = np.sort(rng.choice(n, size=M, replace=False))
    else:
        idx = np.sort(np.concatenate([np.arange(n), rng.integers(0, n, size=M - n)]))
    ens.states = ens.states[idx]
    ens.log_weights = ens.log_weights[idx]


def estimate(ens: Ensemble, f: Observable, M: int | None = None) -> float:
    """Estimator (1/M) * sum_j f(x_j); 0 for an extinct ensemble."""
    M = M if M is not None else ens.initial_copies
    if len(ens) == 0:
        return 0.0
    values = np.asarray(f(ens.states), dtype=float)
    if not np.all(np.isfinite(values)):
        raise EvaluationError(
            "observable returned non-finite values",
            particle=int(np.argmax(~np.isfinite(values))),
        )
    return float(values.sum() / M)


def randomize_tickets(ens: Ensemble, rng: np.random.Generator | None = None) -> Ensemble:
    """Replace every ticket (including first children) with a fresh U(0, 1) draw.

    With this applied after every branch event, the ticketed chain is equal
    in law to the plain chain.
    """
    if ens.mode != TICKETED:
        raise ModeError("randomize_tickets requires ticketed mode")
    rng = rng if rng is not None else ens.rng
    ens.tickets = rng.random(len(ens))
    return ens


# ---------------------------------------------------------------------------
# Chain and replica drivers


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of a chain run.

    ``algorithm`` selects the branching mode ("dmc" = plain, "tdmc" =
    ticketed).  The horizon must be an integer multiple of eps.  The
    selector strings (model / chi / control) are echo metadata for reports;
    drivers receive the actual kernel / chi / control objects.
    """

    algorithm: str
    eps: float
    horizon: float
    M: int = 1
    replicas: int = 1
    branch_interval: int = 1
    seed: int = 0
    pop_cap: int = DEFAULT_POP_CAP
    x0: tuple[float, ...] = (0.0,)
    model: str | None = None
    chi: str | None = None
    control: str | None = None

    def __post_init__(self):
        if self.algorithm not in ("dmc", "tdmc"):
            raise ConfigurationError(f"algorithm must be dmc or tdmc, got {self.algorithm!r}")
        if self.M < 1 or self.replicas < 1 or self.branch_interval < 1:
            raise ConfigurationError("M, replicas and branch_interval must be >= 1")
        if self.eps <= 0 and self.horizon != 0:
            raise ConfigurationError("eps must be positive for a nonzero horizon")
        self.n_steps()  # validates the grid

    @property
    def mode(self) -> str:
        return TICKETED if self.algorithm == "tdmc" else PLAIN

    def n_steps(self) -> int:
        if self.horizon == 0:
            return 0
        ratio = self.horizon / self.eps
        n = round(ratio)
        if n < 0 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
            raise ConfigurationError(
                f"horizon {self.horizon} is not a multiple of eps {self.eps}"
            )
        return int(n)


@dataclass
class ChainResult:
    """Record of one chain: final estimate, population trace, cost."""

    estimate: float
    n_trace: np.ndarray
    workload: int
    extinction_step: int | None
    clamp_warnings: int


def _branch_schedule(k: int, n_steps: int, interval: int) -> bool:
    # Branch every `interval` steps and always at the horizon, so the plain
    # particle-sum estimator never leaves accumulated weight on the table.
    return ((k + 1) % interval == 0) or (k + 1 == n_steps)


def run_chain(
    cfg: RunConfig,
    kernel,
    chi,
    control: PopulationControl | None = None,
    f: Observable = ones_observable,
    rng: np.random.Generator | None = None,
) -> ChainResult:
    """Run one chain on the grid t_k = k*eps up to the horizon."""
    control = control if control is not None else PopulationControl.none()
    check_chi_control(chi, control)
    rng = rng if rng is not None else substream(cfg.seed, 0)
    ens = init_ensemble(np.asarray(cfg.x0, dtype=float), cfg.M, cfg.mode, rng)
    n_steps = cfg.n_steps()
    trace = np.empty(n_steps + 1, dtype=np.int64)
    trace[0] = cfg.M
    extinction_step = None
    for k in range(n_steps):
        advance(
            ens,
            kernel,
            chi,
            control,
            branch=_branch_schedule(k, n_steps, cfg.branch_interval),
            pop_cap=cfg.pop_cap,
        )
        trace[k + 1] = len(ens)
        if extinction_step is None and len(ens) == 0:
            extinction_step = k + 1
    return ChainResult(
        estimate=estimate(ens, f, cfg.M),
        n_trace=trace,
        workload=ens.workload,
        extinction_step=extinction_step,
        clamp_warnings=ens.clamp_warnings,
    )


@dataclass
class ReplicaBatch:
    """Per-replica outputs of a batched run (one entry per replica)."""

    estimates: np.ndarray
    workloads: np.ndarray
    final_counts: np.ndarray
    clamp_warnings: int
    final_states: np.ndarray | None = None
    final_replica_ids: np.ndarray | None = None
    final_tickets: np.ndarray | None = None

    @property
    def extinction_fraction(self) -> float:
        return float(np.mean(self.final_counts == 0))


def _segment_control(
    w: np.ndarray,
    rep: np.ndarray,
    n_replicas: int,
    control: PopulationControl,
    step: int,
) -> np.ndarray:
    """apply_population_control per replica segment of a flat weight array."""
    if control.kind == "none":
        return w
    totals = np.bincount(rep, weights=w, minlength=n_replicas)
    counts = np.bincount(rep, minlength=n_replicas)
    live = counts > 0
    if np.any(live & (totals == 0.0)):
        bad = int(np.argmax(live & (totals == 0.0)))
        raise DegenerateWeightsError("all raw weights are zero", step=step, replica=bad)
    scale = np.ones(n_replicas)
    if control.kind in ("self_normalized", "exact_M"):
        scale[live] = counts[live] / totals[live]
    elif control.kind == "mean_M":
        scale[live] = control.M / totals[live]
    else:  # alpha_power
        scale[live] = (control.M / counts[live]) ** control.alpha * (
            counts[live] / totals[live]
        )
    return w * scale[rep]


def run_replicas(
    cfg: RunConfig,
    kernel,
    chi,
    control: PopulationControl | None = None,
    f: Observable = ones_observable,
    rng: np.random.Generator | None = None,
    randomize_tickets_each_step: bool = False,
    keep_final_state: bool = False,
) -> ReplicaBatch:
    """Evolve ``cfg.replicas`` independent chains inside one flat array.

    All replicas share one random stream; the flat draw order differs from
    per-replica streams but every particle still receives i.i.d. draws, so
    all replica-level statistics match ``run_chain``.  The population cap is
    enforced per replica.  ``randomize_tickets_each_step`` replaces every
    child ticket with a fresh U(0, 1) draw at each branch event (the
    law-equivalence reduction to plain mode).  exact_M control is only
    available through ``run_chain``.
    """
    control = control if control is not None else PopulationControl.none()
    check_chi_control(chi, control)
    if control.kind == "exact_M":
        raise ConfigurationError("exact_M control is not supported by run_replicas")
    rng = rng if rng is not None else substream(cfg.seed, 0)
    ticketed = cfg.mode == TICKETED
    R, M = cfg.replicas, cfg.M
    n_steps = cfg.n_steps()

    x0 = np.atleast_1d(np.asarray(cfg.x0, dtype=float))
    if not np.all(np.isfinite(x0)):
        raise ConfigurationError("x0 must be finite")
    states = np.tile(x0, (R * M, 1))
    rep = np.repeat(np.arange(R, dtype=np.int64), M)
    log_weights = np.zeros(R * M)
    tickets = rng.random(R * M) if ticketed else None
    workloads = np.zeros(R, dtype=np.int64)
    clamp_warnings = 0

    for k in range(n_steps):
        n = states.shape[0]
        if n == 0:
            break  # every replica extinct; workload frozen for all
        workloads += np.bincount(rep, minlength=R)
        moved = kernel.step(states, rng)
        chi_values = np.asarray(chi.evaluate(states, moved, k), dtype=float)
        bad = ~np.isfinite(chi_values)
        if bad.any():
            j = int(np.argmax(bad))
            raise WeightOverflowError(
                "non-finite chi value", step=k, replica=int(rep[j]), particle=j
            )
        if not _branch_schedule(k, n_steps, cfg.branch_interval):
            log_weights = log_weights - chi_values
            states = moved
            continue
        w, n_clamped = raw_weights(chi_values, log_weights)
        clamp_warnings += n_clamped
        P = _segment_control(w, rep, R, control, step=k)
        u = rng.random(n)
        if ticketed:
            counts_f = _ticketed_counts(P, tickets, u)
        else:
            counts_f = _plain_counts(P, u)
        per_rep = np.bincount(rep, weights=counts_f, minlength=R)
        if per_rep.max() > cfg.pop_cap:
            raise PopulationExplosionError(
                f"population {int(per_rep.max())} exceeds cap {cfg.pop_cap}",
                step=k,
                replica=int(np.argmax(per_rep)),
            )
        counts = counts_f.astype(np.int64)
        parent = np.repeat(np.arange(n), counts)
        if ticketed:
            if randomize_tickets_each_step:
                tickets = rng.random(parent.size)
            else:
                tickets = _child_tickets(P, tickets, counts, parent, rng)
        states = moved[parent]
        rep = rep[parent]
        log_weights = np.zeros(parent.size)

    if states.shape[0]:
        values = np.asarray(f(states), dtype=float)
        if not np.all(np.isfinite(values)):
            bad = int(np.argmax(~np.isfinite(values)))
            raise EvaluationError(
                "observable returned non-finite values",
                replica=int(rep[bad]),
                particle=bad,
            )
        sums = np.bincount(rep, weights=values, minlength=R)
    else:
        sums = np.zeros(R)
    final_counts = np.bincount(rep, minlength=R)
    return ReplicaBatch(
        estimates=sums / M,
        workloads=workloads,
        final_counts=final_counts,
        clamp_warnings=clamp_warnings,
        final_states=states if keep_final_state else None,
        final_replica_ids=rep if keep_final_state else None,
        final_tickets=tickets if (keep_final_state and ticketed) else None,
    )
