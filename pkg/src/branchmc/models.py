"""Markov kernels and observation synthesis for the built-in systems.

Three systems are provided:

* a one-dimensional Gaussian random walk with step variance eps,
* overdamped Langevin dynamics of a planar 7-particle Lennard-Jones
  cluster (state dimension 14), discretised with the Euler scheme,
* the stochastic Lorenz-63 system (state dimension 3) with additive
  noise of amplitude sqrt(2) per component, plus its noisy linear
  increment observations.

Every kernel is stateless: ``step(states, rng)`` maps a (N, d) block of
states to the next block using draws from the supplied generator, so one
generator per chain gives bit-reproducible trajectories.  All step
functions reduce to the identity at eps = 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, SingularityError

# ---------------------------------------------------------------------------
# Gaussian random walk


def walk_step(x, eps: float, rng: np.random.Generator):
    """One Gaussian walk step: x + sqrt(eps) * xi with xi standard normal."""
    x = np.asarray(x, dtype=float)
    return x + math.sqrt(eps) * rng.standard_normal(x.shape)


class GaussianWalkKernel:
    """Random walk y_{k+1} = y_k + sqrt(eps) * xi_{k+1} in one dimension."""

    dim = 1

    def __init__(self, eps: float):
        if eps < 0:
            raise ConfigurationError("eps must be non-negative")
        self.eps = float(eps)

    def step(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return walk_step(states, self.eps, rng)


# ---------------------------------------------------------------------------
# Lennard-Jones cluster (7 particles in the plane, state dimension 14)

N_LJ_PARTICLES = 7
LJ_DIM = 2
LJ_STATE_DIM = N_LJ_PARTICLES * LJ_DIM

_PAIR_I, _PAIR_J = np.triu_indices(N_LJ_PARTICLES, k=1)
_N_PAIRS = _PAIR_I.size
# difference operator: (flat state) @ _DIFF = flat pair displacement vectors,
# column 2*p + d holding component d of x_i - x_j for pair p = (i, j);
# its transpose scatters pair forces back onto particles
_DIFF = np.zeros((LJ_STATE_DIM, 2 * _N_PAIRS))
for _p in range(_N_PAIRS):
    for _d in range(LJ_DIM):
        _DIFF[LJ_DIM * _PAIR_I[_p] + _d, 2 * _p + _d] = 1.0
        _DIFF[LJ_DIM * _PAIR_J[_p] + _d, 2 * _p + _d] = -1.0


@dataclass(frozen=True)
class LJParams:
    """Parameters of the cluster dynamics and its importance function.

    gamma is the temperature of the Langevin thermostat, lam the strength
    of the importance function V(x) = (lam/gamma) * min distance of the
    outer particles to the centroid.  r_min clamps pairwise distances in
    force evaluations: below it the force magnitude saturates (direction
    is kept), preventing overflow when the thermostat pushes a pair close.
    """

    gamma: float
    lam: float
    eps: float
    r_min: float = 0.3
    n_particles: int = N_LJ_PARTICLES
    dim: int = LJ_DIM

    def __post_init__(self):
        if self.gamma <= 0 or self.lam < 0 or self.eps < 0:
            raise ConfigurationError("LJParams requires gamma > 0, lam >= 0, eps >= 0")


def initial_cluster() -> np.ndarray:
    """Hexagonal start configuration: particle 1 at the origin, particles
    2..7 on the unit circle at angles j*pi/3."""
    coords = [(0.0, 0.0)]
    for j in range(2, 8):
        coords.append((math.cos(j * math.pi / 3), math.sin(j * math.pi / 3)))
    return np.asarray(coords, dtype=float).reshape(LJ_STATE_DIM)


def _as_clusters(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if x.shape[-1] != LJ_STATE_DIM:
        raise ConfigurationError(
            f"cluster state must have dimension {LJ_STATE_DIM}, got {x.shape[-1]}"
        )
    return x.reshape(-1, N_LJ_PARTICLES, LJ_DIM), single


def _pair_r2(flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat pair displacements (n, 42) and squared distances (n, 21)."""
    rvec = flat @ _DIFF
    r2 = rvec[:, 0::2] ** 2 + rvec[:, 1::2] ** 2
    return rvec, r2


def lj_energy(x) -> np.ndarray | float:
    """Total pair energy sum_{i<j} 4 (r^-12 - r^-6), unclamped."""
    pts, single = _as_clusters(x)
    _, r2 = _pair_r2(pts.reshape(-1, LJ_STATE_DIM))
    if np.any(r2 == 0.0):
        raise SingularityError("coincident particle pair in energy evaluation")
    inv6 = (1.0 / r2) ** 3
    energy = 4.0 * np.sum(inv6 * inv6 - inv6, axis=1)
    return float(energy[0]) if single else energy


def lj_energy_gradient(x, r_min: float = 0.3) -> np.ndarray:
    """Gradient of the pair energy with distance clamping for the force law.

    Pair distances below r_min are evaluated at r_min when computing the
    radial derivative, which saturates the force magnitude without changing
    its direction.  Exactly coincident pairs raise SingularityError.
    """
    pts, single = _as_clusters(x)
    rvec, r2 = _pair_r2(pts.reshape(-1, LJ_STATE_DIM))
    if np.any(r2 == 0.0):
        raise SingularityError("coincident particle pair in force evaluation")
    # coef = u'(r_eff) / r with u'(s) = 24 s^-7 (1 - 2 s^-6); while unclamped
    # (r >= r_min) this is 24 r^-8 (1 - 2 r^-6) and needs no square root
    inv2 = 1.0 / np.maximum(r2, r_min * r_min)
    inv6 = inv2 * inv2 * inv2
    coef = 24.0 * inv6 * (1.0 - 2.0 * inv6) * inv2
    clamped = r2 < r_min * r_min
    if clamped.any():
        coef[clamped] = (
            24.0
            * inv6[clamped]
            * (1.0 - 2.0 * inv6[clamped])
            / (r_min * np.sqrt(r2[clamped]))
        )
    pair_term = np.empty_like(rvec)
    pair_term[:, 0::2] = coef * rvec[:, 0::2]
    pair_term[:, 1::2] = coef * rvec[:, 1::2]
    grad = pair_term @ _DIFF.T
    return grad[0] if single else grad


def lj_reaction_coordinate(x, lam: float, gamma: float) -> np.ndarray | float:
    """(lam/gamma) * min over particles 2..7 of the distance to the centroid."""
    pts, single = _as_clusters(x)
    centroid = pts.mean(axis=1, keepdims=True)
    dists = np.linalg.norm(pts[:, 1:, :] - centroid, axis=2)
    v = (lam / gamma) * dists.min(axis=1)
    return float(v[0]) if single else v


def langevin_step(x, grad, gamma: float, eps: float, rng: np.random.Generator):
    """Euler step of overdamped Langevin dynamics:
    x - grad(x)*eps + sqrt(2*gamma*eps)*xi."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(grad(x), dtype=float)
    if not np.all(np.isfinite(g)):
        raise SingularityError("non-finite gradient in Langevin step")
    return x - g * eps + math.sqrt(2.0 * gamma * eps) * rng.standard_normal(x.shape)


class LennardJonesKernel:
    """Euler-discretised overdamped Langevin dynamics of the 7-particle cluster."""

    dim = LJ_STATE_DIM

    def __init__(self, params: LJParams):
        self.params = params

    def step(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        return langevin_step(
            states, lambda s: lj_energy_gradient(s, p.r_min), p.gamma, p.eps, rng
        )


# ---------------------------------------------------------------------------
# Stochastic Lorenz-63

LORENZ_Y0 = np.array([-5.91652, -5.52332, 24.57231])
LORENZ_NOISE_SCALE = math.sqrt(2.0)
SIGN_CONVENTIONS = ("classical", "as_printed")


def lorenz_drift(y, sign_convention: str = "classical") -> np.ndarray:
    """Lorenz-63 drift field.

    ``classical`` uses 10*(y2 - y1) for the first component (the bounded
    chaotic attractor); ``as_printed`` flips it to 10*(y1 - y2).
    """
    if sign_convention not in SIGN_CONVENTIONS:
        raise ConfigurationError(f"unknown sign convention {sign_convention!r}")
    y = np.asarray(y, dtype=float)
    y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
    if sign_convention == "classical":
        d1 = 10.0 * (y2 - y1)
    else:
        d1 = 10.0 * (y1 - y2)
    d2 = y1 * (28.0 - y3) - y2
    d3 = y1 * y2 - (8.0 / 3.0) * y3
    return np.stack([d1, d2, d3], axis=-1)


def lorenz_step(
    y,
    eps: float,
    sign_convention: str = "classical",
    rng: np.random.Generator | None = None,
    noise_scale: float = LORENZ_NOISE_SCALE,
):
    """Euler-Maruyama step: y + drift(y)*eps + noise_scale*sqrt(eps)*xi."""
    y = np.asarray(y, dtype=float)
    out = y + lorenz_drift(y, sign_convention) * eps
    if noise_scale != 0.0 and eps != 0.0:
        out = out + noise_scale * math.sqrt(eps) * rng.standard_normal(y.shape)
    return out


class Lorenz63Kernel:
    """Euler-Maruyama discretisation of the stochastic Lorenz-63 system."""

    dim = 3

    def __init__(
        self,
        eps: float,
        sign_convention: str = "classical",
        noise_scale: float = LORENZ_NOISE_SCALE,
    ):
        if sign_convention not in SIGN_CONVENTIONS:
            raise ConfigurationError(f"unknown sign convention {sign_convention!r}")
        self.eps = float(eps)
        self.sign_convention = sign_convention
        self.noise_scale = float(noise_scale)

    def step(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return lorenz_step(states, self.eps, self.sign_convention, rng, self.noise_scale)


def simulate_hidden_path(
    n_steps: int,
    eps: float,
    rng: np.random.Generator,
    sign_convention: str = "classical",
    y0=LORENZ_Y0,
    noise_scale: float = LORENZ_NOISE_SCALE,
) -> np.ndarray:
    """Simulate the hidden Lorenz trajectory: (n_steps + 1, 3) including y0."""
    path = np.empty((n_steps + 1, 3))
    path[0] = np.asarray(y0, dtype=float)
    for k in range(n_steps):
        path[k + 1] = lorenz_step(path[k], eps, sign_convention, rng, noise_scale)
    return path


@dataclass
class ObservationPath:
    """Observed increments of the integrated signal.

    Row k of ``increments`` is the increment compared against particle
    proposals arriving at step k+1: increments[k] = hidden[k+1]*eps
    + noise_sigma*sqrt(eps)*eta.  Serializes to CSV with header
    ``k,d1,d2,d3`` where the k column holds the arrival step index.
    """

    increments: np.ndarray
    eps: float
    noise_sigma: float = 0.1

    def __len__(self) -> int:
        return len(self.increments)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "d1", "d2", "d3"])
            for i, row in enumerate(self.increments):
                writer.writerow([i + 1] + [repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path, eps: float, noise_sigma: float = 0.1) -> "ObservationPath":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["k", "d1", "d2", "d3"]:
                raise DataError(f"unexpected observation CSV header {header!r}")
            for rec in reader:
                rows.append([float(rec[1]), float(rec[2]), float(rec[3])])
        return cls(np.asarray(rows, dtype=float), eps=eps, noise_sigma=noise_sigma)


def generate_observations(
    hidden: np.ndarray,
    eps: float,
    rng: np.random.Generator,
    noise_sigma: float = 0.1,
) -> ObservationPath:
    """Synthesize observation increments from a hidden path.

    For a hidden path with K steps this produces K increments, one per
    arrival step: increments[k] = hidden[k+1]*eps + noise_sigma*sqrt(eps)*eta.
    The generator must be independent of the dynamics stream so the same
    hidden path can be re-observed.  noise_sigma = 0 is the noiseless test
    hook; the filter likelihood itself always assumes amplitude 0.1.
    """
    hidden = np.asarray(hidden, dtype=float)
    if hidden.ndim != 2 or hidden.shape[1] != 3:
        raise DataError("hidden path must have shape (n_steps + 1, 3)")
    if hidden.shape[0] < 2:
        raise DataError("hidden path must contain at least one step")
    n = hidden.shape[0] - 1
    increments = hidden[1:] * eps
    if noise_sigma != 0.0:
        increments = increments + noise_sigma * math.sqrt(eps) * rng.standard_normal((n, 3))
    return ObservationPath(increments, eps=eps, noise_sigma=noise_sigma)


def write_hidden_csv(hidden: np.ndarray, path) -> None:
    """Serialize a hidden path to CSV with header ``k,y1,y2,y3``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "y1", "y2", "y3"])
        for i, row in enumerate(np.asarray(hidden, dtype=float)):
            writer.writerow([i] + [repr(float(v)) for v in row])


def read_hidden_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["k", "y1", "y2", "y3"]:
            raise DataError(f"unexpected hidden-path CSV header {header!r}")
        for rec in reader:
            rows.append([float(rec[1]), float(rec[2]), float(rec[3])])
    return np.asarray(rows, dtype=float)
