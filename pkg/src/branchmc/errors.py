"""Exception hierarchy shared across the package.

Two families matter for callers: ``ConfigurationError`` (bad inputs,
detected before or at the start of a run; CLI exit code 1) and
``SimulationError`` (failures while stepping; CLI exit code 2).
Simulation errors carry the step / replica / particle indices where the
failure happened, when known.
"""


class BranchMCError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(BranchMCError):
    """Invalid configuration or input data."""


class ModeError(ConfigurationError):
    """Operation requires the other branching mode (plain vs ticketed)."""


class DataError(ConfigurationError):
    """Missing or inconsistent input data (observations, samples)."""


class SimulationError(BranchMCError):
    """Runtime failure inside a simulation."""

    def __init__(self, message, step=None, replica=None, particle=None):
        parts = [message]
        if step is not None:
            parts.append(f"step={step}")
        if replica is not None:
            parts.append(f"replica={replica}")
        if particle is not None:
            parts.append(f"particle={particle}")
        super().__init__(" ".join(parts))
        self.step = step
        self.replica = replica
        self.particle = particle


class WeightOverflowError(SimulationError):
    """A branching weight (or its exponent) became non-finite."""


class PopulationExplosionError(SimulationError):
    """The particle count exceeded the configured population cap."""


class DegenerateWeightsError(SimulationError):
    """All raw weights are zero; normalization is impossible."""


class SingularityError(SimulationError):
    """A model kernel hit a singular configuration (coincident pair, bad gradient)."""


class EvaluationError(SimulationError):
    """An observable returned non-finite values."""
