"""Branching-particle Monte Carlo.

Estimates weighted Markov expectations E[f(y_t) exp(-sum_k chi(y_k, y_{k+1}))]
with killing/cloning particle systems.  Two branching modes are provided:
the plain rule (offspring count floor(P + u)) and the ticketed rule, where
each particle carries a survival ticket that suppresses the population
variance blow-up of the plain rule at small step sizes while keeping the
estimator unbiased at identical expected cost.
"""

from .engine import (
    DEFAULT_POP_CAP,
    BranchDecision,
    ChainResult,
    Ensemble,
    ReplicaBatch,
    RunConfig,
    advance,
    dmc_offspring,
    estimate,
    init_ensemble,
    randomize_tickets,
    run_chain,
    run_replicas,
    tdmc_offspring,
)
from .errors import (
    BranchMCError,
    ConfigurationError,
    DataError,
    DegenerateWeightsError,
    EvaluationError,
    ModeError,
    PopulationExplosionError,
    SimulationError,
    SingularityError,
    WeightOverflowError,
)
from .experiments import (
    CaseComparison,
    CompareCase,
    FilterReport,
    Fig1Report,
    LJRareEventReport,
    RunReport,
    fig1_second_moment,
    law_equivalence_populations,
    lj_rare_event,
    lorenz_filter,
    standard_compare_cases,
    variance_workload_compare,
)
from .models import (
    GaussianWalkKernel,
    LennardJonesKernel,
    LJParams,
    Lorenz63Kernel,
    ObservationPath,
    generate_observations,
    initial_cluster,
    langevin_step,
    lj_energy,
    lj_energy_gradient,
    lj_reaction_coordinate,
    lorenz_drift,
    lorenz_step,
    simulate_hidden_path,
    walk_step,
)
from .oracle import (
    ReferenceEstimate,
    analytic_walk_normalization,
    loglog_slope,
    reference_estimate,
    two_sample_ks,
)
from .rng import substream
from .weights import (
    FilterLikelihoodChi,
    IncrementChi,
    PopulationControl,
    PotentialDifferenceChi,
    StochasticIntegralChi,
    TrapezoidPotentialChi,
    ZeroChi,
    apply_population_control,
    chi_eval,
    raw_weights,
)

__version__ = "0.1.0"
