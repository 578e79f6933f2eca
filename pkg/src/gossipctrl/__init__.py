"""Distributed online control over gossip networks.

Identical linear agents share one adversarial disturbance sequence,
exchange policy iterates with their graph neighbours, and each competes
with the best linear controller in hindsight. The package covers the
known-dynamics learner, the explore/exchange/learn pipeline for unknown
dynamics, offline comparators, and a reproducible experiment harness.
"""

from .errors import (
    BoundViolated,
    ConfigError,
    DimensionMismatch,
    Diverged,
    EmptyGrid,
    EstimateUnusable,
    GossipCtrlError,
    IllConditioned,
    IncompleteTrace,
    IndexOutOfRange,
    InsufficientData,
    MarginExhausted,
    NonPositiveRegret,
    NotConnected,
    NotInSet,
    NotStabilizable,
    NotStable,
    NumericalFailure,
    RankDeficient,
    UnsupportedCost,
    VersionMismatch,
)
from .network import (
    MixingReport,
    Topology,
    build_topology,
    metropolis_weights,
    mixing_factor,
    verify_mixing_bound,
)
from .world import (
    AgentState,
    NoiseBuffer,
    NoiseSchedule,
    QuadraticTrackingCosts,
    SystemParams,
    noise_at,
    noise_block,
    recover_noise,
    rollout_linear_policy,
    step,
)
from .stability import (
    StabilityCertificate,
    certify_strong_stability,
    closed_loop,
    perturbation_margin,
    strong_controllability,
    synthesize_stabilizer,
)
from .dfc import (
    ClosedLoopCache,
    DfcParams,
    DfcSet,
    comparator_params,
    constraint_set_for,
    dfc_action,
    grad_surrogate_cost,
    gradient_norm_bound,
    project_to_set,
    state_envelope_bound,
    surrogate_action,
    surrogate_cost,
    surrogate_gap_bound,
    surrogate_state,
    transfer_matrix,
    transfer_norm_bound,
)
from .known import (
    ExperimentTrace,
    KnownRunConfig,
    PHASE_DFC,
    PHASE_EXCHANGE,
    PHASE_EXPLORE,
    PHASE_NAMES,
    gossip_step,
    resolve_memory_length,
    run_known,
)
from .sysid import (
    MomentStack,
    ProbeTrace,
    SysIdReport,
    build_report,
    consensus_exchange,
    default_collect_rounds,
    default_exchange_rounds,
    estimate_error_quote,
    explore_collect,
    moment_estimates,
    noise_error_gain,
    rademacher_probes,
    recover_system,
)
from .unknown import (
    UnknownRunConfig,
    estimate_noise,
    infer_controllability_index,
    run_unknown,
)
from .regret import (
    OfflineDfcResult,
    PolicyGrid,
    RegretSummary,
    best_linear_in_hindsight,
    individual_regret,
    linear_policy_grid,
    offline_optimal_dfc,
    offline_surrogate_gradient,
    offline_surrogate_objective,
    regret_slope,
    rollout_dfc_policy,
    summarize_regret,
    trajectory_network_cost,
)
from .harness import (
    ReplayResult,
    ResolvedConfig,
    RunArtifacts,
    SCHEMA_VERSION,
    config_hash,
    load_config,
    replay,
    resolve_config,
    run,
    run_experiment,
    write_trace_csv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
