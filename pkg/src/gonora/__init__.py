"""Grant-free random access for massive MTC: simulator and chain analysis.

The protocol under study spreads transmissions over the resource units of a
periodic resource pool (PRP) via probabilistic RU selection, exponential
backoff across repetitions, and a drop rule after the final repetition.
The package pairs a slotted Monte Carlo engine with the matching discrete
Markov chain so their predictions can be cross-checked.
"""

from .chain import (
    NumericalError,
    StageOutcomes,
    StateDistribution,
    StateSpace,
    TransitionMatrix,
    arrival_probability,
    attempt_probability,
    build_chain,
    drop_probability,
    expected_attempts,
    fixed_point_solve,
    format_transitions,
    stationary_distribution,
)
from .config import (
    AnalysisSpec,
    Backoff,
    ChannelSpec,
    ConfigError,
    DeploymentSpec,
    DeviceRecord,
    GonoraParams,
    Idle,
    PrpConfig,
    ReceptionSpec,
    ScenarioConfig,
    TrafficProfile,
    Transmit,
    dbm_to_watts,
    load_config,
    validate,
    watts_to_dbm,
)
from .deployment import (
    Association,
    PointSet,
    Region,
    associate_dude,
    decoupling_fraction,
    deterministic_gain,
    generate_topology,
    path_gain,
    rrh_positions,
    sample_hppp,
    sample_matern_hardcore,
    sample_poisson_cluster,
    topology_csv,
)
from .engine import (
    AggregateMetrics,
    Metrics,
    Simulation,
    bler,
    mean_delay,
    metrics_csv,
    normalized_throughput,
    overload_factor,
    run,
    run_replications,
)
from .reception import (
    DecodeOutcome,
    OutcomeEstimate,
    PrpSnapshot,
    combine_rrh,
    decode_fixed,
    fixed_point_coupling,
    outcome_abstraction,
    per_ru_sinr,
    sic_decode,
)
from .traffic import (
    ArrivalEvent,
    RuSelection,
    sample_arrivals,
    sample_ru_selection,
    segment_packet,
    selection_probability,
)

__version__ = "0.1.0"
