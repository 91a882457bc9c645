"""Context-based concurrent experience sharing for multi-agent task allocation.

A deterministic, seedable simulator of a lattice task-allocation network
whose agents learn stochastic Q-policies, plus the supervisory machinery that
identifies contextually compatible agents and relays (optionally compressed)
experiences between them, and a CLI harness for the performance,
scalability, communication, and robustness experiments.
"""

from .errors import (
    ConfigurationError,
    CorruptSeriesError,
    CtxShareError,
    DegenerateMetricError,
    IncompatibleExperienceError,
    InvalidActionError,
    MalformedWindowError,
)
from .experience import (
    LocalAction,
    LocalState,
    Observation,
    PROCESS_LOCALLY,
    forward_to,
    load_bucket,
)
from .tasknet import (
    AgentNode,
    Task,
    TaskNetwork,
    build_lattice,
    estimate_service_time,
    generate_tasks,
    reward_for,
    step,
)
from .learning import (
    QTable,
    anneal_temperature,
    available_actions,
    incorporate_shared,
    select_action,
    update_q,
)
from .context import (
    ContextFeatureVector,
    ContextSummary,
    NeighborhoodSnapshot,
    ObservationWindow,
    compute_features,
    inject_group_noise,
    inject_noise,
    snapshot_from,
    summarize_window,
)
from .sharing import (
    GramMatrix,
    MetricModel,
    PairProbabilityTable,
    PotentialSharingGroup,
    SharingMap,
    build_gram,
    compute_sharing_map,
    fit_metric,
    partition_groups,
    sampling_distribution,
    select_sharing_partners,
)
from .transport import (
    CommLedger,
    CompressedSeries,
    ReportMessage,
    ShareMessage,
    compress_lossy,
    decode_message,
    decompress_lossy,
    encode_lossless,
    ledger_report,
)
from .harness import (
    ExperimentConfig,
    MetricsLog,
    SupervisorGroup,
    SweepResult,
    assign_supervisors,
    compute_auc,
    finalize_aucs,
    run_experiment,
    service_floor,
    sweep,
)
from .reports import emit_report, emit_sweep
from .rng import derive_rng

__version__ = "0.1.0"
