"""Desk-scale testbed for distributed stochastic variance-reduced optimization."""

from .losses import (
    LOGISTIC_L2,
    LOGISTIC_NONCONVEX,
    QUADRATIC,
    LossSpec,
    Sample,
    SmoothnessInfo,
    batch_gradient,
    sample_gradient,
    sample_loss,
    smoothness_constants,
)
from .data import (
    Dataset,
    Partition,
    normalize_features,
    parse_libsvm,
    partition_equal,
    partition_fractions,
    partition_label_skewed,
    serialize_libsvm,
    synthesize,
)
from .objective import Objective, WorkerOps
from .solvers import (
    DivergenceError,
    GradEvalCounter,
    MigConfig,
    MigWorkerState,
    RoundInput,
    SarahConfig,
    SvrgConfig,
    full_local_gradient,
    mig_local_update,
    sarah_local_update,
    svrg_local_update,
)
from .orchestrator import (
    AGG_AVERAGE,
    AGG_SELECT,
    ALGORITHMS,
    AgdConfig,
    GdConfig,
    RunConfig,
    Trace,
    aggregate,
    default_parameters,
    derive_stream,
    global_gradient,
    run,
)
from .diagnostics import (
    IdentityReport,
    ReferenceSolution,
    SmoothnessEstimate,
    estimate_c,
    reference_optimum,
    verify_identities,
)
from .harness import (
    ExperimentConfig,
    MetricRow,
    SyntheticRecipe,
    emit_csv,
    parse_csv,
    preset,
    run_experiment,
)

__version__ = "0.1.0"
