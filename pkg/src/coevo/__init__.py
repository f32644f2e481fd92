"""Co-evolutionary program synthesis with noisy-evidence belief tracking."""

from .beliefs import (
    Belief,
    Evidence,
    InteractionLedger,
    NoiseModel,
    apply_evidence,
    credibility_threshold,
    generation_update,
    logit,
    woe_code,
    woe_test,
)
from .config import ExecutionLimits, ProviderConfig, RunConfig, load_config
from .engine import RunResult, run
from .errors import (
    AuthError,
    CoevoError,
    ConfigError,
    CorruptLogError,
    ExecutorError,
    InapplicableOperator,
    InitializationError,
    MatrixIncompleteError,
    ParseFailure,
    ProviderError,
    RetriesExhausted,
)
from .executor import ExecutionOutcome, SandboxExecutor, compare_outputs
from .gateway import HTTPProvider, MockProvider, extract_code_block, extract_tests
from .population import CodeCandidate, ObservationMatrix, TestCase
from .problems import ProblemSpec, extract_anchors, load_problem
from .runlog import RunLogWriter, read_runlog, render_report
from .synthetic import (
    LatentWorld,
    RecoveryStats,
    UpdateParams,
    adversarial_world,
    exact_posterior,
    recovery_experiment,
    recovery_world,
    sample_matrix,
    threshold_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AuthError",
    "Belief",
    "CodeCandidate",
    "CoevoError",
    "ConfigError",
    "CorruptLogError",
    "Evidence",
    "ExecutionLimits",
    "ExecutionOutcome",
    "ExecutorError",
    "HTTPProvider",
    "InapplicableOperator",
    "InitializationError",
    "InteractionLedger",
    "LatentWorld",
    "MatrixIncompleteError",
    "MockProvider",
    "NoiseModel",
    "ObservationMatrix",
    "ParseFailure",
    "ProblemSpec",
    "ProviderConfig",
    "ProviderError",
    "RecoveryStats",
    "RetriesExhausted",
    "RunConfig",
    "RunLogWriter",
    "RunResult",
    "SandboxExecutor",
    "TestCase",
    "UpdateParams",
    "adversarial_world",
    "apply_evidence",
    "compare_outputs",
    "credibility_threshold",
    "exact_posterior",
    "extract_anchors",
    "extract_code_block",
    "extract_tests",
    "generation_update",
    "load_config",
    "load_problem",
    "logit",
    "read_runlog",
    "recovery_experiment",
    "recovery_world",
    "render_report",
    "run",
    "sample_matrix",
    "threshold_sweep",
    "woe_code",
    "woe_test",
]
