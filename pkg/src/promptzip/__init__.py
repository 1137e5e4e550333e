"""promptzip: adapt a small compressor LM to a task by iteratively
generating style-varied compressions, ranking them by comparative
advantage on the task metric, and reusing the best as few-shot
demonstrations at inference time."""

from .engine import (
    AdaptConfig,
    AdaptOutcome,
    AdaptState,
    Demonstration,
    DemonstrationPool,
    adapt,
    comparative_advantage,
    compress,
    evaluate_run,
    select_demonstrations,
)
from .gateway import (
    BackendConfig,
    Gateway,
    GenerationRequest,
    GenerationResult,
    build_gateway,
    count_tokens,
)
from .styles import ControllerConfig, StyleSpec, StyleStats, catalog, sample_style
from .tasks import TaskInstance, TaskKind, build_eval_prompt, load_dataset, score_output
from .textmetrics import MetricReport, ScoreTriple

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "AdaptOutcome",
    "AdaptState",
    "BackendConfig",
    "ControllerConfig",
    "Demonstration",
    "DemonstrationPool",
    "Gateway",
    "GenerationRequest",
    "GenerationResult",
    "MetricReport",
    "ScoreTriple",
    "StyleSpec",
    "StyleStats",
    "TaskInstance",
    "TaskKind",
    "adapt",
    "build_eval_prompt",
    "build_gateway",
    "catalog",
    "comparative_advantage",
    "compress",
    "count_tokens",
    "evaluate_run",
    "load_dataset",
    "sample_style",
    "score_output",
    "select_demonstrations",
    "__version__",
]
