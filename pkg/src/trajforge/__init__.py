"""trajforge: self-improving retrieval-augmented agents.

A sequential-decision agent retrieves its own past successful trajectories
as in-context examples, accumulates new ones as it solves training tasks,
and curates the resulting database at two levels: whole-database propagation
across a population of instances, and per-task selection of the empirically
most useful exemplar.
"""

from .agent import EpisodeRecord, render_prompt, run_episode
from .backends import BackendError, CallCounter, ChatRequest, HttpBackend, ScriptedBackend
from .bootstrap import BootstrapRun, Task, bootstrap, evaluate
from .core import (
    Goal,
    RunConfig,
    Step,
    Trajectory,
    TrajectoryDatabase,
    ValidationResult,
    validate_trajectory,
)
from .curation import (
    PopulationState,
    QualityScore,
    RetrievalLedger,
    quality,
    run_population,
    select_exemplars,
)
from .embed import BuiltinEmbedder, EmbeddingCache, RemoteEmbedder, cosine_similarity
from .envs import CraftWorld, CraftWorldEnv, generate_craftworld, make_initial_db, solve_craftworld
from .metrics import AttemptMatrix, auroc, calibration_table, fit_predictor, pass_at_k, predict
from .retrieval import QueryKeys, RetrievalTrace, RetrievedWindow, Retriever, window_bounds

__version__ = "0.1.0"

__all__ = [
    "AttemptMatrix",
    "BackendError",
    "BootstrapRun",
    "BuiltinEmbedder",
    "CallCounter",
    "ChatRequest",
    "CraftWorld",
    "CraftWorldEnv",
    "EmbeddingCache",
    "EpisodeRecord",
    "Goal",
    "HttpBackend",
    "PopulationState",
    "QualityScore",
    "QueryKeys",
    "RemoteEmbedder",
    "RetrievalLedger",
    "RetrievalTrace",
    "RetrievedWindow",
    "Retriever",
    "RunConfig",
    "ScriptedBackend",
    "Step",
    "Task",
    "Trajectory",
    "TrajectoryDatabase",
    "ValidationResult",
    "auroc",
    "bootstrap",
    "calibration_table",
    "cosine_similarity",
    "evaluate",
    "fit_predictor",
    "generate_craftworld",
    "make_initial_db",
    "pass_at_k",
    "predict",
    "quality",
    "render_prompt",
    "run_episode",
    "run_population",
    "select_exemplars",
    "solve_craftworld",
    "validate_trajectory",
    "window_bounds",
]
