"""crowdlab: controlled crowdsourcing experiment orchestrator.

Executes workflow DAGs of crowd tasks and data transforms across pluggable
(real or simulated) platforms, enforcing experimental controls (subject
assignment, recurrence and crossover blocking, demographic quotas, time
windows) and quantifying the biases that appear when those controls are off.
"""

from .analysis import (
    ReportConfig,
    build_report,
    cohort_fractions,
    dominance,
    estimate_discard,
    render_text,
    robust_z,
)
from .engine import Engine, StepOutcome
from .model import (
    BlockDef,
    DataUnit,
    EligibilityPolicy,
    ExperimentGroup,
    QuotaConfig,
    Schedule,
    TaskTemplate,
    UiElement,
    ValidationResult,
    WorkflowDef,
    expand_factorial,
    load_workflow,
    dump_workflow,
    topological_order,
    validate_workflow,
)
from .platforms import PopulationProfile, SimulatedPlatform, translate_template
from .runner import SimulationResult, Toggles, run_simulation
from .scheduling import SchedulerState, is_active, on_tick, window_balance
from .store import Store
from .transforms import eval_transform
from .workers import AssignmentDecision, TrustConfig, WorkerManager, check_quota, rotate_buckets

__version__ = "0.1.0"

__all__ = [
    "AssignmentDecision",
    "BlockDef",
    "DataUnit",
    "EligibilityPolicy",
    "Engine",
    "ExperimentGroup",
    "PopulationProfile",
    "QuotaConfig",
    "ReportConfig",
    "Schedule",
    "SchedulerState",
    "SimulatedPlatform",
    "SimulationResult",
    "StepOutcome",
    "Store",
    "TaskTemplate",
    "Toggles",
    "TrustConfig",
    "UiElement",
    "ValidationResult",
    "WorkerManager",
    "WorkflowDef",
    "build_report",
    "check_quota",
    "cohort_fractions",
    "dominance",
    "dump_workflow",
    "estimate_discard",
    "eval_transform",
    "expand_factorial",
    "is_active",
    "load_workflow",
    "on_tick",
    "render_text",
    "robust_z",
    "rotate_buckets",
    "run_simulation",
    "topological_order",
    "translate_template",
    "validate_workflow",
    "window_balance",
]
