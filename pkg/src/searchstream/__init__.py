"""Countdown search-trajectory corpora and operation-level RL data tooling."""

from .countdown import (
    CountdownError,
    IllegalOperation,
    OperandMissing,
    OpSpec,
    OptimalPath,
    Problem,
    RejectionBudgetExceeded,
    SearchState,
    TargetSplit,
    apply_operation,
    enumerate_children,
    generate_problem,
    solve_all,
    split_targets,
)
from .trajectory import (
    BridgeUnavailable,
    BudgetSpec,
    MalformedLine,
    Trajectory,
    budget_used,
    emit_event,
    emit_trajectory,
    make_prompt,
    parse_line,
    parse_trajectory,
    rebuild_tree,
    verify,
)
from .search import (
    MIXTURE,
    PrefixUnusable,
    SearchConfig,
    continue_search,
    heuristic_value,
    mixture_config,
    run_symbolic,
    start_trajectory,
)
from .augment import (
    AugmentationRecord,
    BuiltinGenerator,
    DatasetRecord,
    augment_subgoal,
    filter_records,
    gsos_generate,
    make_hint_prefix,
)
from .mdp import (
    AlignmentError,
    AdvantageSeries,
    HorizonStats,
    OpSegment,
    compute_gae,
    horizon_stats,
    kl_penalty,
    op_logprob,
    segment_operations,
    subgoal_bonus,
    terminal_reward,
)
from .bridgeclient import BridgeClient, BridgeGenerator, bridge_command_from
from .config import ConfigError, PipelineConfig, load_config

__version__ = "0.1.0"
