"""Tree-search planning and self-training for multi-turn conversational
recommendation, evaluated against a rule-based user simulator."""

from .catalog import (
    Catalog,
    CatalogError,
    GlobalGraph,
    SyntheticSpec,
    build_global_graph,
    generate_synthetic,
    load_catalog,
    save_catalog,
    split_interactions,
)
from .env import (
    ASK,
    REC,
    Action,
    ConversationState,
    EpisodeConfig,
    RewardConstants,
    UserResponse,
    cumulative_return,
    init_session,
    is_terminal,
    reward,
    simulate_user,
    step,
    transition,
)
from .encoder import EncoderConfig, FeedbackGraph, StateEncoder, build_feedback_graphs
from .agent import Agent, DuelingQHead, PolicyHead, sync_target
from .planner import (
    Planner,
    PlannerConfig,
    Trajectory,
    TreeNode,
    best_trajectory,
    plan_user,
    uct_select,
)
from .training import (
    Experience,
    ReplayMemory,
    TrainConfig,
    Trainer,
    build_agent,
    listwise_loss,
    policy_loss,
    q_loss,
    store_plan,
    train,
)
from .evaluation import (
    AbsGreedyPolicy,
    AgentPolicy,
    EpisodeRecord,
    MatchingScorer,
    MaxEntropyPolicy,
    MetricsReport,
    action_pattern_stats,
    aggregate,
    evaluate_policy,
    hdcg,
    run_episode,
)
from .checkpoint import load_checkpoint, read_manifest, save_checkpoint

__version__ = "0.1.0"
