"""Tree search over conversations: UCT selection, expansion, simulation and
reward back-propagation.

One tree exists per (user, planning call) and is single-threaded; the agent's
networks are only read. Because the simulated user is deterministic, the
child reached through an action-type edge is unique, so nodes cache their
state and each edge caches the composed action, response and reward from its
first traversal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .agent import Agent, Mode
from .catalog import Catalog
from .env import (
    ASK,
    REC,
    Action,
    ConversationState,
    EpisodeConfig,
    Status,
    UserResponse,
    cumulative_return,
    init_session,
    is_terminal,
    simulate_user,
    step as env_step,
)

TYPE_ORDER = (ASK, REC)  # fixed tie order: ask first


@dataclass(frozen=True)
class PlannerConfig:
    n_simulations: int = 20      # N
    exploration: float = 1.5     # w
    sample_rollout_types: bool = False  # greedy rollouts by default

    def __post_init__(self) -> None:
        if self.n_simulations < 1:
            raise ValueError("n_simulations must be >= 1")
        if self.exploration < 0:
            raise ValueError("exploration factor must be >= 0")


@dataclass(frozen=True)
class Step:
    state: ConversationState
    kind: str
    action: Action
    reward: float


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Step, ...]
    final_state: ConversationState
    outcome: str                  # "success" | "fail"
    user: int

    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    def cumulative_reward(self, gamma: float) -> float:
        return cumulative_return(self.rewards(), gamma)


@dataclass
class TreeNode:
    state: ConversationState
    node_id: int = 0
    visits: int = 0
    q: dict[str, float] = field(default_factory=dict)
    edge_visits: dict[str, int] = field(default_factory=dict)
    children: dict[str, "TreeNode"] = field(default_factory=dict)
    edge_payload: dict[str, tuple[Action, UserResponse, float]] = field(default_factory=dict)
    rep: torch.Tensor | None = None  # cached state representation


class Planner:
    """Holds the shared read-only pieces of one planning session."""

    def __init__(
        self,
        agent: Agent,
        catalog: Catalog,
        target_items: frozenset[int],
        episode: EpisodeConfig,
        config: PlannerConfig,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.agent = agent
        self.catalog = catalog
        self.targets = target_items
        self.episode = episode
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._h_global: torch.Tensor | None = None
        self._next_node_id = 0
        # greedy rollouts are deterministic, so identical states recur across
        # simulations; memoize their encodings for the planning call
        self._rep_cache: dict[ConversationState, torch.Tensor] = {}
        # instrumentation consumed by consistency checks and the tree dump
        self.edge_log: list[tuple[int, str, float]] = []   # (node id, type, tail return)
        self.frontier_counts: dict[int, int] = {}          # node id -> sims ending there

    def h_global(self) -> torch.Tensor:
        if self._h_global is None:
            with torch.no_grad():
                self._h_global = self.agent.encoder.encode_global()
        return self._h_global

    def rep_of(self, state: ConversationState) -> torch.Tensor:
        rep = self._rep_cache.get(state)
        if rep is None:
            with torch.no_grad():
                rep = self.agent.encoder.encode_state(state, self.h_global())
            self._rep_cache[state] = rep
        return rep

    def rep(self, node: TreeNode) -> torch.Tensor:
        if node.rep is None:
            node.rep = self.rep_of(node.state)
        return node.rep

    def new_node(self, state: ConversationState) -> TreeNode:
        node = TreeNode(state=state, node_id=self._next_node_id)
        self._next_node_id += 1
        return node

    def status(self, state: ConversationState) -> Status:
        return is_terminal(state, self.episode)

    # ---- stages ---------------------------------------------------------

    def select_path(self, root: TreeNode) -> tuple[list[TreeNode], list[Step]]:
        """Descend by UCT until a childless node or a terminal state."""
        nodes = [root]
        steps: list[Step] = []
        node = root
        while node.children and self.status(node.state) == "running":
            kind = uct_select(node, self.config.exploration)
            if kind in node.edge_payload:
                action, response, r = node.edge_payload[kind]
                child = node.children[kind]
            else:
                action = self.agent.compose(kind, node.state, self.rep(node), self.episode)
                response = simulate_user(node.state, action, self.targets, self.catalog)
                nxt, r, _ = env_step(node.state, action, response, self.catalog, self.episode)
                node.edge_payload[kind] = (action, response, r)
                child = node.children[kind]
                child.state = nxt
            steps.append(Step(node.state, kind, action, r))
            nodes.append(child)
            node = child
        return nodes, steps

    def expand(self, leaf: TreeNode) -> None:
        """Attach both action-type children; seed the leaf's q with the best
        Q-value in each sub action space (-inf sentinel when masked)."""
        if leaf.children:
            raise ValueError("expand called on a non-leaf node")
        s = self.rep(leaf)
        for kind in TYPE_ORDER:
            leaf.q[kind] = self.agent.max_q(s, leaf.state, kind)
            leaf.edge_visits[kind] = 0
            leaf.children[kind] = self.new_node(leaf.state)  # state set on first descent

    def rollout(self, state: ConversationState) -> tuple[list[Step], ConversationState]:
        """Simulate to the end of the conversation with the current networks."""
        steps: list[Step] = []
        mode: Mode = "sampled" if self.config.sample_rollout_types else "greedy"
        while self.status(state) == "running":
            with torch.no_grad():
                s = self.rep_of(state)
                kind = self.agent.choose_type(state, s, mode, self.rng)
                action = self.agent.compose(kind, state, s, self.episode)
            response = simulate_user(state, action, self.targets, self.catalog)
            nxt, r, _ = env_step(state, action, response, self.catalog, self.episode)
            steps.append(Step(state, kind, action, r))
            state = nxt
        return steps, state

    def backprop(self, nodes: list[TreeNode], steps: list[Step]) -> None:
        """Walk leaf to root: bump visit counts and fold the tail return into
        each traversed edge's running mean."""
        returns = tail_returns([s.reward for s in steps], self.episode.gamma)
        for i in range(len(nodes) - 1, -1, -1):
            node = nodes[i]
            node.visits += 1
            if i < len(steps):
                kind = steps[i].kind
                node.edge_visits[kind] = node.edge_visits.get(kind, 0) + 1
                prior = node.q.get(kind, 0.0)
                node.q[kind] = prior + (returns[i] - prior) / node.edge_visits[kind]
                self.edge_log.append((node.node_id, kind, returns[i]))

    # ---- full planning ----------------------------------------------------

    def plan(self, root_state: ConversationState) -> tuple[list[Trajectory], TreeNode]:
        root = self.new_node(root_state)
        trajectories: list[Trajectory] = []
        for _ in range(self.config.n_simulations):
            nodes, steps = self.select_path(root)
            leaf = nodes[-1]
            final_state = leaf.state
            self.frontier_counts[leaf.node_id] = self.frontier_counts.get(leaf.node_id, 0) + 1
            if self.status(leaf.state) == "running":
                if not leaf.children:
                    self.expand(leaf)
                suffix, final_state = self.rollout(leaf.state)
                steps = steps + suffix
            self.backprop(nodes, steps)
            outcome = "success" if final_state.succeeded else "fail"
            trajectories.append(
                Trajectory(tuple(steps), final_state, outcome, root_state.user)
            )
        return trajectories, root


def uct_select(node: TreeNode, w: float) -> str:
    """Eq-style UCT over the two action types with natural log; unvisited
    children go first, ties resolve to ask."""
    allowed = [k for k in TYPE_ORDER if node.q.get(k, float("-inf")) > float("-inf")]
    if not allowed:
        raise ValueError("all action types masked at a non-terminal node")
    for kind in allowed:
        if node.children[kind].visits == 0:
            return kind
    best, best_score = allowed[0], float("-inf")
    for kind in allowed:
        score = node.q[kind] + w * math.sqrt(
            math.log(node.visits) / node.children[kind].visits
        )
        if score > best_score:
            best, best_score = kind, score
    return best


def tail_returns(rewards: list[float], gamma: float) -> list[float]:
    """R_t for every t: discounted sum from t to the end."""
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def plan_user(
    agent: Agent,
    catalog: Catalog,
    user: int,
    target_items: frozenset[int],
    episode: EpisodeConfig,
    config: PlannerConfig,
    rng: np.random.Generator,
) -> tuple[list[Trajectory], TreeNode]:
    """Run N simulations from a fresh session for one user."""
    state = init_session(catalog, user, target_items, rng)
    planner = Planner(agent, catalog, target_items, episode, config, rng)
    return planner.plan(state)


def best_trajectory(trajectories: list[Trajectory], gamma: float) -> Trajectory:
    """Highest cumulative reward; earliest index wins ties."""
    if not trajectories:
        raise ValueError("no trajectories to choose from")
    best = trajectories[0]
    best_r = best.cumulative_reward(gamma)
    for t in trajectories[1:]:
        r = t.cumulative_reward(gamma)
        if r > best_r:
            best, best_r = t, r
    return best


def dump_tree(root: TreeNode, gamma: float) -> str:
    """Human-readable tree dump for the plan CLI subcommand."""
    lines: list[str] = []

    def walk(node: TreeNode, kind: str | None, depth: int) -> None:
        indent = "  " * depth
        label = f"{kind}->" if kind else "root"
        qs = ", ".join(
            f"q[{k}]={node.q[k]:.6f}/n={node.edge_visits.get(k, 0)}"
            for k in TYPE_ORDER
            if k in node.q and node.q[k] != float("-inf")
        )
        lines.append(
            f"{indent}{label} node={node.node_id} turn={node.state.turn if node.state else '?'} "
            f"V={node.visits} {qs}"
        )
        for k in TYPE_ORDER:
            child = node.children.get(k)
            if child is not None and child.visits > 0:
                walk(child, k, depth + 1)

    walk(root, None, 0)
    return "\n".join(lines)
