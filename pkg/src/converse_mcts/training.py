"""Self-training loop: prioritized replay, policy / TD / listwise losses.

A single training worker owns the parameters, the optimizer and the replay
memory; planning only reads parameter snapshots.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import torch

from .agent import Agent
from .catalog import Catalog, build_global_graph
from .checkpoint import save_checkpoint
from .encoder import EncoderConfig, StateEncoder
from .env import ASK, ConversationState, EpisodeConfig
from .planner import PlannerConfig, Trajectory, best_trajectory, plan_user

TrainMode = Literal["sapient", "sapient-e"]


@dataclass(frozen=True)
class TrainConfig:
    mode: TrainMode = "sapient"
    steps: int = 200                 # E: planning/training iterations
    learning_rate: float = 1e-4
    batch_size: int = 128
    memory_capacity: int = 10000
    per_alpha: float = 0.6
    per_beta: float = 0.4
    per_epsilon: float = 1e-5
    target_sync_period: int = 20
    eval_every: int = 25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("sapient", "sapient-e"):
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("steps", "batch_size", "memory_capacity", "target_sync_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class Experience:
    """One replay tuple; ``action`` is the argmax entity of the executed
    payload, whose Q-value drove the selection."""

    state: ConversationState
    kind: str
    action: int
    reward: float
    next_state: ConversationState
    next_kind: str | None
    terminal: bool
    from_best: bool


class ReplayMemory:
    """FIFO ring buffer with proportional prioritized sampling."""

    def __init__(self, capacity: int = 10000) -> None:
        self.capacity = capacity
        self._data: list[Experience] = []
        self._priorities = np.zeros(capacity, dtype=np.float64)
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._data)

    def add(self, exp: Experience, priority: float | None = None) -> None:
        if priority is None:
            priority = self.max_priority()
        if priority <= 0:
            raise ValueError("priority must be positive")
        if len(self._data) < self.capacity:
            self._data.append(exp)
            self._priorities[len(self._data) - 1] = priority
        else:
            self._data[self._cursor] = exp
            self._priorities[self._cursor] = priority
            self._cursor = (self._cursor + 1) % self.capacity

    def max_priority(self) -> float:
        if not self._data:
            return 1.0
        return float(self._priorities[: len(self._data)].max())

    def sample(
        self, batch_size: int, alpha: float, beta: float, rng: np.random.Generator
    ) -> tuple[np.ndarray, list[Experience], np.ndarray]:
        """Indices, experiences and max-normalized importance weights."""
        if not self._data:
            raise ValueError("cannot sample from an empty memory")
        prios = self._priorities[: len(self._data)]
        probs = prios**alpha
        probs = probs / probs.sum()
        idx = rng.choice(len(self._data), size=batch_size, replace=True, p=probs)
        weights = (len(self._data) * probs[idx]) ** (-beta)
        weights = weights / weights.max()
        return idx, [self._data[i] for i in idx], weights

    def update_priorities(self, indices: np.ndarray, priorities: np.ndarray) -> None:
        if np.any(priorities <= 0):
            raise ValueError("updated priorities must stay positive")
        self._priorities[indices] = priorities

    def all_from_best(self) -> bool:
        return all(e.from_best for e in self._data)


def experiences_from(trajectory: Trajectory, from_best: bool) -> list[Experience]:
    steps = trajectory.steps
    out: list[Experience] = []
    for i, st in enumerate(steps):
        last = i == len(steps) - 1
        nxt_state = trajectory.final_state if last else steps[i + 1].state
        out.append(
            Experience(
                state=st.state,
                kind=st.kind,
                action=st.action.payload[0],
                reward=st.reward,
                next_state=nxt_state,
                next_kind=None if last else steps[i + 1].kind,
                terminal=last,
                from_best=from_best,
            )
        )
    return out


def store_plan(
    memory: ReplayMemory,
    mode: TrainMode,
    trajectories: list[Trajectory],
    gamma: float,
) -> int:
    """Best-plan mode keeps only the highest-return plan's turns; the
    listwise variant keeps every simulated trajectory."""
    if mode == "sapient":
        chosen = [best_trajectory(trajectories, gamma)]
    else:
        chosen = trajectories
    best = best_trajectory(trajectories, gamma)
    n = 0
    for traj in chosen:
        for exp in experiences_from(traj, from_best=traj is best):
            memory.add(exp)
            n += 1
    return n


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def policy_log_probs(
    agent: Agent, states: Sequence[ConversationState], kinds: Sequence[str]
) -> torch.Tensor:
    """log pi(o_t | s_t) with the same masking/renormalization used when
    acting."""
    s = agent.encoder.encode_states(states)
    probs = torch.softmax(agent.policy.logits(s), dim=-1)
    mask = torch.tensor(
        [agent.type_mask(st) for st in states], dtype=probs.dtype
    )
    masked = probs * mask
    masked = masked / masked.sum(dim=-1, keepdim=True)
    idx = torch.tensor([0 if k == ASK else 1 for k in kinds])
    return torch.log(masked[torch.arange(len(states)), idx])


def policy_loss(
    agent: Agent, batch: Sequence[Experience], weights: np.ndarray
) -> torch.Tensor:
    lp = policy_log_probs(agent, [e.state for e in batch], [e.kind for e in batch])
    w = torch.from_numpy(weights).to(lp.dtype)
    return (w * (-lp)).mean()


def q_targets(
    agent: Agent, batch: Sequence[Experience], gamma: float
) -> torch.Tensor:
    """Bootstrapped TD targets r + gamma * max_a' Q_target(a'|s', o').

    Computed without gradients: Eq.-style TD learning is a semi-gradient
    method, so the target is a constant at the current parameter point (the
    target head is a frozen copy; the next-state encoding is detached).
    """
    with torch.no_grad():
        h_global = agent.encoder.encode_global()
        dtype = agent.encoder.dtype
        target = torch.tensor([e.reward for e in batch], dtype=dtype)
        open_idx = [i for i, e in enumerate(batch) if not e.terminal]
        if open_idx:
            nxt_states = [batch[i].next_state for i in open_idx]
            s_next = agent.encoder.encode_states(nxt_states, h_global)
            spaces = []
            for i in open_idx:
                e = batch[i]
                space = (
                    e.next_state.candidate_values
                    if e.next_kind == ASK
                    else e.next_state.candidate_items
                )
                spaces.append(sorted(space))
            c_max = max(len(sp) for sp in spaces)
            ids = np.zeros((len(open_idx), c_max), dtype=np.int64)
            mask = np.zeros((len(open_idx), c_max), dtype=bool)
            for r, sp in enumerate(spaces):
                ids[r, : len(sp)] = sp
                mask[r, : len(sp)] = True
            a_next = agent.encoder.embedding_table[torch.from_numpy(ids)]
            s_exp = s_next.unsqueeze(1).expand(-1, c_max, -1)
            q_next = agent.target(s_exp, a_next)
            q_next = torch.where(
                torch.from_numpy(mask), q_next, q_next.new_tensor(float("-inf"))
            )
            best_next = q_next.max(dim=-1).values
            target[open_idx] = target[open_idx] + gamma * best_next
    return target


def q_loss_given_targets(
    agent: Agent,
    batch: Sequence[Experience],
    weights: np.ndarray,
    targets: torch.Tensor,
    epsilon: float,
) -> tuple[torch.Tensor, np.ndarray]:
    h_global = agent.encoder.encode_global()
    s = agent.encoder.encode_states([e.state for e in batch], h_global)
    a = agent.encoder.embedding_table[[e.action for e in batch]]
    q_pred = agent.qnet(s, a)
    td = q_pred - targets
    w = torch.from_numpy(weights).to(td.dtype)
    loss = (w * td.pow(2)).mean()
    priorities = np.abs(td.detach().cpu().numpy().astype(np.float64)) + epsilon
    return loss, priorities


def q_loss(
    agent: Agent,
    batch: Sequence[Experience],
    weights: np.ndarray,
    gamma: float,
    epsilon: float,
) -> tuple[torch.Tensor, np.ndarray]:
    """Importance-weighted TD loss against the frozen target head; returns the
    refreshed priorities |TD| + eps."""
    return q_loss_given_targets(
        agent, batch, weights, q_targets(agent, batch, gamma), epsilon
    )


def plackett_luce_nll(scores: torch.Tensor) -> torch.Tensor:
    """Negative log likelihood of the ranking scores[0] > scores[1] > ...;
    the n-th factor normalizes over positions n..N. Invariant to adding a
    constant to every score."""
    loss = scores.new_zeros(())
    for n in range(scores.shape[0]):
        loss = loss + torch.logsumexp(scores[n:], dim=0) - scores[n]
    return loss


def listwise_loss(
    agent: Agent, trajectories: Sequence[Trajectory], gamma: float
) -> torch.Tensor:
    """Plackett-Luce loss of the reward-ranked list of plans; each plan's
    log-score is the sum of its action-type log-probs."""
    ranked = sorted(
        range(len(trajectories)),
        key=lambda i: (-trajectories[i].cumulative_reward(gamma), i),
    )
    states: list[ConversationState] = []
    kinds: list[str] = []
    owner: list[int] = []
    for rank, i in enumerate(ranked):
        for st in trajectories[i].steps:
            states.append(st.state)
            kinds.append(st.kind)
            owner.append(rank)
    lp = policy_log_probs(agent, states, kinds)
    scores = lp.new_zeros(len(ranked))
    scores = scores.index_add(0, torch.tensor(owner), lp)
    return plackett_luce_nll(scores)


# ---------------------------------------------------------------------------
# steps and the loop
# ---------------------------------------------------------------------------

@dataclass
class Trainer:
    agent: Agent
    config: TrainConfig
    episode: EpisodeConfig
    memory: ReplayMemory = field(init=False)
    optimizer: torch.optim.Adam = field(init=False)
    updates: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        self.memory = ReplayMemory(self.config.memory_capacity)
        self.optimizer = torch.optim.Adam(
            list(self.agent.parameters()), lr=self.config.learning_rate
        )
        self.rng = np.random.default_rng(
            np.random.SeedSequence([0x7EA1, self.config.seed])
        )

    def _opt_step(self, loss: torch.Tensor) -> float:
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        return float(loss.detach())

    def train_step(self, trajectories: list[Trajectory]) -> dict:
        """One update per Algorithm-style step; no-op until a full batch is
        stored."""
        cfg = self.config
        metrics: dict = {}
        if len(self.memory) < cfg.batch_size:
            return {"skipped": True}

        idx, batch, weights = self.memory.sample(
            cfg.batch_size, cfg.per_alpha, cfg.per_beta, self.rng
        )
        if cfg.mode == "sapient":
            metrics["policy_loss"] = self._opt_step(policy_loss(self.agent, batch, weights))
        else:
            metrics["listwise_loss"] = self._opt_step(
                listwise_loss(self.agent, trajectories, self.episode.gamma)
            )
        loss_q, priorities = q_loss(
            self.agent, batch, weights, self.episode.gamma, cfg.per_epsilon
        )
        metrics["q_loss"] = self._opt_step(loss_q)
        self.memory.update_priorities(idx, priorities)

        self.updates += 1
        if self.updates % cfg.target_sync_period == 0:
            self.agent.sync_target()
            metrics["target_synced"] = True
        return metrics


def train(
    agent: Agent,
    train_catalog: Catalog,
    valid_catalog: Catalog,
    episode: EpisodeConfig,
    planner_config: PlannerConfig,
    config: TrainConfig,
    out_dir=None,
    log_stream=None,
    start_step: int = 0,
) -> dict:
    """Full self-training run; returns a summary and (optionally) writes the
    metrics log, checkpoints and a timing sidecar under ``out_dir``.

    Every random draw flows from ``config.seed``, so fixed seeds reproduce
    the metrics log byte for byte. Wall-clock timing never enters the log.
    """
    from .evaluation import AgentPolicy, aggregate, evaluate_policy

    t_start = time.perf_counter()
    trainer = Trainer(agent, config, episode)
    users = [u for u in train_catalog.users if train_catalog.interactions[u]]
    if not users:
        raise ValueError("train split has no users with interactions")
    user_rng = np.random.default_rng(np.random.SeedSequence([0x05E7, config.seed]))
    plan_rng = np.random.default_rng(np.random.SeedSequence([0x9147, config.seed]))

    lines: list[str] = []
    best_sr = -1.0
    best_state: dict | None = None
    best_step = 0

    def emit(record: dict) -> None:
        line = json.dumps(record, separators=(",", ":"), sort_keys=True)
        lines.append(line)
        if log_stream is not None:
            log_stream.write(line + "\n")

    for step_i in range(start_step + 1, config.steps + 1):
        user = int(users[user_rng.integers(0, len(users))])
        targets = sample_session_targets(
            train_catalog.interactions[user], user_rng
        )
        trajectories, root = plan_user(
            agent, train_catalog, user, targets,
            episode, planner_config, plan_rng,
        )
        stored = store_plan(trainer.memory, config.mode, trajectories, episode.gamma)
        best = best_trajectory(trajectories, episode.gamma)
        metrics = trainer.train_step(trajectories)
        record = {
            "step": step_i,
            "mode": config.mode,
            "user": user,
            "plan_reward": round(best.cumulative_reward(episode.gamma), 8),
            "plan_outcome": best.outcome,
            "stored": stored,
            "memory": len(trainer.memory),
            "root_visits": root.visits,
        }
        for k, v in metrics.items():
            record[k] = round(v, 8) if isinstance(v, float) else v

        if config.eval_every and step_i % config.eval_every == 0:
            report = aggregate(
                evaluate_policy(
                    AgentPolicy(agent, episode),
                    valid_catalog,
                    episode,
                    seed=config.seed,
                    episodes_per_user=1,
                ),
                max_turns=episode.max_turns,
            )
            record["valid_sr"] = round(report.success_rate, 8)
            record["valid_at"] = round(report.average_turns, 8)
            record["valid_hdcg"] = round(report.hdcg, 8)
            if report.success_rate > best_sr:
                best_sr = report.success_rate
                best_step = step_i
                best_state = {
                    "encoder": {k: v.clone() for k, v in agent.encoder.state_dict().items()},
                    "policy": {k: v.clone() for k, v in agent.policy.state_dict().items()},
                    "qnet": {k: v.clone() for k, v in agent.qnet.state_dict().items()},
                    "target": {k: v.clone() for k, v in agent.target.state_dict().items()},
                }
        emit(record)

    summary = {
        "steps": config.steps,
        "mode": config.mode,
        "best_valid_sr": best_sr,
        "best_step": best_step,
    }
    emit({"summary": summary})

    wall = time.perf_counter() - t_start
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        (out / "timing.txt").write_text(f"wall_seconds={wall:.3f}\n", encoding="utf-8")
        save_checkpoint(out / "final.ckpt", agent, extra={"step": config.steps, "mode": config.mode})
    # leave the agent at its best-validation parameters (the retained model)
    if best_state is not None:
        agent.encoder.load_state_dict(best_state["encoder"])
        agent.policy.load_state_dict(best_state["policy"])
        agent.qnet.load_state_dict(best_state["qnet"])
        agent.target.load_state_dict(best_state["target"])
    if out_dir is not None:
        save_checkpoint(
            Path(out_dir) / "best.ckpt", agent,
            extra={"step": best_step or config.steps, "mode": config.mode},
        )
    print(f"training finished in {wall:.1f}s ({config.mode}, {config.steps} steps)", file=sys.stderr)
    summary["lines"] = lines
    return summary


def sample_session_targets(
    interactions: frozenset[int], rng: np.random.Generator, max_size: int = 3
) -> frozenset[int]:
    """Ground-truth set for one training session: a small random subset of
    the user's train items, mirroring the size of held-out splits so training
    sessions cover the same opening-value distribution evaluation sees."""
    items = sorted(interactions)
    if len(items) <= 1:
        return frozenset(items)
    size = int(rng.integers(2, max_size + 1))
    size = min(size, len(items))
    picked = rng.choice(len(items), size=size, replace=False)
    return frozenset(items[i] for i in picked)


def build_agent(
    catalog: Catalog, encoder_config: EncoderConfig, seed: int
) -> Agent:
    graph = build_global_graph(catalog)
    encoder = StateEncoder(catalog, graph, encoder_config, seed=seed)
    return Agent.fresh(encoder, seed=seed)
