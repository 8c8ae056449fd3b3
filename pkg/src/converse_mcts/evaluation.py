"""Episode runner, metrics (SR / AT / hDCG), classical baselines and
action-pattern statistics.

Every policy — learned or rule-based — runs through the identical env code
path; a policy is just a callable ``state -> Action``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from .agent import Agent
from .catalog import Catalog
from .env import (
    ASK,
    REC,
    Action,
    ConversationState,
    EpisodeConfig,
    init_session,
    is_terminal,
    simulate_user,
    step as env_step,
    trace_record,
)

Policy = Callable[[ConversationState], Action]


@dataclass(frozen=True)
class EpisodeRecord:
    user: int
    outcome: str                                  # "success" | "fail"
    turns: int                                    # conversational turns used
    kinds: tuple[str, ...]                        # per-turn action kinds
    rec_lists: tuple[tuple[int, tuple[int, ...]], ...]  # (turn index 1-based, payload)
    target_items: frozenset[int]
    trace: tuple[dict, ...]

    def success_position(self) -> tuple[int, int] | None:
        """(turn, position), both 1-based, of the best-ranked target in the
        successful recommendation list; None for failures."""
        for t, payload in self.rec_lists:
            for k, item in enumerate(payload, start=1):
                if item in self.target_items:
                    return t, k
        return None


@dataclass(frozen=True)
class MetricsReport:
    success_rate: float
    average_turns: float
    hdcg: float
    episodes: int


def run_episode(
    policy: Policy,
    catalog: Catalog,
    user: int,
    target_items: frozenset[int],
    config: EpisodeConfig,
    rng: np.random.Generator,
) -> EpisodeRecord:
    """Greedy policy execution against the rule-based user until terminal."""
    state = init_session(catalog, user, target_items, rng)
    kinds: list[str] = []
    rec_lists: list[tuple[int, tuple[int, ...]]] = []
    trace: list[dict] = []
    turn = 0
    while is_terminal(state, config) == "running":
        action = policy(state)
        response = simulate_user(state, action, target_items, catalog)
        nxt, r, status = env_step(state, action, response, catalog, config)
        turn += 1
        kinds.append(action.kind)
        if action.kind == REC:
            rec_lists.append((turn, action.payload))
        trace.append(trace_record(turn, action, response, r))
        state = nxt
    outcome = "success" if state.succeeded else "fail"
    return EpisodeRecord(
        user=user,
        outcome=outcome,
        turns=turn,
        kinds=tuple(kinds),
        rec_lists=tuple(rec_lists),
        target_items=target_items,
        trace=tuple(trace),
    )


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def hdcg_gain(t: int, k: int) -> float:
    """Two-level gain of a relevant result at turn t, position k (1-based).

    A first-turn, first-position hit scores exactly 1.0 (log2(2) == 1.0 is
    exact in floating point, so the inner term cancels the outer one).
    """
    outer = 1.0 / math.log2(t + 2)
    inner = 1.0 / math.log2(t + 1) - outer
    return outer + inner * (1.0 / math.log2(k + 1))


def hdcg(record: EpisodeRecord) -> float:
    """Single credited hit: the best-ranked target of the successful turn.

    Ask turns and failed recommendations contribute nothing, so a failed
    episode scores exactly zero.
    """
    pos = record.success_position()
    if record.outcome != "success" or pos is None:
        return 0.0
    t, k = pos
    return hdcg_gain(t, k)


def aggregate(records: Sequence[EpisodeRecord], max_turns: int = 15) -> MetricsReport:
    """SR, AT (failures count the full turn budget) and mean episode hDCG."""
    if not records:
        raise ValueError("no episode records to aggregate")
    succ = sum(1 for r in records if r.outcome == "success")
    turns = [r.turns if r.outcome == "success" else max_turns for r in records]
    return MetricsReport(
        success_rate=succ / len(records),
        average_turns=float(np.mean(turns)),
        hdcg=float(np.mean([hdcg(r) for r in records])),
        episodes=len(records),
    )


def action_pattern_stats(records: Sequence[EpisodeRecord], n: int) -> dict[str, float]:
    """Frequency of each length-n action-kind pattern per episode (A=ask,
    R=rec)."""
    if n < 1:
        raise ValueError("pattern length must be >= 1")
    if not records:
        raise ValueError("no records")
    counts: Counter[str] = Counter()
    for r in records:
        s = "".join("A" if k == ASK else "R" for k in r.kinds)
        for i in range(len(s) - n + 1):
            counts[s[i : i + n]] += 1
    return {pat: c / len(records) for pat, c in sorted(counts.items())}


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

class AgentPolicy:
    """Greedy learned policy; caches the global encoding for the whole run."""

    def __init__(self, agent: Agent, config: EpisodeConfig) -> None:
        self.agent = agent
        self.config = config
        with torch.no_grad():
            self._h = agent.encoder.encode_global()

    def __call__(self, state: ConversationState) -> Action:
        return self.agent.select_action(state, self.config, h_global=self._h)


class MatchingScorer:
    """Preference-aware dot-product scorer over a standalone random table
    (used by the classical baselines, which train nothing)."""

    def __init__(self, catalog: Catalog, dim: int = 64, seed: int = 0) -> None:
        gen = torch.Generator().manual_seed(seed)
        bound = 1.0 / math.sqrt(dim)
        self.table = torch.empty(catalog.n_entities, dim).uniform_(
            -bound, bound, generator=gen
        )

    def __call__(self, state: ConversationState, items: Sequence[int]) -> np.ndarray:
        pref = self.table[state.user].clone()
        if state.accepted_values:
            pref += self.table[sorted(state.accepted_values)].sum(dim=0)
        if state.rejected_values:
            pref -= self.table[sorted(state.rejected_values)].sum(dim=0)
        scores = torch.sigmoid(self.table[list(items)] @ pref)
        return scores.numpy()


class AbsGreedyPolicy:
    """Recommends every turn, never asks; rejected items leave the pool via
    the env transition."""

    def __init__(self, scorer, config: EpisodeConfig) -> None:
        self.scorer = scorer
        self.config = config

    def __call__(self, state: ConversationState) -> Action:
        items = sorted(state.candidate_items)
        scores = self.scorer(state, items)
        order = np.argsort(-scores, kind="stable")
        payload = tuple(items[i] for i in order[: self.config.rec_size])
        return Action(kind=REC, payload=payload)


class MaxEntropyPolicy:
    """Asks the attribute value whose candidate-item frequency is closest to
    1/2 (maximum binary entropy); recommends with probability ``p_rec``."""

    def __init__(
        self,
        catalog: Catalog,
        scorer,
        config: EpisodeConfig,
        p_rec: float = 0.3,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.catalog = catalog
        self.scorer = scorer
        self.config = config
        self.p_rec = p_rec
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def entropy(self, value: int, state: ConversationState) -> float:
        items = state.candidate_items
        if not items:
            return 0.0
        f = sum(1 for v in items if value in self.catalog.values_of_item(v)) / len(items)
        if f <= 0.0 or f >= 1.0:
            return 0.0
        return -(f * math.log2(f) + (1 - f) * math.log2(1 - f))

    def __call__(self, state: ConversationState) -> Action:
        rec = AbsGreedyPolicy(self.scorer, self.config)
        if not state.candidate_values or self.rng.random() < self.p_rec:
            return rec(state)
        cands = sorted(state.candidate_values)
        ent = [self.entropy(p, state) for p in cands]
        best = cands[int(np.argmax(ent))]
        y = self.catalog.type_of_value(best)
        of_type = [
            (p, e) for p, e in zip(cands, ent) if self.catalog.type_of_value(p) == y
        ]
        of_type.sort(key=lambda pe: (-pe[1], pe[0]))
        payload = tuple(p for p, _ in of_type[: self.config.ask_size])
        return Action(kind=ASK, payload=payload)


# ---------------------------------------------------------------------------
# evaluation protocol
# ---------------------------------------------------------------------------

def evaluate_policy(
    policy: Policy,
    catalog: Catalog,
    config: EpisodeConfig,
    seed: int = 0,
    episodes_per_user: int = 3,
) -> list[EpisodeRecord]:
    """Simulated sessions against each user's split interaction set.

    The session's acceptance set is the user's full V(u) within this split;
    repeats redraw the opening value p0 from the shared values of V(u).
    Users without interactions in the split are skipped.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0xE7A1, seed]))
    records: list[EpisodeRecord] = []
    for user in catalog.users:
        targets = catalog.interactions[user]
        if not targets:
            continue
        for _ in range(episodes_per_user):
            records.append(run_episode(policy, catalog, user, targets, config, rng))
    return records
