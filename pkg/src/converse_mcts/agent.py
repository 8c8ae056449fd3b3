"""Hierarchical decision maker: action-type policy and dueling Q head.

The same composition code path serves greedy inference, tree search and
training, so the planner's action choice is by construction identical to the
agent's greedy choice for a given (state, type).
"""

from __future__ import annotations

import math
from typing import Literal, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .catalog import Catalog
from .encoder import StateEncoder
from .env import ASK, REC, Action, ConversationState, EpisodeConfig

Mode = Literal["greedy", "sampled"]


def _mlp_params(sizes: Sequence[int], gen: torch.Generator) -> nn.ParameterList:
    params = []
    for n_in, n_out in zip(sizes, sizes[1:]):
        w = torch.empty(n_out, n_in)
        b = torch.empty(n_out)
        bound = 1.0 / math.sqrt(n_in)
        with torch.no_grad():
            w.uniform_(-bound, bound, generator=gen)
            b.uniform_(-bound, bound, generator=gen)
        params.extend([nn.Parameter(w), nn.Parameter(b)])
    return nn.ParameterList(params)


class PolicyHead(nn.Module):
    """Two-layer perceptron over the state vector with a softmax pair head."""

    def __init__(self, dim: int, seed: int = 0, leaky_slope: float = 0.2) -> None:
        super().__init__()
        self.slope = leaky_slope
        self.params = _mlp_params([dim, dim, 2], torch.Generator().manual_seed(seed))

    def logits(self, s: Tensor) -> Tensor:
        w1, b1, w2, b2 = self.params
        h = torch.nn.functional.leaky_relu(s @ w1.T + b1, self.slope)
        return h @ w2.T + b2


class DuelingQHead(nn.Module):
    """Q(a|s,o) = MLP_A(s || a) + MLP_V(s), exactly as composed (no mean
    advantage subtraction)."""

    def __init__(self, dim: int, seed: int = 0, leaky_slope: float = 0.2) -> None:
        super().__init__()
        self.slope = leaky_slope
        gen = torch.Generator().manual_seed(seed)
        self.adv = _mlp_params([2 * dim, dim, 1], gen)
        self.val = _mlp_params([dim, dim, 1], gen)

    def _mlp(self, params: nn.ParameterList, x: Tensor) -> Tensor:
        w1, b1, w2, b2 = params
        h = torch.nn.functional.leaky_relu(x @ w1.T + b1, self.slope)
        return (h @ w2.T + b2).squeeze(-1)

    def forward(self, s: Tensor, a: Tensor) -> Tensor:
        """Broadcasts a single state over many candidate embeddings.

        ``s``: (..., d); ``a``: (..., d) with matching leading shape.
        """
        return self._mlp(self.adv, torch.cat([s, a], dim=-1)) + self._mlp(self.val, s)


class Agent:
    """Bundles the encoder with the policy and online/target Q heads."""

    def __init__(
        self,
        encoder: StateEncoder,
        policy: PolicyHead,
        qnet: DuelingQHead,
        target: DuelingQHead | None = None,
    ) -> None:
        self.encoder = encoder
        self.policy = policy
        self.qnet = qnet
        if target is None:
            target = DuelingQHead(encoder.config.dim, leaky_slope=encoder.config.leaky_slope)
            sync_target(qnet, target)
        self.target = target

    @classmethod
    def fresh(cls, encoder: StateEncoder, seed: int = 0) -> "Agent":
        d = encoder.config.dim
        slope = encoder.config.leaky_slope
        policy = PolicyHead(d, seed=seed + 1, leaky_slope=slope)
        qnet = DuelingQHead(d, seed=seed + 2, leaky_slope=slope)
        return cls(encoder, policy, qnet)

    @property
    def catalog(self) -> Catalog:
        return self.encoder.catalog

    def parameters(self):
        yield from self.encoder.parameters()
        yield from self.policy.parameters()
        yield from self.qnet.parameters()

    def to_double(self) -> "Agent":
        """64-bit precision across the whole stack (gradient-check mode)."""
        for m in (self.encoder, self.policy, self.qnet, self.target):
            m.double()
        return self

    def train_modules(self) -> tuple[nn.Module, ...]:
        return (self.encoder, self.policy, self.qnet, self.target)

    # ---- action-type policy -------------------------------------------

    def type_mask(self, state: ConversationState) -> tuple[bool, bool]:
        """(ask allowed, rec allowed) for the current state."""
        return (bool(state.candidate_values), bool(state.candidate_items))

    def action_type_probs(self, s: Tensor, state: ConversationState) -> Tensor:
        """Masked, renormalized (ask, rec) probability pair."""
        probs = torch.softmax(self.policy.logits(s), dim=-1)
        return apply_type_mask(probs, self.type_mask(state))

    # ---- Q values -------------------------------------------------------

    def q_values(self, s: Tensor, candidates: Sequence[int], head: DuelingQHead | None = None) -> Tensor:
        """Q over a sub action space; candidate embeddings come straight from
        the entity table."""
        head = head or self.qnet
        a = self.encoder.embedding_table[list(candidates)]
        return head(s.unsqueeze(0).expand(len(candidates), -1), a)

    def q_value(self, s: Tensor, candidate: int, kind: str, state: ConversationState) -> Tensor:
        space = state.candidate_values if kind == ASK else state.candidate_items
        if candidate not in space:
            raise ValueError(f"candidate {candidate} outside the {kind} action space")
        return self.q_values(s, [candidate])[0]

    def max_q(self, s: Tensor, state: ConversationState, kind: str, head: DuelingQHead | None = None) -> float:
        space = state.candidate_values if kind == ASK else state.candidate_items
        if not space:
            return float("-inf")
        return float(self.q_values(s, sorted(space), head).detach().max())

    # ---- composition ------------------------------------------------------

    def compose_question(self, state: ConversationState, s: Tensor, config: EpisodeConfig) -> Action:
        """Argmax-Q value fixes the attribute type; fill up to K_p values of
        that type by descending Q, ties broken by ascending id."""
        if not state.candidate_values:
            raise ValueError("no candidate values to ask about")
        cands = sorted(state.candidate_values)
        q = self.q_values(s, cands)
        order = _rank(q, cands)
        best = order[0]
        y = self.catalog.type_of_value(best)
        of_type = [p for p in order if self.catalog.type_of_value(p) == y]
        return Action(kind=ASK, payload=tuple(of_type[: config.ask_size]))

    def compose_recommendation(self, state: ConversationState, s: Tensor, config: EpisodeConfig) -> Action:
        """Top-K_v candidate items by descending Q, position order preserved."""
        if not state.candidate_items:
            raise ValueError("no candidate items to recommend")
        cands = sorted(state.candidate_items)
        q = self.q_values(s, cands)
        order = _rank(q, cands)
        return Action(kind=REC, payload=tuple(order[: config.rec_size]))

    def compose(self, kind: str, state: ConversationState, s: Tensor, config: EpisodeConfig) -> Action:
        if kind == ASK:
            return self.compose_question(state, s, config)
        return self.compose_recommendation(state, s, config)

    def choose_type(
        self,
        state: ConversationState,
        s: Tensor,
        mode: Mode = "greedy",
        rng: np.random.Generator | None = None,
    ) -> str:
        probs = self.action_type_probs(s, state)
        if mode == "greedy":
            return ASK if float(probs[0]) >= float(probs[1]) else REC
        if rng is None:
            raise ValueError("sampled mode needs an rng")
        return ASK if rng.random() < float(probs[0]) else REC

    def select_action(
        self,
        state: ConversationState,
        config: EpisodeConfig,
        mode: Mode = "greedy",
        rng: np.random.Generator | None = None,
        h_global: Tensor | None = None,
    ) -> Action:
        """Full hierarchical selection: action type, then composed action."""
        with torch.no_grad():
            s = self.encoder.encode_state(state, h_global)
            kind = self.choose_type(state, s, mode, rng)
            return self.compose(kind, state, s, config)

    def sync_target(self) -> None:
        sync_target(self.qnet, self.target)


def apply_type_mask(probs: Tensor, mask: tuple[bool, bool]) -> Tensor:
    ask_ok, rec_ok = mask
    if not ask_ok and not rec_ok:
        raise ValueError("both action types masked; episode should be terminal")
    m = probs.new_tensor([1.0 if ask_ok else 0.0, 1.0 if rec_ok else 0.0])
    masked = probs * m
    return masked / masked.sum(dim=-1, keepdim=True)


def sync_target(online: DuelingQHead, target: DuelingQHead) -> None:
    """Copy the online head's parameters into the target head."""
    target.load_state_dict(online.state_dict())


def _rank(q: Tensor, candidates: list[int]) -> list[int]:
    """Candidates by descending Q; equal scores resolve to ascending id
    (candidates arrive pre-sorted ascending, stable sort keeps that order)."""
    qq = q.detach().cpu().numpy()
    order = np.argsort(-qq, kind="stable")
    return [candidates[i] for i in order]
