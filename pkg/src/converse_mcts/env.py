"""Per-user conversational MDP: state, transition, reward, rule-based user.

States are immutable values; :func:`transition` returns a new state, so any
number of episodes or tree simulations may run concurrently on independent
states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Literal, Sequence

from .catalog import Catalog

ActionKind = Literal["ask", "rec"]
Status = Literal["running", "success", "fail"]

ASK: ActionKind = "ask"
REC: ActionKind = "rec"


@dataclass(frozen=True)
class RewardConstants:
    """Per-turn reward units (dimensionless)."""

    rec_accept: float = 1.0
    ask_accept: float = 0.01
    rec_reject: float = -0.1
    ask_reject: float = -0.1
    quit: float = -0.3


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode-level knobs shared by the env, planner and evaluator."""

    max_turns: int = 15          # T_max
    rec_size: int = 10           # K_v, items per recommendation list
    ask_size: int = 2            # K_p, values per multi-choice question
    gamma: float = 0.999
    rewards: RewardConstants = RewardConstants()

    def __post_init__(self) -> None:
        if self.max_turns < 1 or self.rec_size < 1 or self.ask_size < 1:
            raise ValueError("max_turns, rec_size and ask_size must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


# history event kinds, in the order values/items were mentioned
H_ACCEPT_VALUE = "p+"
H_REJECT_VALUE = "p-"
H_REJECT_ITEM = "v-"


@dataclass(frozen=True)
class ConversationState:
    """Triplet of accepted/rejected feedback plus derived candidate sets.

    ``history`` records (turn, kind, entity id) mention events so the state
    encoder can order its input sequence; it is fully derived from the
    feedback sets and carries no extra information.
    """

    user: int
    seed_value: int
    seed_type: int
    accepted_values: frozenset[int]
    rejected_values: frozenset[int]
    rejected_items: frozenset[int]
    candidate_values: frozenset[int]
    candidate_items: frozenset[int]
    turn: int
    succeeded: bool
    history: tuple[tuple[int, str, int], ...]


@dataclass(frozen=True)
class Action:
    """A composed action: a multi-choice question or a recommendation list.

    ``payload`` is ordered by the agent's preference (descending score), so
    ``payload[0]`` is the single action whose value drove the selection.
    """

    kind: ActionKind
    payload: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.payload:
            raise ValueError("action payload must be nonempty")


@dataclass(frozen=True)
class UserResponse:
    accepted_values: tuple[int, ...] = ()
    rejected_values: tuple[int, ...] = ()
    hit: bool = False
    accepted_item: int | None = None  # best-positioned accepted item on a hit


def init_session(
    catalog: Catalog,
    user: int,
    target_items: frozenset[int],
    rng,
) -> ConversationState:
    """Open a conversation: the user states one preferred attribute value.

    The seed value p0 is drawn uniformly from the values shared by every
    target item. When p0's type is single-valued per item (each item carries
    at most one value of that type), the other values of the type are
    inferred as rejected up front.
    """
    if not target_items:
        raise ValueError("target_items must be nonempty")
    shared = sorted(catalog.shared_values(target_items))
    if not shared:
        raise ValueError(f"target items of user {user} share no attribute value")
    p0 = int(shared[rng.integers(0, len(shared))]) if len(shared) > 1 else int(shared[0])
    y0 = catalog.type_of_value(p0)
    accepted = frozenset({p0})
    if y0 in catalog.single_valued_types:
        rejected = frozenset(catalog.values_of_type[y0]) - accepted
    else:
        rejected = frozenset()
    candidates = frozenset(catalog.items_of_value[p0])
    cand_values = frozenset(catalog.values) - accepted - rejected
    history: list[tuple[int, str, int]] = [(0, H_ACCEPT_VALUE, p0)]
    history.extend((0, H_REJECT_VALUE, p) for p in sorted(rejected))
    return ConversationState(
        user=user,
        seed_value=p0,
        seed_type=y0,
        accepted_values=accepted,
        rejected_values=rejected,
        rejected_items=frozenset(),
        candidate_values=cand_values,
        candidate_items=candidates,
        turn=0,
        succeeded=False,
        history=tuple(history),
    )


def simulate_user(
    state: ConversationState,
    action: Action,
    target_items: frozenset[int],
    catalog: Catalog,
) -> UserResponse:
    """Deterministic rule-based reply.

    Asked values are accepted iff some target item carries them; a
    recommendation list is accepted iff it contains a target item.
    """
    if action.kind == ASK:
        profile: set[int] = set()
        for v in target_items:
            profile |= catalog.values_of_item(v)
        accepted = tuple(p for p in action.payload if p in profile)
        rejected = tuple(p for p in action.payload if p not in profile)
        return UserResponse(accepted_values=accepted, rejected_values=rejected)
    first_hit = next((v for v in action.payload if v in target_items), None)
    return UserResponse(hit=first_hit is not None, accepted_item=first_hit)


def reward(
    action: Action,
    response: UserResponse,
    state: ConversationState,
    config: EpisodeConfig,
    next_state: ConversationState | None = None,
) -> float:
    """Immediate reward of one turn; the quit penalty folds into the last turn."""
    c = config.rewards
    if action.kind == ASK:
        r = (
            len(response.accepted_values) * c.ask_accept
            + len(response.rejected_values) * c.ask_reject
        )
        hit = False
    else:
        r = c.rec_accept if response.hit else c.rec_reject
        hit = response.hit
    if not hit:
        if state.turn + 1 >= config.max_turns:
            r += c.quit
        elif next_state is not None and not next_state.candidate_items:
            r += c.quit  # dead end: nothing left to recommend
    return r


def transition(
    state: ConversationState,
    action: Action,
    response: UserResponse,
    catalog: Catalog,
) -> ConversationState:
    """Apply the user's reply and recompute candidate sets."""
    if is_terminal_state(state):
        raise ValueError("transition on a terminal state")
    if action.kind == REC and response.hit:
        # success: state frozen apart from the flags
        return replace(state, succeeded=True, turn=state.turn + 1)

    accepted = state.accepted_values
    rejected_v = state.rejected_values
    rejected_i = state.rejected_items
    cand_values = state.candidate_values
    history = list(state.history)
    t = state.turn

    if action.kind == ASK:
        acc = frozenset(response.accepted_values)
        rej = frozenset(response.rejected_values)
        accepted = accepted | acc
        rejected_v = rejected_v | rej
        cand_values = cand_values - acc - rej
        history.extend((t, H_ACCEPT_VALUE, p) for p in response.accepted_values)
        history.extend((t, H_REJECT_VALUE, p) for p in response.rejected_values)
    else:
        rejected_i = rejected_i | frozenset(action.payload)
        history.extend((t, H_REJECT_ITEM, v) for v in action.payload)

    candidates = candidate_items(
        catalog, state.seed_value, accepted, rejected_v, rejected_i
    )
    return replace(
        state,
        accepted_values=accepted,
        rejected_values=rejected_v,
        rejected_items=rejected_i,
        candidate_values=cand_values,
        candidate_items=candidates,
        turn=t + 1,
        history=tuple(history),
    )


def candidate_items(
    catalog: Catalog,
    seed_value: int,
    accepted: frozenset[int],
    rejected_values: frozenset[int],
    rejected_items: frozenset[int],
) -> frozenset[int]:
    """Set-builder for the candidate items: still in V_{p0}, not rejected,
    overlapping the accepted values and disjoint from the rejected ones."""
    out = set()
    for v in catalog.items_of_value[seed_value]:
        if v in rejected_items:
            continue
        pv = catalog.values_of_item(v)
        if pv & accepted and not pv & rejected_values:
            out.add(v)
    return frozenset(out)


def is_terminal(state: ConversationState, config: EpisodeConfig) -> Status:
    if state.succeeded:
        return "success"
    if state.turn >= config.max_turns:
        return "fail"
    if state.turn > 0 and not state.candidate_items:
        return "fail"
    return "running"


def is_terminal_state(state: ConversationState) -> bool:
    # turn-cap checks live in is_terminal; this guards success-frozen states
    return state.succeeded


def step(
    state: ConversationState,
    action: Action,
    response: UserResponse,
    catalog: Catalog,
    config: EpisodeConfig,
) -> tuple[ConversationState, float, Status]:
    """One full turn: transition, reward, terminal status."""
    nxt = transition(state, action, response, catalog)
    r = reward(action, response, state, config, next_state=nxt)
    return nxt, r, is_terminal(nxt, config)


def cumulative_return(rewards: Sequence[float], gamma: float, start: int = 0) -> float:
    """Tail-discounted sum sum_k gamma^k * rewards[start + k]."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    total = 0.0
    for r in reversed(rewards[start:]):
        total = r + gamma * total
    return total


# ---------------------------------------------------------------------------
# trace export
# ---------------------------------------------------------------------------

def trace_record(
    turn: int,
    action: Action,
    response: UserResponse,
    r: float,
) -> dict:
    """One line-delimited trace record, shared by the evaluator and service."""
    if action.kind == ASK:
        accepted = list(response.accepted_values)
        rejected = list(response.rejected_values)
    else:
        accepted = [response.accepted_item] if response.hit else []
        rejected = [] if response.hit else list(action.payload)
    return {
        "turn": turn,
        "kind": action.kind,
        "payload": list(action.payload),
        "accepted": accepted,
        "rejected": rejected,
        "reward": round(r, 10),
    }


def dump_trace(records: Iterable[dict]) -> str:
    return "\n".join(json.dumps(r, separators=(",", ":"), sort_keys=True) for r in records)
