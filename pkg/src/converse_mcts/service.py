"""JSON-over-HTTP session API: a loaded agent acts, a client answers.

Sessions live in memory with idle expiry and never advance without a client
response; with ``simulated=true`` the rule-based user answers instead, which
needs declared target items. Each session's handlers are serialized by a
per-session lock; model parameters are only read.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .agent import Agent
from .catalog import Catalog, load_catalog, split_interactions
from .checkpoint import load_checkpoint, read_manifest
from .config import RunConfig
from .env import (
    ASK,
    Action,
    ConversationState,
    EpisodeConfig,
    UserResponse,
    init_session,
    is_terminal,
    simulate_user,
    step as env_step,
    trace_record,
)

DEFAULT_TTL_SECONDS = 30 * 60


class CreateSessionRequest(BaseModel):
    catalog_id: str
    checkpoint_id: str
    user_id: int
    seed_value: int | None = None      # omitted -> drawn from shared target values
    target_items: list[int] = Field(default_factory=list)
    simulated: bool = False
    rng_seed: int = 0


class RespondRequest(BaseModel):
    accepted_value_ids: list[int] | None = None  # for pending ask
    accepted_item_id: int | None = None          # for pending rec


@dataclass
class Session:
    session_id: str
    catalog_id: str
    checkpoint_id: str
    state: ConversationState
    pending: Action
    targets: frozenset[int] | None
    simulated: bool
    transcript: list[dict] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    status: str = "running"
    last_access: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock)


class ServiceState:
    def __init__(self, config: RunConfig, ttl: float = DEFAULT_TTL_SECONDS) -> None:
        self.config = config
        self.ttl = ttl
        self.catalogs: dict[str, Catalog] = {}
        self.train_splits: dict[str, Catalog] = {}
        self.agents: dict[str, tuple[Agent, str, dict]] = {}  # id -> (agent, catalog id, extra)
        self.h_global: dict[str, torch.Tensor] = {}
        self.sessions: dict[str, Session] = {}
        self.store_lock = threading.Lock()

    def add_catalog(self, path: str) -> None:
        catalog = load_catalog(path)
        cid = Path(path).stem
        self.catalogs[cid] = catalog
        self.train_splits[cid] = split_interactions(catalog, self.config.split_seed)[0]

    def add_checkpoint(self, path: str) -> None:
        manifest = read_manifest(path)
        fp = manifest["catalog_fingerprint"]
        for cid, train_c in self.train_splits.items():
            if train_c.fingerprint() == fp or self.catalogs[cid].fingerprint() == fp:
                base = train_c if train_c.fingerprint() == fp else self.catalogs[cid]
                agent, extra = load_checkpoint(path, base)
                ckpt_id = Path(path).stem
                self.agents[ckpt_id] = (agent, cid, extra)
                with torch.no_grad():
                    self.h_global[ckpt_id] = agent.encoder.encode_global()
                return
        raise ValueError(f"{path}: no loaded catalog matches its fingerprint")

    def sweep(self) -> None:
        now = time.monotonic()
        with self.store_lock:
            stale = [k for k, s in self.sessions.items() if now - s.last_access > self.ttl]
            for k in stale:
                del self.sessions[k]

    def get_session(self, sid: str) -> Session:
        self.sweep()
        with self.store_lock:
            session = self.sessions.get(sid)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid}")
        session.last_access = time.monotonic()
        return session


def entity_display(catalog: Catalog, eid: int) -> str:
    if catalog.is_value(eid):
        local = eid - catalog.value_offset
        return f"{catalog.type_names[catalog.value_type[local]]}: {catalog.value_names[local]}"
    if catalog.is_item(eid):
        return f"item {eid - catalog.item_offset}"
    return f"user {eid}"


def action_payload(catalog: Catalog, action: Action) -> dict:
    return {
        "kind": action.kind,
        "payload": list(action.payload),
        "display": [entity_display(catalog, e) for e in action.payload],
    }


def state_summary(state: ConversationState, status: str) -> dict:
    return {
        "turn": state.turn,
        "status": status,
        "candidate_items": len(state.candidate_items),
        "candidate_values": len(state.candidate_values),
        "accepted_values": len(state.accepted_values),
        "rejected_values": len(state.rejected_values),
        "rejected_items": len(state.rejected_items),
    }


def create_app(
    catalog_paths: list[str],
    checkpoint_paths: list[str],
    config: RunConfig | None = None,
    ui_dir: str | None = None,
    session_ttl: float = DEFAULT_TTL_SECONDS,
) -> FastAPI:
    config = config or RunConfig()
    svc = ServiceState(config, ttl=session_ttl)
    for p in catalog_paths:
        svc.add_catalog(p)
    for p in checkpoint_paths:
        svc.add_checkpoint(p)

    app = FastAPI(title="converse-mcts session service")
    app.state.service = svc

    @app.get("/catalogs")
    def get_catalogs():
        return {
            "catalogs": [
                {
                    "id": cid,
                    "users": c.n_users,
                    "items": c.n_items,
                    "values": c.n_values,
                    "types": c.n_types,
                    "value_ids": list(c.values),
                    "value_display": [entity_display(c, p) for p in c.values],
                }
                for cid, c in svc.catalogs.items()
            ]
        }

    @app.get("/checkpoints")
    def get_checkpoints():
        return {
            "checkpoints": [
                {"id": ckpt_id, "catalog_id": cid,
                 "dim": agent.encoder.config.dim, **extra}
                for ckpt_id, (agent, cid, extra) in svc.agents.items()
            ]
        }

    def diagnostics(agent: Agent, ckpt_id: str, state: ConversationState) -> dict:
        with torch.no_grad():
            s = agent.encoder.encode_state(state, svc.h_global[ckpt_id])
            probs = agent.action_type_probs(s, state)
            return {
                "pi": {"ask": float(probs[0]), "rec": float(probs[1])},
                "q_max": {
                    "ask": agent.max_q(s, state, "ask"),
                    "rec": agent.max_q(s, state, "rec"),
                },
            }

    def next_action(agent: Agent, ckpt_id: str, state: ConversationState) -> Action:
        return agent.select_action(state, config.episode, h_global=svc.h_global[ckpt_id])

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        svc.sweep()
        if req.catalog_id not in svc.catalogs:
            raise HTTPException(404, f"unknown catalog {req.catalog_id}")
        if req.checkpoint_id not in svc.agents:
            raise HTTPException(404, f"unknown checkpoint {req.checkpoint_id}")
        agent, cid, _ = svc.agents[req.checkpoint_id]
        if cid != req.catalog_id:
            raise HTTPException(409, "checkpoint was trained against a different catalog")
        catalog = svc.catalogs[req.catalog_id]
        if not (0 <= req.user_id < catalog.n_users):
            raise HTTPException(422, f"unknown user {req.user_id}")
        targets = frozenset(req.target_items) if req.target_items else None
        if req.simulated and not targets:
            raise HTTPException(422, "simulated sessions need target_items")
        if targets and not all(catalog.is_item(v) for v in targets):
            raise HTTPException(422, "target_items contains unknown item ids")

        rng = np.random.default_rng(np.random.SeedSequence([0x5E55, req.rng_seed]))
        try:
            if req.seed_value is not None:
                if not catalog.is_value(req.seed_value):
                    raise HTTPException(422, f"invalid seed value {req.seed_value}")
                state = seeded_session(catalog, req.user_id, req.seed_value)
            elif targets:
                state = init_session(catalog, req.user_id, targets, rng)
            else:
                raise HTTPException(422, "need either seed_value or target_items")
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from None

        action = next_action(agent, req.checkpoint_id, state)
        session = Session(
            session_id=uuid.uuid4().hex,
            catalog_id=req.catalog_id,
            checkpoint_id=req.checkpoint_id,
            state=state,
            pending=action,
            targets=targets,
            simulated=req.simulated,
        )
        with svc.store_lock:
            svc.sessions[session.session_id] = session
        return {
            "session_id": session.session_id,
            "action": action_payload(catalog, action),
            "state": state_summary(state, "running"),
        }

    @app.post("/sessions/{sid}/response")
    def respond(sid: str, req: RespondRequest):
        session = svc.get_session(sid)
        with session.lock:
            if session.status != "running":
                raise HTTPException(409, "session already terminal")
            catalog = svc.catalogs[session.catalog_id]
            agent, _, _ = svc.agents[session.checkpoint_id]
            action = session.pending
            response = build_response(session, action, req, catalog)
            nxt, reward, status = env_step(
                session.state, action, response, catalog, config.episode
            )
            session.transcript.append(trace_record(nxt.turn, action, response, reward))
            session.rewards.append(reward)
            session.state = nxt
            session.status = status
            out = {
                "reward": reward,
                "state": state_summary(nxt, status),
                "cumulative_reward": cumulative(session.rewards, config.episode.gamma),
            }
            if status == "running":
                session.pending = next_action(agent, session.checkpoint_id, nxt)
                out["action"] = action_payload(catalog, session.pending)
            else:
                out["outcome"] = status
            return out

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        session = svc.get_session(sid)
        with session.lock:
            catalog = svc.catalogs[session.catalog_id]
            agent, _, _ = svc.agents[session.checkpoint_id]
            mentioned: set[int] = set()
            for record in session.transcript:
                mentioned.update(record["payload"])
                mentioned.update(record["accepted"])
                mentioned.update(record["rejected"])
            if session.status == "running":
                mentioned.update(session.pending.payload)
            out = {
                "session_id": session.session_id,
                "catalog_id": session.catalog_id,
                "checkpoint_id": session.checkpoint_id,
                "simulated": session.simulated,
                "transcript": list(session.transcript),
                "entity_names": {
                    str(e): entity_display(catalog, e) for e in sorted(mentioned)
                },
                "state": state_summary(session.state, session.status),
                "cumulative_reward": cumulative(session.rewards, config.episode.gamma),
            }
            if session.status == "running":
                out["pending_action"] = action_payload(catalog, session.pending)
                out["diagnostics"] = diagnostics(agent, session.checkpoint_id, session.state)
            else:
                out["outcome"] = session.status
            return out

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def seeded_session(catalog: Catalog, user: int, seed_value: int) -> ConversationState:
    """Open a session directly from an explicit seed value (human-as-user
    mode has no target set to draw from)."""
    from .env import H_ACCEPT_VALUE, H_REJECT_VALUE

    candidates = frozenset(catalog.items_of_value[seed_value])
    if not candidates:
        raise ValueError(f"no item carries value {seed_value}")
    y0 = catalog.type_of_value(seed_value)
    accepted = frozenset({seed_value})
    if y0 in catalog.single_valued_types:
        rejected = frozenset(catalog.values_of_type[y0]) - accepted
    else:
        rejected = frozenset()
    history = [(0, H_ACCEPT_VALUE, seed_value)]
    history.extend((0, H_REJECT_VALUE, p) for p in sorted(rejected))
    return ConversationState(
        user=user,
        seed_value=seed_value,
        seed_type=y0,
        accepted_values=accepted,
        rejected_values=rejected,
        rejected_items=frozenset(),
        candidate_values=frozenset(catalog.values) - accepted - rejected,
        candidate_items=candidates,
        turn=0,
        succeeded=False,
        history=tuple(history),
    )


def build_response(
    session: Session, action: Action, req: RespondRequest, catalog: Catalog
) -> UserResponse:
    if session.simulated:
        return simulate_user(session.state, action, session.targets, catalog)
    if action.kind == ASK:
        accepted = req.accepted_value_ids or []
        if not set(accepted) <= set(action.payload):
            raise HTTPException(422, "accepted values must be a subset of the asked ones")
        rejected = [p for p in action.payload if p not in set(accepted)]
        return UserResponse(
            accepted_values=tuple(p for p in action.payload if p in set(accepted)),
            rejected_values=tuple(rejected),
        )
    if req.accepted_item_id is None:
        return UserResponse(hit=False)
    if req.accepted_item_id not in action.payload:
        raise HTTPException(422, "accepted item must come from the recommended list")
    return UserResponse(hit=True, accepted_item=req.accepted_item_id)


def cumulative(rewards: list[float], gamma: float) -> float:
    total = 0.0
    for r in reversed(rewards):
        total = r + gamma * total
    return total
