"""The standard desk-scale benchmark: a pinned synthetic catalog plus the
training/evaluation recipe used by the acceptance suite and the demos.

The catalog is 30 users / 100 items / 8 attribute types x 4 values, generated
from a fixed seed. Episodes recommend one item per turn so that a pure
elimination policy cannot sweep the whole candidate pool within the turn
budget; everything else keeps the library defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch

from .agent import Agent
from .catalog import Catalog, SyntheticSpec, generate_synthetic, split_interactions
from .encoder import EncoderConfig
from .env import EpisodeConfig
from .evaluation import (
    AbsGreedyPolicy,
    AgentPolicy,
    MatchingScorer,
    MaxEntropyPolicy,
    aggregate,
    evaluate_policy,
)
from .planner import PlannerConfig
from .training import TrainConfig, build_agent, train

BENCHMARK_SPEC = SyntheticSpec(
    n_users=30,
    n_items=100,
    n_types=8,
    n_values_per_type=4,
    values_per_item=8,
    interactions_per_user=12,
    seed=1,
)
SPLIT_SEED = 7
EPISODE = EpisodeConfig(rec_size=1)
ENCODER = EncoderConfig(dim=32, gat_heads=4, max_seq_len=256)
PLANNER = PlannerConfig(n_simulations=20, exploration=1.5, sample_rollout_types=True)
TRAINING = TrainConfig(
    mode="sapient",
    steps=320,
    batch_size=64,
    learning_rate=1e-3,
    eval_every=20,
)
SEEDS = (0, 1, 2)
EPISODES_PER_USER = 3


@dataclass(frozen=True)
class BenchmarkRun:
    seed: int
    mode: str
    success_rate: float
    average_turns: float
    hdcg: float
    best_valid_sr: float
    stored_per_step: list[int]


def benchmark_catalog() -> tuple[Catalog, Catalog, Catalog, Catalog]:
    """(full, train, valid, test) catalogs of the pinned benchmark."""
    catalog = generate_synthetic(BENCHMARK_SPEC)
    train_c, valid_c, test_c = split_interactions(catalog, seed=SPLIT_SEED)
    return catalog, train_c, valid_c, test_c


def baseline_success_rates(seed: int) -> dict[str, float]:
    catalog, _, _, test_c = benchmark_catalog()
    scorer = MatchingScorer(catalog, dim=ENCODER.dim, seed=100 + seed)
    out = {}
    out["abs_greedy"] = aggregate(
        evaluate_policy(
            AbsGreedyPolicy(scorer, EPISODE), test_c, EPISODE,
            seed=seed, episodes_per_user=EPISODES_PER_USER,
        ),
        max_turns=EPISODE.max_turns,
    ).success_rate
    out["max_entropy"] = aggregate(
        evaluate_policy(
            MaxEntropyPolicy(
                catalog, scorer, EPISODE,
                rng=np.random.default_rng(np.random.SeedSequence([0xBA5E, seed])),
            ),
            test_c, EPISODE, seed=seed, episodes_per_user=EPISODES_PER_USER,
        ),
        max_turns=EPISODE.max_turns,
    ).success_rate
    return out


def train_benchmark_agent(
    seed: int,
    mode: str = "sapient",
    planner: PlannerConfig | None = None,
    out_dir=None,
) -> tuple[Agent, BenchmarkRun]:
    """Train one benchmark run and evaluate it on the held-out split."""
    import json

    torch.set_num_threads(1)
    _, train_c, valid_c, test_c = benchmark_catalog()
    agent = build_agent(train_c, ENCODER, seed=seed)
    tc = dataclasses.replace(TRAINING, mode=mode, seed=seed)
    pc = planner if planner is not None else PLANNER
    summary = train(agent, train_c, valid_c, EPISODE, pc, tc, out_dir=out_dir)
    records = evaluate_policy(
        AgentPolicy(agent, EPISODE), test_c, EPISODE,
        seed=seed, episodes_per_user=EPISODES_PER_USER,
    )
    report = aggregate(records, max_turns=EPISODE.max_turns)
    stored = [
        json.loads(line)["stored"]
        for line in summary["lines"]
        if '"stored"' in line
    ]
    run = BenchmarkRun(
        seed=seed,
        mode=mode,
        success_rate=report.success_rate,
        average_turns=report.average_turns,
        hdcg=report.hdcg,
        best_valid_sr=summary["best_valid_sr"],
        stored_per_step=stored,
    )
    return agent, run
