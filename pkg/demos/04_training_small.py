"""A small end-to-end training run, compared against the two classical
baselines on held-out interactions. Takes a minute or two on one core.

Run: python3 demos/04_training_small.py
"""

import numpy as np
import torch

import converse_mcts as cm

torch.set_num_threads(1)

catalog = cm.generate_synthetic(
    cm.SyntheticSpec(12, 40, 5, 3, values_per_item=5, interactions_per_user=10, seed=4)
)
train_c, valid_c, test_c = cm.split_interactions(catalog, seed=7)
config = cm.EpisodeConfig(rec_size=1)

agent = cm.build_agent(
    train_c, cm.EncoderConfig(dim=16, gat_heads=2, seq_heads=2, max_seq_len=128), seed=0
)
summary = cm.train(
    agent, train_c, valid_c, config,
    cm.PlannerConfig(n_simulations=10, sample_rollout_types=True),
    cm.TrainConfig(mode="sapient", steps=60, batch_size=32,
                   learning_rate=1e-3, eval_every=15, seed=0),
)
print(f"best validation SR {summary['best_valid_sr']:.3f} at step {summary['best_step']}")

def score(name, policy):
    records = cm.evaluate_policy(policy, test_c, config, seed=0)
    report = cm.aggregate(records, max_turns=config.max_turns)
    print(f"{name:12s} SR {report.success_rate:.3f}  AT {report.average_turns:5.2f}  "
          f"hDCG {report.hdcg:.3f}")
    return records

scorer = cm.MatchingScorer(catalog, dim=16, seed=100)
score("abs greedy", cm.AbsGreedyPolicy(scorer, config))
score("max entropy", cm.MaxEntropyPolicy(catalog, scorer, config,
                                         rng=np.random.default_rng(5)))
records = score("trained", cm.AgentPolicy(agent, config))

patterns = cm.action_pattern_stats(records, 2)
top = sorted(patterns.items(), key=lambda kv: -kv[1])[:4]
print("\ncommon action patterns (per episode):",
      ", ".join(f"{k} x{v:.1f}" for k, v in top))
