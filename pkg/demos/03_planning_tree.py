"""Grow a conversational search tree for one user and inspect it.

Run: python3 demos/03_planning_tree.py
"""

import numpy as np

import converse_mcts as cm
from converse_mcts.planner import Planner, dump_tree

catalog = cm.generate_synthetic(
    cm.SyntheticSpec(12, 40, 5, 3, values_per_item=5, interactions_per_user=8, seed=4)
)
train_c, _, _ = cm.split_interactions(catalog, seed=7)
config = cm.EpisodeConfig(rec_size=3)
agent = cm.build_agent(
    train_c, cm.EncoderConfig(dim=16, gat_heads=2, seq_heads=2, max_seq_len=128), seed=0
)

user = 2
targets = train_c.interactions[user]
rng = np.random.default_rng(8)
state = cm.init_session(train_c, user, targets, rng)
planner = Planner(
    agent, train_c, targets, config,
    cm.PlannerConfig(n_simulations=20, exploration=1.5), rng,
)
trajectories, root = planner.plan(state)

rewards = [t.cumulative_reward(config.gamma) for t in trajectories]
print(f"{len(trajectories)} simulations; root visits {root.visits}")
for i, (t, r) in enumerate(zip(trajectories, rewards)):
    pattern = "".join("A" if s.kind == cm.ASK else "R" for s in t.steps)
    marker = " <- best" if r == max(rewards) and i == rewards.index(max(rewards)) else ""
    print(f"  plan {i:2d}: {t.outcome:7s} {pattern:<15s} return {r:+.3f}{marker}")

best = cm.best_trajectory(trajectories, config.gamma)
print(f"\nthe best plan is kept for training ({len(best.steps)} turns, "
      f"return {best.cumulative_reward(config.gamma):+.3f})")

print("\nsearch tree (visited nodes):")
print(dump_tree(root, config.gamma))
