"""One simulated conversation, printed turn by turn.

The 'agent' here is the Max Entropy baseline so the demo needs no training;
swap in a trained AgentPolicy for the real thing.

Run: python3 demos/02_conversation.py
"""

import numpy as np

import converse_mcts as cm

catalog = cm.generate_synthetic(
    cm.SyntheticSpec(12, 40, 5, 3, values_per_item=5, interactions_per_user=8, seed=4)
)
config = cm.EpisodeConfig(rec_size=3)
rng = np.random.default_rng(11)

user = 5
targets = catalog.interactions[user]
scorer = cm.MatchingScorer(catalog, dim=16, seed=2)
policy = cm.MaxEntropyPolicy(catalog, scorer, config, rng=np.random.default_rng(3))

name = lambda e: (
    catalog.value_names[e - catalog.value_offset] if catalog.is_value(e)
    else f"item{e - catalog.item_offset}"
)

state = cm.init_session(catalog, user, targets, rng)
print(f"user {user} opens with: \"I'd like something with "
      f"{name(state.seed_value)}\"  ({len(state.candidate_items)} candidates)\n")

while cm.is_terminal(state, config) == "running":
    action = policy(state)
    response = cm.simulate_user(state, action, targets, catalog)
    state, reward, status = cm.step(state, action, response, catalog, config)
    if action.kind == cm.ASK:
        says = ", ".join(name(p) for p in action.payload)
        yes = ", ".join(name(p) for p in response.accepted_values) or "none"
        print(f"t{state.turn:2d} agent asks about [{says}]  ->  user accepts: {yes}")
    else:
        says = ", ".join(name(v) for v in action.payload)
        verdict = f"takes {name(response.accepted_item)}" if response.hit else "passes"
        print(f"t{state.turn:2d} agent recommends [{says}]  ->  user {verdict}")
    print(f"     reward {reward:+.2f}, {len(state.candidate_items)} candidates left")

print(f"\noutcome: {cm.is_terminal(state, config)} after {state.turn} turns")
