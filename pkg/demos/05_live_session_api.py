"""Drive the HTTP session API in-process (no sockets) with you as the user.

The same flow works over the network once `converse-mcts serve` is running;
here the FastAPI test client keeps the demo self-contained.

Run: python3 demos/05_live_session_api.py
"""

import tempfile
from pathlib import Path

import torch
from fastapi.testclient import TestClient

import converse_mcts as cm
from converse_mcts.config import RunConfig
from converse_mcts.service import create_app

torch.set_num_threads(1)

tmp = Path(tempfile.mkdtemp(prefix="converse-demo-"))
catalog = cm.generate_synthetic(
    cm.SyntheticSpec(12, 40, 5, 3, values_per_item=5, interactions_per_user=8, seed=4)
)
cm.save_catalog(catalog, tmp / "demo.tsv")
train_c, _, _ = cm.split_interactions(catalog, seed=7)
agent = cm.build_agent(
    train_c, cm.EncoderConfig(dim=16, gat_heads=2, seq_heads=2, max_seq_len=128), seed=0
)
cm.save_checkpoint(tmp / "demo-agent.ckpt", agent, extra={"step": 0})

run_cfg = RunConfig(episode=cm.EpisodeConfig(rec_size=3))
client = TestClient(create_app([str(tmp / "demo.tsv")],
                               [str(tmp / "demo-agent.ckpt")], run_cfg))

print("catalogs:", [c["id"] for c in client.get("/catalogs").json()["catalogs"]])
print("checkpoints:", [c["id"] for c in client.get("/checkpoints").json()["checkpoints"]])

user = 5
session = client.post("/sessions", json={
    "catalog_id": "demo",
    "checkpoint_id": "demo-agent",
    "user_id": user,
    "target_items": sorted(catalog.interactions[user]),
    "simulated": True,          # the rule-based user answers for us
    "rng_seed": 1,
}).json()
sid = session["session_id"]
print(f"\nsession {sid[:8]}... opened; agent says: {session['action']['display']}")

while True:
    turn = client.post(f"/sessions/{sid}/response", json={}).json()
    if "outcome" in turn:
        print(f"terminal: {turn['outcome']} "
              f"(cumulative reward {turn['cumulative_reward']:+.3f})")
        break
    print(f"t{turn['state']['turn']:2d} reward {turn['reward']:+.2f} "
          f"next {turn['action']['kind']}: {turn['action']['display'][:3]}")

snap = client.get(f"/sessions/{sid}").json()
print(f"\ntranscript has {len(snap['transcript'])} turns; "
      f"final state {snap['state']}")
