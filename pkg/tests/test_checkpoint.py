import zipfile

import numpy as np
import pytest
import torch

from converse_mcts.agent import Agent
from converse_mcts.catalog import build_global_graph, split_interactions
from converse_mcts.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from converse_mcts.encoder import EncoderConfig, StateEncoder
from converse_mcts.env import EpisodeConfig, init_session

CFG8 = EncoderConfig(dim=8, gat_heads=2, seq_heads=2, max_seq_len=32)


@pytest.fixture()
def agent(small_catalog):
    enc = StateEncoder(small_catalog, build_global_graph(small_catalog), CFG8, seed=51)
    return Agent.fresh(enc, seed=51)


class TestCheckpoint:
    def test_round_trip_preserves_behavior(self, agent, small_catalog, tmp_path, rng):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, agent, extra={"step": 7})
        loaded, extra = load_checkpoint(path, small_catalog)
        assert extra == {"step": 7}

        state = init_session(small_catalog, 0, small_catalog.interactions[0], rng)
        cfg = EpisodeConfig(rec_size=2)
        a = agent.select_action(state, cfg)
        b = loaded.select_action(state, cfg)
        assert a == b
        sa = agent.encoder.encode_state(state)
        sb = loaded.encoder.encode_state(state)
        # float32 archive round trip is exact for float32 tensors
        torch.testing.assert_close(sa, sb, rtol=0, atol=0)

    def test_manifest_contents(self, agent, small_catalog, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, agent)
        man = read_manifest(path)
        assert man["encoder"]["dim"] == 8
        assert man["encoder"]["gat_heads"] == 2
        assert man["encoder"]["gat_layers"] == 2
        assert man["encoder"]["pos_gcn_layers"] == 1
        assert man["encoder"]["neg_gcn_layers"] == 1
        assert man["catalog_fingerprint"] == small_catalog.fingerprint()
        assert all(meta["dtype"] == "<f4" for meta in man["tensors"].values())

    def test_tensor_entries_are_raw_float32(self, agent, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, agent)
        man = read_manifest(path)
        name, meta = next(iter(man["tensors"].items()))
        with zipfile.ZipFile(path) as zf:
            raw = zf.read(f"tensors/{name}.bin")
        assert len(raw) == 4 * int(np.prod(meta["shape"]))

    def test_wrong_catalog_rejected(self, agent, small_catalog, toy_catalog, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, agent)
        with pytest.raises(ValueError, match="different catalog"):
            load_checkpoint(path, toy_catalog)

    def test_split_catalogs_have_distinct_fingerprints(self, small_catalog):
        tr, va, te = split_interactions(small_catalog, seed=0)
        assert tr.fingerprint() != small_catalog.fingerprint()
        assert tr.fingerprint() != te.fingerprint()
