"""Checkpoint archive: named little-endian float32 tensors plus a manifest.

A checkpoint is a zip archive holding ``manifest.json`` and one raw
``tensors/<name>.bin`` entry per parameter (row-major ``<f4``). The manifest
records the encoder hyper-parameters and the catalog fingerprint so a
checkpoint can only be loaded against the catalog it was trained on.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict

import numpy as np
import torch

from .catalog import Catalog, GlobalGraph, build_global_graph
from .encoder import EncoderConfig, StateEncoder
from .agent import Agent, DuelingQHead, PolicyHead

FORMAT_NAME = "converse-mcts-checkpoint"
FORMAT_VERSION = 1


def _named_tensors(agent: Agent) -> dict[str, torch.Tensor]:
    out: dict[str, torch.Tensor] = {}
    for prefix, module in (
        ("encoder", agent.encoder),
        ("policy", agent.policy),
        ("qnet", agent.qnet),
        ("target", agent.target),
    ):
        for name, tensor in module.state_dict().items():
            out[f"{prefix}.{name}"] = tensor
    return out


def save_checkpoint(path, agent: Agent, extra: dict | None = None) -> None:
    cfg = agent.encoder.config
    tensors = _named_tensors(agent)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "encoder": asdict(cfg),
        "catalog_fingerprint": agent.catalog.fingerprint(),
        "extra": extra or {},
        "tensors": {
            name: {"shape": list(t.shape), "dtype": "<f4"} for name, t in tensors.items()
        },
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        for name, t in tensors.items():
            raw = t.detach().cpu().numpy().astype("<f4").tobytes(order="C")
            zf.writestr(f"tensors/{name}.bin", raw)


def read_manifest(path) -> dict:
    with zipfile.ZipFile(path, "r") as zf:
        return json.loads(zf.read("manifest.json"))


def load_checkpoint(
    path,
    catalog: Catalog,
    graph: GlobalGraph | None = None,
    verify_fingerprint: bool = True,
) -> tuple[Agent, dict]:
    """Rebuild an Agent from an archive; returns (agent, manifest extra)."""
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT_NAME:
            raise ValueError(f"{path}: not a {FORMAT_NAME} archive")
        if verify_fingerprint and manifest["catalog_fingerprint"] != catalog.fingerprint():
            raise ValueError(f"{path}: checkpoint was trained on a different catalog")
        cfg = EncoderConfig(**manifest["encoder"])
        if graph is None:
            graph = build_global_graph(catalog)
        encoder = StateEncoder(catalog, graph, cfg)
        policy = PolicyHead(cfg.dim, leaky_slope=cfg.leaky_slope)
        qnet = DuelingQHead(cfg.dim, leaky_slope=cfg.leaky_slope)
        target = DuelingQHead(cfg.dim, leaky_slope=cfg.leaky_slope)
        modules = {"encoder": encoder, "policy": policy, "qnet": qnet, "target": target}
        states: dict[str, dict[str, torch.Tensor]] = {k: {} for k in modules}
        for name, meta in manifest["tensors"].items():
            prefix, _, rest = name.partition(".")
            raw = zf.read(f"tensors/{name}.bin")
            arr = np.frombuffer(raw, dtype="<f4").reshape(meta["shape"]).copy()
            states[prefix][rest] = torch.from_numpy(arr)
        for key, module in modules.items():
            module.load_state_dict(states[key])
    agent = Agent(encoder, policy, qnet, target)
    return agent, manifest.get("extra", {})
