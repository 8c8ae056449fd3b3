"""Operator entry point: generate, train, eval, plan, serve.

Every command is deterministic under fixed seeds, exits 0 on success and
prints a one-line diagnostic with a nonzero exit code otherwise. The
CONVERSE_MCTS_LOG environment variable sets log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import catalog as cat_mod
from .checkpoint import load_checkpoint
from .config import RunConfig, apply_overrides, load_config
from .encoder import StateEncoder
from .agent import Agent
from .env import EpisodeConfig
from .evaluation import (
    AbsGreedyPolicy,
    AgentPolicy,
    MatchingScorer,
    MaxEntropyPolicy,
    action_pattern_stats,
    aggregate,
    evaluate_policy,
)
from .planner import Planner, PlannerConfig, dump_tree
from .training import TrainConfig, build_agent, train
from .env import init_session

log = logging.getLogger("converse_mcts")


def _setup_logging() -> None:
    level = os.environ.get("CONVERSE_MCTS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg = cfg.with_section("run", seed=args.seed)
        cfg = cfg.with_section("training", seed=args.seed)
    return cfg


def _splits(cfg: RunConfig, data: str):
    catalog = cat_mod.load_catalog(data)
    return catalog, cat_mod.split_interactions(catalog, cfg.split_seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = cat_mod.SyntheticSpec(
        n_users=args.users,
        n_items=args.items,
        n_types=args.types,
        n_values_per_type=args.values_per_type,
        values_per_item=args.values_per_item,
        interactions_per_user=args.interactions,
        seed=args.seed if args.seed is not None else 0,
    )
    catalog = cat_mod.generate_synthetic(spec)
    cat_mod.save_catalog(catalog, args.out)
    print(f"wrote {args.out}: {catalog.n_users} users, {catalog.n_items} items, "
          f"{catalog.n_values} values, fingerprint {catalog.fingerprint()[:12]}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    torch.set_num_threads(1)
    catalog, (train_c, valid_c, _) = _splits(cfg, args.data)
    tc = cfg.training
    if args.mode:
        tc = dataclasses.replace(tc, mode=args.mode)
    if args.steps:
        tc = dataclasses.replace(tc, steps=args.steps)
    pc = cfg.planner
    if args.rollouts:
        pc = dataclasses.replace(pc, n_simulations=args.rollouts)

    start_step = 0
    if args.resume:
        agent, extra = load_checkpoint(args.resume, train_c)
        start_step = int(extra.get("step", 0))
        tc = dataclasses.replace(tc, steps=tc.steps + start_step)
        log.info("resuming from %s at step %d", args.resume, start_step)
    else:
        agent = build_agent(train_c, cfg.encoder, seed=cfg.seed)

    out = Path(args.out) if args.out else Path("runs") / f"{tc.mode}-seed{tc.seed}"
    summary = train(agent, train_c, valid_c, cfg.episode, pc, tc,
                    out_dir=out, start_step=start_step)
    print(f"mode={tc.mode} steps={summary['steps']} "
          f"best_valid_sr={summary['best_valid_sr']:.4f} out={out}")
    return 0


def _make_policy(name: str, catalog, train_c, cfg: RunConfig, args):
    if name == "agent":
        if not args.checkpoint:
            raise ValueError("--policy agent requires --checkpoint")
        agent, _ = load_checkpoint(args.checkpoint, train_c)
        return AgentPolicy(agent, cfg.episode)
    scorer = MatchingScorer(catalog, dim=cfg.encoder.dim, seed=cfg.seed + 100)
    if name == "abs-greedy":
        return AbsGreedyPolicy(scorer, cfg.episode)
    if name == "max-entropy":
        return MaxEntropyPolicy(
            catalog, scorer, cfg.episode,
            rng=np.random.default_rng(np.random.SeedSequence([0xBA5E, cfg.seed])),
        )
    raise ValueError(f"unknown policy {name!r} (use agent, abs-greedy or max-entropy)")


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    torch.set_num_threads(1)
    catalog, splits = _splits(cfg, args.data)
    split_c = dict(zip(("train", "valid", "test"), splits))[args.split]
    policy = _make_policy(args.policy, catalog, splits[0], cfg, args)
    records = evaluate_policy(
        policy, split_c, cfg.episode, seed=cfg.seed,
        episodes_per_user=cfg.eval_episodes_per_user,
    )
    report = aggregate(records, max_turns=cfg.episode.max_turns)
    patterns = action_pattern_stats(records, 2)
    top = sorted(patterns.items(), key=lambda kv: (-kv[1], kv[0]))[:6]

    print(f"policy={args.policy} split={args.split} episodes={report.episodes}")
    print(f"SR    {report.success_rate:.4f}")
    print(f"AT    {report.average_turns:.4f}")
    print(f"hDCG  {report.hdcg:.4f}")
    print("patterns " + " ".join(f"{k}:{v:.2f}" for k, v in top))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps({"episode": i, "user": r.user, "outcome": r.outcome,
                             "turns": r.turns, "kinds": list(r.kinds)},
                            separators=(",", ":"), sort_keys=True)
                 for i, r in enumerate(records)]
        (out / "episodes.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        from .env import dump_trace

        traces = "\n".join(dump_trace(r.trace) for r in records if r.trace)
        (out / "traces.jsonl").write_text(traces + "\n", encoding="utf-8")
        (out / "report.json").write_text(
            json.dumps({"sr": report.success_rate, "at": report.average_turns,
                        "hdcg": report.hdcg, "episodes": report.episodes,
                        "policy": args.policy, "split": args.split},
                       indent=1, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    if args.emit_plots:
        _emit_plots(cfg, splits, Path(args.out or "."))
    return 0


def _emit_plots(cfg: RunConfig, splits, out: Path) -> None:
    """Train small grids over the exploration factor and the rollout count and
    write SR data files for external plotting."""
    train_c, valid_c, test_c = splits
    out.mkdir(parents=True, exist_ok=True)

    def sr_for(planner_cfg: PlannerConfig) -> float:
        agent = build_agent(train_c, cfg.encoder, seed=cfg.seed)
        train(agent, train_c, valid_c, cfg.episode, planner_cfg, cfg.training)
        records = evaluate_policy(
            AgentPolicy(agent, cfg.episode), test_c, cfg.episode,
            seed=cfg.seed, episodes_per_user=cfg.eval_episodes_per_user,
        )
        return aggregate(records, max_turns=cfg.episode.max_turns).success_rate

    rows = []
    for w in (0.0, 0.5, 1.5, 3.0):
        rows.append(f"{w}\t{sr_for(dataclasses.replace(cfg.planner, exploration=w)):.4f}")
    (out / "sr_vs_w.tsv").write_text("w\tsr\n" + "\n".join(rows) + "\n", encoding="utf-8")
    rows = []
    for n in (1, 5, 20):
        rows.append(f"{n}\t{sr_for(dataclasses.replace(cfg.planner, n_simulations=n)):.4f}")
    (out / "sr_vs_n.tsv").write_text("n\tsr\n" + "\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {out / 'sr_vs_w.tsv'} and {out / 'sr_vs_n.tsv'}")


def cmd_plan(args) -> int:
    cfg = _load_run_config(args)
    torch.set_num_threads(1)
    catalog, (train_c, _, _) = _splits(cfg, args.data)
    agent, _ = load_checkpoint(args.checkpoint, train_c)
    user = args.user
    targets = train_c.interactions[user]
    if not targets:
        raise ValueError(f"user {user} has no train interactions")
    rng = np.random.default_rng(np.random.SeedSequence([0x91A9, cfg.seed]))
    state = init_session(train_c, user, targets, rng)
    planner = Planner(agent, train_c, targets, cfg.episode, cfg.planner, rng)
    trajectories, root = planner.plan(state)

    lines = [f"user {user} simulations {len(trajectories)} root_visits {root.visits}"]
    for i, t in enumerate(trajectories):
        lines.append(
            f"trajectory {i}: outcome={t.outcome} turns={len(t.steps)} "
            f"reward={t.cumulative_reward(cfg.episode.gamma):.6f} "
            f"kinds={''.join('A' if s.kind == 'ask' else 'R' for s in t.steps)}"
        )
    lines.append(dump_tree(root, cfg.episode.gamma))
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _default_ui_dir() -> str | None:
    candidates = [
        Path.cwd() / "frontend" / "dist-site",
        Path(__file__).resolve().parents[2] / "frontend" / "dist-site",
    ]
    for c in candidates:
        if (c / "index.html").exists():
            return str(c)
    return None


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _load_run_config(args)
    torch.set_num_threads(1)
    ui_dir = None
    if args.ui:
        ui_dir = args.ui_dir or _default_ui_dir()
        if ui_dir is None:
            raise ValueError(
                "--ui needs built assets: run `npm run build` in frontend/, copy "
                "index.html, style.css and dist/ into frontend/dist-site, or pass --ui-dir"
            )
        log.info("serving UI assets from %s", ui_dir)
    app = create_app(
        catalog_paths=args.data,
        checkpoint_paths=args.checkpoint or [],
        config=cfg,
        ui_dir=ui_dir,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="converse-mcts",
        description="Tree-search planning and self-training for conversational recommendation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", help="output path")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="config override, repeatable")

    g = sub.add_parser("generate", help="write a synthetic catalog file")
    common(g)
    g.add_argument("--users", type=int, default=30)
    g.add_argument("--items", type=int, default=100)
    g.add_argument("--types", type=int, default=8)
    g.add_argument("--values-per-type", type=int, default=4)
    g.add_argument("--values-per-item", type=int, default=8)
    g.add_argument("--interactions", type=int, default=12)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="run the self-training loop")
    common(t)
    t.add_argument("--data", required=True, help="catalog file")
    t.add_argument("--mode", choices=["sapient", "sapient-e"], default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--rollouts", type=int, default=None, help="simulations per planning call")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a policy on a split")
    common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--policy", default="agent")
    e.add_argument("--split", choices=["train", "valid", "test"], default="test")
    e.add_argument("--emit-plots", action="store_true",
                   help="also train small w/N grids and write SR data files")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("plan", help="dump one planning call's search tree")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", type=int, required=True)
    p.set_defaults(func=cmd_plan)

    s = sub.add_parser("serve", help="launch the HTTP session service")
    common(s)
    s.add_argument("--data", nargs="+", required=True, help="catalog file(s)")
    s.add_argument("--checkpoint", nargs="*", help="checkpoint file(s)")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8239)
    s.add_argument("--ui", action="store_true", help="serve the web client")
    s.add_argument("--ui-dir", default=None, help="static asset directory")
    s.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, cat_mod.CatalogError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
