import json
from pathlib import Path

import pytest

from converse_mcts.catalog import load_catalog, save_catalog
from converse_mcts.cli import main
from converse_mcts.config import RunConfig, apply_overrides, load_config

CONFIG_TEXT = """\
[run]
seed = 3

[episode]
max_turns = 10
rec_size = 2

[rewards]
quit = -0.5

[planner]
n_simulations = 4
sample_rollout_types = true

[training]
mode = sapient-e
steps = 5
learning_rate = 0.001
batch_size = 8
eval_every = 0

[encoder]
dim = 8
gat_heads = 2
seq_heads = 2
max_seq_len = 64
"""


class TestConfig:
    def test_load_and_types(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text(CONFIG_TEXT)
        cfg = load_config(p)
        assert cfg.seed == 3
        assert cfg.episode.max_turns == 10
        assert cfg.episode.rewards.quit == -0.5
        assert cfg.planner.sample_rollout_types is True
        assert cfg.training.mode == "sapient-e"
        assert cfg.encoder.dim == 8

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text("[episode]\nmax_turnz = 3\n")
        with pytest.raises(ValueError, match="max_turnz"):
            load_config(p)

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text("[nonsense]\nx = 1\n")
        with pytest.raises(ValueError, match="nonsense"):
            load_config(p)

    def test_overrides_win(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text(CONFIG_TEXT)
        cfg = load_config(p)
        cfg = apply_overrides(cfg, ["episode.max_turns=12", "training.steps=9"])
        assert cfg.episode.max_turns == 12
        assert cfg.training.steps == 9

    def test_bad_override_shape(self):
        with pytest.raises(ValueError):
            apply_overrides(RunConfig(), ["nodots"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.ini")


@pytest.fixture(scope="module")
def catalog_file(tmp_path_factory, small_catalog):
    p = tmp_path_factory.mktemp("data") / "catalog.tsv"
    save_catalog(small_catalog, p)
    return p


class TestGenerateCommand:
    def test_round_trip_and_determinism(self, tmp_path, capsys):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        args = ["generate", "--users", "4", "--items", "12", "--types", "3",
                "--values-per-type", "3", "--values-per-item", "3",
                "--interactions", "4", "--seed", "1"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        load_catalog(a)  # loads back without error

    def test_missing_out_is_usage_error(self, capsys):
        with pytest.raises(SystemExit):
            # argparse exits for missing required argument combinations
            main(["generate", "--out"])

    def test_infeasible_spec_diagnostic(self, tmp_path, capsys):
        rc = main(["generate", "--users", "0", "--out", str(tmp_path / "x.tsv")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, catalog_file):
    out = tmp_path_factory.mktemp("run")
    cfgp = out / "run.ini"
    cfgp.write_text(CONFIG_TEXT)
    rc = main(["train", "--data", str(catalog_file), "--config", str(cfgp),
               "--mode", "sapient", "--steps", "4", "--out", str(out / "model")])
    assert rc == 0
    return out


class TestTrainEvalPlanCommands:
    def test_train_wrote_artifacts(self, run_dir):
        model = run_dir / "model"
        assert (model / "final.ckpt").exists()
        assert (model / "best.ckpt").exists()
        lines = (model / "metrics.jsonl").read_text().strip().splitlines()
        assert len(lines) == 5  # 4 steps + summary
        assert json.loads(lines[0])["step"] == 1

    def test_eval_agent_policy(self, run_dir, catalog_file, capsys):
        rc = main(["eval", "--data", str(catalog_file),
                   "--config", str(run_dir / "run.ini"),
                   "--checkpoint", str(run_dir / "model" / "best.ckpt"),
                   "--policy", "agent", "--split", "test"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "SR" in out and "hDCG" in out

    def test_eval_baseline_needs_no_checkpoint(self, run_dir, catalog_file, capsys):
        rc = main(["eval", "--data", str(catalog_file),
                   "--config", str(run_dir / "run.ini"),
                   "--policy", "abs-greedy", "--split", "valid"])
        assert rc == 0

    def test_eval_deterministic(self, run_dir, catalog_file, tmp_path, capsys):
        argv = ["eval", "--data", str(catalog_file),
                "--config", str(run_dir / "run.ini"),
                "--checkpoint", str(run_dir / "model" / "best.ckpt"),
                "--policy", "agent"]
        assert main(argv + ["--out", str(tmp_path / "r1")]) == 0
        assert main(argv + ["--out", str(tmp_path / "r2")]) == 0
        capsys.readouterr()
        assert (tmp_path / "r1" / "episodes.jsonl").read_bytes() == (
            tmp_path / "r2" / "episodes.jsonl"
        ).read_bytes()

    def test_eval_unknown_policy(self, run_dir, catalog_file, capsys):
        rc = main(["eval", "--data", str(catalog_file),
                   "--config", str(run_dir / "run.ini"), "--policy", "nope"])
        assert rc == 2
        assert "unknown policy" in capsys.readouterr().err

    def test_plan_dump(self, run_dir, catalog_file, capsys):
        rc = main(["plan", "--data", str(catalog_file),
                   "--config", str(run_dir / "run.ini"),
                   "--checkpoint", str(run_dir / "model" / "best.ckpt"),
                   "--user", "0"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "simulations 4" in out
        assert "root_visits 4" in out
        assert out.count("trajectory ") == 4

    def test_resume_continues_step_counter(self, run_dir, catalog_file, tmp_path):
        out2 = tmp_path / "resumed"
        rc = main(["train", "--data", str(catalog_file),
                   "--config", str(run_dir / "run.ini"),
                   "--mode", "sapient", "--steps", "2",
                   "--resume", str(run_dir / "model" / "final.ckpt"),
                   "--out", str(out2)])
        assert rc == 0
        lines = (out2 / "metrics.jsonl").read_text().strip().splitlines()
        first = json.loads(lines[0])
        assert first["step"] == 5  # 4 steps trained before


class TestEmitPlots:
    def test_writes_grid_data_files(self, catalog_file, tmp_path):
        cfgp = tmp_path / "tiny.ini"
        cfgp.write_text(
            "[episode]\nrec_size = 2\n"
            "[planner]\nn_simulations = 1\nsample_rollout_types = true\n"
            "[training]\nsteps = 1\nbatch_size = 4\neval_every = 0\n"
            "[encoder]\ndim = 8\ngat_heads = 2\nseq_heads = 2\nmax_seq_len = 64\n"
        )
        rc = main(["eval", "--data", str(catalog_file), "--config", str(cfgp),
                   "--policy", "abs-greedy", "--out", str(tmp_path / "plots"),
                   "--emit-plots"])
        assert rc == 0
        w_lines = (tmp_path / "plots" / "sr_vs_w.tsv").read_text().strip().splitlines()
        n_lines = (tmp_path / "plots" / "sr_vs_n.tsv").read_text().strip().splitlines()
        assert w_lines[0] == "w\tsr" and len(w_lines) == 5
        assert n_lines[0] == "n\tsr" and len(n_lines) == 4
        for line in w_lines[1:] + n_lines[1:]:
            x, sr = line.split("\t")
            assert 0.0 <= float(sr) <= 1.0


class TestSmokeTiming:
    def test_one_step_one_rollout_under_a_minute(self, catalog_file, tmp_path):
        import time

        t0 = time.perf_counter()
        rc = main(["train", "--data", str(catalog_file),
                   "--mode", "sapient", "--steps", "1", "--rollouts", "1",
                   "--seed", "0", "--out", str(tmp_path / "smoke"),
                   "--set", "encoder.dim=8", "--set", "encoder.gat_heads=2",
                   "--set", "encoder.seq_heads=2", "--set", "encoder.max_seq_len=64",
                   "--set", "training.batch_size=4", "--set", "training.eval_every=0"])
        elapsed = time.perf_counter() - t0
        assert rc == 0
        assert elapsed < 60
