"""
End-to-end tests for the train / evaluate / compare / render command line
"""
import json
import shutil
from pathlib import Path

import pandas as pd
import pytest
import yaml

import slicing_cli
from errors import DomainError, TrainingError
from metrics_recorder import METRICS_COLUMNS
from slicing_cli import (
    EXIT_CHECKPOINT,
    EXIT_CONFIG,
    EXIT_DIMENSION,
    EXIT_DIVERGED,
    EXIT_METRICS_FORMAT,
    EXIT_OK,
    EXIT_SCENARIO_MISMATCH,
    EXIT_SIMULATION,
    main,
)

CONFIG_DIR = Path(__file__).parent / "configs"
EPISODE_LENGTH = 10
MAX_TIMESTEPS = 60


def tiny_config(**agent):
    agent_section = {
        "algorithm": "td3",
        "hidden_sizes": [8, 8],
        "batch_size": 16,
        "start_timesteps": 20,
        "max_timesteps": MAX_TIMESTEPS,
        "buffer_capacity": 1000,
    }
    agent_section.update(agent)
    return {
        "scenario": {"episode_length": EPISODE_LENGTH},
        "agent": agent_section,
        "run": {"seeds": [0], "flush_interval": 7, "smoothing_window": 5},
    }


def write_config(path, raw):
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path


@pytest.fixture
def config_path(tmp_path):
    return write_config(tmp_path / "tiny.yaml", tiny_config())


@pytest.fixture
def trained(tmp_path, config_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config_path), "--out", str(out)]) == EXIT_OK
    return out


class TestTrain:
    def test_outputs(self, trained):
        metrics = pd.read_csv(trained / "metrics.csv")
        assert list(metrics.columns) == METRICS_COLUMNS
        assert len(metrics) == MAX_TIMESTEPS * 3
        assert (trained / "seed_0" / "checkpoint.json").exists()
        summary = json.loads((trained / "summary.json").read_text(encoding="utf-8"))
        assert summary["networks"] == {"policy": 1, "value": 2, "target_policy": 1, "target_value": 2}
        assert summary["per_seed"]["0"]["episodes"] == MAX_TIMESTEPS // EPISODE_LENGTH
        assert summary["aggregate"]["final_return"]["iqr"] is None

    def test_identical_runs_write_identical_metrics(self, tmp_path, config_path, trained):
        again = tmp_path / "again"
        assert main(["train", "--config", str(config_path), "--out", str(again)]) == EXIT_OK
        assert (again / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()

    def test_seeds_from_command_line(self, tmp_path, config_path):
        out = tmp_path / "two"
        assert main(["train", "--config", str(config_path), "--out", str(out),
                     "--seed", "3", "--seed", "4", "--algorithm", "ddpg"]) == EXIT_OK
        metrics = pd.read_csv(out / "metrics.csv")
        assert metrics["seed"].unique().tolist() == [3, 4]
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["algorithm"] == "ddpg"
        assert summary["networks"]["value"] == 1

    def test_periodic_checkpoints(self, tmp_path, config_path):
        out = tmp_path / "ckpt"
        assert main(["train", "--config", str(config_path), "--out", str(out),
                     "--override", "run.checkpoint_interval=30"]) == EXIT_OK
        assert (out / "seed_0" / "checkpoint_30.json").exists()
        assert (out / "seed_0" / "checkpoint_60.json").exists()

    def test_unknown_config_key(self, tmp_path):
        raw = tiny_config()
        raw["agent"]["learning_rate"] = 0.1
        path = write_config(tmp_path / "bad.yaml", raw)
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "x")]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG

    def test_divergence_writes_failure_checkpoint(self, tmp_path, config_path, monkeypatch):
        def explode(self, batch, targets=None):
            raise TrainingError("critic1 loss is not finite", {"loss": float("nan")})

        monkeypatch.setattr(slicing_cli.TD3Agent, "critic_update", explode)
        out = tmp_path / "boom"
        assert main(["train", "--config", str(config_path), "--out", str(out)]) == EXIT_DIVERGED
        assert (out / "seed_0" / "checkpoint_failure.json").exists()

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2

    def test_periodic_checkpoint_has_buffer_sidecar(self, tmp_path, config_path):
        out = tmp_path / "ckpt"
        assert main(["train", "--config", str(config_path), "--out", str(out),
                     "--override", "run.checkpoint_interval=30"]) == EXIT_OK
        assert (out / "seed_0" / "checkpoint_30.buffer.npz").exists()
        assert (out / "seed_0" / "checkpoint.buffer.npz").exists()


@pytest.fixture
def interrupted(tmp_path, config_path):
    """Uninterrupted run with a mid-run checkpoint at step 30."""
    out = tmp_path / "full"
    assert main(["train", "--config", str(config_path), "--out", str(out),
                 "--override", "run.checkpoint_interval=30"]) == EXIT_OK
    return out


def resume(config_path, checkpoint, out, *overrides):
    argv = ["train", "--config", str(config_path), "--out", str(out), "--resume", str(checkpoint),
            "--override", "run.checkpoint_interval=30"]
    for override in overrides:
        argv += ["--override", override]
    return main(argv)


class TestResume:
    def test_resumed_run_matches_uninterrupted(self, tmp_path, config_path, interrupted):
        out = tmp_path / "resumed"
        assert resume(config_path, interrupted / "seed_0" / "checkpoint_30.json", out) == EXIT_OK
        full = pd.read_csv(interrupted / "seed_0" / "metrics.csv")
        tail = full[full["step"] >= 30].reset_index(drop=True)
        pd.testing.assert_frame_equal(pd.read_csv(out / "seed_0" / "metrics.csv"), tail)
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["per_seed"]["0"]["critic_updates"] == MAX_TIMESTEPS - 20

    def test_resume_in_place_rewrites_identical_metrics(self, tmp_path, config_path, interrupted):
        copy = tmp_path / "copy"
        shutil.copytree(interrupted, copy)
        assert resume(config_path, copy / "seed_0" / "checkpoint_30.json", copy) == EXIT_OK
        assert (copy / "seed_0" / "metrics.csv").read_bytes() == \
            (interrupted / "seed_0" / "metrics.csv").read_bytes()
        assert (copy / "metrics.csv").read_bytes() == (interrupted / "metrics.csv").read_bytes()

    def test_missing_buffer_restarts_warmup(self, tmp_path, config_path, interrupted):
        (interrupted / "seed_0" / "checkpoint_30.buffer.npz").unlink()
        out = tmp_path / "rewarm"
        assert resume(config_path, interrupted / "seed_0" / "checkpoint_30.json", out) == EXIT_OK
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        # ten updates before the checkpoint, then a second 20-step warm-up leaves ten more
        assert summary["per_seed"]["0"]["critic_updates"] == 20

    def test_resume_with_other_scenario(self, tmp_path, config_path, interrupted):
        out = tmp_path / "other"
        checkpoint = interrupted / "seed_0" / "checkpoint_30.json"
        assert resume(config_path, checkpoint, out, "scenario.num_cpus=5") == EXIT_SCENARIO_MISMATCH

    def test_resume_with_other_agent_settings(self, tmp_path, config_path, interrupted):
        out = tmp_path / "other"
        checkpoint = interrupted / "seed_0" / "checkpoint_30.json"
        assert resume(config_path, checkpoint, out, "agent.batch_size=8") == EXIT_CONFIG

    def test_resume_from_missing_checkpoint(self, tmp_path, config_path):
        assert resume(config_path, tmp_path / "absent.json", tmp_path / "x") == EXIT_CHECKPOINT


class TestEvaluate:
    def test_greedy_episodes(self, tmp_path, trained):
        out = tmp_path / "eval"
        checkpoint = trained / "seed_0" / "checkpoint.json"
        assert main(["evaluate", "--checkpoint", str(checkpoint), "--episodes", "2", "--out", str(out)]) == EXIT_OK
        metrics = pd.read_csv(out / "eval_metrics.csv")
        assert len(metrics) == 2 * EPISODE_LENGTH * 3
        summary = json.loads((out / "eval_summary.json").read_text(encoding="utf-8"))
        assert len(summary["episode_returns"]) == 2

    def test_zero_episodes(self, tmp_path, trained):
        out = tmp_path / "eval0"
        checkpoint = trained / "seed_0" / "checkpoint.json"
        assert main(["evaluate", "--checkpoint", str(checkpoint), "--episodes", "0", "--out", str(out)]) == EXIT_OK
        assert len(pd.read_csv(out / "eval_metrics.csv")) == 0

    def test_negative_episodes_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["evaluate", "--checkpoint", str(tmp_path / "c.json"), "--episodes", "-1"])
        assert excinfo.value.code == 2

    def test_corrupted_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"format": "td3-slicing-checkpoint", "version": 1}', encoding="utf-8")
        assert main(["evaluate", "--checkpoint", str(bad)]) == EXIT_CHECKPOINT

    def test_dimension_mismatch(self, tmp_path, trained):
        raw = tiny_config()
        raw["scenario"]["slices"] = [{"slice_id": 0}, {"slice_id": 1}, {"slice_id": 2}]
        path = write_config(tmp_path / "three.yaml", raw)
        checkpoint = trained / "seed_0" / "checkpoint.json"
        assert main(["evaluate", "--checkpoint", str(checkpoint), "--config", str(path),
                     "--out", str(tmp_path / "e")]) == EXIT_DIMENSION


class TestCompare:
    def test_scenario_mismatch(self, tmp_path, config_path):
        raw = tiny_config(algorithm="ddpg")
        raw["scenario"]["num_cpus"] = 5
        other = write_config(tmp_path / "other.yaml", raw)
        assert main(["compare", str(config_path), str(other), "--out", str(tmp_path / "c")]) == EXIT_SCENARIO_MISMATCH

    def test_needs_two_configs(self, tmp_path, config_path):
        assert main(["compare", str(config_path), "--out", str(tmp_path / "c")]) == EXIT_CONFIG

    def test_comparison_table_and_charts(self, tmp_path, config_path):
        pytest.importorskip("kaleido")
        ddpg = write_config(tmp_path / "ddpg.yaml", tiny_config(algorithm="ddpg"))
        out = tmp_path / "cmp"
        assert main(["compare", str(config_path), str(ddpg), "--out", str(out), "--seed", "0", "--seed", "1"]) == EXIT_OK
        table = pd.read_csv(out / "comparison.csv")
        assert table["rank"].tolist() == [1, 2]
        assert set(table["config"]) == {"td3:tiny", "ddpg:ddpg"}
        assert (out / "reward_network.svg").exists()
        assert (out / "latency_ms_slice0.svg").exists()


class TestRender:
    def test_malformed_metrics(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("step,episode\n1,2\n", encoding="utf-8")
        assert main(["render", "--csv", str(path)]) == EXIT_METRICS_FORMAT

    @pytest.mark.parametrize("window", ["0", "-3", "wide"])
    def test_window_must_be_positive(self, tmp_path, window):
        with pytest.raises(SystemExit) as excinfo:
            main(["render", "--csv", str(tmp_path / "m.csv"), "--window", window])
        assert excinfo.value.code == 2

    def test_compare_window_must_be_positive(self, tmp_path, config_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["compare", str(config_path), str(config_path), "--window", "0"])
        assert excinfo.value.code == 2

    def test_simulation_error_has_own_exit_code(self, tmp_path, monkeypatch):
        def fail(*args, **kwargs):
            raise DomainError("service rate must be positive")

        monkeypatch.setattr(slicing_cli, "render_curves", fail)
        assert main(["render", "--csv", str(tmp_path / "m.csv")]) == EXIT_SIMULATION

    def test_render_from_training_output(self, tmp_path, trained):
        pytest.importorskip("kaleido")
        out = tmp_path / "curve.svg"
        assert main(["render", "--csv", str(trained / "metrics.csv"), "--metric", "latency_ms",
                     "--slice", "0", "--window", "5", "--out", str(out)]) == EXIT_OK
        assert out.exists()


@pytest.mark.slow
class TestDirectionalOrdering:
    """Desk-scale TD3 vs DDPG; minutes of training per algorithm."""

    def test_td3_matches_or_beats_ddpg(self, tmp_path):
        summaries = {}
        for name in ("desk_scale.yaml", "desk_scale_ddpg.yaml"):
            config = slicing_cli.load_run_config(CONFIG_DIR / name, [f"run.output_dir={tmp_path / name}"])
            summaries[config.agent.algorithm] = slicing_cli.run_training(config)["aggregate"]
        assert summaries["td3"]["final_return"]["median"] >= summaries["ddpg"]["final_return"]["median"]
        for sid, stats in summaries["td3"]["slices"].items():
            ddpg_rate = summaries["ddpg"]["slices"][sid]["qos_violation_rate"]["median"]
            assert stats["qos_violation_rate"]["median"] <= ddpg_rate + 0.05
