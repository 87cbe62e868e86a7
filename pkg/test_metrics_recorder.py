"""
Tests for metric rows, CSV streaming and run summaries
"""
import numpy as np
import pandas as pd
import pytest

from metrics_recorder import (
    AGGREGATE_SLICE_ID,
    METRICS_COLUMNS,
    MetricsRecorder,
    aggregate_seed_summaries,
    episode_returns,
    format_median_iqr,
    median_iqr,
    merge_metrics,
    rows_for_step,
    summarize_seed,
)
from run_config import ScenarioConfig
from slicing_env import SlicingEnv, StepResult


def fake_result(arrived=(2, 0), admitted=(1, 0), active=(3, 1), latency=(10.0, 30.0), reward=0.5):
    info = {
        "arrived": np.array(arrived),
        "admitted": np.array(admitted),
        "active_ues": np.array(active),
        "l_net": np.array(latency),
        "e_net": np.array([4.0, 6.0]),
        "qos_violated": np.array([False, False]),
        "cpu_alloc": np.array([1000.0, 1000.0]),
        "cpu_used": np.array([500.0, 250.0]),
        "cpu_utilization": np.array([0.5, 0.25]),
        "vnf_count": np.array([4, 4]),
        "n_t": 2.0,
    }
    return StepResult(np.zeros(12), reward, False, info)


def table(seed=0, steps=10, episode_length=5):
    rows = []
    for step in range(steps):
        result = fake_result(reward=float(step))
        rows.extend(rows_for_step(step, step // episode_length, seed, ScenarioConfig(), result))
    return pd.DataFrame(rows, columns=METRICS_COLUMNS)


class TestRows:
    def test_one_row_per_slice_plus_aggregate(self):
        rows = rows_for_step(0, 0, 7, ScenarioConfig(), fake_result())
        assert [r["slice_id"] for r in rows] == [0, 1, AGGREGATE_SLICE_ID]
        assert all(list(r) == METRICS_COLUMNS for r in rows)

    def test_aggregate_latency_is_ue_weighted(self):
        network = rows_for_step(0, 0, 0, ScenarioConfig(), fake_result())[-1]
        assert network["latency_ms"] == pytest.approx((3 * 10.0 + 1 * 30.0) / 4)
        assert network["energy_j"] == 10.0
        assert network["cpu_utilization"] == pytest.approx(750.0 / 2000.0)

    def test_no_arrivals_counts_as_full_admission(self):
        rows = rows_for_step(0, 0, 0, ScenarioConfig(), fake_result())
        assert rows[0]["admission_rate"] == 0.5
        assert rows[1]["admission_rate"] == 1.0

    def test_rows_from_a_real_step(self):
        scenario = ScenarioConfig()
        env = SlicingEnv(scenario)
        env.reset(seed=0)
        rows = rows_for_step(0, 0, 0, scenario, env.step(np.zeros(2)))
        assert len(rows) == scenario.num_slices + 1


class TestRecorder:
    def test_header_then_flushed_rows(self, tmp_path):
        path = tmp_path / "m.csv"
        recorder = MetricsRecorder(path, flush_interval=2)
        assert path.read_text(encoding="utf-8") == ",".join(METRICS_COLUMNS) + "\n"
        rows = rows_for_step(0, 0, 0, ScenarioConfig(), fake_result())
        recorder.record(rows)
        assert recorder.rows_written == 0
        recorder.record(rows)
        assert recorder.rows_written == 6
        recorder.record(rows)
        recorder.close()
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert len(pd.read_csv(path)) == 9

    def test_merge_orders_by_seed_and_step(self, tmp_path):
        table(seed=2, steps=3).to_csv(tmp_path / "b.csv", index=False)
        table(seed=1, steps=3).to_csv(tmp_path / "a.csv", index=False)
        merged = merge_metrics([tmp_path / "b.csv", tmp_path / "a.csv"], tmp_path / "all.csv")
        assert merged["seed"].tolist() == [1] * 9 + [2] * 9
        assert merged["slice_id"].tolist()[:3] == [0, 1, AGGREGATE_SLICE_ID]
        assert (tmp_path / "all.csv").exists()


class TestSummaries:
    def test_episode_returns_keep_complete_episodes(self):
        df = table(steps=12, episode_length=5)
        returns = episode_returns(df, episode_length=5)
        assert returns.tolist() == [0 + 1 + 2 + 3 + 4, 5 + 6 + 7 + 8 + 9]

    def test_final_window(self):
        summary = summarize_seed(table(steps=10, episode_length=5), episode_length=5)
        assert summary["steps"] == 10
        assert summary["final_return"] == 35.0
        assert summary["network"]["mean_reward"] == pytest.approx(8.5)
        assert summary["slices"][1]["admission_rate"] == 1.0

    def test_median_iqr(self):
        assert median_iqr([1.0, 2.0, 3.0, 4.0, 5.0]) == {"median": 3.0, "iqr": 2.0}
        assert median_iqr([4.0]) == {"median": 4.0, "iqr": None}
        assert median_iqr([]) == {"median": None, "iqr": None}

    def test_format(self):
        assert format_median_iqr({"median": None, "iqr": None}) == "n/a"
        assert format_median_iqr({"median": 4.0, "iqr": None}) == "4 ± n/a"

    def test_aggregate_across_seeds(self):
        summaries = {s: summarize_seed(table(seed=s, steps=10), 5) for s in (0, 1, 2)}
        aggregate = aggregate_seed_summaries(summaries)
        assert aggregate["seeds"] == [0, 1, 2]
        assert aggregate["final_return"]["median"] == 35.0
        assert aggregate["final_return"]["iqr"] == 0.0
        assert set(aggregate["slices"]) == {0, 1}
