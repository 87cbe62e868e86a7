"""
Tests for metrics loading, curve smoothing and SVG chart rendering
"""
import numpy as np
import pandas as pd
import pytest

from chart_renderer import (
    build_comparison_figure,
    build_curve_figure,
    load_metrics,
    render_curves,
    smooth_series,
)
from errors import MetricsFormatError
from metrics_recorder import AGGREGATE_SLICE_ID, METRICS_COLUMNS


def metrics_frame(seeds=(0, 1), steps=20):
    rows = []
    for seed in seeds:
        for step in range(steps):
            for slice_id in (0, 1, AGGREGATE_SLICE_ID):
                row = {c: 0 for c in METRICS_COLUMNS}
                row.update(step=step, seed=seed, slice_id=slice_id, reward=float(step + seed),
                           latency_ms=5.0 + slice_id)
                rows.append(row)
    return pd.DataFrame(rows, columns=METRICS_COLUMNS)


class TestSmoothing:
    def test_window_one_is_identity(self):
        values = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
        np.testing.assert_array_equal(smooth_series(values, 1).to_numpy(), values)

    def test_centered_window_with_partial_edges(self):
        smoothed = smooth_series([0.0, 3.0, 6.0, 9.0], 3).to_numpy()
        np.testing.assert_allclose(smoothed, [1.5, 3.0, 6.0, 7.5])

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            smooth_series([1.0], 0)


class TestLoadMetrics:
    def test_valid_file(self, tmp_path):
        path = tmp_path / "m.csv"
        metrics_frame().to_csv(path, index=False)
        df = load_metrics(path)
        assert list(df.columns) == METRICS_COLUMNS
        assert df["seed"].dtype == np.int64
        assert len(df) == 2 * 20 * 3

    def test_bad_value_reports_line(self, tmp_path):
        df = metrics_frame().astype({"latency_ms": object})
        df.loc[2, "latency_ms"] = "fast"
        path = tmp_path / "m.csv"
        df.to_csv(path, index=False)
        with pytest.raises(MetricsFormatError) as excinfo:
            load_metrics(path)
        assert excinfo.value.line == 4

    def test_missing_column(self, tmp_path):
        path = tmp_path / "m.csv"
        metrics_frame().drop(columns=["reward"]).to_csv(path, index=False)
        with pytest.raises(MetricsFormatError) as excinfo:
            load_metrics(path)
        assert excinfo.value.line == 1

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "m.csv"
        metrics_frame(steps=2).to_csv(path, index=False)
        with open(path, "a", encoding="utf-8") as f:
            f.write("1,2,3\n" + ",".join(["0"] * (len(METRICS_COLUMNS) + 2)) + "\n")
        with pytest.raises(MetricsFormatError):
            load_metrics(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(MetricsFormatError):
            load_metrics(path)


class TestFigures:
    def test_curve_has_one_line_per_seed_plus_median(self):
        fig = build_curve_figure(metrics_frame(seeds=(0, 1, 2)), "reward", AGGREGATE_SLICE_ID, window=5)
        assert len(fig.data) == 4
        assert fig.data[-1].name == "median"
        np.testing.assert_allclose(fig.data[-1].y, np.asarray(fig.data[1].y))

    def test_comparison_has_band_and_median_per_config(self):
        frames = {"td3:a": metrics_frame(), "ddpg:b": metrics_frame()}
        fig = build_comparison_figure(frames, "latency_ms", 0, window=3)
        assert len(fig.data) == 4
        assert fig.data[0].fill == "toself"
        assert fig.layout.yaxis.title.text == "latency ms (ms)"

    def test_unknown_metric(self):
        with pytest.raises(MetricsFormatError):
            build_curve_figure(metrics_frame(), "throughput")

    def test_render_writes_svg(self, tmp_path):
        pytest.importorskip("kaleido")
        path = tmp_path / "metrics.csv"
        metrics_frame().to_csv(path, index=False)
        out = render_curves(path, smoothing_window=3)
        assert out == tmp_path / "reward_network.svg"
        assert "<svg" in out.read_text(encoding="utf-8")
