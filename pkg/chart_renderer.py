"""
Learning Curve Charts
Smoothed per-seed curves and configuration comparisons rendered as SVG with Plotly
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from errors import MetricsFormatError
from metrics_recorder import AGGREGATE_SLICE_ID, METRIC_UNITS, METRICS_COLUMNS

logger = logging.getLogger(__name__)

COLORS = ['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd', '#8c564b', '#e377c2', '#7f7f7f']
INTEGER_COLUMNS = ("step", "episode", "seed", "slice_id")


def smooth_series(values: Union[pd.Series, np.ndarray], window: int) -> pd.Series:
    """Centered moving average; edges average over the part of the window that exists."""
    if window < 1:
        raise ValueError(f"smoothing window must be >= 1, got {window}")
    series = pd.Series(values, dtype=np.float64).reset_index(drop=True)
    return series.rolling(window=window, center=True, min_periods=1).mean()


def load_metrics(csv_path: Union[str, Path]) -> pd.DataFrame:
    """Read a metrics CSV and check it against the schema; errors name the offending line."""
    try:
        df = pd.read_csv(csv_path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise MetricsFormatError(1, "file is empty")
    except pd.errors.ParserError as e:
        line = _line_from_parser_error(str(e))
        raise MetricsFormatError(line, f"cannot parse CSV: {e}")
    missing = [c for c in METRICS_COLUMNS if c not in df.columns]
    if missing:
        raise MetricsFormatError(1, f"missing columns {missing}")
    out = pd.DataFrame(index=df.index)
    for column in METRICS_COLUMNS:
        numeric = pd.to_numeric(df[column], errors="coerce")
        bad = numeric.isna() | ~np.isfinite(numeric.fillna(0.0))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            # header is line 1, first data row is line 2
            raise MetricsFormatError(row + 2, f"column {column!r} has non-numeric value {df[column].iloc[row]!r}")
        out[column] = numeric.astype(np.int64) if column in INTEGER_COLUMNS else numeric.astype(np.float64)
    return out


def _line_from_parser_error(message: str) -> int:
    # pandas reports e.g. "Expected 16 fields in line 7, saw 17"
    marker = "line "
    if marker in message:
        digits = ""
        for ch in message.split(marker, 1)[1]:
            if not ch.isdigit():
                break
            digits += ch
        if digits:
            return int(digits)
    return 0


def axis_title(metric: str) -> str:
    unit = METRIC_UNITS.get(metric, "")
    label = metric.replace("_", " ")
    return f"{label} ({unit})" if unit else label


def _per_seed_curves(df: pd.DataFrame, metric: str, slice_id: int, window: int) -> pd.DataFrame:
    """Smoothed metric indexed by step, one column per seed."""
    rows = df[df["slice_id"] == slice_id]
    if metric not in rows.columns:
        raise MetricsFormatError(1, f"unknown metric {metric!r}")
    curves = {}
    for seed, seed_rows in rows.groupby("seed"):
        seed_rows = seed_rows.sort_values("step", kind="mergesort")
        curves[int(seed)] = pd.Series(smooth_series(seed_rows[metric], window).to_numpy(),
                                      index=seed_rows["step"].to_numpy())
    return pd.DataFrame(curves)


def build_curve_figure(df: pd.DataFrame, metric: str = "reward", slice_id: int = AGGREGATE_SLICE_ID,
                       window: int = 100, title: Optional[str] = None) -> go.Figure:
    """One thin polyline per seed plus the median across seeds."""
    curves = _per_seed_curves(df, metric, slice_id, window)
    fig = go.Figure()
    for i, seed in enumerate(curves.columns):
        fig.add_trace(go.Scatter(
            x=curves.index, y=curves[seed], mode="lines", name=f"seed {seed}",
            line=dict(color=COLORS[i % len(COLORS)], width=1), opacity=0.5,
        ))
    if len(curves.columns):
        fig.add_trace(go.Scatter(
            x=curves.index, y=curves.median(axis=1), mode="lines", name="median",
            line=dict(color="#000000", width=2),
        ))
    scope = "network" if slice_id == AGGREGATE_SLICE_ID else f"slice {slice_id}"
    fig.update_layout(
        title=title or f"{axis_title(metric)} - {scope}",
        xaxis_title="step",
        yaxis_title=axis_title(metric),
        width=900,
        height=500,
    )
    return fig


def build_comparison_figure(frames: Dict[str, pd.DataFrame], metric: str,
                            slice_id: int = AGGREGATE_SLICE_ID, window: int = 100) -> go.Figure:
    """Median line per configuration with a min-max band across its seeds."""
    fig = go.Figure()
    for i, (label, df) in enumerate(frames.items()):
        curves = _per_seed_curves(df, metric, slice_id, window)
        if curves.empty:
            continue
        color = COLORS[i % len(COLORS)]
        x = curves.index.to_numpy()
        low, high = curves.min(axis=1).to_numpy(), curves.max(axis=1).to_numpy()
        fig.add_trace(go.Scatter(
            x=np.concatenate([x, x[::-1]]), y=np.concatenate([high, low[::-1]]),
            fill="toself", fillcolor=color, opacity=0.2, line=dict(width=0),
            name=f"{label} seed range", legendgroup=label, showlegend=False,
        ))
        fig.add_trace(go.Scatter(
            x=x, y=curves.median(axis=1), mode="lines", name=label,
            line=dict(color=color, width=2), legendgroup=label,
        ))
    scope = "network" if slice_id == AGGREGATE_SLICE_ID else f"slice {slice_id}"
    fig.update_layout(
        title=f"{axis_title(metric)} - {scope}",
        xaxis_title="step",
        yaxis_title=axis_title(metric),
        width=900,
        height=500,
    )
    return fig


def write_svg(fig: go.Figure, out_path: Union[str, Path]) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_image(str(out_path), format="svg")
    logger.info(f"Chart written to {out_path}")
    return out_path


def render_curves(csv_path: Union[str, Path], smoothing_window: int = 100, metric: str = "reward",
                  slice_id: int = AGGREGATE_SLICE_ID, out_path: Optional[Union[str, Path]] = None) -> Path:
    """Render one metric of a metrics CSV as an SVG learning-curve chart."""
    df = load_metrics(csv_path)
    fig = build_curve_figure(df, metric, slice_id, smoothing_window)
    if out_path is None:
        scope = "network" if slice_id == AGGREGATE_SLICE_ID else f"slice{slice_id}"
        out_path = Path(csv_path).with_name(f"{metric}_{scope}.svg")
    return write_svg(fig, out_path)
