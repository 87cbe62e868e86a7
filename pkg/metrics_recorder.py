"""
Metrics Recorder
Per-slice step metrics streamed to CSV, and run summaries built from them
"""
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from run_config import ScenarioConfig
from slicing_env import StepResult

logger = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
METRICS_COLUMNS = [
    "step", "episode", "seed", "slice_id", "arrived", "admitted", "admission_rate",
    "latency_ms", "qos_violation_flag", "energy_j", "cpu_alloc", "cpu_used",
    "cpu_utilization", "vnf_count", "reward", "cost_total",
]
AGGREGATE_SLICE_ID = -1
FINAL_FRACTION = 0.2

# Metrics shown in comparison tables and curves, with display units.
METRIC_UNITS = {
    "reward": "",
    "cost_total": "",
    "admission_rate": "fraction",
    "latency_ms": "ms",
    "qos_violation_flag": "fraction of steps",
    "energy_j": "J",
    "cpu_utilization": "fraction",
    "cpu_alloc": "MOPTS",
    "vnf_count": "VNFs",
}


def _admission_rate(admitted: int, arrived: int) -> float:
    # a step without arrivals rejected nobody
    return admitted / arrived if arrived > 0 else 1.0


def rows_for_step(step: int, episode: int, seed: int, scenario: ScenarioConfig,
                  result: StepResult) -> List[Dict[str, Any]]:
    """One row per slice, followed by the network-wide aggregate row."""
    info = result.info
    rows = []
    for i, spec in enumerate(scenario.slices):
        arrived = int(info["arrived"][i])
        admitted = int(info["admitted"][i])
        rows.append({
            "step": step,
            "episode": episode,
            "seed": seed,
            "slice_id": spec.slice_id,
            "arrived": arrived,
            "admitted": admitted,
            "admission_rate": _admission_rate(admitted, arrived),
            "latency_ms": float(info["l_net"][i]),
            "qos_violation_flag": int(bool(info["qos_violated"][i])),
            "energy_j": float(info["e_net"][i]),
            "cpu_alloc": float(info["cpu_alloc"][i]),
            "cpu_used": float(info["cpu_used"][i]),
            "cpu_utilization": float(info["cpu_utilization"][i]),
            "vnf_count": int(info["vnf_count"][i]),
            "reward": float(result.reward),
            "cost_total": float(info["n_t"]),
        })

    active = np.asarray(info["active_ues"], dtype=np.float64)
    latency = np.asarray(info["l_net"], dtype=np.float64)
    if active.sum() > 0:
        network_latency = float(np.dot(active, latency) / active.sum())
    else:
        network_latency = float(latency.mean())
    arrived_total = int(np.sum(info["arrived"]))
    admitted_total = int(np.sum(info["admitted"]))
    alloc_total = float(np.sum(info["cpu_alloc"]))
    used_total = float(np.sum(info["cpu_used"]))
    rows.append({
        "step": step,
        "episode": episode,
        "seed": seed,
        "slice_id": AGGREGATE_SLICE_ID,
        "arrived": arrived_total,
        "admitted": admitted_total,
        "admission_rate": _admission_rate(admitted_total, arrived_total),
        "latency_ms": network_latency,
        "qos_violation_flag": int(bool(np.any(info["qos_violated"]))),
        "energy_j": float(np.sum(info["e_net"])),
        "cpu_alloc": alloc_total,
        "cpu_used": used_total,
        "cpu_utilization": used_total / alloc_total if alloc_total > 0 else 0.0,
        "vnf_count": int(np.sum(info["vnf_count"])),
        "reward": float(result.reward),
        "cost_total": float(info["n_t"]),
    })
    return rows


def write_metrics(df: pd.DataFrame, path: Union[str, Path], header: bool = True, mode: str = "w") -> None:
    df.to_csv(path, columns=METRICS_COLUMNS, index=False, header=header, mode=mode,
              encoding="utf-8", lineterminator="\n")


class MetricsRecorder:
    """Buffers rows and appends them to the CSV every ``flush_interval`` steps."""

    def __init__(self, path: Union[str, Path], flush_interval: int = 1000, resume_step: Optional[int] = None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.flush_interval = flush_interval
        self._pending: List[Dict[str, Any]] = []
        self._steps = 0
        self.rows_written = 0
        if resume_step is not None and self.path.exists():
            self._keep_rows_before(resume_step)
        else:
            write_metrics(pd.DataFrame(columns=METRICS_COLUMNS), self.path)

    def _keep_rows_before(self, step: int) -> None:
        """Drop rows at or after ``step`` from an existing file, leaving the kept text untouched."""
        with open(self.path, "r", encoding="utf-8", newline="") as f:
            lines = f.readlines()
        header = ",".join(METRICS_COLUMNS) + "\n"
        if not lines or lines[0] != header:
            logger.warning(f"{self.path} does not start with the metrics header; starting it afresh")
            lines = [header]
        kept = [line for line in lines[1:] if line.strip() and int(line.split(",", 1)[0]) < step]
        with open(self.path, "w", encoding="utf-8", newline="") as f:
            f.writelines([header] + kept)
        self.rows_written = len(kept)
        logger.info(f"Resuming {self.path} at step {step}: kept {len(kept)} earlier rows")

    def record(self, rows: Sequence[Dict[str, Any]]) -> None:
        self._pending.extend(rows)
        self._steps += 1
        if self._steps % self.flush_interval == 0:
            self.flush()

    def flush(self) -> None:
        if not self._pending:
            return
        frame = pd.DataFrame(self._pending, columns=METRICS_COLUMNS)
        write_metrics(frame, self.path, header=False, mode="a")
        self.rows_written += len(self._pending)
        logger.debug(f"Flushed {len(self._pending)} metric rows to {self.path}")
        self._pending = []

    def close(self) -> None:
        self.flush()


def merge_metrics(paths: Sequence[Union[str, Path]], out_path: Union[str, Path]) -> pd.DataFrame:
    """Concatenate per-seed files ordered by (seed, step), keeping in-step row order."""
    frames = [pd.read_csv(p) for p in paths]
    merged = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=METRICS_COLUMNS)
    merged = merged.sort_values(["seed", "step"], kind="mergesort").reset_index(drop=True)
    write_metrics(merged, out_path)
    return merged


def episode_returns(df: pd.DataFrame, episode_length: Optional[int] = None) -> pd.Series:
    """Summed reward per episode; with ``episode_length`` only complete episodes are kept."""
    agg = df[df["slice_id"] == AGGREGATE_SLICE_ID]
    grouped = agg.groupby("episode")["reward"]
    returns = grouped.sum()
    if episode_length is not None:
        returns = returns[grouped.count() == episode_length]
    return returns


def summarize_seed(df: pd.DataFrame, episode_length: int,
                   final_fraction: float = FINAL_FRACTION) -> Dict[str, Any]:
    """Final-window statistics of one seed's metrics table."""
    agg = df[df["slice_id"] == AGGREGATE_SLICE_ID].sort_values("step", kind="mergesort")
    if agg.empty:
        return {"final_return": None, "episodes": 0, "steps": 0, "slices": {}, "network": {}}
    steps = agg["step"].to_numpy()
    final_count = max(1, int(round(len(steps) * final_fraction)))
    window_steps = set(steps[len(steps) - final_count:].tolist())
    window = df[df["step"].isin(window_steps)]
    window_agg = window[window["slice_id"] == AGGREGATE_SLICE_ID]

    returns = episode_returns(df, episode_length)
    final_episodes = set(window_agg["episode"].unique().tolist())
    final_returns = returns[returns.index.isin(final_episodes)]
    if len(final_returns):
        final_return = float(final_returns.median())
    else:
        final_return = float(window_agg["reward"].mean() * episode_length)

    slices = {}
    for slice_id, rows in window[window["slice_id"] != AGGREGATE_SLICE_ID].groupby("slice_id"):
        slices[int(slice_id)] = {
            "admission_rate": _admission_rate(int(rows["admitted"].sum()), int(rows["arrived"].sum())),
            "qos_violation_rate": float(rows["qos_violation_flag"].mean()),
            "latency_ms": float(rows["latency_ms"].mean()),
            "energy_j": float(rows["energy_j"].mean()),
            "cpu_utilization": float(rows["cpu_utilization"].mean()),
        }
    return {
        "final_return": final_return,
        "episodes": int(len(returns)),
        "episode_returns": [float(r) for r in returns.tolist()],
        "steps": int(len(steps)),
        "slices": slices,
        "network": {
            "latency_ms": float(window_agg["latency_ms"].mean()),
            "energy_j": float(window_agg["energy_j"].mean()),
            "qos_violation_rate": float(window_agg["qos_violation_flag"].mean()),
            "mean_reward": float(window_agg["reward"].mean()),
        },
    }


def median_iqr(values: Sequence[float]) -> Dict[str, Optional[float]]:
    """Median and interquartile range; the IQR is undefined for a single value."""
    clean = [v for v in values if v is not None and math.isfinite(v)]
    if not clean:
        return {"median": None, "iqr": None}
    arr = np.asarray(clean, dtype=np.float64)
    iqr = float(np.percentile(arr, 75) - np.percentile(arr, 25)) if arr.size > 1 else None
    return {"median": float(np.median(arr)), "iqr": iqr}


def aggregate_seed_summaries(summaries: Dict[int, Dict[str, Any]]) -> Dict[str, Any]:
    """Median/IQR across seeds of every final-window statistic."""
    seeds = sorted(summaries)
    result: Dict[str, Any] = {
        "seeds": seeds,
        "final_return": median_iqr([summaries[s]["final_return"] for s in seeds]),
        "slices": {},
    }
    slice_ids = sorted({sid for s in seeds for sid in summaries[s]["slices"]})
    for sid in slice_ids:
        stats = {}
        for key in ("admission_rate", "qos_violation_rate", "latency_ms", "energy_j", "cpu_utilization"):
            stats[key] = median_iqr([summaries[s]["slices"][sid][key] for s in seeds
                                     if sid in summaries[s]["slices"]])
        result["slices"][sid] = stats
    return result


def format_median_iqr(stat: Dict[str, Optional[float]], digits: int = 4) -> str:
    if stat["median"] is None:
        return "n/a"
    iqr = "n/a" if stat["iqr"] is None else f"{stat['iqr']:.{digits}g}"
    return f"{stat['median']:.{digits}g} ± {iqr}"
