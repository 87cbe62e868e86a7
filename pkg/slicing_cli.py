"""
Network Slicing RL Command Line
Train, evaluate and compare TD3/DDPG agents on the C-RAN slicing environment
"""
import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import pandas as pd

from chart_renderer import build_comparison_figure, render_curves, write_svg
from errors import (
    CheckpointError,
    ConfigError,
    DimensionMismatchError,
    MetricsFormatError,
    ScenarioMismatchError,
    SlicingError,
    TrainingError,
)
from metrics_recorder import (
    AGGREGATE_SLICE_ID,
    METRICS_SCHEMA_VERSION,
    MetricsRecorder,
    aggregate_seed_summaries,
    format_median_iqr,
    merge_metrics,
    rows_for_step,
    summarize_seed,
)
from replay_buffer import ReplayBuffer
from run_config import RunConfig, ScenarioConfig, config_to_dict, load_run_config, scenario_from_dict
from slicing_env import SlicingEnv
from td3_agent import TD3Agent, network_inventory
from trainer import Trainer, check_action_bounds

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_DIVERGED = 5
EXIT_CHECKPOINT = 6
EXIT_DIMENSION = 7
EXIT_SCENARIO_MISMATCH = 8
EXIT_METRICS_FORMAT = 9
EXIT_SIMULATION = 10

COMPARE_METRICS = ("admission_rate", "latency_ms", "qos_violation_flag", "energy_j", "cpu_utilization")


def write_json(data: Dict[str, Any], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


class ResumePoint(NamedTuple):
    path: Path
    agent: TD3Agent
    meta: Dict[str, Any]


def buffer_path(checkpoint: Path) -> Path:
    """Replay buffer sidecar written next to a checkpoint."""
    return checkpoint.with_suffix(".buffer.npz")


def save_checkpoint(path: Path, trainer: Trainer, step: int, scenario: ScenarioConfig,
                    save_buffer: bool) -> None:
    trainer.agent.save(path, step, scenario, trainer.get_state())
    if save_buffer:
        trainer.buffer.save(buffer_path(path))


def load_resume_point(checkpoint: Path, config: RunConfig) -> ResumePoint:
    """Load a training checkpoint and check it belongs to this configuration."""
    agent, meta = TD3Agent.load(checkpoint)
    if meta.get("scenario") is None or meta["scenario"] != config_to_dict(config.scenario):
        raise ScenarioMismatchError(f"{checkpoint} was not trained on the configured scenario")
    expected = dataclasses.replace(config.agent, max_timesteps=agent.config.max_timesteps)
    if agent.config != expected:
        raise ConfigError("agent", f"{checkpoint} was trained with different agent settings")
    if meta["training_step"] > config.agent.max_timesteps:
        raise ConfigError("agent.max_timesteps",
                          f"checkpoint is at step {meta['training_step']}, beyond {config.agent.max_timesteps}")
    return ResumePoint(checkpoint, agent, meta)


def train_seed(config: RunConfig, seed: int, seed_dir: Path,
               resume: Optional[ResumePoint] = None) -> Dict[str, Any]:
    """Full training run for one seed, or its continuation from a checkpoint; returns its summary."""
    scenario, agent_cfg = config.scenario, config.agent
    env = SlicingEnv(scenario)
    start, buffer, trainer_state = 0, None, None
    if resume is None:
        agent = TD3Agent(scenario.observation_dim, scenario.action_dim, agent_cfg, seed=seed)
    else:
        agent, start, trainer_state = resume.agent, resume.meta["training_step"], resume.meta["trainer"]
        sidecar = buffer_path(resume.path)
        if trainer_state is not None and sidecar.exists():
            buffer = ReplayBuffer.load(sidecar)
        else:
            trainer_state = None
            logger.warning(f"{resume.path} has no saved trainer state and replay buffer; continuing from "
                           f"a fresh buffer with {agent_cfg.start_timesteps} warm-up steps")
    if buffer is None:
        buffer = ReplayBuffer(scenario.observation_dim, scenario.action_dim,
                              capacity=min(agent_cfg.buffer_capacity, max(agent_cfg.max_timesteps, 1)))
    trainer = Trainer(env, agent, buffer, seed)
    if trainer_state is not None:
        trainer.set_state(trainer_state)
    elif start > 0:
        trainer.warmup_end = start + agent_cfg.start_timesteps
    recorder = MetricsRecorder(seed_dir / "metrics.csv", config.flush_interval,
                               resume_step=start if resume is not None else None)
    logger.info(f"Training {agent_cfg.algorithm} seed {seed} from step {start} to "
                f"{agent_cfg.max_timesteps} -> {seed_dir}")

    t = start
    try:
        for t in range(start, agent_cfg.max_timesteps):
            metrics = trainer.train_step(t)
            recorder.record(rows_for_step(t, metrics.episode, seed, scenario, metrics.result))
            if config.checkpoint_interval and (t + 1) % config.checkpoint_interval == 0:
                recorder.flush()
                save_checkpoint(seed_dir / f"checkpoint_{t + 1}.json", trainer, t + 1, scenario,
                                config.save_buffer)
    except TrainingError as e:
        recorder.close()
        # the failed step is half applied, so no trainer state is stored for resuming
        agent.save(seed_dir / "checkpoint_failure.json", t, scenario)
        logger.error(f"seed {seed} diverged at step {t}: {e} {e.diagnostics}")
        raise
    recorder.close()
    save_checkpoint(seed_dir / "checkpoint.json", trainer, agent_cfg.max_timesteps, scenario, config.save_buffer)

    df = pd.read_csv(recorder.path)
    summary = summarize_seed(df, scenario.episode_length)
    summary["seed"] = seed
    summary["actor_updates"] = agent.params.actor_opt.step
    summary["critic_updates"] = agent.total_updates
    return summary


def run_training(config: RunConfig, resume: Optional[Path] = None) -> Dict[str, Any]:
    """Train every seed (optionally in parallel) and write merged metrics plus summary."""
    resume_points: Dict[int, ResumePoint] = {}
    if resume is not None:
        point = load_resume_point(Path(resume), config)
        if list(config.seeds) != [point.agent.seed]:
            logger.info(f"Resuming seed {point.agent.seed} from {resume}; configured seeds are ignored")
        config = dataclasses.replace(config, seeds=(point.agent.seed,))
        resume_points[point.agent.seed] = point
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_dirs = {seed: out_dir / f"seed_{seed}" for seed in config.seeds}

    if config.workers > 1 and len(config.seeds) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            futures = {seed: executor.submit(train_seed, config, seed, seed_dirs[seed], resume_points.get(seed))
                       for seed in config.seeds}
            summaries = {seed: future.result() for seed, future in futures.items()}
    else:
        summaries = {seed: train_seed(config, seed, seed_dirs[seed], resume_points.get(seed))
                     for seed in config.seeds}

    merge_metrics([seed_dirs[s] / "metrics.csv" for s in sorted(config.seeds)], out_dir / "metrics.csv")
    summary = {
        "metrics_schema_version": METRICS_SCHEMA_VERSION,
        "algorithm": config.agent.algorithm,
        "networks": network_inventory(config.agent),
        "config": config_to_dict(config),
        "per_seed": {str(s): summaries[s] for s in sorted(summaries)},
        "aggregate": aggregate_seed_summaries(summaries),
    }
    write_json(summary, out_dir / "summary.json")
    final = summary["aggregate"]["final_return"]
    logger.info(f"Training finished: median final return {final['median']} over seeds {sorted(summaries)}")
    return summary


def evaluate_checkpoint(checkpoint: Path, episodes: int, seed: int, out_dir: Path,
                        config: Optional[RunConfig] = None) -> Dict[str, Any]:
    """Run the noise-free policy for a number of episodes and write its metrics."""
    agent, meta = TD3Agent.load(checkpoint)
    if config is not None:
        scenario = config.scenario
    elif meta.get("scenario"):
        scenario = scenario_from_dict(meta["scenario"])
    else:
        raise ConfigError("scenario", "checkpoint carries no scenario; pass --config")
    if (scenario.observation_dim, scenario.action_dim) != (agent.state_dim, agent.action_dim):
        raise DimensionMismatchError(
            f"checkpoint expects state/action dims ({agent.state_dim}, {agent.action_dim}), "
            f"scenario provides ({scenario.observation_dim}, {scenario.action_dim})")

    env = SlicingEnv(scenario)
    check_action_bounds(agent, env)
    out_dir.mkdir(parents=True, exist_ok=True)
    recorder = MetricsRecorder(out_dir / "eval_metrics.csv",
                               config.flush_interval if config is not None else 1000)
    returns: List[float] = []
    t = 0
    for episode in range(episodes):
        obs = env.reset(seed=seed + episode)
        done, total = False, 0.0
        while not done:
            result = env.step(agent.select_action(obs, explore=False))
            recorder.record(rows_for_step(t, episode, seed, scenario, result))
            obs, done = result.observation, result.done
            total += result.reward
            t += 1
        returns.append(total)
        logger.info(f"evaluation episode {episode}: return {total:.3f}")
    recorder.close()

    if episodes == 0:
        logger.warning("evaluation ran zero episodes; metrics file holds only the header")
        summary: Dict[str, Any] = {"episodes": 0, "episode_returns": [], "final_return": None}
    else:
        df = pd.read_csv(recorder.path)
        summary = summarize_seed(df, scenario.episode_length, final_fraction=1.0)
        summary["episode_returns"] = returns
    summary["checkpoint"] = str(checkpoint)
    summary["seed"] = seed
    summary["metrics_schema_version"] = METRICS_SCHEMA_VERSION
    write_json(summary, out_dir / "eval_summary.json")
    return summary


def _labels(configs: Sequence[RunConfig], paths: Sequence[str]) -> List[str]:
    labels, seen = [], {}
    for config, path in zip(configs, paths):
        label = f"{config.agent.algorithm}:{Path(path).stem}"
        seen[label] = seen.get(label, 0) + 1
        labels.append(label if seen[label] == 1 else f"{label}#{seen[label]}")
    return labels


def comparison_table(summaries: Dict[str, Dict[str, Any]]) -> pd.DataFrame:
    """One row per configuration, ranked by median final return."""
    rows = []
    for label, summary in summaries.items():
        agg = summary["aggregate"]
        row = {"config": label, "seeds": len(agg["seeds"]),
               "median_final_return": agg["final_return"]["median"],
               "final_return": format_median_iqr(agg["final_return"])}
        for sid, stats in agg["slices"].items():
            for key, stat in stats.items():
                row[f"s{sid}_{key}"] = format_median_iqr(stat)
        rows.append(row)
    table = pd.DataFrame(rows)
    table = table.sort_values("median_final_return", ascending=False, kind="mergesort", na_position="last")
    table.insert(0, "rank", range(1, len(table) + 1))
    return table.reset_index(drop=True)


def run_comparison(config_paths: Sequence[str], out_dir: Path, overrides: Sequence[str] = (),
                   window: Optional[int] = None) -> pd.DataFrame:
    """Train every configuration, then tabulate and chart them side by side."""
    if len(config_paths) < 2:
        raise ConfigError("compare", "needs at least two configuration files")
    configs = [load_run_config(p, overrides) for p in config_paths]
    reference = config_to_dict(configs[0].scenario)
    for path, config in zip(config_paths[1:], configs[1:]):
        if config_to_dict(config.scenario) != reference:
            raise ScenarioMismatchError(f"{path} does not share the scenario of {config_paths[0]}")

    labels = _labels(configs, config_paths)
    summaries, frames = {}, {}
    for label, config in zip(labels, configs):
        run_dir = out_dir / label.replace(":", "_").replace("#", "_")
        config = dataclasses.replace(config, output_dir=str(run_dir))
        summaries[label] = run_training(config)
        frames[label] = pd.read_csv(run_dir / "metrics.csv")

    table = comparison_table(summaries)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "comparison.csv", index=False, encoding="utf-8", lineterminator="\n")
    print(table.drop(columns=["median_final_return"]).to_string(index=False))

    window = window or configs[0].smoothing_window
    write_svg(build_comparison_figure(frames, "reward", AGGREGATE_SLICE_ID, window), out_dir / "reward_network.svg")
    for metric in COMPARE_METRICS:
        for spec in configs[0].scenario.slices:
            fig = build_comparison_figure(frames, metric, spec.slice_id, window)
            write_svg(fig, out_dir / f"{metric}_slice{spec.slice_id}.svg")
    for metric in ("latency_ms", "energy_j"):
        write_svg(build_comparison_figure(frames, metric, AGGREGATE_SLICE_ID, window),
                  out_dir / f"{metric}_network.svg")
    return table


def _seed_override(seeds: Optional[Sequence[int]]) -> List[str]:
    return [f"run.seeds=[{', '.join(str(s) for s in seeds)}]"] if seeds else []


def cmd_train(args) -> int:
    overrides = list(args.override or []) + _seed_override(args.seed)
    if args.algorithm:
        overrides.append(f"agent.algorithm={args.algorithm}")
    config = load_run_config(args.config, overrides)
    if args.out:
        config = dataclasses.replace(config, output_dir=args.out)
    run_training(config, Path(args.resume) if args.resume else None)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = load_run_config(args.config, args.override or []) if args.config else None
    seed = args.seed[0] if args.seed else 0
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent / "evaluation"
    summary = evaluate_checkpoint(Path(args.checkpoint), args.episodes, seed, out_dir, config)
    logger.info(f"Evaluation summary written to {out_dir / 'eval_summary.json'} "
                f"(final return {summary.get('final_return')})")
    return EXIT_OK


def cmd_compare(args) -> int:
    overrides = list(args.override or []) + _seed_override(args.seed)
    run_comparison(args.configs, Path(args.out or "runs/compare"), overrides, args.window)
    return EXIT_OK


def cmd_render(args) -> int:
    render_curves(args.csv, args.window, args.metric, args.slice, args.out)
    return EXIT_OK


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicing_cli", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_algorithm=True):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dot-path override, e.g. agent.batch_size=64 (repeatable)")
        if with_algorithm:
            p.add_argument("--algorithm", choices=("td3", "ddpg"))

    train = sub.add_parser("train", help="train agents for every configured seed")
    common(train)
    train.add_argument("--resume", metavar="CHECKPOINT",
                       help="continue a seed from a checkpoint written by an earlier train run")
    train.set_defaults(func=cmd_train)

    evaluate = sub.add_parser("evaluate", help="run a checkpoint's greedy policy")
    common(evaluate, with_algorithm=False)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--episodes", type=_non_negative_int, default=10)
    evaluate.set_defaults(func=cmd_evaluate)

    compare = sub.add_parser("compare", help="train several configurations and compare them")
    compare.add_argument("configs", nargs="+", help="two or more YAML configurations")
    compare.add_argument("--seed", type=int, action="append")
    compare.add_argument("--out")
    compare.add_argument("--override", action="append", metavar="KEY=VALUE")
    compare.add_argument("--window", type=_positive_int, help="smoothing window (steps)")
    compare.set_defaults(func=cmd_compare)

    render = sub.add_parser("render", help="render learning curves from a metrics CSV")
    render.add_argument("--csv", required=True)
    render.add_argument("--metric", default="reward")
    render.add_argument("--slice", type=int, default=AGGREGATE_SLICE_ID, help="slice id, -1 for network")
    render.add_argument("--window", type=_positive_int, default=100)
    render.add_argument("--out")
    render.set_defaults(func=cmd_render)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command == "train" and not args.config:
        parser.error("train needs --config")
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except TrainingError as e:
        logger.error(f"Training diverged: {e}")
        return EXIT_DIVERGED
    except CheckpointError as e:
        logger.error(f"Checkpoint error: {e}")
        return EXIT_CHECKPOINT
    except DimensionMismatchError as e:
        logger.error(f"Dimension mismatch: {e}")
        return EXIT_DIMENSION
    except ScenarioMismatchError as e:
        logger.error(f"Scenario mismatch: {e}")
        return EXIT_SCENARIO_MISMATCH
    except MetricsFormatError as e:
        logger.error(f"Malformed metrics file: {e}")
        return EXIT_METRICS_FORMAT
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except SlicingError as e:
        logger.error(f"Simulation error: {type(e).__name__}: {e}")
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
