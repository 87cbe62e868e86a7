"""
Training Loop
One outer-loop iteration of TD3/DDPG training against the slicing environment
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from errors import ConfigError
from replay_buffer import ReplayBuffer, Transition
from slicing_env import SlicingEnv, StepResult
from td3_agent import TD3Agent

logger = logging.getLogger(__name__)


@dataclass
class StepMetrics:
    step: int
    episode: int
    action: np.ndarray
    result: StepResult
    critic_loss: Optional[float] = None
    actor_updated: bool = False
    episode_return: Optional[float] = None   # set on the step that ends an episode


def check_action_bounds(agent: TD3Agent, env: SlicingEnv) -> None:
    """Policy and warm-up actions must live on the same scale as the environment's box."""
    low, high = env.action_space.low, env.action_space.high
    cfg = agent.config
    if not (np.all(low == cfg.min_action) and np.all(high == cfg.max_action)):
        raise ConfigError("agent.max_action",
                          f"agent bounds [{cfg.min_action}, {cfg.max_action}] differ from the "
                          f"environment action box [{low.min()}, {high.max()}]")


class Trainer:
    """Keeps the state that survives between iterations: observation and episode counters."""

    def __init__(self, env: SlicingEnv, agent: TD3Agent, buffer: ReplayBuffer, seed: int):
        check_action_bounds(agent, env)
        self.env = env
        self.agent = agent
        self.buffer = buffer
        self.seed = seed
        self.obs = env.reset(seed=seed)
        self.episode = 0
        self.episode_return = 0.0
        self.episode_steps = 0
        self.warmup_end = agent.config.start_timesteps

    def get_state(self) -> Dict[str, Any]:
        return {
            "episode": self.episode,
            "episode_return": self.episode_return,
            "episode_steps": self.episode_steps,
            "warmup_end": self.warmup_end,
            "env": self.env.get_state(),
        }

    def set_state(self, data: Dict[str, Any]) -> None:
        self.obs = self.env.set_state(data["env"])
        self.episode = int(data["episode"])
        self.episode_return = float(data["episode_return"])
        self.episode_steps = int(data["episode_steps"])
        self.warmup_end = int(data["warmup_end"])

    def train_step(self, t: int) -> StepMetrics:
        cfg = self.agent.config
        warming_up = t < self.warmup_end
        if warming_up:
            action = self.agent.warmup_action(self.env.action_space)
        else:
            action = self.agent.select_action(self.obs, explore=True)

        result = self.env.step(action)
        self.buffer.push(Transition(self.obs, action, result.reward, result.observation, result.done))
        self.obs = result.observation
        self.episode_return += result.reward
        self.episode_steps += 1

        metrics = StepMetrics(step=t, episode=self.episode, action=action, result=result)
        if not warming_up:
            if len(self.buffer) >= cfg.batch_size:
                update = self.agent.update(self.buffer)
                metrics.critic_loss = update.critic_loss
                metrics.actor_updated = update.actor_updated
            else:
                logger.debug(f"step {t}: buffer holds {len(self.buffer)} < batch {cfg.batch_size}, update skipped")

        if result.done:
            metrics.episode_return = self.episode_return
            logger.info(f"seed {self.seed} episode {self.episode} finished at step {t}: "
                        f"return {self.episode_return:.3f} over {self.episode_steps} steps")
            self.obs = self.env.reset()
            self.episode += 1
            self.episode_return = 0.0
            self.episode_steps = 0
        return metrics
