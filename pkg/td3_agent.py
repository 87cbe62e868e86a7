"""
TD3 Agent
Twin delayed deep deterministic policy gradient on the float64 MLP engine;
DDPG is the same agent with one critic, no target smoothing and policy_freq 1
"""
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from errors import CheckpointError, ConfigError, ContractError, TrainingError
from nn_core import (
    Mlp,
    OptimizerState,
    backward,
    forward,
    init_params,
    make_optimizer,
    optimizer_from_dict,
    optimizer_step,
    polyak_update,
)
from replay_buffer import Batch, ReplayBuffer
from run_config import AgentConfig, ScenarioConfig, agent_from_dict, config_to_dict
from traffic_model import AGENT_DOMAIN, AGENT_STREAMS, RngStreams

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "td3-slicing-checkpoint"
CHECKPOINT_VERSION = 1
NETWORK_NAMES = ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target")


@dataclass
class AgentParams:
    """The six networks plus the optimizer state of the three trained ones."""

    actor: Mlp
    critic1: Mlp
    critic2: Mlp
    actor_target: Mlp
    critic1_target: Mlp
    critic2_target: Mlp
    actor_opt: OptimizerState
    critic1_opt: OptimizerState
    critic2_opt: OptimizerState

    @classmethod
    def initialize(cls, state_dim: int, action_dim: int, cfg: AgentConfig,
                   rng: np.random.Generator) -> "AgentParams":
        hidden = list(cfg.hidden_sizes)
        actor_sizes = [state_dim] + hidden + [action_dim]
        actor_acts = ["relu"] * len(hidden) + ["tanh"]
        critic_sizes = [state_dim + action_dim] + hidden + [1]
        critic_acts = ["relu"] * len(hidden) + ["identity"]
        # critic2 is drawn last so the other networks do not depend on it
        actor = init_params(actor_sizes, actor_acts, rng, output_scale=1e-2)
        critic1 = init_params(critic_sizes, critic_acts, rng)
        critic2 = init_params(critic_sizes, critic_acts, rng)
        return cls(
            actor=actor, critic1=critic1, critic2=critic2,
            actor_target=actor.copy(), critic1_target=critic1.copy(), critic2_target=critic2.copy(),
            actor_opt=make_optimizer(actor, cfg.optimizer, cfg.actor_lr),
            critic1_opt=make_optimizer(critic1, cfg.optimizer, cfg.critic_lr),
            critic2_opt=make_optimizer(critic2, cfg.optimizer, cfg.critic_lr),
        )

    def network(self, name: str) -> Mlp:
        return getattr(self, name)


def network_inventory(config: AgentConfig) -> Dict[str, int]:
    """Networks the algorithm actually trains or reads; DDPG never touches critic2."""
    value = 1 if config.is_ddpg else 2
    return {"policy": 1, "value": value, "target_policy": 1, "target_value": value}


@dataclass
class UpdateResult:
    critic_loss: float
    actor_updated: bool


class TD3Agent:
    """Owns the networks, optimizer states and the agent-side random streams."""

    def __init__(self, state_dim: int, action_dim: int, config: AgentConfig, seed: int = 0):
        config.validate()
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.config = config
        self.seed = int(seed)
        self.streams = RngStreams(seed, AGENT_STREAMS, AGENT_DOMAIN)
        self.params = AgentParams.initialize(state_dim, action_dim, config, self.streams["init"])
        self.total_updates = 0

    @property
    def network_inventory(self) -> Dict[str, int]:
        return network_inventory(self.config)

    def _policy(self, net: Mlp, states: np.ndarray) -> np.ndarray:
        return self.config.max_action * forward(net, states)

    def _clip(self, actions: np.ndarray) -> np.ndarray:
        return np.clip(actions, self.config.min_action, self.config.max_action)

    def select_action(self, state: np.ndarray, explore: bool = False) -> np.ndarray:
        """Deterministic policy output, plus Gaussian exploration noise when exploring."""
        action = self._policy(self.params.actor, np.asarray(state, dtype=np.float64))
        if explore:
            sigma = self.config.exploration_noise * self.config.max_action
            action = action + self.streams["exploration"].normal(0.0, sigma, size=action.shape)
        return self._clip(action)

    def warmup_action(self, action_space) -> np.ndarray:
        """Uniform sample over the Box action space."""
        low = np.asarray(action_space.low, dtype=np.float64)
        high = np.asarray(action_space.high, dtype=np.float64)
        return self.streams["warmup"].uniform(low, high)

    def smooth_target_action(self, next_states: np.ndarray) -> np.ndarray:
        actions = self._policy(self.params.actor_target, next_states)
        if self.config.is_ddpg:
            return self._clip(actions)
        cfg = self.config
        noise = self.streams["smoothing"].normal(0.0, cfg.policy_noise * cfg.max_action, size=actions.shape)
        limit = cfg.noise_clip * cfg.max_action
        return self._clip(actions + np.clip(noise, -limit, limit))

    def td_target(self, batch: Batch) -> np.ndarray:
        """r + discount * (1 - done) * min over target critics at the smoothed next action."""
        p = self.params
        next_actions = self.smooth_target_action(batch.next_states)
        inputs = np.concatenate([batch.next_states, next_actions], axis=1)
        q_next = forward(p.critic1_target, inputs)[:, 0]
        if not self.config.is_ddpg:
            q_next = np.minimum(q_next, forward(p.critic2_target, inputs)[:, 0])
        return batch.rewards + self.config.discount * (1.0 - batch.dones) * q_next

    def critic_update(self, batch: Batch, targets: Optional[np.ndarray] = None) -> float:
        """One optimizer step per critic on the summed MSE loss; returns that loss."""
        if targets is None:
            targets = self.td_target(batch)
        p = self.params
        inputs = np.concatenate([batch.states, batch.actions], axis=1)
        n = inputs.shape[0]
        critics = [(p.critic1, p.critic1_opt, "critic1")]
        if not self.config.is_ddpg:
            critics.append((p.critic2, p.critic2_opt, "critic2"))

        steps = []
        total = 0.0
        for net, opt, name in critics:
            q = forward(net, inputs)[:, 0]
            diff = q - targets
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise TrainingError(f"{name} loss is not finite", {
                    "loss": loss,
                    "max_abs_q": float(np.nanmax(np.abs(q))) if q.size else 0.0,
                    "max_abs_target": float(np.nanmax(np.abs(targets))) if targets.size else 0.0,
                    "reward_min": float(np.min(batch.rewards)),
                    "reward_max": float(np.max(batch.rewards)),
                    "updates": float(self.total_updates),
                })
            total += loss
            grads = backward(net, inputs, (2.0 / n) * diff.reshape(-1, 1))
            steps.append((net, grads, opt))
        for net, grads, opt in steps:
            optimizer_step(net, grads, opt)
        return total

    def _q_action_gradient(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """dQ1/da for each sample of the batch."""
        inputs = np.concatenate([states, actions], axis=1)
        grads = backward(self.params.critic1, inputs, np.ones((inputs.shape[0], 1)))
        return grads.inputs[:, self.state_dim:]

    def actor_update(self, batch: Batch) -> None:
        """Deterministic policy gradient ascent through critic1, then Polyak-average the targets."""
        p = self.params
        states = batch.states
        n = states.shape[0]
        actions = self._policy(p.actor, states)
        dq_da = self._q_action_gradient(states, actions)
        # ascend mean Q: descend on -mean Q; actions are max_action * network output
        upstream = -(self.config.max_action / n) * dq_da
        grads = backward(p.actor, states, upstream)
        optimizer_step(p.actor, grads, p.actor_opt)

        tau = self.config.tau
        polyak_update(p.critic1_target, p.critic1, tau)
        if not self.config.is_ddpg:
            polyak_update(p.critic2_target, p.critic2, tau)
        polyak_update(p.actor_target, p.actor, tau)

    def update(self, buffer: ReplayBuffer) -> UpdateResult:
        """Sample a batch, update the critics, and the actor every policy_freq updates."""
        batch = buffer.sample(self.config.batch_size, self.streams["replay"])
        loss = self.critic_update(batch)
        self.total_updates += 1
        actor_updated = self.total_updates % self.config.effective_policy_freq == 0
        if actor_updated:
            self.actor_update(batch)
        return UpdateResult(loss, actor_updated)

    def to_dict(self, training_step: int = 0, scenario: Optional[ScenarioConfig] = None,
                trainer_state: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        p = self.params
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "algorithm": self.config.algorithm,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "seed": self.seed,
            "training_step": int(training_step),
            "total_updates": self.total_updates,
            "agent_config": config_to_dict(self.config),
            "scenario": config_to_dict(scenario) if scenario is not None else None,
            "networks": {name: p.network(name).to_dict() for name in NETWORK_NAMES},
            "optimizers": {
                "actor": p.actor_opt.to_dict(),
                "critic1": p.critic1_opt.to_dict(),
                "critic2": p.critic2_opt.to_dict(),
            },
            "rng_states": self.streams.get_state(),
            "trainer": trainer_state,
        }

    def save(self, path: Union[str, Path], training_step: int = 0,
             scenario: Optional[ScenarioConfig] = None,
             trainer_state: Optional[Dict[str, Any]] = None) -> Path:
        """Write a JSON checkpoint atomically."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.to_dict(training_step, scenario, trainer_state), f)
        os.replace(tmp, path)
        logger.info(f"Checkpoint written to {path} (step {training_step}, {self.total_updates} updates)")
        return path

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> Tuple["TD3Agent", Dict[str, Any]]:
        if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a TD3 slicing checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {data.get('version')!r}")
        try:
            config = agent_from_dict(data["agent_config"])
            agent = cls(int(data["state_dim"]), int(data["action_dim"]), config, int(data["seed"]))
            nets = {name: Mlp.from_dict(data["networks"][name]) for name in NETWORK_NAMES}
            for name, net in nets.items():
                if not net.same_architecture(agent.params.network(name)):
                    raise CheckpointError(f"{name} architecture {net.sizes} does not match the agent config")
            opts = data["optimizers"]
            agent.params = AgentParams(
                **nets,
                actor_opt=optimizer_from_dict(opts["actor"], nets["actor"]),
                critic1_opt=optimizer_from_dict(opts["critic1"], nets["critic1"]),
                critic2_opt=optimizer_from_dict(opts["critic2"], nets["critic2"]),
            )
            agent.total_updates = int(data["total_updates"])
            agent.streams.set_state(data["rng_states"])
        except CheckpointError:
            raise
        except (KeyError, TypeError, ValueError, ContractError, ConfigError) as e:
            raise CheckpointError(f"corrupted checkpoint: {e!r}")
        meta = {
            "training_step": int(data.get("training_step", 0)),
            "scenario": data.get("scenario"),
            "algorithm": config.algorithm,
            "trainer": data.get("trainer"),
        }
        return agent, meta

    @classmethod
    def load(cls, path: Union[str, Path]) -> Tuple["TD3Agent", Dict[str, Any]]:
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as e:
            raise CheckpointError(f"cannot read checkpoint {path}: {e}")
        except json.JSONDecodeError as e:
            raise CheckpointError(f"checkpoint {path} is not valid JSON: {e}")
        agent, meta = cls.from_dict(data)
        logger.info(f"Loaded {meta['algorithm']} checkpoint {path} (step {meta['training_step']})")
        return agent, meta
