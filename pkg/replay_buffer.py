"""
Replay Buffer
Fixed-capacity ring store of transitions with uniform sampling
"""
import logging
import os
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from errors import BufferNotReadyError, CheckpointError, ContractError

logger = logging.getLogger(__name__)


class Transition(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


class Batch(NamedTuple):
    """Column-stacked transitions; ``indices`` are the buffer slots drawn."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    indices: np.ndarray


class ReplayBuffer:
    """Preallocated storage; the oldest transition is overwritten once full."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int = 1000000):
        if capacity < 1:
            raise ContractError(f"capacity must be >= 1, got {capacity}")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.capacity = int(capacity)
        self.cursor = 0
        self.size = 0
        self.states = np.zeros((self.capacity, state_dim), dtype=np.float64)
        self.actions = np.zeros((self.capacity, action_dim), dtype=np.float64)
        self.rewards = np.zeros(self.capacity, dtype=np.float64)
        self.next_states = np.zeros((self.capacity, state_dim), dtype=np.float64)
        self.dones = np.zeros(self.capacity, dtype=np.float64)
        logger.debug(f"Replay buffer allocated: capacity {self.capacity}, "
                     f"{self.nbytes / 1e6:.1f} MB")

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in (self.states, self.actions, self.rewards, self.next_states, self.dones))

    def __len__(self) -> int:
        return self.size

    def push(self, transition: Transition) -> None:
        state = np.asarray(transition.state, dtype=np.float64)
        action = np.asarray(transition.action, dtype=np.float64)
        next_state = np.asarray(transition.next_state, dtype=np.float64)
        if state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,):
            raise ContractError(f"state shape {state.shape}/{next_state.shape} != ({self.state_dim},)")
        if action.shape != (self.action_dim,):
            raise ContractError(f"action shape {action.shape} != ({self.action_dim},)")
        if not np.isfinite(transition.reward):
            raise ContractError(f"reward must be finite, got {transition.reward}")
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = transition.reward
        self.next_states[i] = next_state
        self.dones[i] = float(transition.done)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draw with replacement over the filled slots."""
        if batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {batch_size}")
        if self.size < batch_size:
            raise BufferNotReadyError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx], idx)

    def save(self, path: Union[str, Path]) -> Path:
        """Write the filled slots, cursor and capacity to an ``.npz`` file atomically."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        n = self.size
        with open(tmp, "wb") as f:
            np.savez(f, states=self.states[:n], actions=self.actions[:n], rewards=self.rewards[:n],
                     next_states=self.next_states[:n], dones=self.dones[:n],
                     meta=np.asarray([self.capacity, self.cursor, self.size], dtype=np.int64))
        os.replace(tmp, path)
        logger.info(f"Replay buffer saved to {path} ({n} transitions)")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ReplayBuffer":
        """Rebuild a buffer saved by ``save``; slot layout and cursor are preserved."""
        path = Path(path)
        try:
            with np.load(path) as data:
                capacity, cursor, size = (int(v) for v in data["meta"])
                states = data["states"]
                buffer = cls(states.shape[1], data["actions"].shape[1], capacity)
                for name in ("states", "actions", "rewards", "next_states", "dones"):
                    column = data[name]
                    if column.shape[0] != size:
                        raise CheckpointError(f"{path}: {name} holds {column.shape[0]} rows, expected {size}")
                    getattr(buffer, name)[:size] = column
        except OSError as e:
            raise CheckpointError(f"cannot read replay buffer {path}: {e}")
        except (KeyError, ValueError, IndexError, TypeError, ContractError) as e:
            raise CheckpointError(f"corrupted replay buffer {path}: {e!r}")
        if not 0 <= cursor < capacity or size > capacity:
            raise CheckpointError(f"{path}: cursor {cursor} / size {size} do not fit capacity {capacity}")
        buffer.cursor, buffer.size = cursor, size
        return buffer

    def transition_at(self, index: int) -> Transition:
        return Transition(self.states[index].copy(), self.actions[index].copy(),
                          float(self.rewards[index]), self.next_states[index].copy(),
                          bool(self.dones[index]))
