"""
C-RAN Network Slicing Environment
Discrete-time slicing MDP with a Gym-style reset/step surface
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import gymnasium as gym
import numpy as np
from gymnasium import spaces

from cost_models import (
    clip_scaling_action,
    compute_computation_cost,
    compute_energy,
    compute_latency,
    cpu_loads_for_allocation,
    queues_stable,
    reward_from_cost,
    total_network_cost,
    update_vnf_count,
)
from errors import ContractError
from run_config import ScenarioConfig
from traffic_model import ENV_STREAMS, RngStreams, Ue, advance_lifetimes, spawn_ues

logger = logging.getLogger(__name__)

CPU_STAGES = ("coding", "modulation", "fft")
_STATE_ARRAYS = ("new_ues", "cpu_alloc", "latency", "energy", "active_ues", "vnf_count", "newly_booted")


@dataclass
class EnvState:
    """Full simulator state; per-slice arrays are indexed in slice-id order."""

    new_ues: np.ndarray
    cpu_alloc: np.ndarray
    latency: np.ndarray
    energy: np.ndarray
    active_ues: np.ndarray
    vnf_count: np.ndarray
    newly_booted: np.ndarray
    ues: List[List[Ue]] = field(default_factory=list)
    step: int = 0
    next_ue_id: int = 0

    @classmethod
    def initial(cls, scenario: ScenarioConfig) -> "EnvState":
        n = scenario.num_slices
        # One share per slice plus one kept free: the zero action is then a fixed point.
        share = scenario.total_capacity / (n + 1)
        return cls(
            new_ues=np.zeros(n, dtype=np.int64),
            cpu_alloc=np.full(n, share, dtype=np.float64),
            latency=np.zeros(n, dtype=np.float64),
            energy=np.zeros(n, dtype=np.float64),
            active_ues=np.zeros(n, dtype=np.int64),
            vnf_count=np.ones(n, dtype=np.int64),
            newly_booted=np.zeros(n, dtype=np.int64),
            ues=[[] for _ in range(n)],
        )

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {name: getattr(self, name).tolist() for name in _STATE_ARRAYS}
        data["ues"] = [[asdict(ue) for ue in slice_ues] for slice_ues in self.ues]
        data["step"] = self.step
        data["next_ue_id"] = self.next_ue_id
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any], scenario: ScenarioConfig) -> "EnvState":
        n = scenario.num_slices
        arrays = {}
        for name in _STATE_ARRAYS:
            dtype = np.float64 if name in ("cpu_alloc", "latency", "energy") else np.int64
            arrays[name] = np.asarray(data[name], dtype=dtype)
            if arrays[name].shape != (n,):
                raise ContractError(f"state field {name} has shape {arrays[name].shape}, scenario has {n} slices")
        if len(data["ues"]) != n:
            raise ContractError(f"state holds UEs for {len(data['ues'])} slices, scenario has {n}")
        ues = [[Ue(**ue) for ue in slice_ues] for slice_ues in data["ues"]]
        return cls(**arrays, ues=ues, step=int(data["step"]), next_ue_id=int(data["next_ue_id"]))


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    info: Dict[str, Any]


def _ue_rates(ues: Sequence[Ue]) -> List[Tuple[float, float]]:
    return [(ue.rate, ue.arrival_rate) for ue in ues]


def admit_ues(candidates: Sequence[Ue], state: EnvState,
              scenario: ScenarioConfig) -> Tuple[List[Ue], List[Ue]]:
    """
    Greedy predicted-QoS admission.

    A candidate joins its slice only if the slice's queues stay stable and the
    predicted latency with it included stays within the slice's QoS target.
    Candidates are considered in the given order; admitted UEs count toward the
    prediction for the ones that follow.
    """
    index_of = {spec.slice_id: i for i, spec in enumerate(scenario.slices)}
    population = {i: list(state.ues[i]) for i in range(scenario.num_slices)}
    admitted, rejected = [], []
    for ue in candidates:
        i = index_of[ue.slice_id]
        trial = population[i] + [ue]
        j = int(state.vnf_count[i])
        omega = sum(u.arrival_rate for u in trial)
        rates = _ue_rates(trial)
        if not queues_stable(j, omega, scenario.mu_star, rates):
            rejected.append(ue)
            continue
        predicted = compute_latency(j, omega, scenario.mu_star, rates, scenario.boot_latency,
                                    latency_cap=scenario.latency_cap,
                                    booted=int(state.newly_booted[i]))
        if predicted <= scenario.slices[i].qos_latency:
            population[i] = trial
            admitted.append(ue)
        else:
            rejected.append(ue)
    return admitted, rejected


class SlicingEnv(gym.Env):
    """
    Single central-unit agent re-scaling per-slice CPU allocations.

    The spaces follow gymnasium, but the loop surface is the classic Gym one the
    training loop is written against: ``reset`` returns the observation alone and
    ``step`` returns a ``StepResult`` unpacking as ``(obs, reward, done, info)``.
    Episodes only end by reaching ``episode_length``, so there is no separate
    truncation flag. ``gymnasium.utils.env_checker`` will reject this surface.
    """

    metadata = {"render_modes": []}

    def __init__(self, scenario: ScenarioConfig):
        super().__init__()
        scenario.validate()
        self.scenario = scenario
        n = scenario.num_slices
        self.observation_space = spaces.Box(low=0.0, high=1.0, shape=(6 * n,), dtype=np.float64)
        self.action_space = spaces.Box(low=-1.0, high=1.0, shape=(n,), dtype=np.float64)
        self._bounds = self._observation_bounds()
        self.streams: Optional[RngStreams] = None
        self.state: Optional[EnvState] = None
        self._done = False

    def _observation_bounds(self) -> np.ndarray:
        s = self.scenario
        per_field = [s.max_ues, s.total_capacity, s.latency_cap, s.energy_cap, s.max_ues, s.max_vnfs]
        return np.repeat(np.asarray(per_field, dtype=np.float64), s.num_slices)

    def reset(self, seed: Optional[int] = None, options: Optional[dict] = None) -> np.ndarray:
        """Start a new episode; a seed re-seeds every environment stream."""
        if seed is not None:
            super().reset(seed=int(seed))
            self.streams = RngStreams(seed, ENV_STREAMS)
        elif self.streams is None:
            raise ContractError("the first reset needs a seed")
        self.state = EnvState.initial(self.scenario)
        self._done = False
        return self._observation()

    def get_state(self) -> Dict[str, Any]:
        """JSON-ready snapshot of the episode state and the environment streams."""
        if self.state is None:
            raise ContractError("get_state() called before reset()")
        return {"state": self.state.to_dict(), "done": self._done, "rng_states": self.streams.get_state(),
                "seed": self.streams.seed}

    def set_state(self, data: Dict[str, Any]) -> np.ndarray:
        """Restore a snapshot from ``get_state``; returns the matching observation."""
        self.streams = RngStreams(int(data["seed"]), ENV_STREAMS)
        self.streams.set_state(data["rng_states"])
        self.state = EnvState.from_dict(data["state"], self.scenario)
        self._done = bool(data["done"])
        return self._observation()

    def _observation(self) -> np.ndarray:
        st = self.state
        raw = np.concatenate([
            st.new_ues.astype(np.float64), st.cpu_alloc, st.latency,
            st.energy, st.active_ues.astype(np.float64), st.vnf_count.astype(np.float64),
        ])
        return np.clip(raw / self._bounds, 0.0, 1.0)

    def _reallocate(self, action: np.ndarray) -> np.ndarray:
        """Apply per-slice scaling in slice order, recomputing free capacity between slices."""
        alloc = self.state.cpu_alloc.copy()
        capacity = self.scenario.total_capacity
        for i, raw in enumerate(action):
            free = max(0.0, capacity - float(alloc.sum()))
            delta = clip_scaling_action(raw, float(alloc[i]), free)
            alloc[i] = min(max(0.0, alloc[i] + delta), float(alloc[i]) + free)
        return alloc

    def step(self, action: Sequence[float]) -> StepResult:
        if self.state is None:
            raise ContractError("step() called before reset()")
        if self._done:
            raise ContractError("step() called after the episode ended; call reset() first")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != self.action_space.shape:
            raise ContractError(f"action shape {action.shape} != {self.action_space.shape}")
        if not np.all(np.isfinite(action)):
            raise ContractError(f"action must be finite, got {action}")
        action = np.clip(action, -1.0, 1.0)

        s = self.scenario
        st = self.state
        n = s.num_slices

        # 1. vertical scaling
        st.cpu_alloc = self._reallocate(action)

        # 2. VNF instantiation
        for i in range(n):
            count, booted = update_vnf_count(float(st.cpu_alloc[i]), s.vnf_capacity,
                                             int(st.vnf_count[i]), s.max_vnfs)
            st.vnf_count[i] = count
            st.newly_booted[i] = booted

        # 3. departures and new arrivals
        departed = np.zeros(n, dtype=np.int64)
        candidates: List[Ue] = []
        arrived = np.zeros(n, dtype=np.int64)
        for i, spec in enumerate(s.slices):
            st.ues[i], gone = advance_lifetimes(st.ues[i])
            departed[i] = len(gone)
            new = spawn_ues(spec, self.streams, st.next_ue_id, (s.sinr_min, s.sinr_max))
            st.next_ue_id += len(new)
            arrived[i] = len(new)
            candidates.extend(new)

        # 4. admission control
        admitted, rejected = admit_ues(candidates, st, s)
        admitted_count = np.zeros(n, dtype=np.int64)
        index_of = {spec.slice_id: i for i, spec in enumerate(s.slices)}
        for ue in admitted:
            i = index_of[ue.slice_id]
            st.ues[i].append(ue)
            admitted_count[i] += 1
        st.new_ues = arrived
        st.active_ues = np.asarray([len(u) for u in st.ues], dtype=np.int64)

        # 5. cost models
        k_net = np.zeros(n)
        l_net = np.zeros(n)
        e_net = np.zeros(n)
        saturated = np.zeros(n, dtype=bool)
        for i in range(n):
            ues = st.ues[i]
            j = int(st.vnf_count[i])
            omega = sum(u.arrival_rate for u in ues)
            rates = _ue_rates(ues)
            k_net[i] = compute_computation_cost([u.sinr for u in ues], s.k0, s.theta)
            saturated[i] = not queues_stable(j, omega, s.mu_star, rates)
            latency = compute_latency(j, omega, s.mu_star, rates, s.boot_latency,
                                      latency_cap=s.latency_cap, booted=int(st.newly_booted[i]))
            l_net[i] = min(latency, s.latency_cap)
            e_net[i] = compute_energy(cpu_loads_for_allocation(float(st.cpu_alloc[i]), s.cpu_capacity),
                                      j, [u.tx_power for u in ues],
                                      s.sigma_star, s.amp_efficiency, s.vnf_energy)
        st.latency = l_net
        st.energy = e_net
        m_total = int(st.active_ues.sum())
        n_t = total_network_cost(float(k_net.sum()), float(l_net.sum()), float(e_net.sum()), s.weights, m_total)

        # 6. reward
        qos_violated = np.asarray([l_net[i] > spec.qos_latency for i, spec in enumerate(s.slices)])
        any_saturated = bool(saturated.any())
        reward = reward_from_cost(n_t, qos_violated, any_saturated, s.qos_penalty,
                                  s.saturation_penalty, s.reward_epsilon)

        # 7. termination
        st.step += 1
        self._done = st.step >= s.episode_length

        cpu_used = np.minimum(k_net, st.cpu_alloc)
        with np.errstate(divide="ignore", invalid="ignore"):
            utilization = np.where(st.cpu_alloc > 0, cpu_used / st.cpu_alloc, 0.0)
        info = {
            "step": st.step,
            "arrived": arrived,
            "admitted": admitted_count,
            "rejected": arrived - admitted_count,
            "departed": departed,
            "active_ues": st.active_ues.copy(),
            "k_net": k_net,
            "l_net": l_net,
            "e_net": e_net,
            "k_total": float(k_net.sum()),
            "l_total": float(l_net.sum()),
            "e_total": float(e_net.sum()),
            "n_t": n_t,
            "qos_violated": qos_violated,
            "saturated": saturated,
            "saturated_any": any_saturated,
            "cpu_alloc": st.cpu_alloc.copy(),
            "cpu_used": cpu_used,
            "cpu_utilization": utilization,
            "cpu_breakdown": {stage: cpu_used * frac for stage, frac in zip(CPU_STAGES, s.cpu_split)},
            "vnf_count": st.vnf_count.copy(),
            "newly_booted": st.newly_booted.copy(),
        }
        if rejected:
            logger.debug(f"step {st.step}: rejected {len(rejected)} of {len(candidates)} candidate UEs")
        return StepResult(self._observation(), float(reward), self._done, info)
