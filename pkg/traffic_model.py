"""
Traffic Model
UE arrivals and departures, per-UE packet rates, SINR and wireless rates
"""
import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from errors import DomainError
from run_config import SliceSpec

logger = logging.getLogger(__name__)

ENV_STREAMS = ("arrivals", "sinr", "lifetimes")
AGENT_STREAMS = ("init", "warmup", "exploration", "smoothing", "replay")

# Separates environment and agent stream families drawn from the same seed.
ENV_DOMAIN = 0
AGENT_DOMAIN = 1


@dataclass(frozen=True)
class Ue:
    """One user equipment attached to a slice."""

    ue_id: int
    slice_id: int
    arrival_rate: float        # lambda_m, packets/step
    sinr: float                # linear
    rate: float                # r_m = B_m * log2(1 + sinr), packets/step
    tx_power: float            # W
    remaining_lifetime: int    # steps


class RngStreams:
    """Named, mutually independent Philox generators derived from one seed."""

    def __init__(self, seed: int, names: Sequence[str], domain: int = ENV_DOMAIN):
        self.seed = int(seed)
        self.names = tuple(names)
        self.domain = domain
        self._generators: Dict[str, np.random.Generator] = {}
        for index, name in enumerate(self.names):
            seq = np.random.SeedSequence(entropy=(self.seed, domain), spawn_key=(index,))
            self._generators[name] = np.random.Generator(np.random.Philox(seq))

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._generators[name]

    def get_state(self) -> Dict[str, dict]:
        return {name: _state_to_plain(gen.bit_generator.state) for name, gen in self._generators.items()}

    def set_state(self, state: Dict[str, dict]) -> None:
        for name, gen in self._generators.items():
            gen.bit_generator.state = _state_from_plain(state[name])


def _state_to_plain(state):
    if isinstance(state, dict):
        return {k: _state_to_plain(v) for k, v in state.items()}
    if isinstance(state, np.ndarray):
        return [int(v) for v in state]
    if isinstance(state, np.integer):
        return int(state)
    return state


def _state_from_plain(state):
    if isinstance(state, dict):
        return {k: _state_from_plain(v) for k, v in state.items()}
    if isinstance(state, list):
        return np.asarray(state, dtype=np.uint64)
    return state


def sample_poisson(mean: float, rng: np.random.Generator) -> int:
    """Poisson count from numpy's sampler; one draw per call on the given stream."""
    if mean < 0 or not math.isfinite(mean):
        raise DomainError(f"Poisson mean must be finite and >= 0, got {mean}")
    if mean == 0:
        return 0
    return int(rng.poisson(mean))


def wireless_rate(bandwidth: float, sinr: float) -> float:
    return bandwidth * math.log2(1.0 + sinr)


def sample_sinr(sinr_min: float, sinr_max: float, rng: np.random.Generator) -> float:
    """Log-uniform SINR on [sinr_min, sinr_max]."""
    if sinr_min == sinr_max:
        return float(sinr_min)
    return float(math.exp(rng.uniform(math.log(sinr_min), math.log(sinr_max))))


def spawn_ues(spec: SliceSpec, streams: RngStreams, first_ue_id: int,
              sinr_range: Tuple[float, float] = (1.0, 15.0)) -> List[Ue]:
    """Draw this step's candidate UEs for one slice."""
    count = sample_poisson(spec.ue_arrival_rate, streams["arrivals"])
    sinr_min, sinr_max = sinr_range
    success = 1.0 / spec.ue_mean_lifetime
    ues = []
    for offset in range(count):
        sinr = sample_sinr(sinr_min, sinr_max, streams["sinr"])
        lifetime = int(streams["lifetimes"].geometric(success))
        ues.append(Ue(
            ue_id=first_ue_id + offset,
            slice_id=spec.slice_id,
            arrival_rate=spec.arrival_rate_mean,
            sinr=sinr,
            rate=wireless_rate(spec.bandwidth, sinr),
            tx_power=spec.tx_power,
            remaining_lifetime=lifetime,
        ))
    return ues


def advance_lifetimes(ues: Sequence[Ue]) -> Tuple[List[Ue], List[Ue]]:
    """Age every UE by one step; those reaching zero depart."""
    surviving, departed = [], []
    for ue in ues:
        aged = dataclasses.replace(ue, remaining_lifetime=ue.remaining_lifetime - 1)
        if aged.remaining_lifetime <= 0:
            departed.append(aged)
        else:
            surviving.append(aged)
    return surviving, departed
