"""
C-RAN Cost Models
Computation, latency, energy and total network cost per time step, plus the
reward shaping and scaling maps built on top of them
"""
import logging
import math
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from errors import DomainError

logger = logging.getLogger(__name__)

# Processor power takes load in operations per slot; configs use MOPTS.
OPERATIONS_PER_MOPTS = 1e6


def compute_computation_cost(active_ues_sinr: Sequence[float], k0: float, theta: float) -> float:
    """Baseband processing demand in MOPTS: sum of theta*log2(1+sinr) plus K0 per UE."""
    sinr = np.asarray(active_ues_sinr, dtype=np.float64)
    if sinr.size == 0:
        return 0.0
    if np.any(sinr < 0) or not np.all(np.isfinite(sinr)):
        raise DomainError(f"SINR values must be finite and >= 0, got min {sinr.min()!r}")
    return float(np.sum(theta * np.log2(1.0 + sinr)) + sinr.size * k0)


def queues_stable(j: int, omega: float, mu_star: float, ue_rates: Iterable[Tuple[float, float]]) -> bool:
    """True when the processing queue and every transmission queue are stable."""
    if j * mu_star <= omega:
        return False
    return all(rate > lam for rate, lam in ue_rates)


def compute_latency(j: int, omega: float, mu_star: float,
                    ue_rates: Sequence[Tuple[float, float]], boot_latency: float,
                    latency_cap: float = math.inf, booted: int = None) -> float:
    """
    Mean network latency (ms) of one VNF pool.

    Boot term is ``booted * boot_latency``; when ``booted`` is omitted every one
    of the ``j`` VNFs is charged. Unstable queues return ``latency_cap``.
    """
    if j < 0:
        raise DomainError(f"VNF count must be >= 0, got {j}")
    if j == 0:
        if omega != 0:
            raise DomainError(f"no active VNF to serve arrival rate {omega}")
        return 0.0
    rates = list(ue_rates)
    boot_term = (j if booted is None else booted) * boot_latency
    if not queues_stable(j, omega, mu_star, rates):
        return latency_cap
    processing = j / (j * mu_star - omega)
    total = boot_term
    for rate, lam in rates:
        total += processing + 1.0 / (rate - lam)
    return total


def compute_energy(cpu_loads: Sequence[float], vnf_count: int, ue_tx_powers: Sequence[float],
                   sigma_star: float, rho: float, psi: float) -> float:
    """Energy per step: cubic processor power, per-VNF instantiation cost and amplifier losses."""
    if rho <= 0:
        raise DomainError(f"amplifier efficiency must be > 0, got {rho}")
    loads = np.asarray(cpu_loads, dtype=np.float64)
    powers = np.asarray(ue_tx_powers, dtype=np.float64)
    processors = float(np.sum(sigma_star * loads ** 3)) if loads.size else 0.0
    transmit = float(np.sum(powers) / rho) if powers.size else 0.0
    return processors + vnf_count * psi + transmit


def total_network_cost(k_net: float, l_net: float, e_net: float,
                       weights: Tuple[float, float, float], m: int) -> float:
    """Weighted cost per served UE; an empty network divides by one."""
    w1, w2, w3 = weights
    return (w1 * k_net + w2 * l_net + w3 * e_net) / max(m, 1)


def reward_from_cost(n_t: float, qos_violated: Sequence[bool], saturated: bool,
                     qos_penalty: float = 1.0, saturation_penalty: float = 1.0,
                     epsilon: float = 1e-6) -> float:
    """Reciprocal cost minus one QoS penalty per violated slice and one saturation penalty."""
    if n_t < 0:
        raise DomainError(f"network cost must be >= 0, got {n_t}")
    violations = sum(1 for flag in qos_violated if flag)
    reward = 1.0 / (n_t + epsilon) - qos_penalty * violations
    if saturated:
        reward -= saturation_penalty
    return reward


def clip_scaling_action(raw: float, current_alloc: float, free_capacity: float) -> float:
    """Map an agent action in [-1, 1] onto the scaling interval [-current_alloc, free_capacity]."""
    raw = min(1.0, max(-1.0, float(raw)))
    return -current_alloc + (raw + 1.0) / 2.0 * (current_alloc + free_capacity)


def update_vnf_count(cpu_alloc: float, vnf_capacity: float, prev_count: int,
                     max_vnfs: int) -> Tuple[int, int]:
    """Active VNFs implied by an allocation, and how many of them had to boot."""
    if vnf_capacity <= 0:
        raise DomainError(f"vnf_capacity must be > 0, got {vnf_capacity}")
    count = int(math.ceil(cpu_alloc / vnf_capacity))
    count = min(max(count, 1), max_vnfs)
    return count, max(0, count - prev_count)


def cpu_loads_for_allocation(cpu_alloc: float, cpu_capacity: float) -> List[float]:
    """Per-CPU loads (operations per slot) when an allocation is spread over the fewest CPUs."""
    if cpu_alloc <= 0:
        return []
    num_cpus = int(math.ceil(cpu_alloc / cpu_capacity - 1e-12))
    num_cpus = max(num_cpus, 1)
    share = cpu_alloc / num_cpus * OPERATIONS_PER_MOPTS
    return [share] * num_cpus
