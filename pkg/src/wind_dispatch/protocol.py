"""Leader-follower utilization consensus and leader-side power aggregation.

Generator 1 leads. It integrates the power mismatch into an auxiliary
state ξ_h and tracks it; every follower i tracks generator i−1:

    ξ̇_h = P_d − ΣP_m
    ż_1 = −k_α(z_1 − ξ_h)
    ż_i = −k_α(z_i − z_{i−1}),  i = 2..n

The leader learns ΣP_m either by a relay of partial sums back along the
chain or by running average consensus on the undirected chain.

Error Handling:
- Topology rejects n < 2
- average_consensus_round raises ConfigError when the step size breaks the
  chain Laplacian's stability bound
- ProtocolMessage rejects non-finite payloads with DomainError
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, DomainError

DEFAULT_AVERAGE_STEP = 0.5
DEFAULT_AVERAGE_ROUNDS = 400


@dataclass(frozen=True)
class Topology:
    """Directed chain 1 → 2 → … → n with generator 1 as leader (1-based labels)."""

    n: int
    leader: int = 1

    def __post_init__(self):
        if self.n < 2:
            raise DomainError(f"a chain needs at least 2 generators, got {self.n}")
        if self.leader != 1:
            raise DomainError("the leader is fixed to generator 1")

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(i - 1, i) for i in range(2, self.n + 1)]

    @property
    def relay_path(self) -> list[int]:
        """Order in which partial sums travel: tail first, leader last."""
        return list(range(self.n, 0, -1))


@dataclass(frozen=True)
class ConsensusState:
    xi_h: float
    z: np.ndarray


@dataclass(frozen=True)
class Gains:
    """Per-generator consensus gain k_α and torque-loop gain k_β (1/s)."""

    k_alpha: np.ndarray
    k_beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k_alpha", np.atleast_1d(np.asarray(self.k_alpha, dtype=float)))
        object.__setattr__(self, "k_beta", np.atleast_1d(np.asarray(self.k_beta, dtype=float)))
        if self.k_alpha.shape != self.k_beta.shape:
            raise DomainError("k_alpha and k_beta must have one entry per generator")
        if not (np.all(self.k_alpha > 0) and np.all(self.k_beta > 0)):
            raise DomainError("gains must be strictly positive")

    @classmethod
    def uniform(cls, n: int, k_alpha: float, k_beta: float) -> "Gains":
        return cls(np.full(n, float(k_alpha)), np.full(n, float(k_beta)))

    @property
    def homogeneous(self) -> bool:
        return bool(np.all(self.k_alpha == self.k_alpha[0]) and np.all(self.k_beta == self.k_beta[0]))


class MessageKind(Enum):
    CONSENSUS = "consensus"
    PARTIAL_SUM = "partial_sum"


@dataclass(frozen=True)
class ProtocolMessage:
    """One hop of communication; payload is (z, ż) or a one-element partial sum."""

    sender: int
    receiver: int
    kind: MessageKind
    payload: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.payload):
            raise DomainError(f"non-finite payload from {self.sender} to {self.receiver}: {self.payload}")


@dataclass(frozen=True)
class RelayResult:
    total: float
    messages: list[ProtocolMessage]

    @property
    def hops(self) -> int:
        return len(self.messages)


def leader_aux_deriv(p_d: float, p_m_total: float) -> float:
    return p_d - p_m_total


def leader_consensus_deriv(z_l, xi_h, k_alpha):
    return -k_alpha * (z_l - xi_h)


def follower_consensus_deriv(z_i, z_prev, k_alpha):
    return -k_alpha * (z_i - z_prev)


def aggregate_chain_relay(local_powers, topology: Topology, record_messages: bool = True) -> RelayResult:
    """Sum local powers hop by hop from the tail to the leader.

    The engine passes record_messages=False on every derivative evaluation.
    """
    values = [float(v) for v in local_powers]
    if len(values) != topology.n:
        raise DomainError(f"expected {topology.n} local powers, got {len(values)}")
    partial = 0.0
    messages = []
    for node in topology.relay_path:
        partial = partial + values[node - 1]
        if record_messages and node > topology.leader:
            messages.append(ProtocolMessage(node, node - 1, MessageKind.PARTIAL_SUM, (partial,)))
    return RelayResult(total=partial, messages=messages)


def chain_laplacian(n: int) -> np.ndarray:
    """Laplacian of the undirected path graph on n nodes."""
    lap = np.zeros((n, n))
    for i in range(n - 1):
        lap[i, i] += 1.0
        lap[i + 1, i + 1] += 1.0
        lap[i, i + 1] = lap[i + 1, i] = -1.0
    return lap


def laplacian_max_eigenvalue(n: int) -> float:
    """λ_max = 2 − 2cos(π(n−1)/n) of the path Laplacian."""
    return 2.0 - 2.0 * math.cos(math.pi * (n - 1) / n)


def check_average_step(n: int, step_size: float) -> None:
    bound = 2.0 / laplacian_max_eigenvalue(n)
    if not 0.0 < step_size < bound:
        raise ConfigError(f"average-consensus step size {step_size} outside (0, {bound:.6g}) for n={n}")


def average_consensus_round(values, topology: Topology, step_size: float = DEFAULT_AVERAGE_STEP) -> np.ndarray:
    """One iteration x ← x − η·L·x; the sum is conserved up to rounding."""
    check_average_step(topology.n, step_size)
    x = np.asarray(values, dtype=float)
    flow = np.diff(x)
    update = np.zeros_like(x)
    update[:-1] += flow
    update[1:] -= flow
    return x + step_size * update


def average_consensus_operator(n: int, step_size: float = DEFAULT_AVERAGE_STEP, rounds: int = DEFAULT_AVERAGE_ROUNDS) -> np.ndarray:
    """(I − ηL)^rounds, the linear map of a full round budget."""
    check_average_step(n, step_size)
    return np.linalg.matrix_power(np.eye(n) - step_size * chain_laplacian(n), rounds)


def aggregate_average_consensus(
    local_powers, topology: Topology, step_size: float = DEFAULT_AVERAGE_STEP, rounds: int = DEFAULT_AVERAGE_ROUNDS
) -> float:
    """Leader's estimate n·x_1 after `rounds` averaging iterations."""
    x = np.asarray(local_powers, dtype=float)
    for _ in range(rounds):
        x = average_consensus_round(x, topology, step_size)
    return topology.n * float(x[0])


def predecessor_values(xi_h, z) -> np.ndarray:
    """What each node tracks: ξ_h for the leader, z_{i−1} for follower i."""
    return np.concatenate(([xi_h], np.asarray(z, dtype=float)[:-1]))


def protocol_derivs(state: ConsensusState, p_d: float, p_m, gains: Gains) -> tuple[float, np.ndarray]:
    """(ξ̇_h, ż) of the full protocol given the generators' powers."""
    z = np.asarray(state.z, dtype=float)
    p_m = np.asarray(p_m, dtype=float)
    if z.shape != p_m.shape or z.shape != gains.k_alpha.shape:
        raise DomainError("state, power and gain vectors must have equal length")
    xi_dot = leader_aux_deriv(p_d, float(np.sum(p_m)))
    z_dot = np.empty_like(z)
    z_dot[0] = leader_consensus_deriv(z[0], state.xi_h, gains.k_alpha[0])
    z_dot[1:] = follower_consensus_deriv(z[1:], z[:-1], gains.k_alpha[1:])
    return xi_dot, z_dot


def neighbor_messages(z, z_dot) -> list[ProtocolMessage]:
    """(z_i, ż_i) sent from generator i to i+1 for i = 1..n−1."""
    return [
        ProtocolMessage(i + 1, i + 2, MessageKind.CONSENSUS, (float(z[i]), float(z_dot[i])))
        for i in range(len(z) - 1)
    ]
