"""Per-generator wind: slowly varying mean plus second-order turbulence.

The turbulence component v_s follows the companion-form filter

    d/dt [v_s, v̇_s] = [[0, 1], [−1/(p1 p2), −(p1 + p2)/(p1 p2)]]·[v_s, v̇_s] + [0, k/(p1 p2)]·e

driven by white noise e. Each generator owns a seeded noise stream.

Error Handling:
- turbulence_params raises DomainError for non-positive mean wind
- WindParams rejects non-positive time constants and negative gains
- Nothing here guards v_m + v_s > 0; the engine checks the effective wind
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

DEFAULT_LENGTH_SCALE = 200.0
DEFAULT_TURBULENCE_INTENSITY = 0.1
_UINT64_MASK = (1 << 64) - 1
_TWO_POW_M53 = 2.0**-53


@dataclass(frozen=True)
class WindParams:
    """Turbulence filter constants; arrays are allowed for per-generator values."""

    p1: float | np.ndarray
    p2: float | np.ndarray
    k_gain: float | np.ndarray
    noise_seed: int = 0

    def __post_init__(self):
        if not (np.all(np.asarray(self.p1) > 0) and np.all(np.asarray(self.p2) > 0)):
            raise DomainError("turbulence time constants p1, p2 must be positive")
        if not np.all(np.asarray(self.k_gain) >= 0):
            raise DomainError("turbulence gain must be non-negative")
        if not 0 <= self.noise_seed <= _UINT64_MASK:
            raise DomainError(f"noise seed must be an unsigned 64-bit integer, got {self.noise_seed}")

    def system_matrix(self) -> np.ndarray:
        """The 2×2 companion matrix (scalar parameters only)."""
        p1, p2 = float(self.p1), float(self.p2)
        return np.array([[0.0, 1.0], [-1.0 / (p1 * p2), -(p1 + p2) / (p1 * p2)]])


@dataclass(frozen=True)
class WindState:
    v_m: float | np.ndarray
    v_s: float | np.ndarray = 0.0
    v_s_dot: float | np.ndarray = 0.0


def turbulence_params(
    v_m: float,
    length_scale: float = DEFAULT_LENGTH_SCALE,
    turbulence_intensity: float = DEFAULT_TURBULENCE_INTENSITY,
    noise_seed: int = 0,
    p1: float | None = None,
    p2: float | None = None,
    k_gain: float | None = None,
) -> WindParams:
    """Default map p1 = L/v_m, p2 = p1/4, k = σ_t·√(2(p1 + p2)), σ_t = intensity·v_m.

    The gain makes the stationary variance of v_s equal σ_t² under unit-intensity
    white noise. Explicit p1, p2, k_gain override the map one by one.
    """
    if not v_m > 0:
        raise DomainError(f"mean wind speed must be positive, got {v_m}")
    if p1 is None:
        p1 = length_scale / v_m
    if p2 is None:
        p2 = p1 / 4.0
    if k_gain is None:
        k_gain = turbulence_intensity * v_m * math.sqrt(2.0 * (p1 + p2))
    return WindParams(p1=p1, p2=p2, k_gain=k_gain, noise_seed=noise_seed)


def turbulence_deriv(state: WindState, params: WindParams, e):
    """(v̇_s, v̈_s) of the turbulence filter."""
    prod = params.p1 * params.p2
    v_s_ddot = (-state.v_s - (params.p1 + params.p2) * state.v_s_dot + params.k_gain * e) / prod
    return state.v_s_dot, v_s_ddot


def effective_wind(state: WindState):
    return state.v_m + state.v_s


def derive_seed(base_seed: int, index: int) -> int:
    """Per-generator seed: base XOR 0-based generator index."""
    return (base_seed ^ index) & _UINT64_MASK


def _box_muller(raw: np.ndarray) -> float:
    u1 = (int(raw[0] >> np.uint64(11)) + 1) * _TWO_POW_M53
    u2 = int(raw[1] >> np.uint64(11)) * _TWO_POW_M53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def noise_at(seed: int, step: int) -> float:
    """Standard-normal sample number `step` of the stream seeded with `seed`."""
    bit_generator = np.random.PCG64(seed)
    bit_generator.advance(2 * step)
    return _box_muller(bit_generator.random_raw(2))


class NoiseStream:
    """Sequential standard-normal samples, two raw PCG64 draws per sample.

    Sample k equals noise_at(seed, k).
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._bit_generator = np.random.PCG64(seed)
        self.position = 0

    def next(self) -> float:
        self.position += 1
        return _box_muller(self._bit_generator.random_raw(2))


class WindField:
    """Mean winds, turbulence constants and noise streams for the whole farm.

    Turbulence states (v_s, v̇_s) live in the integrator's state vector; this
    object only supplies the held forcing per macro-step and the derivatives.
    """

    def __init__(
        self,
        means: np.ndarray,
        turbulence_enabled: bool = False,
        base_seed: int = 0,
        length_scale: float = DEFAULT_LENGTH_SCALE,
        turbulence_intensity: float = DEFAULT_TURBULENCE_INTENSITY,
        p1: float | None = None,
        p2: float | None = None,
        k_gain: float | None = None,
    ):
        self.means = np.asarray(means, dtype=float)
        self.n = len(self.means)
        self.turbulence_enabled = turbulence_enabled
        self.base_seed = base_seed
        per_generator = [
            turbulence_params(
                float(v_m), length_scale, turbulence_intensity, derive_seed(base_seed, i), p1=p1, p2=p2, k_gain=k_gain
            )
            for i, v_m in enumerate(self.means)
        ]
        self.params = WindParams(
            p1=np.array([p.p1 for p in per_generator]),
            p2=np.array([p.p2 for p in per_generator]),
            k_gain=np.array([p.k_gain for p in per_generator]),
            noise_seed=base_seed,
        )
        self.streams = [NoiseStream(p.noise_seed) for p in per_generator]

    def forcing(self, dt: float) -> np.ndarray:
        """Held white-noise input for the next macro-step: N(0, 1)/√dt per generator."""
        if not self.turbulence_enabled:
            return np.zeros(self.n)
        return np.array([stream.next() for stream in self.streams]) / math.sqrt(dt)

    def derivs(self, v_s: np.ndarray, v_s_dot: np.ndarray, e: np.ndarray):
        return turbulence_deriv(WindState(self.means, v_s, v_s_dot), self.params, e)

    def effective(self, v_s: np.ndarray) -> np.ndarray:
        return effective_wind(WindState(self.means, v_s))
