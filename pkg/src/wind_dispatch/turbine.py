"""Aerodynamic and electromechanical model of a single DFIG wind generator.

All functions are pure and accept floats or numpy arrays (one entry per
generator); parameters are shared scalars.

Units:
- ω_r is in p.u. of the synchronous speed ω_s; where the model needs rad/s
  (slip term, torque denominator) the conversion ω_r·ω_s happens here.
- Torques, voltages and currents are p.u. on the generator base S_b.
- Mechanical power is in W; divide by a base for p.u.

Error Handling:
- Out-of-domain inputs (non-positive wind, stalled rotor, λ ≤ 0) raise
  DomainError; nothing is clamped silently
- power_coefficient returns the raw, possibly negative, curve value; callers
  that need physical power clamp it at 0
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError

logger = logging.getLogger("wind-dispatch")

# C_p = CP_GAIN·x·exp(−CP_DECAY·x), x = 1/(λ + 0.08θ) − CP_OFFSET/(θ³ + 1)
CP_GAIN = 0.22 * 116.0
CP_DECAY = 12.5
CP_OFFSET = 0.035
# λ where x = 0, i.e. the right edge of the positive C_p lobe
LAMBDA_ZERO_CP = 1.0 / CP_OFFSET
LAMBDA_SEARCH_MAX = 30.0
STATIONARITY_TOL = 1e-9


def _positive(value) -> bool:
    return bool(np.all(np.asarray(value) > 0))


@dataclass(frozen=True)
class GridBoundary:
    """Infinite-bus boundary seen by every generator."""

    v_s: float = 1.0
    omega_s: float = 2.0 * math.pi * 60.0
    rho: float = 1.225

    def __post_init__(self):
        for name in ("v_s", "omega_s", "rho"):
            if not getattr(self, name) > 0:
                raise DomainError(f"GridBoundary.{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class WgParams:
    """Technical characteristics of one wind generator.

    swept_area defaults to πR². cp_max and lambda_opt are filled from the
    C_p curve maximum when not given; given values must be stationary.
    """

    rotor_radius: float = 45.0
    base_power: float = 2.0e6
    inertia: float = 3.0
    stator_reactance: float = 3.6
    stator_transient_reactance: float = 0.178
    rotor_reactance: float = 3.58
    mutual_reactance: float = 3.5
    open_circuit_time_const: float = 0.95
    gearbox_ratio: float = 5.0
    poles: int = 4
    swept_area: float | None = None
    cp_max: float | None = field(default=None)
    lambda_opt: float | None = field(default=None)

    def __post_init__(self):
        positive = (
            "rotor_radius", "base_power", "inertia", "stator_reactance", "stator_transient_reactance",
            "rotor_reactance", "mutual_reactance", "open_circuit_time_const", "gearbox_ratio", "poles",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise DomainError(f"WgParams.{name} must be positive, got {getattr(self, name)}")
        if not self.stator_reactance > self.stator_transient_reactance:
            raise DomainError("WgParams requires stator_reactance > stator_transient_reactance")
        if int(self.poles) != self.poles or self.poles % 2 != 0:
            raise DomainError(f"WgParams.poles must be an even integer, got {self.poles}")

        area = math.pi * self.rotor_radius**2
        if self.swept_area is None:
            object.__setattr__(self, "swept_area", area)
        elif abs(self.swept_area - area) > 1e-12 * area:
            raise DomainError(f"swept_area {self.swept_area} does not equal πR² = {area}")

        if self.cp_max is None or self.lambda_opt is None:
            lam, peak = cp_max()
            object.__setattr__(self, "lambda_opt", lam)
            object.__setattr__(self, "cp_max", peak)
        else:
            slope, _ = cp_partials(self.lambda_opt)
            if abs(slope) >= STATIONARITY_TOL:
                raise DomainError(f"lambda_opt={self.lambda_opt} is not a stationary point of C_p (slope {slope:.3e})")

    @property
    def speed_ratio(self) -> float:
        """The 2k/p factor of the tip-speed ratio."""
        return 2.0 * self.gearbox_ratio / self.poles


@dataclass(frozen=True)
class WgState:
    """Electrical and mechanical state of one generator (or a vector of them)."""

    e_d_prime: float | np.ndarray
    e_q_prime: float | np.ndarray
    omega_r: float | np.ndarray
    theta: float = 0.0


def tip_speed_ratio(omega_r, v_w, params: WgParams):
    """λ = (2k/p)(ω_r R / v_w) with ω_r in p.u."""
    if not _positive(v_w):
        raise DomainError("wind speed must be positive")
    return params.speed_ratio * omega_r * params.rotor_radius / v_w


def lambda_partial(v_w, params: WgParams):
    """∂λ/∂ω_r, constant in ω_r."""
    if not _positive(v_w):
        raise DomainError("wind speed must be positive")
    return params.speed_ratio * params.rotor_radius / v_w


def power_coefficient(lam, theta=0.0):
    """Raw C_p(λ, θ); negative beyond λ = 200/7 at θ = 0."""
    lam = np.asarray(lam, dtype=float)
    denom = lam + 0.08 * theta
    pitch = theta**3 + 1.0
    if np.any(denom == 0) or np.any(np.asarray(pitch) == 0):
        raise DomainError("power coefficient undefined: λ + 0.08θ = 0 or θ³ + 1 = 0")
    x = 1.0 / denom - CP_OFFSET / pitch
    c_p = CP_GAIN * x * np.exp(-CP_DECAY * x)
    return float(c_p) if np.ndim(c_p) == 0 else c_p


def cp_partials(lam):
    """(∂C_p/∂λ, ∂²C_p/∂λ²) of C_p(λ, 0) in closed form."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise DomainError("tip-speed ratio must be positive")
    x = 1.0 / lam - CP_OFFSET
    x_l = -1.0 / lam**2
    x_ll = 2.0 / lam**3
    decay = np.exp(-CP_DECAY * x)
    g1 = CP_GAIN * decay * (1.0 - CP_DECAY * x)
    g2 = CP_GAIN * CP_DECAY * decay * (CP_DECAY * x - 2.0)
    d1 = g1 * x_l
    d2 = g2 * x_l**2 + g1 * x_ll
    if d1.ndim == 0:
        return float(d1), float(d2)
    return d1, d2


@lru_cache(maxsize=1)
def _locate_cp_peak() -> tuple[float, float]:
    grid = np.linspace(LAMBDA_SEARCH_MAX / 1000.0, LAMBDA_SEARCH_MAX, 1000)
    values = power_coefficient(grid)
    i = int(np.clip(np.argmax(values), 1, len(grid) - 2))
    coarse = minimize_scalar(
        lambda lam: -power_coefficient(lam), bracket=(grid[i - 1], grid[i], grid[i + 1]), method="golden", tol=1e-10
    )
    # golden section stalls near 1e-8 in λ; polish on the analytic slope
    lo, hi = coarse.x - 1e-3, coarse.x + 1e-3
    lam_opt = brentq(lambda lam: cp_partials(lam)[0], lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    peak = power_coefficient(lam_opt)
    logger.debug(f"C_p peak located at λ={lam_opt:.12f}, C_p={peak:.12f}")
    return float(lam_opt), float(peak)


def cp_max(params: WgParams | None = None) -> tuple[float, float]:
    """(λ_opt, C̄_p) of C_p(·, 0) over λ ∈ (0, 30].

    The curve is shared by every generator, so params only short-circuits to
    values already cached on it.
    """
    if params is not None and params.cp_max is not None and params.lambda_opt is not None:
        return params.lambda_opt, params.cp_max
    return _locate_cp_peak()


def tip_speed_ratio_for_utilization(z: float, params: WgParams) -> float:
    """Invert z = C_p(λ)/C̄_p on the over-speed branch λ > λ_opt.

    Raises:
        DomainError: if z is outside (0, 1).
    """
    if not 0.0 < z < 1.0:
        raise DomainError(f"utilization must lie in (0, 1) for inversion, got {z}")
    lam_opt, peak = cp_max(params)
    return float(brentq(lambda lam: power_coefficient(lam) / peak - z, lam_opt, LAMBDA_ZERO_CP, xtol=1e-14))


def tip_speed_ratio_rate(omega_r, v_w, omega_r_dot, params: WgParams, v_w_dot=0.0):
    """λ̇ = (∂λ/∂ω_r)·ω̇_r − (λ/v_w)·v̇_w."""
    lam = tip_speed_ratio(omega_r, v_w, params)
    return lambda_partial(v_w, params) * omega_r_dot - lam / v_w * v_w_dot


def mechanical_power(v_w, c_p, params: WgParams, grid: GridBoundary):
    """P_m = ½ρ C_p A v_w³ in W."""
    return 0.5 * grid.rho * c_p * params.swept_area * np.power(v_w, 3)


def mechanical_power_pu(v_w, c_p, params: WgParams, grid: GridBoundary, base_power: float | None = None):
    """P_m divided by base_power (default: the generator rating S_b)."""
    return mechanical_power(v_w, c_p, params, grid) / (base_power or params.base_power)


def max_mechanical_power(v_w, params: WgParams, grid: GridBoundary):
    """P̄_m, the MPPT power at the current wind."""
    return mechanical_power(v_w, params.cp_max, params, grid)


def mechanical_torque(v_w, omega_r, lam, theta, params: WgParams, grid: GridBoundary, c_p=None):
    """T_m in p.u.; c_p overrides the curve value (the engine passes a clamped C_p)."""
    if not _positive(omega_r):
        raise DomainError("rotor stalled")
    if c_p is None:
        c_p = power_coefficient(lam, theta)
    return mechanical_power(v_w, c_p, params, grid) / (params.base_power * omega_r)


def mechanical_torque_rate(v_w, omega_r, omega_r_dot, params: WgParams, grid: GridBoundary, v_w_dot=0.0, c_p_floor=True):
    """dT_m/dt from differentiating T_m = c·C_p(λ)·v_w³/ω_r along (ω̇_r, v̇_w)."""
    if not _positive(omega_r):
        raise DomainError("rotor stalled")
    lam = tip_speed_ratio(omega_r, v_w, params)
    c_p = power_coefficient(lam)
    d1, _ = cp_partials(lam)
    if c_p_floor:
        # flat where the curve is clamped at zero
        d1 = np.where(np.asarray(c_p) > 0, d1, 0.0)
        c_p = np.maximum(c_p, 0.0)
    lam_dot = tip_speed_ratio_rate(omega_r, v_w, omega_r_dot, params, v_w_dot)
    scale = 0.5 * grid.rho * params.swept_area / params.base_power
    rate = scale * (
        d1 * lam_dot * v_w**3 / omega_r
        + 3.0 * c_p * v_w**2 * v_w_dot / omega_r
        - c_p * v_w**3 * omega_r_dot / omega_r**2
    )
    return float(rate) if np.ndim(rate) == 0 else rate


def mechanical_torque_rate_fd(v_w, omega_r, omega_r_dot, params: WgParams, grid: GridBoundary, v_w_dot=0.0, h=1e-6):
    """Central difference of T_m over ±h seconds of the current motion."""

    def torque(direction: float):
        omega = omega_r + direction * h * omega_r_dot
        wind = v_w + direction * h * v_w_dot
        c_p = np.maximum(power_coefficient(tip_speed_ratio(omega, wind, params)), 0.0)
        return mechanical_torque(wind, omega, None, 0.0, params, grid, c_p=c_p)

    return (torque(1.0) - torque(-1.0)) / (2.0 * h)


def stator_currents(e_d_prime, e_q_prime, grid: GridBoundary, params: WgParams):
    """(I_ds, I_qs) with stator resistance neglected and V_s on the q-axis."""
    x = params.stator_transient_reactance
    return (e_q_prime - grid.v_s) / x, -e_d_prime / x


def electrical_torque(e_q_prime, grid: GridBoundary, params: WgParams):
    return e_q_prime * grid.v_s / params.stator_transient_reactance


def rotor_voltage_coupling(grid: GridBoundary, params: WgParams) -> float:
    """ω_s X_m / X_r, the gain from rotor voltage to Ė′."""
    return grid.omega_s * params.mutual_reactance / params.rotor_reactance


def rotor_voltage_drift(state: WgState, grid: GridBoundary, params: WgParams):
    """(Ė_d′, Ė_q′) with both rotor voltages at zero."""
    i_ds, i_qs = stator_currents(state.e_d_prime, state.e_q_prime, grid, params)
    gap = params.stator_reactance - params.stator_transient_reactance
    slip = grid.omega_s * (1.0 - state.omega_r)
    t0 = params.open_circuit_time_const
    d_drift = -(state.e_d_prime - gap * i_qs) / t0 + slip * state.e_q_prime
    q_drift = -(state.e_q_prime + gap * i_ds) / t0 - slip * state.e_d_prime
    return d_drift, q_drift


def rotor_voltage_derivs(state: WgState, v_qr, v_dr, grid: GridBoundary, params: WgParams):
    """(Ė_d′, Ė_q′) of the reduced-order rotor circuit."""
    d_drift, q_drift = rotor_voltage_drift(state, grid, params)
    coupling = rotor_voltage_coupling(grid, params)
    return d_drift - coupling * v_qr, q_drift + coupling * v_dr


def rotor_speed_deriv(t_m, t_e, params: WgParams, grid: GridBoundary):
    """Swing law ω̇_r = ω_s/(2H)·(T_m − T_e)."""
    return grid.omega_s / (2.0 * params.inertia) * (t_m - t_e)
