"""Cooperative torque controller for the rotor-side converter.

Each generator turns the consensus law ż_i = −k_α(z_i − z_prev) into an
electrical torque reference T_e* by inverting the chain rule

    ż_i = (1/C̄_p)·(∂C_p/∂λ)·(∂λ/∂ω_r)·(ω_s/2H)·(T_m − T_e)

and drives T_e to T_e* through V_dr so that V_e = ½(T_e − T_e*)² decays
as e^(−2k_β t). z_i is measured locally as C_p/C̄_p, never taken from
integrated protocol state.

Error Handling:
- torque_reference and torque_reference_rate raise SingularityError when
  |∂C_p/∂λ| falls under eps_sing for any generator
- CooperativeTorqueController.evaluate never raises on singular points: it
  falls back to T_e* = T_m, Ṫ_e* = Ṫ_m for the affected generators, counts
  it and logs the first occurrence per generator
- V_dr beyond ±vdr_limit is clamped, counted and logged once per generator
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SingularityError
from .turbine import (
    GridBoundary,
    WgParams,
    WgState,
    cp_partials,
    electrical_torque,
    lambda_partial,
    mechanical_torque,
    power_coefficient,
    rotor_speed_deriv,
    rotor_voltage_coupling,
    rotor_voltage_drift,
    tip_speed_ratio,
    tip_speed_ratio_rate,
)

logger = logging.getLogger("wind-dispatch")

DEFAULT_EPS_SING = 1e-8
DEFAULT_VDR_LIMIT = 1.0
RATE_FORMS = ("derived", "appendix")
VQR_POLICIES = ("hold", "zero")


@dataclass(frozen=True)
class ControllerInputs:
    """Local measurements plus what the predecessor sent (scalars or per-generator arrays)."""

    state: WgState
    params: WgParams
    grid: GridBoundary
    v_w: float | np.ndarray
    z_prev: float | np.ndarray = 0.0
    z_prev_dot: float | np.ndarray = 0.0
    k_alpha: float | np.ndarray = 1.0
    k_beta: float | np.ndarray = 1.0


@dataclass(frozen=True)
class ControllerOutputs:
    t_e_star: np.ndarray
    t_e_star_dot: np.ndarray
    v_dr: np.ndarray
    v_qr: np.ndarray
    v_e: np.ndarray
    saturated: np.ndarray
    singular: np.ndarray


@dataclass(frozen=True)
class ControllerSettings:
    eps_sing: float = DEFAULT_EPS_SING
    vdr_limit: float = DEFAULT_VDR_LIMIT
    vqr_policy: str = "hold"
    rate_form: str = "derived"
    tm_rate: str = "analytic"

    def __post_init__(self):
        if self.rate_form not in RATE_FORMS:
            raise DomainError(f"unknown torque-reference rate form '{self.rate_form}'")
        if self.vqr_policy not in VQR_POLICIES:
            raise DomainError(f"unknown V_qr policy '{self.vqr_policy}'")


def _check_inputs(inputs: ControllerInputs) -> None:
    if not np.all(np.asarray(inputs.v_w) > 0):
        raise DomainError("wind speed must be positive")
    if not np.all(np.asarray(inputs.state.omega_r) > 0):
        raise DomainError("rotor stalled")


def _operating_point(inputs: ControllerInputs):
    """λ, C_p, ∂C_p/∂λ, ∂²C_p/∂λ², ∂λ/∂ω_r and the swing gain K = (∂λ/∂ω_r)·ω_s/(2H)."""
    _check_inputs(inputs)
    lam = tip_speed_ratio(inputs.state.omega_r, inputs.v_w, inputs.params)
    c_p = power_coefficient(lam)
    d1, d2 = cp_partials(lam)
    lam_w = lambda_partial(inputs.v_w, inputs.params)
    swing = lam_w * inputs.grid.omega_s / (2.0 * inputs.params.inertia)
    return lam, c_p, d1, d2, lam_w, swing


def utilization(inputs: ControllerInputs):
    """Measured z = C_p/C̄_p."""
    _, c_p, *_ = _operating_point(inputs)
    return c_p / inputs.params.cp_max


def measured_utilization_rate(lam, c_p, lam_rate, params: WgParams):
    """ż = (∂C_p/∂λ)·λ̇/C̄_p, flat where C_p is clamped at zero."""
    d1, _ = cp_partials(lam)
    return np.where(np.asarray(c_p) > 0, d1, 0.0) * lam_rate / params.cp_max


def utilization_rate(inputs: ControllerInputs, t_e=None):
    """Ċ_p/C̄_p along the swing law; t_e defaults to the torque implied by E_q′."""
    lam, c_p, *_ = _operating_point(inputs)
    t_m = mechanical_torque(inputs.v_w, inputs.state.omega_r, lam, 0.0, inputs.params, inputs.grid)
    if t_e is None:
        t_e = electrical_torque(inputs.state.e_q_prime, inputs.grid, inputs.params)
    omega_r_dot = rotor_speed_deriv(t_m, t_e, inputs.params, inputs.grid)
    lam_rate = tip_speed_ratio_rate(inputs.state.omega_r, inputs.v_w, omega_r_dot, inputs.params)
    rate = measured_utilization_rate(lam, c_p, lam_rate, inputs.params)
    return float(rate) if np.ndim(rate) == 0 else rate


def _guard(d1, eps_sing: float) -> None:
    if np.any(np.abs(d1) < eps_sing):
        raise SingularityError("operating at C_p stationary point")


def _reference(t_m, gap, k_alpha, d1, swing, cp_max):
    return t_m + k_alpha * cp_max * gap / (d1 * swing)


def _reference_rate(t_m_dot, gap, gap_dot, gain, d1, d2, curvature_rate, swing, cp_max):
    return t_m_dot + gain * cp_max / swing / d1**2 * (gap_dot * d1 - gap * d2 * curvature_rate)


def _rate_terms(form: str, inputs: ControllerInputs, lam_w, omega_r_dot):
    """(gain, λ̇-like factor) of the curvature term for each rate form."""
    if form == "derived":
        return inputs.k_alpha, lam_w * omega_r_dot
    if form == "appendix":
        return inputs.k_beta, omega_r_dot
    raise DomainError(f"unknown torque-reference rate form '{form}'")


def torque_reference(inputs: ControllerInputs, eps_sing: float = DEFAULT_EPS_SING):
    """T_e* that makes the measured utilization follow −k_α(z_i − z_prev)."""
    lam, c_p, d1, _, _, swing = _operating_point(inputs)
    _guard(d1, eps_sing)
    t_m = mechanical_torque(inputs.v_w, inputs.state.omega_r, lam, 0.0, inputs.params, inputs.grid)
    gap = c_p / inputs.params.cp_max - inputs.z_prev
    return _reference(t_m, gap, inputs.k_alpha, d1, swing, inputs.params.cp_max)


def torque_reference_rate(
    inputs: ControllerInputs,
    omega_r_dot,
    t_m_dot,
    z_dot,
    z_prev_dot,
    form: str = "derived",
    eps_sing: float = DEFAULT_EPS_SING,
):
    """Ṫ_e* by differentiating T_e* along the motion.

    form="derived" is the exact chain rule (gain k_α, λ̇ = (∂λ/∂ω_r)·ω̇_r);
    form="appendix" uses gain k_β and ω̇_r in the curvature term.
    """
    _, c_p, d1, d2, lam_w, swing = _operating_point(inputs)
    gain, curvature_rate = _rate_terms(form, inputs, lam_w, omega_r_dot)
    _guard(d1, eps_sing)
    gap = c_p / inputs.params.cp_max - inputs.z_prev
    return _reference_rate(
        t_m_dot, gap, z_dot - z_prev_dot, gain, d1, d2, curvature_rate, swing, inputs.params.cp_max
    )


def clf_value(t_e, t_e_star):
    return 0.5 * (t_e - t_e_star) ** 2


def gamma_term(state: WgState, grid: GridBoundary, params: WgParams):
    """Drift of Ė_q′ that V_dr must cancel, in V_dr units."""
    _, q_drift = rotor_voltage_drift(state, grid, params)
    return q_drift / rotor_voltage_coupling(grid, params)


def rsc_control(inputs: ControllerInputs, t_e_star, t_e_star_dot):
    """V_dr such that Ṫ_e = Ṫ_e* − k_β(T_e − T_e*) in closed loop."""
    grid, params = inputs.grid, inputs.params
    t_e = electrical_torque(inputs.state.e_q_prime, grid, params)
    bracket = t_e_star_dot - inputs.k_beta * (t_e - t_e_star)
    scale = 1.0 / rotor_voltage_coupling(grid, params)
    return scale * params.stator_transient_reactance / grid.v_s * bracket - gamma_term(inputs.state, grid, params)


def vqr_policy(state: WgState, grid: GridBoundary, params: WgParams, policy: str = "hold"):
    """V_qr making Ė_d′ = 0 at `state` ("hold"), or 0 ("zero").

    The engine solves "hold" once at the initial operating point and keeps it.
    """
    if policy == "zero":
        zeros = np.zeros(np.shape(state.omega_r))
        return float(zeros) if zeros.ndim == 0 else zeros
    if policy != "hold":
        raise DomainError(f"unknown V_qr policy '{policy}'")
    d_drift, _ = rotor_voltage_drift(state, grid, params)
    return d_drift / rotor_voltage_coupling(grid, params)


@dataclass
class CooperativeTorqueController:
    """Vectorized farm-wide controller with singular-point fallback and V_dr saturation."""

    settings: ControllerSettings = field(default_factory=ControllerSettings)
    saturation_count: int = 0
    singular_count: int = 0
    _warned_saturation: set = field(default_factory=set)
    _warned_singular: set = field(default_factory=set)

    def evaluate(
        self,
        inputs: ControllerInputs,
        v_qr,
        omega_r_dot,
        t_m,
        t_m_dot,
        z,
        z_dot,
        time: float = 0.0,
        count: bool = False,
    ) -> ControllerOutputs:
        """Controller outputs for every generator.

        t_m, z, z_dot come from the engine's turbine algebra so the controller
        sees the same clamped C_p as the power balance. count=True records
        saturation and fallback events (once per macro-step).
        """
        _, _, d1, d2, lam_w, swing = _operating_point(inputs)
        cp_max = inputs.params.cp_max
        singular = np.abs(d1) < self.settings.eps_sing
        safe_d1 = np.where(singular, 1.0, d1)
        gap = z - inputs.z_prev
        gain, curvature_rate = _rate_terms(self.settings.rate_form, inputs, lam_w, omega_r_dot)

        t_e_star = _reference(t_m, gap, inputs.k_alpha, safe_d1, swing, cp_max)
        t_e_star_dot = _reference_rate(
            t_m_dot, gap, z_dot - inputs.z_prev_dot, gain, safe_d1, d2, curvature_rate, swing, cp_max
        )
        t_e_star = np.where(singular, t_m, t_e_star)
        t_e_star_dot = np.where(singular, t_m_dot, t_e_star_dot)

        v_dr_raw = rsc_control(inputs, t_e_star, t_e_star_dot)
        limit = self.settings.vdr_limit
        saturated = np.abs(v_dr_raw) > limit
        v_dr = np.clip(v_dr_raw, -limit, limit)

        t_e = electrical_torque(inputs.state.e_q_prime, inputs.grid, inputs.params)
        if count:
            self._record(saturated, singular, time)
        return ControllerOutputs(
            t_e_star=t_e_star,
            t_e_star_dot=t_e_star_dot,
            v_dr=v_dr,
            v_qr=np.broadcast_to(v_qr, np.shape(t_e)),
            v_e=clf_value(t_e, t_e_star),
            saturated=saturated,
            singular=singular,
        )

    def _record(self, saturated: np.ndarray, singular: np.ndarray, time: float) -> None:
        if saturated.any():
            self.saturation_count += 1
            for i in np.flatnonzero(saturated):
                if i not in self._warned_saturation:
                    self._warned_saturation.add(i)
                    logger.warning(f"V_dr saturated at ±{self.settings.vdr_limit} for generator {i + 1} at t={time:.6g}s")
        if singular.any():
            self.singular_count += 1
            for i in np.flatnonzero(singular):
                if i not in self._warned_singular:
                    self._warned_singular.add(i)
                    logger.warning(f"generator {i + 1} at C_p stationary point at t={time:.6g}s, holding T_e* = T_m")
