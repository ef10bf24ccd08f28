"""
Tests for the cooperative torque controller
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from wind_dispatch.controller import (
    ControllerInputs,
    ControllerSettings,
    CooperativeTorqueController,
    clf_value,
    gamma_term,
    rsc_control,
    torque_reference,
    torque_reference_rate,
    utilization,
    utilization_rate,
    vqr_policy,
)
from wind_dispatch.errors import DomainError, SingularityError
from wind_dispatch.turbine import (
    WgState,
    cp_partials,
    electrical_torque,
    lambda_partial,
    mechanical_torque,
    mechanical_torque_rate,
    power_coefficient,
    rotor_voltage_coupling,
    rotor_voltage_derivs,
    rotor_voltage_drift,
    tip_speed_ratio,
)

V_W = 7.0


def make_inputs(params, grid, omega=0.94, z_prev=0.7, z_prev_dot=0.0, e_d=0.01, e_q=0.06, k_alpha=10.0, k_beta=20.0):
    state = WgState(e_d_prime=e_d, e_q_prime=e_q, omega_r=omega)
    return ControllerInputs(state, params, grid, V_W, z_prev, z_prev_dot, k_alpha, k_beta)


def omega_at_peak(params):
    return params.lambda_opt * V_W / (params.speed_ratio * params.rotor_radius)


class TestUtilization:
    """Test the locally measured utilization."""

    def test_measured_from_cp(self, params, grid):
        """z = C_p/C̄_p at the current λ."""
        inputs = make_inputs(params, grid)
        lam = tip_speed_ratio(0.94, V_W, params)
        assert utilization(inputs) == pytest.approx(power_coefficient(lam) / params.cp_max)

    def test_reference_torque_realizes_consensus_rate(self, params, grid):
        """With T_e = T_e* the utilization moves at −k_α(z − z_prev)."""
        inputs = make_inputs(params, grid)
        t_e_star = torque_reference(inputs)
        z = utilization(inputs)
        assert utilization_rate(inputs, t_e=t_e_star) == pytest.approx(-10.0 * (z - 0.7), rel=1e-12)

    def test_rejects_bad_wind(self, params, grid):
        """Non-positive wind is a domain error."""
        inputs = ControllerInputs(WgState(0.0, 0.06, 0.94), params, grid, 0.0)
        with pytest.raises(DomainError):
            utilization(inputs)


class TestTorqueReference:
    """Test T_e* and its rate."""

    def test_agreement_gives_mechanical_torque(self, params, grid):
        """z = z_prev means no acceleration is requested: T_e* = T_m."""
        base = make_inputs(params, grid)
        inputs = make_inputs(params, grid, z_prev=utilization(base))
        lam = tip_speed_ratio(0.94, V_W, params)
        assert torque_reference(inputs) == pytest.approx(mechanical_torque(V_W, 0.94, lam, 0.0, params, grid))

    def test_singular_at_peak(self, params, grid):
        """At λ_opt the inversion is undefined."""
        inputs = make_inputs(params, grid, omega=omega_at_peak(params))
        with pytest.raises(SingularityError):
            torque_reference(inputs)

    def test_rate_matches_trajectory_finite_difference(self, params, grid):
        """Ṫ_e* (derived form) is the time derivative of T_e* along the motion."""
        omega0, omega_dot, zp0, zp_dot = 0.94, -0.01, 0.72, 0.05
        h = 1e-5

        def reference_at(t):
            return torque_reference(make_inputs(params, grid, omega=omega0 + omega_dot * t, z_prev=zp0 + zp_dot * t))

        numeric = (reference_at(h) - reference_at(-h)) / (2 * h)
        inputs = make_inputs(params, grid, omega=omega0, z_prev=zp0, z_prev_dot=zp_dot)
        lam = tip_speed_ratio(omega0, V_W, params)
        d1, _ = cp_partials(lam)
        z_dot = d1 * lambda_partial(V_W, params) * omega_dot / params.cp_max
        t_m_dot = mechanical_torque_rate(V_W, omega0, omega_dot, params, grid)
        analytic = torque_reference_rate(inputs, omega_dot, t_m_dot, z_dot, zp_dot, form="derived")
        assert analytic == pytest.approx(numeric, rel=1e-3)

    def test_appendix_form_differs(self, params, grid):
        """The literal expansion uses k_β and bare ω̇_r in the curvature term."""
        inputs = make_inputs(params, grid)
        derived = torque_reference_rate(inputs, -0.01, 0.0, 0.0, 0.0, form="derived")
        appendix = torque_reference_rate(inputs, -0.01, 0.0, 0.0, 0.0, form="appendix")
        assert derived != pytest.approx(appendix)

    def test_unknown_form(self, params, grid):
        """Only the two documented forms exist."""
        with pytest.raises(DomainError):
            torque_reference_rate(make_inputs(params, grid), 0.0, 0.0, 0.0, 0.0, form="other")


class TestRotorSideControl:
    """Test V_dr, γ and the V_qr policies."""

    def test_closed_loop_torque_identity(self, params, grid):
        """Under V_dr the electrical torque obeys Ṫ_e = Ṫ_e* − k_β(T_e − T_e*)."""
        inputs = make_inputs(params, grid)
        t_e_star, t_e_star_dot = 0.31, 0.02
        v_dr = rsc_control(inputs, t_e_star, t_e_star_dot)
        _, e_q_dot = rotor_voltage_derivs(inputs.state, 0.0, v_dr, grid, params)
        t_e_dot = grid.v_s / params.stator_transient_reactance * e_q_dot
        t_e = electrical_torque(inputs.state.e_q_prime, grid, params)
        assert t_e_dot == pytest.approx(t_e_star_dot - 20.0 * (t_e - t_e_star), rel=1e-9)

    def test_gamma_cancels_drift(self, params, grid):
        """With a zero bracket V_dr = −γ freezes E_q′."""
        state = WgState(0.01, 0.06, 0.94)
        gamma = gamma_term(state, grid, params)
        _, e_q_dot = rotor_voltage_derivs(state, 0.0, -gamma, grid, params)
        assert e_q_dot == pytest.approx(0.0, abs=1e-12)

    def test_hold_policy_freezes_e_d(self, params, grid):
        """The held V_qr makes Ė_d′ vanish at the state it was solved for."""
        state = WgState(0.01, 0.06, 0.94)
        v_qr = vqr_policy(state, grid, params, "hold")
        e_d_dot, _ = rotor_voltage_derivs(state, v_qr, 0.0, grid, params)
        assert e_d_dot == pytest.approx(0.0, abs=1e-12)

    def test_zero_policy(self, params, grid):
        """"zero" returns zeros shaped like the state."""
        assert vqr_policy(WgState(0.0, 0.06, 0.94), grid, params, "zero") == 0.0
        vector = WgState(np.zeros(3), np.full(3, 0.06), np.full(3, 0.94))
        assert vqr_policy(vector, grid, params, "zero").tolist() == [0.0, 0.0, 0.0]

    def test_clf_value(self):
        """V_e = ½(T_e − T_e*)²."""
        assert clf_value(0.5, 0.3) == pytest.approx(0.02)


class TestCooperativeTorqueController:
    """Test the farm-wide controller with fallbacks."""

    def _vector_inputs(self, params, grid, omega):
        n = len(omega)
        state = WgState(np.zeros(n), np.full(n, 0.06), np.asarray(omega))
        return ControllerInputs(state, params, grid, np.full(n, V_W), np.full(n, 0.7), np.zeros(n), 10.0, 20.0)

    def _evaluate(self, controller, inputs, params, grid):
        omega = inputs.state.omega_r
        lam = tip_speed_ratio(omega, V_W, params)
        c_p = power_coefficient(lam)
        t_m = mechanical_torque(V_W, omega, lam, 0.0, params, grid)
        return controller.evaluate(
            inputs, np.zeros(len(omega)), np.zeros(len(omega)), t_m, np.zeros(len(omega)),
            c_p / params.cp_max, np.zeros(len(omega)), count=True,
        )

    @pytest.mark.parametrize("form", ["derived", "appendix"])
    def test_matches_scalar_functions(self, params, grid, form):
        """Away from the peak T_e*, Ṫ_e* and V_dr equal the scalar laws."""
        controller = CooperativeTorqueController(ControllerSettings(rate_form=form, vdr_limit=1e6))
        omega = np.array([0.94, 0.96])
        inputs = self._vector_inputs(params, grid, omega)
        omega_dot, t_m_dot, z_dot = np.full(2, 0.3), np.full(2, 0.01), np.full(2, 0.02)
        lam = tip_speed_ratio(omega, V_W, params)
        t_m = mechanical_torque(V_W, omega, lam, 0.0, params, grid)
        z = power_coefficient(lam) / params.cp_max
        out = controller.evaluate(inputs, np.zeros(2), omega_dot, t_m, t_m_dot, z, z_dot)

        scalar = make_inputs(params, grid, omega=0.96, e_d=0.0, z_prev=0.7)
        t_e_star = torque_reference(scalar)
        t_e_star_dot = torque_reference_rate(scalar, 0.3, 0.01, 0.02, 0.0, form=form)
        assert out.t_e_star[1] == pytest.approx(t_e_star, rel=1e-14)
        assert out.t_e_star_dot[1] == pytest.approx(t_e_star_dot, rel=1e-12)
        assert out.v_dr[1] == pytest.approx(rsc_control(scalar, t_e_star, t_e_star_dot), rel=1e-12)
        assert not out.singular.any()

    def test_rotor_voltage_laws_share_the_drift(self, params, grid):
        """γ and the held V_qr are the uncontrolled drift divided by the coupling gain."""
        state = WgState(0.02, 0.07, 0.93)
        d_drift, q_drift = rotor_voltage_drift(state, grid, params)
        coupling = rotor_voltage_coupling(grid, params)
        assert gamma_term(state, grid, params) == pytest.approx(q_drift / coupling, rel=1e-15)
        assert vqr_policy(state, grid, params, "hold") == pytest.approx(d_drift / coupling, rel=1e-15)
        assert rotor_voltage_derivs(state, 0.0, 0.0, grid, params) == (d_drift, q_drift)

    def test_singular_fallback(self, params, grid, caplog):
        """At λ_opt the reference falls back to T_m and the event is logged once."""
        controller = CooperativeTorqueController()
        peak = omega_at_peak(params)
        inputs = self._vector_inputs(params, grid, [0.94, peak])
        with caplog.at_level(logging.WARNING, logger="wind-dispatch"):
            out = self._evaluate(controller, inputs, params, grid)
            self._evaluate(controller, inputs, params, grid)
        lam = tip_speed_ratio(peak, V_W, params)
        assert out.singular.tolist() == [False, True]
        assert out.t_e_star[1] == pytest.approx(mechanical_torque(V_W, peak, lam, 0.0, params, grid))
        assert controller.singular_count == 2
        assert sum("stationary point" in r.message for r in caplog.records) == 1

    def test_saturation_clamps_and_counts(self, params, grid):
        """V_dr is clipped to ±vdr_limit."""
        controller = CooperativeTorqueController(ControllerSettings(vdr_limit=1e-6))
        out = self._evaluate(controller, self._vector_inputs(params, grid, [0.94, 0.96]), params, grid)
        assert np.all(np.abs(out.v_dr) <= 1e-6)
        assert out.saturated.all()
        assert controller.saturation_count == 1

    def test_settings_validation(self):
        """Unknown variants are rejected."""
        with pytest.raises(DomainError):
            ControllerSettings(rate_form="exact")
        with pytest.raises(DomainError):
            ControllerSettings(vqr_policy="track")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
