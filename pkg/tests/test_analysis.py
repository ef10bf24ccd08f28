"""
Tests for the protocol analysis and trace metrics
"""

import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.optimize import brentq

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from wind_dispatch.analysis import (
    STABLE_OVER_RANGE,
    AlphaVector,
    SweepResult,
    SweepPoint,
    Verdict,
    alpha_coefficients,
    build_stability_report,
    characteristic_polynomial,
    classify_protocol_run,
    epsilon,
    epsilon_star_sweep,
    equilibrium,
    fast_matrix,
    fast_matrix_spectrum,
    fit_decay_exponent,
    protocol_matrix,
    segment_starts,
    settling_time,
    simulate_fast_subsystem,
    simulate_protocol,
    slow_model_deriv,
    slow_model_solution,
    spectral_abscissa,
    trace_metrics,
)
from wind_dispatch.config import ReferenceSchedule, SweepTemplate, load_scenario
from wind_dispatch.errors import DomainError
from wind_dispatch.protocol import ConsensusState, Gains, protocol_derivs
from wind_dispatch.trace import SimTrace, trace_columns


def sweep_template(k_min=0.05, k_max=50.0, rel_width=0.05):
    return SweepTemplate(
        alpha=np.full(3, 0.2),
        schedule=ReferenceSchedule(((0.0, 0.3),)),
        k_alpha_min=k_min,
        k_alpha_max=k_max,
        t_end=100.0,
        dt=0.01,
        rel_width=rel_width,
        max_iterations=40,
        initial_xi=0.0,
        initial_z=0.0,
    )


class TestAlphaAndEquilibrium:
    """Test α coefficients and the consensus equilibrium."""

    def test_alpha_is_mppt_power(self, params, grid):
        """α_i = ½ρAC̄_p v³, optionally per unit."""
        alpha = alpha_coefficients([8.0, 9.0], params, grid)
        expected = 0.5 * 1.225 * math.pi * 45.0**2 * params.cp_max * np.array([512.0, 729.0])
        assert alpha.values == pytest.approx(expected, rel=1e-14)
        assert alpha.max == pytest.approx(expected[1])
        per_unit = alpha_coefficients([8.0, 9.0], params, grid, base_power=4.0e6)
        assert per_unit.total == pytest.approx(expected.sum() / 4.0e6)

    def test_alpha_rejects_calm(self, params, grid):
        """Non-positive wind has no α."""
        with pytest.raises(DomainError):
            alpha_coefficients([8.0, 0.0], params, grid)

    def test_zero_demand(self):
        """P_d = 0 gives the all-zero equilibrium."""
        xi, z = equilibrium(0.0, AlphaVector(np.array([0.1, 0.2])))
        assert xi == 0.0
        assert z.tolist() == [0.0, 0.0]

    def test_degenerate_alpha(self):
        """Σα = 0 has no equilibrium."""
        with pytest.raises(DomainError):
            equilibrium(0.3, AlphaVector(np.zeros(3)))

    def test_equilibrium_certificates(self):
        """The formula zeroes the protocol and matches the simulated steady state."""
        rng = np.random.default_rng(2024)
        for _ in range(20):
            n = int(rng.integers(2, 11))
            alpha = AlphaVector(rng.uniform(0.2, 1.0, n))
            p_d = float(rng.uniform(0.0, 1.0)) * alpha.total
            xi, z = equilibrium(p_d, alpha)
            xi_dot, z_dot = protocol_derivs(ConsensusState(xi, z), p_d, alpha.values * z, Gains.uniform(n, 100.0, 1.0))
            assert abs(xi_dot) < 1e-14
            assert np.max(np.abs(z_dot)) < 1e-14

            run = simulate_protocol(alpha, 100.0, p_d, 0.0, 0.0, dt=0.01, t_end=40.0)
            assert run.xi_h[-1] == pytest.approx(xi, abs=1e-4)
            assert run.z[-1] == pytest.approx(z, abs=1e-4)


class TestFastSubsystem:
    """Test the boundary-layer matrix A_f."""

    @pytest.mark.parametrize("n", [2, 5, 10])
    def test_characteristic_polynomial_is_binomial(self, n):
        """det(sI − A_f) = (s + 1)^n, so σ(A_f) = {−1}^n."""
        coefficients = characteristic_polynomial(fast_matrix(n))
        assert coefficients.tolist() == [float(math.comb(n, k)) for k in range(n + 1)]
        assert fast_matrix_spectrum(n).tolist() == [-1.0] * n

    def test_characteristic_polynomial_general_matrix(self):
        """Faddeev–LeVerrier agrees with the eigenvalue polynomial on a generic matrix."""
        a = np.random.default_rng(3).normal(size=(5, 5))
        assert np.allclose(characteristic_polynomial(a), np.poly(a), atol=1e-10)

    @pytest.mark.parametrize("n", [2, 5, 10])
    def test_frozen_protocol_matches_matrix_exponential(self, n):
        """With ξ_h frozen, z − ξ_h·1 follows exp(k_α A_f t)."""
        rng = np.random.default_rng(n)
        alpha = AlphaVector(np.full(n, 0.1))
        xi0, z0 = 0.5, rng.uniform(0.2, 0.9, n)
        run = simulate_protocol(alpha, 1.0, 0.0, xi0, z0, dt=1e-3, t_end=2.0, freeze_xi=True)
        a_f = fast_matrix(n)
        worst = max(
            np.max(np.abs(run.z[k] - xi0 - expm(a_f * run.t[k]) @ (z0 - xi0))) for k in range(0, len(run.t), 50)
        )
        assert np.all(run.xi_h == xi0)
        assert worst < 1e-9

    def test_fast_subsystem_integration(self):
        """The τ-scale boundary layer integrates to exp(A_f τ) z̃_0."""
        z_tilde0 = np.array([0.3, -0.2, 0.1, 0.05])
        tau, states = simulate_fast_subsystem(z_tilde0, tau_end=3.0, dtau=1e-3)
        assert np.max(np.abs(states[-1] - expm(fast_matrix(4) * tau[-1]) @ z_tilde0)) < 1e-9


class TestTimeScales:
    """Test ε, the slow model and the two-time-scale property."""

    def test_epsilon(self):
        """ε = ᾱ/k_α, using the smallest gain when heterogeneous."""
        alpha = AlphaVector(np.array([0.04, 0.05]))
        assert epsilon(alpha, 10.0) == pytest.approx(0.005)
        assert epsilon(alpha, Gains([10.0, 5.0], [1.0, 1.0])) == pytest.approx(0.01)
        with pytest.raises(DomainError):
            epsilon(alpha, 0.0)

    def test_slow_model_solution_solves_slow_model(self):
        """The closed form satisfies ξ̇ = P_d − Σα ξ."""
        alpha = AlphaVector(np.array([0.1, 0.2, 0.3]))
        h = 1e-6
        for t in (0.0, 0.7, 3.0):
            numeric = (slow_model_solution(t + h, 0.1, 0.4, alpha) - slow_model_solution(t - h, 0.1, 0.4, alpha)) / (2 * h)
            xi = slow_model_solution(t, 0.1, 0.4, alpha)
            assert numeric == pytest.approx(slow_model_deriv(xi, 0.4, alpha), rel=1e-6)

    def test_tau_scale(self):
        """The τ-scale derivative is the t-scale one divided by ᾱ."""
        alpha = AlphaVector(np.array([0.1, 0.2]))
        assert slow_model_deriv(0.5, 0.4, alpha, "tau") == pytest.approx(slow_model_deriv(0.5, 0.4, alpha) / 0.2)
        with pytest.raises(DomainError):
            slow_model_deriv(0.5, 0.4, alpha, "hours")

    def test_gap_to_slow_model_shrinks_with_epsilon(self):
        """Raising k_α over two decades pulls ξ_h monotonically onto the slow model."""
        alpha = AlphaVector(np.full(5, 0.1))
        p_d, xi0 = 0.4, 0.2
        gaps = []
        for eps in (1e-2, 1e-3, 1e-4):
            run = simulate_protocol(alpha, alpha.max / eps, p_d, xi0, xi0, dt=1e-3, t_end=5.0)
            gaps.append(np.max(np.abs(run.xi_h - slow_model_solution(run.t, xi0, p_d, alpha))))
        assert gaps[0] > gaps[1] > gaps[2]


class TestProtocolStability:
    """Test the linear protocol matrix, verdicts and the ε* sweep."""

    def test_protocol_matrix_matches_derivatives(self):
        """The matrix reproduces protocol_derivs with zero demand."""
        alpha = AlphaVector(np.array([0.1, 0.2, 0.15]))
        state = np.array([0.3, 0.5, 0.2, 0.4])
        xi_dot, z_dot = protocol_derivs(
            ConsensusState(state[0], state[1:]), 0.0, alpha.values * state[1:], Gains.uniform(3, 2.0, 1.0)
        )
        assert protocol_matrix(alpha, 2.0) @ state == pytest.approx(np.concatenate(([xi_dot], z_dot)))

    def test_spectral_abscissa_sign(self):
        """Small ε is stable; large ε destabilizes the ten-generator chain."""
        alpha = AlphaVector(np.full(10, 0.052))
        assert spectral_abscissa(protocol_matrix(alpha, 50.0)) < 0
        assert spectral_abscissa(protocol_matrix(alpha, 0.05)) > 0

    def test_verdicts(self):
        """Converged, not converged and diverged runs are told apart."""
        alpha = AlphaVector(np.full(3, 2.0))
        converged = simulate_protocol(alpha, 50.0, 3.0, 0.0, 0.0, dt=0.01, t_end=20.0)
        short = simulate_protocol(alpha, 50.0, 3.0, 0.0, 0.0, dt=0.01, t_end=0.1)
        # α/k_α = 4 is past the three-generator boundary of 8/3
        unstable = simulate_protocol(alpha, 0.5, 3.0, 0.0, 0.0, dt=0.1, t_end=2000.0)
        assert classify_protocol_run(converged, alpha) is Verdict.CONVERGED
        assert classify_protocol_run(short, alpha) is Verdict.NOT_CONVERGED
        assert classify_protocol_run(unstable, alpha) is Verdict.DIVERGED

    def test_sweep_brackets_threshold(self):
        """Bisection narrows ε* to the requested width, below the stability boundary."""
        template = sweep_template()
        alpha = AlphaVector(template.alpha)
        result = epsilon_star_sweep(template)
        assert result.bracket is not None
        low, high = result.bracket
        assert high / low - 1.0 < template.rel_width
        assert result.monotone

        k_good = alpha.max / low
        assert spectral_abscissa(protocol_matrix(alpha, k_good)) < 0
        k_boundary = brentq(lambda k: spectral_abscissa(protocol_matrix(alpha, k)), 0.05, 50.0)
        assert result.epsilon_star <= alpha.max / k_boundary * (1.0 + template.rel_width)

    def test_sweep_stable_over_range(self):
        """When both ends converge the sweep reports no bracket."""
        result = epsilon_star_sweep(sweep_template(k_min=10.0, k_max=50.0))
        assert result.bracket is None
        assert result.status == STABLE_OVER_RANGE
        assert result.epsilon_star is None

    def test_monotone_flag(self):
        """Converged runs at large ε after a failure are flagged."""
        points = [
            SweepPoint(1.0, 0.1, Verdict.CONVERGED, 0.0, 0.0),
            SweepPoint(0.5, 0.2, Verdict.NOT_CONVERGED, 0.1, 0.1),
            SweepPoint(0.25, 0.4, Verdict.CONVERGED, 0.0, 0.0),
        ]
        assert not SweepResult(points, (0.1, 0.2), "bracketed").monotone


def synthetic_trace() -> SimTrace:
    """Two generators; demand steps at t = 0.5; V_e of generator 1 decays at −40."""
    t = np.round(np.arange(201) * 0.01, 12)
    columns = trace_columns(2)
    data = np.zeros((len(t), len(columns)))
    index = {name: j for j, name in enumerate(columns)}
    p_d = np.where(t < 0.5, 0.38, 0.42)
    p_m = np.where(t < 0.5, 0.38, 0.42 - 0.04 * np.exp(-(t - 0.5) / 0.1))
    data[:, index["t"]] = t
    data[:, index["p_d"]] = p_d
    data[:, index["p_m_total"]] = p_m
    data[:, index["spread"]] = 0.01 * np.exp(-t)
    data[:, index["v_e_1"]] = 1e-3 * np.exp(-40.0 * t)
    data[:, index["v_dr_2"]] = -0.3
    data[:, index["z_1"]] = 0.8
    data[:, index["z_2"]] = 0.81
    return SimTrace(columns, data)


class TestTraceMetrics:
    """Test metrics computed from recorded traces."""

    def test_segments(self):
        """Segments start at 0 and wherever the demand changes."""
        assert segment_starts(np.array([1.0, 1.0, 2.0, 2.0, 3.0])).tolist() == [0, 2, 4]

    def test_settling_time(self):
        """Time until the error stays inside the band; NaN if it never settles."""
        t = np.arange(5) * 0.1
        assert settling_time(t, np.array([0.1, 0.05, 0.01, 0.0, 0.0])) == pytest.approx(0.2)
        assert settling_time(t, np.zeros(5)) == 0.0
        assert math.isnan(settling_time(t, np.full(5, 0.1)))

    def test_decay_fit(self):
        """ln V_e is fitted over three decay constants; too few samples give NaN."""
        t = np.linspace(0.0, 0.2, 101)
        assert fit_decay_exponent(t, 2e-4 * np.exp(-40.0 * t)) == pytest.approx(-40.0, rel=1e-9)
        assert math.isnan(fit_decay_exponent(t, np.zeros_like(t)))
        assert math.isnan(fit_decay_exponent(t[:3], np.array([1.0, 1e-3, 1e-6])))

    def test_trace_metrics(self):
        """Every summary field on a synthetic trace with known answers."""
        metrics = trace_metrics(synthetic_trace())
        assert metrics.max_tracking_error == pytest.approx(0.04 / 0.42)
        assert metrics.final_tracking_error == pytest.approx(0.04 * math.exp(-15.0) / 0.42)
        assert metrics.segment_starts == [0.0, 0.5]
        assert metrics.settling_times[0] == 0.0
        assert metrics.settling_times[1] == pytest.approx(0.16, abs=1e-9)
        assert metrics.max_spread == pytest.approx(0.01)
        assert metrics.max_abs_vdr == pytest.approx(0.3)
        assert metrics.clf_decay_exponents[0] == pytest.approx(-40.0, rel=1e-9)
        assert math.isnan(metrics.clf_decay_exponents[1])
        assert metrics.final_mean_utilization == pytest.approx(0.805)

    def test_key_values(self):
        """Summary keys are flat and numbered per segment and generator."""
        values = trace_metrics(synthetic_trace()).to_key_values()
        for key in ("max_tracking_error", "settling_time_1", "settling_time_2", "clf_decay_exponent_2", "segments"):
            assert key in values
        assert values["segments"] == 2


class TestStabilityReport:
    """Test the report assembled for a scenario."""

    def test_scenario1_report(self, scenario1):
        """Homogeneous gains, −1 fast spectrum and ε = ᾱ/k_α."""
        report = build_stability_report(scenario1)
        alpha = scenario1.alpha()
        assert report.epsilon == pytest.approx(alpha.max() / 10.0)
        assert report.xi_h0 == pytest.approx(0.42 / alpha.sum())
        assert report.in_stability_scope
        values = report.to_key_values()
        assert values["stability_scope"] == "homogeneous gains"
        assert values["fast_eigenvalue_count"] == 10
        assert values["protocol_spectral_abscissa"] < 0

    def test_heterogeneous_gains_flagged(self, write_config, caplog):
        """Per-generator k_α is accepted but marked outside the homogeneous-gain result."""
        body = {
            "farm": {"n": 3},
            "protocol": {"k_alpha": [5.0, 10.0, 20.0]},
            "schedule": [[0.0, 0.3]],
        }
        scenario = load_scenario(write_config(json.dumps(body)))
        with caplog.at_level(logging.WARNING, logger="wind-dispatch"):
            report = build_stability_report(scenario)
        assert not report.in_stability_scope
        assert "outside" in report.to_key_values()["stability_scope"]
        assert any("heterogeneous" in r.message for r in caplog.records)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
