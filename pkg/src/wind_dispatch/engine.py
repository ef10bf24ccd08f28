"""Fixed-step simulation of the closed-loop wind farm.

State vector layout (n generators):

    [ξ_h, E_d′(1..n), E_q′(1..n), ω_r(1..n), v_s(1..n), v̇_s(1..n)]

Each right-hand-side evaluation runs, in order: wind → turbine algebra
(λ, C_p, T_m, T_e, P_m) → aggregation of ΣP_m at the leader → protocol
derivatives → controller (T_e*, Ṫ_e*, V_dr, V_qr) → electromechanical
derivatives. Demand P_d and the wind noise sample are frozen over each
RK4 macro-step.

Error Handling:
- Non-positive wind, a stalled rotor or any non-finite quantity raises
  IntegrationAbort naming the generator, the quantity and the time
- FarmSimulator.run() catches IntegrationAbort, logs it with the traceback
  and returns a failed RunResult that keeps the partial trace
- Infeasible initial conditions raise ConfigError from the constructor
"""

import logging
import time
import traceback
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .analysis import SummaryMetrics, trace_metrics
from .config import Scenario
from .controller import ControllerInputs, CooperativeTorqueController, measured_utilization_rate, vqr_policy
from .errors import ConfigError, DomainError, IntegrationAbort
from .integrator import rk4_step
from .protocol import (
    Topology,
    aggregate_chain_relay,
    average_consensus_operator,
    leader_aux_deriv,
    neighbor_messages,
    predecessor_values,
)
from .trace import SimTrace, trace_columns
from .turbine import (
    WgState,
    electrical_torque,
    mechanical_power,
    mechanical_torque,
    mechanical_torque_rate,
    mechanical_torque_rate_fd,
    power_coefficient,
    rotor_speed_deriv,
    rotor_voltage_derivs,
    tip_speed_ratio,
    tip_speed_ratio_for_utilization,
    tip_speed_ratio_rate,
)
from .wind import WindField

logger = logging.getLogger("wind-dispatch")


@dataclass(frozen=True)
class StateLayout:
    """Slices of the flat integrator state."""

    n: int

    @property
    def size(self) -> int:
        return 1 + 5 * self.n

    def block(self, j: int) -> slice:
        return slice(1 + j * self.n, 1 + (j + 1) * self.n)

    def pack(self, xi_h, e_d, e_q, omega_r, v_s, v_s_dot) -> np.ndarray:
        return np.concatenate(([xi_h], e_d, e_q, omega_r, v_s, v_s_dot))

    def unpack(self, y: np.ndarray):
        """(ξ_h, E_d′, E_q′, ω_r, v_s, v̇_s) as views into y."""
        return (y[0],) + tuple(y[self.block(j)] for j in range(5))


@dataclass(frozen=True)
class StepContext:
    """Inputs held constant across the stages of one macro-step."""

    p_d: float
    noise: np.ndarray
    held_z: np.ndarray | None = None
    held_z_dot: np.ndarray | None = None


@dataclass
class FarmSignals:
    """Every intermediate of one derivative evaluation."""

    t: float
    p_d: float
    p_m_total: float
    xi_h: float
    xi_dot: float
    z: np.ndarray
    z_dot: np.ndarray
    omega_r: np.ndarray
    omega_r_dot: np.ndarray
    t_e: np.ndarray
    t_m: np.ndarray
    t_e_star: np.ndarray
    t_e_star_dot: np.ndarray
    v_dr: np.ndarray
    v_qr: np.ndarray
    v_e: np.ndarray
    v_e_dot: np.ndarray
    v_w: np.ndarray
    c_p: np.ndarray
    e_d_prime: np.ndarray
    e_q_prime: np.ndarray
    p_m: np.ndarray

    @property
    def spread(self) -> float:
        return float(np.max(self.z) - np.min(self.z))

    def row(self) -> np.ndarray:
        farm = [self.t, self.p_d, self.p_m_total, self.xi_h, self.spread]
        per_generator = np.column_stack(
            [
                self.z,
                self.z_dot,
                self.omega_r,
                self.t_e,
                self.t_m,
                self.t_e_star,
                self.v_dr,
                self.v_qr,
                self.v_e,
                self.v_e_dot,
                self.v_w,
                self.c_p,
                self.e_d_prime,
                self.e_q_prime,
            ]
        )
        return np.concatenate((farm, per_generator.ravel()))

    def first_non_finite(self) -> tuple[str, int | None] | None:
        for f in fields(self):
            value = np.asarray(getattr(self, f.name), dtype=float)
            bad = np.flatnonzero(~np.isfinite(value))
            if bad.size:
                return f.name, (int(bad[0]) + 1 if value.ndim else None)
        return None


@dataclass
class RunResult:
    """Outcome of one run; the trace is partial when aborted."""

    scenario: Scenario
    trace: SimTrace
    metrics: SummaryMetrics | None
    steps: int
    wall_time: float
    saturation_count: int
    singular_count: int
    aborted: bool = False
    abort_reason: str = ""
    final_state: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        values = self.metrics.to_key_values() if self.metrics is not None else {}
        values.update(
            {
                "scenario": self.scenario.name,
                "steps": self.steps,
                "wall_time_s": self.wall_time,
                "saturation_count": self.saturation_count,
                "singular_fallback_count": self.singular_count,
                "aborted": self.aborted,
                "abort_reason": self.abort_reason or None,
            }
        )
        return values


class FarmSimulator:
    """Integrates one Scenario from t = 0 to t_end with fixed-step RK4."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.n = scenario.n
        self.layout = StateLayout(scenario.n)
        self.params = scenario.params
        self.grid = scenario.grid
        self.topology = Topology(scenario.n)
        self.controller = CooperativeTorqueController(scenario.controller)
        w = scenario.wind
        self.wind = WindField(
            w.means,
            turbulence_enabled=w.turbulence_enabled,
            base_seed=w.seed,
            length_scale=w.length_scale,
            turbulence_intensity=w.turbulence_intensity,
            p1=w.p1,
            p2=w.p2,
            k_gain=w.k_gain,
        )
        self._leader_row = None
        if scenario.aggregation == "average":
            operator = average_consensus_operator(scenario.n, scenario.average_step, scenario.average_rounds)
            self._leader_row = scenario.n * operator[0]
        self.v_qr = np.zeros(scenario.n)
        self.initial_state = self._initial_state()

    # --- initialization ---------------------------------------------------

    def _initial_state(self) -> np.ndarray:
        sc = self.scenario
        alpha_total = float(np.sum(sc.alpha()))
        p_d0 = sc.schedule.entries[0][1]
        xi_eq = p_d0 / alpha_total
        z0 = sc.initial.utilization if sc.initial.utilization is not None else np.full(self.n, xi_eq)
        try:
            lam = np.array([tip_speed_ratio_for_utilization(float(z), self.params) for z in z0])
        except DomainError as e:
            raise ConfigError(f"initial utilization: {e}") from e
        v_m = self.wind.means
        omega = lam * v_m / (self.params.speed_ratio * self.params.rotor_radius)
        t_m = mechanical_torque(v_m, omega, lam, 0.0, self.params, self.grid)
        e_q = (t_m + sc.initial.torque_offset) * self.params.stator_transient_reactance / self.grid.v_s
        e_d = np.zeros(self.n)
        xi = sc.initial.xi_h if sc.initial.xi_h is not None else xi_eq
        self.v_qr = np.asarray(vqr_policy(WgState(e_d, e_q, omega), self.grid, self.params, sc.controller.vqr_policy))
        logger.info(
            f"Initial operating point: z={np.round(z0, 6).tolist()}, ω_r={np.round(omega, 6).tolist()}, ξ_h={xi:.6f}"
        )
        return self.layout.pack(xi, e_d, e_q, omega, np.zeros(self.n), np.zeros(self.n))

    # --- derivatives ------------------------------------------------------

    def _aggregate(self, p_m: np.ndarray) -> float:
        if self._leader_row is not None:
            return float(self._leader_row @ p_m)
        return aggregate_chain_relay(p_m, self.topology, record_messages=False).total

    def assemble_derivatives(self, y: np.ndarray, t: float, ctx: StepContext, count: bool = False):
        """(dy/dt, FarmSignals) at state y and time t."""
        params, grid = self.params, self.grid
        xi, e_d, e_q, omega, v_s, v_s_dot = self.layout.unpack(y)

        v_w = self.wind.effective(v_s)
        for name, values in (("wind speed", v_w), ("rotor speed", omega)):
            bad = np.flatnonzero(~(values > 0))
            if bad.size:
                i = int(bad[0])
                raise IntegrationAbort(
                    f"{name} of generator {i + 1} is {values[i]:.6g} at t={t:.6g}s", time=t, generator=i + 1, quantity=name
                )
        dv_s, ddv_s = self.wind.derivs(v_s, v_s_dot, ctx.noise)

        lam = tip_speed_ratio(omega, v_w, params)
        c_p = np.maximum(power_coefficient(lam), 0.0)
        t_m = mechanical_torque(v_w, omega, lam, 0.0, params, grid, c_p=c_p)
        t_e = electrical_torque(e_q, grid, params)
        p_m = mechanical_power(v_w, c_p, params, grid) / self.scenario.base_power

        p_m_total = self._aggregate(p_m)
        xi_dot = leader_aux_deriv(ctx.p_d, p_m_total)

        omega_dot = rotor_speed_deriv(t_m, t_e, params, grid)
        z = c_p / params.cp_max
        state = WgState(e_d, e_q, omega)
        lam_rate = tip_speed_ratio_rate(omega, v_w, omega_dot, params, dv_s)
        z_dot = measured_utilization_rate(lam, c_p, lam_rate, params)
        if self.scenario.controller.tm_rate == "analytic":
            t_m_dot = mechanical_torque_rate(v_w, omega, omega_dot, params, grid)
        else:
            t_m_dot = mechanical_torque_rate_fd(v_w, omega, omega_dot, params, grid, v_w_dot=dv_s)

        if ctx.held_z is None:
            z_prev = predecessor_values(xi, z)
            z_prev_dot = predecessor_values(xi_dot, z_dot)
        else:
            z_prev = predecessor_values(xi, np.append(ctx.held_z, 0.0))
            z_prev_dot = predecessor_values(xi_dot, np.append(ctx.held_z_dot, 0.0))

        inputs = ControllerInputs(
            state, params, grid, v_w, z_prev, z_prev_dot, self.scenario.gains.k_alpha, self.scenario.gains.k_beta
        )
        out = self.controller.evaluate(inputs, self.v_qr, omega_dot, t_m, t_m_dot, z, z_dot, time=t, count=count)
        de_d, de_q = rotor_voltage_derivs(state, self.v_qr, out.v_dr, grid, params)
        t_e_dot = grid.v_s / params.stator_transient_reactance * de_q
        v_e_dot = (t_e - out.t_e_star) * (t_e_dot - out.t_e_star_dot)

        dy = self.layout.pack(xi_dot, de_d, de_q, omega_dot, dv_s, ddv_s)
        signals = FarmSignals(
            t=t,
            p_d=ctx.p_d,
            p_m_total=p_m_total,
            xi_h=float(xi),
            xi_dot=xi_dot,
            z=z,
            z_dot=z_dot,
            omega_r=omega.copy(),
            omega_r_dot=omega_dot,
            t_e=t_e,
            t_m=t_m,
            t_e_star=out.t_e_star,
            t_e_star_dot=out.t_e_star_dot,
            v_dr=out.v_dr,
            v_qr=np.array(out.v_qr),
            v_e=out.v_e,
            v_e_dot=v_e_dot,
            v_w=v_w,
            c_p=c_p,
            e_d_prime=e_d.copy(),
            e_q_prime=e_q.copy(),
            p_m=p_m,
        )
        if not np.all(np.isfinite(dy)) or not np.isfinite(p_m_total):
            culprit = signals.first_non_finite() or ("state derivative", None)
            name, generator = culprit
            where = f"generator {generator}" if generator is not None else "farm"
            raise IntegrationAbort(f"non-finite {name} for {where} at t={t:.6g}s", time=t, generator=generator, quantity=name)
        return dy, signals

    def rk4_step(self, y: np.ndarray, t: float, dt: float, ctx: StepContext):
        """Advance one macro-step; also returns the signals at the step start."""
        captured = []

        def rhs(t_stage: float, y_stage: np.ndarray) -> np.ndarray:
            dy, signals = self.assemble_derivatives(y_stage, t_stage, ctx, count=not captured)
            captured.append(signals)
            return dy

        return rk4_step(rhs, y, t, dt), captured[0]

    # --- run loop -----------------------------------------------------------

    def _delay_buffer(self, y0: np.ndarray) -> deque | None:
        delay = self.scenario.hop_delay_steps
        if delay == 0:
            return None
        ctx = StepContext(self.scenario.schedule.value_at_step(0, self.scenario.dt), np.zeros(self.n))
        _, signals = self.assemble_derivatives(y0, 0.0, ctx)
        messages = neighbor_messages(signals.z, signals.z_dot)
        return deque([messages] * delay, maxlen=delay)

    def run(self) -> RunResult:
        sc = self.scenario
        dt, n_steps, decimate = sc.dt, sc.n_steps, sc.decimate
        y = self.initial_state.copy()
        rows = []
        aborted, reason, k = False, "", 0
        started = time.perf_counter()
        logger.info(f"Running '{sc.name}': {n_steps} steps of dt={dt}s, recording every {decimate}")
        try:
            history = self._delay_buffer(y)
            for k in range(n_steps):
                t = k * dt
                ctx = StepContext(sc.schedule.value_at_step(k, dt), self.wind.forcing(dt), *self._held(history))
                y_next, signals = self.rk4_step(y, t, dt, ctx)
                if k % decimate == 0:
                    rows.append(signals.row())
                if history is not None:
                    history.append(neighbor_messages(signals.z, signals.z_dot))
                y = y_next
            k = n_steps
            if n_steps % decimate == 0:
                ctx = StepContext(sc.schedule.value_at_step(n_steps, dt), np.zeros(self.n), *self._held(history))
                _, signals = self.assemble_derivatives(y, n_steps * dt, ctx)
                rows.append(signals.row())
        except IntegrationAbort as e:
            aborted, reason = True, str(e)
            logger.error(f"Integration aborted after {k} steps: {e}")
            logger.error(f"Traceback:\n{traceback.format_exc()}")

        wall = time.perf_counter() - started
        columns = trace_columns(self.n)
        trace = SimTrace(columns, np.array(rows) if rows else np.empty((0, len(columns))))
        metrics = trace_metrics(trace) if len(trace) else None
        logger.info(f"Run '{sc.name}' finished: {k} steps in {wall:.2f}s, aborted={aborted}")
        return RunResult(
            scenario=sc,
            trace=trace,
            metrics=metrics,
            steps=k,
            wall_time=wall,
            saturation_count=self.controller.saturation_count,
            singular_count=self.controller.singular_count,
            aborted=aborted,
            abort_reason=reason,
            final_state=y,
        )

    @staticmethod
    def _held(history: deque | None) -> tuple:
        if history is None:
            return None, None
        oldest = history[0]
        return np.array([m.payload[0] for m in oldest]), np.array([m.payload[1] for m in oldest])


def run_scenario(scenario: Scenario) -> RunResult:
    """Build a simulator for `scenario` and run it to t_end."""
    return FarmSimulator(scenario).run()
