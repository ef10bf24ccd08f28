"""Analytical objects of the consensus protocol and metrics of recorded traces.

With frozen wind each generator's power is linear in its utilization,
P_m,i = α_i z_i, and the protocol becomes a linear system. Dividing time by
ε = ᾱ/k_α separates it into a slow leader integrator and a fast chain whose
boundary-layer matrix A_f is lower bidiagonal with −1 on the diagonal.

Error Handling:
- alpha_coefficients raises DomainError for non-positive wind
- equilibrium raises DomainError when Σα = 0
- The ε* sweep never raises on a diverging run; divergence is a verdict
- trace_metrics reports NaN for metrics the trace cannot support (no
  settling inside a segment, too few samples for a decay fit)
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import comb

from .errors import DomainError
from .integrator import integrate, rk4_step
from .protocol import ConsensusState, Gains, protocol_derivs
from .trace import SimTrace
from .turbine import GridBoundary, WgParams, max_mechanical_power

logger = logging.getLogger("wind-dispatch")

TRACKING_TOL = 0.005
SPREAD_TOL = 1e-3
DIVERGENCE_LIMIT = 1e3
SETTLING_BAND = 0.02
CLF_FLOOR = 1e-18
CLF_DECAY_CONSTANTS = 3.0
STABLE_OVER_RANGE = "stable over entire sweep range"
NO_CONVERGED_RUN = "no converged run in sweep range"


@dataclass(frozen=True)
class AlphaVector:
    """α_i = P̄_m at each generator's wind (W, or p.u. of the base used)."""

    values: np.ndarray

    @property
    def max(self) -> float:
        return float(np.max(self.values))

    @property
    def total(self) -> float:
        return float(np.sum(self.values))

    def __len__(self) -> int:
        return len(self.values)


def alpha_coefficients(v_w, params: WgParams, grid: GridBoundary, base_power: float | None = None) -> AlphaVector:
    v_w = np.atleast_1d(np.asarray(v_w, dtype=float))
    if np.any(v_w <= 0):
        raise DomainError("wind speed must be positive")
    values = max_mechanical_power(v_w, params, grid)
    if base_power is not None:
        values = values / base_power
    return AlphaVector(values)


def equilibrium(p_d: float, alpha: AlphaVector) -> tuple[float, np.ndarray]:
    """(ξ_h0, z_0) with ξ_h0 = P_d/Σα and z_0 = ξ_h0·1."""
    total = alpha.total
    if total == 0:
        raise DomainError("equilibrium undefined for Σα = 0")
    xi_h0 = p_d / total
    return xi_h0, np.full(len(alpha), xi_h0)


def fast_matrix(n: int) -> np.ndarray:
    if n < 1:
        raise DomainError(f"fast matrix needs n ≥ 1, got {n}")
    return -np.eye(n) + np.eye(n, k=-1)


def characteristic_polynomial(matrix: np.ndarray) -> np.ndarray:
    """Monic coefficients [1, c_1, …, c_n] of det(sI − A) by Faddeev–LeVerrier."""
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    coefficients = np.zeros(n + 1)
    coefficients[0] = 1.0
    m = np.zeros_like(a)
    identity = np.eye(n)
    for k in range(1, n + 1):
        m = a @ m + coefficients[k - 1] * identity
        coefficients[k] = -np.trace(a @ m) / k
    return coefficients


def fast_matrix_spectrum(n: int) -> np.ndarray:
    """Spectrum of A_f, certified by det(sI − A_f) = (s + 1)^n."""
    polynomial = characteristic_polynomial(fast_matrix(n))
    expected = np.array([comb(n, k, exact=True) for k in range(n + 1)], dtype=float)
    if not np.array_equal(polynomial, expected):
        raise DomainError(f"characteristic polynomial of A_f is {polynomial}, expected {expected}")
    return np.full(n, -1.0)


def epsilon(alpha: AlphaVector, gains: Gains | float) -> float:
    """ε = ᾱ/k_α; with heterogeneous gains the smallest k_α is used."""
    k_alpha = float(np.min(gains.k_alpha)) if isinstance(gains, Gains) else float(gains)
    if not k_alpha > 0:
        raise DomainError("k_alpha must be positive")
    return alpha.max / k_alpha


def protocol_matrix(alpha: AlphaVector, k_alpha) -> np.ndarray:
    """System matrix of the linear protocol in the state [ξ_h, z_1, …, z_n]."""
    n = len(alpha)
    k = np.broadcast_to(np.asarray(k_alpha, dtype=float), (n,))
    a = np.zeros((n + 1, n + 1))
    a[0, 1:] = -alpha.values
    for i in range(n):
        a[i + 1, i] = k[i]
        a[i + 1, i + 1] = -k[i]
    return a


def spectral_abscissa(matrix: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(matrix).real))


# --- protocol-only simulation ------------------------------------------------


@dataclass(frozen=True)
class ProtocolRun:
    t: np.ndarray
    xi_h: np.ndarray
    z: np.ndarray
    p_d: np.ndarray


def simulate_protocol(
    alpha: AlphaVector,
    k_alpha,
    schedule,
    xi0: float,
    z0,
    dt: float,
    t_end: float,
    freeze_xi: bool = False,
) -> ProtocolRun:
    """Integrate the linear protocol (P_m,i = α_i z_i) with RK4.

    schedule is a constant demand or an object with value_at_step(k, dt).
    freeze_xi holds ξ_h at xi0, leaving only the fast chain.
    """
    n = len(alpha)
    gains = Gains(np.broadcast_to(np.asarray(k_alpha, dtype=float), (n,)).copy(), np.ones(n))
    n_steps = int(round(t_end / dt))
    y = np.concatenate(([xi0], np.broadcast_to(np.asarray(z0, dtype=float), (n,))))
    states = np.empty((n_steps + 1, n + 1))
    demand = np.empty(n_steps + 1)
    states[0] = y

    def demand_at(k: int) -> float:
        return float(schedule) if np.isscalar(schedule) else schedule.value_at_step(k, dt)

    for k in range(n_steps):
        p_d = demand_at(k)
        demand[k] = p_d

        def rhs(_t: float, state: np.ndarray, p_d=p_d) -> np.ndarray:
            xi_dot, z_dot = protocol_derivs(ConsensusState(state[0], state[1:]), p_d, alpha.values * state[1:], gains)
            return np.concatenate(([0.0 if freeze_xi else xi_dot], z_dot))

        y = rk4_step(rhs, y, k * dt, dt)
        states[k + 1] = y
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > DIVERGENCE_LIMIT:
            # truncate at blow-up
            states = states[: k + 2]
            demand = demand[: k + 2]
            break
    demand[len(states) - 1] = demand_at(len(states) - 1)
    t = dt * np.arange(len(states))
    return ProtocolRun(t=t, xi_h=states[:, 0], z=states[:, 1:], p_d=demand)


def simulate_fast_subsystem(z_tilde0, tau_end: float, dtau: float) -> tuple[np.ndarray, np.ndarray]:
    """Boundary layer dz̃/dτ = A_f z̃ on the fast time scale, integrated with RK4."""
    z_tilde0 = np.asarray(z_tilde0, dtype=float)
    a_f = fast_matrix(len(z_tilde0))
    return integrate(lambda _tau, y: a_f @ y, z_tilde0, dtau, int(round(tau_end / dtau)))


class Verdict(Enum):
    CONVERGED = "converged"
    NOT_CONVERGED = "not_converged"
    DIVERGED = "diverged"


def _relative_error(actual: np.ndarray, target: np.ndarray) -> np.ndarray:
    scale = np.where(np.abs(target) > 0, np.abs(target), 1.0)
    return np.abs(actual - target) / scale


def classify_protocol_run(run: ProtocolRun, alpha: AlphaVector, tail_fraction: float = 0.1) -> Verdict:
    """Converged when spread and tracking stay within tolerance over the final tail."""
    states = np.column_stack((run.xi_h, run.z))
    if not np.all(np.isfinite(states)) or np.max(np.abs(states)) > DIVERGENCE_LIMIT:
        return Verdict.DIVERGED
    tail = slice(int(len(run.t) * (1.0 - tail_fraction)), None)
    spread = np.ptp(run.z[tail], axis=1)
    tracking = _relative_error(run.z[tail] @ alpha.values, run.p_d[tail])
    if np.all(spread < SPREAD_TOL) and np.all(tracking < TRACKING_TOL):
        return Verdict.CONVERGED
    return Verdict.NOT_CONVERGED


@dataclass(frozen=True)
class SweepPoint:
    k_alpha: float
    epsilon: float
    verdict: Verdict
    final_spread: float
    final_tracking_error: float


@dataclass
class SweepResult:
    points: list[SweepPoint]
    bracket: tuple[float, float] | None
    status: str

    @property
    def epsilon_star(self) -> float | None:
        if self.bracket is None:
            return None
        return math.sqrt(self.bracket[0] * self.bracket[1])

    @property
    def monotone(self) -> bool:
        """Converged for small ε and not for large ε, with one crossing at most."""
        ordered = [p.verdict is Verdict.CONVERGED for p in sorted(self.points, key=lambda p: p.epsilon)]
        crossings = sum(1 for a, b in zip(ordered, ordered[1:], strict=False) if a != b)
        return crossings <= 1 and (not ordered or ordered[0] or not any(ordered))


def _sweep_point(template, alpha: AlphaVector, k_alpha: float) -> SweepPoint:
    run = simulate_protocol(
        alpha, k_alpha, template.schedule, template.initial_xi, template.initial_z, template.dt, template.t_end
    )
    verdict = classify_protocol_run(run, alpha)
    final_tracking = float(_relative_error(np.array([run.z[-1] @ alpha.values]), np.array([run.p_d[-1]]))[0])
    point = SweepPoint(k_alpha, epsilon(alpha, k_alpha), verdict, float(np.ptp(run.z[-1])), final_tracking)
    logger.info(f"sweep k_alpha={k_alpha:.6g} ε={point.epsilon:.6g}: {verdict.value}")
    return point


def epsilon_star_sweep(template) -> SweepResult:
    """Bisect over log k_α for the largest ε whose protocol run still converges.

    The returned bracket (ε_converged, ε_not_converged) is narrower than
    template.rel_width in relative terms.
    """
    alpha = AlphaVector(np.asarray(template.alpha, dtype=float))
    fast = _sweep_point(template, alpha, template.k_alpha_max)
    slow = _sweep_point(template, alpha, template.k_alpha_min)
    points = [fast, slow]
    if slow.verdict is Verdict.CONVERGED and fast.verdict is Verdict.CONVERGED:
        return SweepResult(points, None, STABLE_OVER_RANGE)
    if fast.verdict is not Verdict.CONVERGED:
        return SweepResult(points, None, NO_CONVERGED_RUN)

    k_good, k_bad = template.k_alpha_max, template.k_alpha_min
    for _ in range(template.max_iterations):
        if k_good / k_bad - 1.0 < template.rel_width:
            break
        k_mid = math.sqrt(k_good * k_bad)
        point = _sweep_point(template, alpha, k_mid)
        points.append(point)
        if point.verdict is Verdict.CONVERGED:
            k_good = k_mid
        else:
            k_bad = k_mid
    bracket = (epsilon(alpha, k_good), epsilon(alpha, k_bad))
    return SweepResult(points, bracket, "bracketed")


# --- slow model ---------------------------------------------------------------


def slow_model_deriv(xi_h, p_d: float, alpha: AlphaVector, time_scale: str = "t"):
    """ξ̇_h with z = ξ_h·1; time_scale "tau" divides by ᾱ."""
    rate = p_d - alpha.total * xi_h
    if time_scale == "t":
        return rate
    if time_scale == "tau":
        return rate / alpha.max
    raise DomainError(f"unknown time scale '{time_scale}'")


def slow_model_solution(t, xi0: float, p_d: float, alpha: AlphaVector):
    xi_h0, _ = equilibrium(p_d, alpha)
    return xi_h0 + (xi0 - xi_h0) * np.exp(-alpha.total * np.asarray(t, dtype=float))


# --- trace metrics ------------------------------------------------------------


@dataclass
class SummaryMetrics:
    max_tracking_error: float
    final_tracking_error: float
    max_spread: float
    final_spread: float
    settling_times: list[float]
    segment_starts: list[float]
    max_abs_vdr: float
    max_v_e_dot: float
    clf_decay_exponents: list[float] = field(default_factory=list)
    final_mean_utilization: float = math.nan

    def to_key_values(self) -> dict:
        values = {
            "max_tracking_error": self.max_tracking_error,
            "final_tracking_error": self.final_tracking_error,
            "max_spread": self.max_spread,
            "final_spread": self.final_spread,
            "final_mean_utilization": self.final_mean_utilization,
            "max_abs_vdr": self.max_abs_vdr,
            "max_v_e_dot": self.max_v_e_dot,
            "segments": len(self.segment_starts),
        }
        for k, (start, settle) in enumerate(zip(self.segment_starts, self.settling_times, strict=True), start=1):
            values[f"segment_start_{k}"] = start
            values[f"settling_time_{k}"] = settle
        for i, exponent in enumerate(self.clf_decay_exponents, start=1):
            values[f"clf_decay_exponent_{i}"] = exponent
        return values


def segment_starts(p_d: np.ndarray) -> np.ndarray:
    """Sample indices where a demand segment begins (always includes 0)."""
    changes = np.flatnonzero(np.diff(p_d) != 0) + 1
    return np.concatenate(([0], changes)).astype(int)


def settling_time(t: np.ndarray, error: np.ndarray, band: float = SETTLING_BAND) -> float:
    """Time until error enters the band for good; NaN if it is outside at the end."""
    outside = np.flatnonzero(error > band)
    if outside.size == 0:
        return 0.0
    if outside[-1] == len(error) - 1:
        return math.nan
    return float(t[outside[-1] + 1] - t[0])


def fit_decay_exponent(t: np.ndarray, v: np.ndarray, floor: float = CLF_FLOOR, decay_constants: float = CLF_DECAY_CONSTANTS) -> float:
    """Least-squares slope of ln v over the samples before v falls by e^(−decay_constants)."""
    if len(v) == 0 or not v[0] > floor:
        return math.nan
    threshold = max(v[0] * math.exp(-decay_constants), floor)
    below = np.flatnonzero(~(v >= threshold))
    stop = below[0] if below.size else len(v)
    if stop < 3:
        return math.nan
    slope, _ = np.polyfit(t[:stop], np.log(v[:stop]), 1)
    return float(slope)


def trace_metrics(trace: SimTrace) -> SummaryMetrics:
    t = trace.t
    p_d = trace.column("p_d")
    tracking = _relative_error(trace.column("p_m_total"), p_d)
    spread = trace.column("spread")
    starts = segment_starts(p_d)
    ends = np.append(starts[1:], len(t))
    settling = [settling_time(t[s:e], tracking[s:e]) for s, e in zip(starts, ends, strict=True)]

    v_e = trace.generator("v_e")
    exponents = []
    for i in range(trace.n_generators):
        exponent = math.nan
        for s, e in zip(starts, ends, strict=True):
            exponent = fit_decay_exponent(t[s:e], v_e[s:e, i])
            if not math.isnan(exponent):
                break
        exponents.append(exponent)

    return SummaryMetrics(
        max_tracking_error=float(np.max(tracking)),
        final_tracking_error=float(tracking[-1]),
        max_spread=float(np.max(spread)),
        final_spread=float(spread[-1]),
        settling_times=settling,
        segment_starts=[float(t[s]) for s in starts],
        max_abs_vdr=float(np.max(np.abs(trace.generator("v_dr")))),
        max_v_e_dot=float(np.max(trace.generator("v_e_dot"))),
        clf_decay_exponents=exponents,
        final_mean_utilization=float(np.mean(trace.generator("z")[-1])),
    )


# --- stability report ---------------------------------------------------------

HETEROGENEOUS_SCOPE = "outside homogeneous-gain stability scope"


def scope_label(homogeneous: bool) -> str:
    return "homogeneous gains" if homogeneous else HETEROGENEOUS_SCOPE


@dataclass
class StabilityReport:
    epsilon: float
    eigenvalues: np.ndarray
    xi_h0: float
    z0: np.ndarray
    alpha: AlphaVector
    in_stability_scope: bool
    protocol_abscissa: float
    sweep: SweepResult | None = None

    def to_key_values(self) -> dict:
        values = {
            "epsilon": self.epsilon,
            "stability_scope": scope_label(self.in_stability_scope),
            "fast_eigenvalue_count": len(self.eigenvalues),
            "fast_eigenvalues": " ".join(f"{v:.17g}" for v in self.eigenvalues),
            "xi_h0": self.xi_h0,
            "alpha_sum": self.alpha.total,
            "alpha_max": self.alpha.max,
            "protocol_spectral_abscissa": self.protocol_abscissa,
        }
        for i, z in enumerate(self.z0, start=1):
            values[f"z0_{i}"] = float(z)
        if self.sweep is not None:
            values["sweep_status"] = self.sweep.status
            values["sweep_runs"] = len(self.sweep.points)
            values["sweep_monotone"] = self.sweep.monotone
            if self.sweep.bracket is not None:
                values["epsilon_star_low"] = self.sweep.bracket[0]
                values["epsilon_star_high"] = self.sweep.bracket[1]
                values["epsilon_star"] = self.sweep.epsilon_star
        return values


def build_stability_report(scenario, sweep: SweepResult | None = None) -> StabilityReport:
    """Report for a resolved Scenario at its final demand value."""
    alpha = AlphaVector(scenario.alpha())
    xi_h0, z0 = equilibrium(scenario.schedule.entries[-1][1], alpha)
    homogeneous = scenario.gains.homogeneous
    if not homogeneous:
        logger.warning(f"Scenario '{scenario.name}' uses heterogeneous gains: {HETEROGENEOUS_SCOPE}")
    return StabilityReport(
        epsilon=epsilon(alpha, scenario.gains),
        eigenvalues=fast_matrix_spectrum(scenario.n),
        xi_h0=xi_h0,
        z0=z0,
        alpha=alpha,
        in_stability_scope=homogeneous,
        protocol_abscissa=spectral_abscissa(protocol_matrix(alpha, scenario.gains.k_alpha)),
        sweep=sweep,
    )
