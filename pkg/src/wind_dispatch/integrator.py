"""Classical fixed-step Runge-Kutta integration."""

from collections.abc import Callable

import numpy as np

Rhs = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(rhs: Rhs, y: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One 4-stage step of y' = rhs(t, y)."""
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(rhs: Rhs, y0: np.ndarray, dt: float, n_steps: int, t0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Times and states on the grid t0 + k·dt, k = 0..n_steps."""
    y = np.asarray(y0, dtype=float)
    times = t0 + dt * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, y.size))
    states[0] = y
    for k in range(n_steps):
        y = rk4_step(rhs, y, times[k], dt)
        states[k + 1] = y
    return times, states
