"""Counterfactual curve integration: the flow of dy/dx = v(y, x).

The state is the scalar effect value; the cause variable plays the role of
time. Backward integration (x1 < x0) is supported so observations can be
pulled back to a base point to recover noise values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import RK45

from .dataset import DataPair
from .errors import IntegrationFailure, NonFiniteState, StepLimitExceeded


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"   # "rk45" (adaptive) | "rk4" (fixed step)
    rtol: float = 1e-8
    atol: float = 1e-8
    step: float = 0.01
    max_steps: int = 100_000

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError("method must be 'rk45' or 'rk4'")
        if self.rtol <= 0 or self.atol <= 0 or self.step <= 0:
            raise ValueError("tolerances and step must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


def _integrate_rk45(v, y0, x0, x1, config):
    solver = RK45(
        lambda u, state: np.array([v(float(state[0]), float(u))]),
        t0=x0,
        y0=np.array([float(y0)]),
        t_bound=x1,
        rtol=config.rtol,
        atol=config.atol,
    )
    steps = 0
    while solver.status == "running":
        if steps >= config.max_steps:
            raise StepLimitExceeded(
                f"{config.max_steps} steps used integrating {x0} -> {x1}"
            )
        solver.step()
        steps += 1
        if not np.isfinite(solver.y[0]):
            raise NonFiniteState(solver.t)
    if solver.status == "failed":
        raise StepLimitExceeded(f"adaptive stepping failed near u={solver.t}")
    return float(solver.y[0])


def _integrate_rk4(v, y0, x0, x1, config):
    span = x1 - x0
    n_steps = max(1, int(np.ceil(abs(span) / config.step)))
    if n_steps > config.max_steps:
        raise StepLimitExceeded(f"{n_steps} fixed steps exceed budget {config.max_steps}")
    h = span / n_steps
    y = float(y0)
    u = x0
    for _ in range(n_steps):
        k1 = v(y, u)
        k2 = v(y + 0.5 * h * k1, u + 0.5 * h)
        k3 = v(y + 0.5 * h * k2, u + 0.5 * h)
        k4 = v(y + h * k3, u + h)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        u = u + h
        if not np.isfinite(y):
            raise NonFiniteState(u)
    return y


def integrate_flow(v, y0: float, x0: float, x1: float,
                   config: IntegratorConfig = IntegratorConfig()) -> float:
    """Transport y0 from cause value x0 to x1 along dy/dx = v(y, x)."""
    if not (np.isfinite(y0) and np.isfinite(x0) and np.isfinite(x1)):
        raise ValueError("y0, x0, x1 must be finite")
    if x1 == x0:
        return float(y0)
    if config.method == "rk4":
        return _integrate_rk4(v, y0, x0, x1, config)
    return _integrate_rk45(v, y0, x0, x1, config)


def causal_curve(v, y0: float, x0: float, grid,
                 config: IntegratorConfig = IntegratorConfig()):
    """Counterfactual outcomes along a sorted grid of cause values.

    Integration is chained between consecutive grid points, reusing each
    endpoint as the next initial state. Returns a list of (x, y) tuples in
    grid order.
    """
    grid = [float(g) for g in grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be sorted ascending")
    values = {}
    right = [g for g in grid if g >= x0]
    left = [g for g in grid if g < x0]
    y_cur, x_cur = float(y0), float(x0)
    for g in right:
        y_cur = integrate_flow(v, y_cur, x_cur, g, config)
        x_cur = g
        values[g] = y_cur
    y_cur, x_cur = float(y0), float(x0)
    for g in reversed(left):
        y_cur = integrate_flow(v, y_cur, x_cur, g, config)
        x_cur = g
        values[g] = y_cur
    return [(g, values[g]) for g in grid]


def extract_residuals(v, pair: DataPair, x0: float = 0.0,
                      config: IntegratorConfig = IntegratorConfig()) -> np.ndarray:
    """Noise estimates by pulling each observation back to the base point."""
    eps = np.empty(pair.n)
    failures, causes = [], []
    for i, (x, y) in enumerate(zip(pair.xs, pair.ys)):
        try:
            eps[i] = integrate_flow(v, y, x, x0, config)
        except (StepLimitExceeded, NonFiniteState) as exc:
            failures.append(i)
            causes.append(exc)
            eps[i] = np.nan
    if failures:
        err = IntegrationFailure(failures, causes)
        err.partial = eps
        raise err
    return eps
