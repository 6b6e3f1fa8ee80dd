"""Reference solutions used to check the solvers.

* ``heat_fourier``: sine series for L(p) = p with constant Dirichlet data.
* ``tv_vee_facet``: the sign graph with datum |x - c|.  The bottom facet has
  height lam(t) and endpoints c -/+ lam(t).  The facet balance
  lam' * (facet width) = b - a = 2 with width 2*lam gives lam*lam' = 1, so
  lam(t) = sqrt(2t), and u(x, t) = max(|x - c|, sqrt(2t)).
* ``one_sided_stationary``: L(p) = |p| + p has zero flux on non-increasing
  profiles, which therefore do not move.
* ``fine_grid_reference``: the same scenario on a refined grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .model import GridFunction, InitialDatum, Scenario, TimeSeries

__all__ = [
    "OracleSolution",
    "heat_fourier",
    "tv_vee_facet",
    "one_sided_stationary",
    "fine_grid_reference",
]


@dataclass(eq=False)
class OracleSolution:
    evaluator: Callable
    provenance: str
    t_max: float = np.inf
    info: dict = field(default_factory=dict)

    def __call__(self, x, t):
        if t > self.t_max * (1 + 1e-12):
            raise ValueError(f"{self.provenance} oracle is valid only for t <= {self.t_max:.6g}")
        return self.evaluator(np.asarray(x, dtype=float), float(t))

    def on_grid(self, n: int, t: float) -> np.ndarray:
        return self(np.linspace(0.0, 1.0, n), t)


def _as_callable(u0):
    if isinstance(u0, str):
        return InitialDatum(u0).function()
    if isinstance(u0, InitialDatum):
        return u0.function()
    if isinstance(u0, GridFunction):
        xs, vs = u0.x, u0.values
        return lambda x: np.interp(x, xs, vs)
    return u0


def heat_fourier(u0, A: float = 0.0, B: float = 0.0, modes: int = 64) -> OracleSolution:
    """Sine-series solution of u_t = u_xx with u(0)=A, u(1)=B.

    ``info['coefficients']`` holds the sine coefficients of u0 minus the affine
    steady state; ``info['truncation_bound'](t)`` bounds the dropped modes
    assuming |c_m| <= K/m with K fitted on the kept modes.
    """
    f = _as_callable(u0)

    def g(x):
        return float(f(np.array([x]))[0]) - (A + (B - A) * x)

    c = np.empty(modes)
    for m in range(1, modes + 1):
        val, _ = integrate.quad(g, 0.0, 1.0, weight="sin", wvar=m * np.pi, limit=200)
        c[m - 1] = 2.0 * val
    c[np.abs(c) < 1e-15] = 0.0
    k = np.arange(1, modes + 1)
    K = float(np.max(k * np.abs(c)))

    def bound(t):
        if t <= 0:
            return np.inf if K > 0 else 0.0
        mm = np.arange(modes + 1, modes + 2000)
        return float(K * np.sum(np.exp(-((mm * np.pi) ** 2) * t) / mm))

    def ev(x, t):
        out = A + (B - A) * x
        damp = c * np.exp(-((k * np.pi) ** 2) * t)
        live = damp != 0.0
        return out + np.sin(np.pi * np.multiply.outer(x, k[live])) @ damp[live]

    return OracleSolution(ev, "fourier", info={"coefficients": c, "truncation_bound": bound})


def tv_vee_facet(center: float = 0.5, pin: float | None = None) -> OracleSolution:
    """Sign-graph evolution of |x - center| with boundary values pinned at t = 0."""
    if not 0.0 < center < 1.0:
        raise ValueError("center must lie in (0, 1)")
    if pin is not None and not (abs(pin - center) < 1e-12 and abs(pin - (1 - center)) < 1e-12):
        raise ValueError("pin value must equal the datum at both endpoints (center = 1/2)")
    reach = min(center, 1.0 - center)
    t_max = 0.5 * reach**2

    def lam(t):
        return np.sqrt(2.0 * t)

    def ev(x, t):
        return np.maximum(np.abs(x - center), lam(t))

    def facet(t):
        L = lam(t)
        return center - L, center + L

    def speed(t):
        return 1.0 / lam(t) if t > 0 else np.inf

    info = {
        "half_width": lam,
        "facet": facet,
        "speed": speed,
        "boundary": (center, 1.0 - center),
        "jump": (-1.0, 1.0),
    }
    return OracleSolution(ev, "facet-law", t_max=t_max, info=info)


def one_sided_stationary(u0, samples: int = 2001, tol: float = 1e-12) -> OracleSolution:
    """Time-independent solution for L(p) = |p| + p and non-increasing data."""
    f = _as_callable(u0)
    xs = np.linspace(0.0, 1.0, samples)
    vs = f(xs)
    rise = float(np.max(np.diff(vs)))
    if rise > tol * (1.0 + np.max(np.abs(vs))):
        raise ValueError(f"datum is not non-increasing (rises by {rise:.3e} between samples)")

    def ev(x, t):
        return f(x)

    return OracleSolution(ev, "stationary")


def fine_grid_reference(scenario: Scenario, factor: int = 4) -> OracleSolution:
    """Rerun with h/factor, dt/factor (and terminal epsilon/factor), sampled back."""
    from .solver import run

    factor = int(factor)
    if factor < 1:
        raise ValueError("refine factor must be a positive integer")
    changes = dict(n=(scenario.n - 1) * factor + 1, dt=scenario.dt / factor,
                   snapshot_every=scenario.snapshot_every * factor)
    if scenario.method == "regularized":
        changes["epsilon_schedule"] = (scenario.epsilon_schedule[-1] / factor,)
    fine = scenario.replace(**changes)
    series: TimeSeries = run(fine)
    times = series.times
    U = series.values
    xf = series.x

    def ev(x, t):
        k = int(np.searchsorted(times, t - 1e-12 * max(1.0, t)))
        if k == 0:
            row = U[0]
        elif k >= times.size:
            row = U[-1]
        else:
            w = (t - times[k - 1]) / (times[k] - times[k - 1])
            row = (1 - w) * U[k - 1] + w * U[k]
        return np.interp(x, xf, row)

    return OracleSolution(ev, "fine-grid", t_max=scenario.T, info={"series": series, "factor": factor})
