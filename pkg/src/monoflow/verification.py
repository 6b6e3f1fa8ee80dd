"""Invariant checks over completed time series.

Each check returns an :class:`InvariantReport` whose margins are positive when
the invariant holds with room to spare.  A report passes when its worst margin
is at least ``-tolerance``.  Checks whose hypotheses fail return
``passed=None`` with an explanatory note instead of asserting anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import MonotoneGraph
from .model import GridFunction, TimeSeries, bv_seminorm, discrete_energy, l2_norm

__all__ = [
    "InvariantReport",
    "bv_seminorm",
    "default_tolerance",
    "check_bv_monotone",
    "check_l2_contraction",
    "check_convexity",
    "check_energy_dissipation",
    "check_flux_bound",
    "check_epsilon_order",
    "SUITES",
    "run_suite",
]


@dataclass(eq=False)
class InvariantReport:
    name: str
    margins: np.ndarray
    worst_margin: float
    tolerance: float
    passed: bool | None
    fingerprint: str = ""
    note: str = ""
    data: dict = field(default_factory=dict)

    @classmethod
    def from_margins(cls, name, margins, tolerance, fingerprint="", note="", **data):
        m = np.asarray(margins, dtype=float)
        worst = float(np.min(m)) if m.size else np.inf
        return cls(name, m, worst, float(tolerance), bool(worst >= -tolerance), fingerprint, note, data)

    @classmethod
    def skipped(cls, name, note, fingerprint=""):
        return cls(name, np.empty(0), np.nan, np.nan, None, fingerprint, note)

    @property
    def status(self) -> str:
        return {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]

    def summary(self) -> str:
        s = f"{self.name:<12} {self.status}  worst margin {self.worst_margin:+.3e}  (tol {self.tolerance:.1e})"
        return s + (f"  [{self.note}]" if self.note else "")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "worst_margin": self.worst_margin,
            "tolerance": self.tolerance,
            "steps": int(self.margins.size),
            "fingerprint": self.fingerprint,
            "note": self.note,
        }


def default_tolerance(series: TimeSeries) -> float:
    return 1e-8 if series.method == "prox" else 1e-4


def _tol(series, tol):
    return default_tolerance(series) if tol is None else float(tol)


def _constant_boundary(series: TimeSeries) -> bool:
    V = series.values
    return bool(np.all(V[:, 0] == V[0, 0]) and np.all(V[:, -1] == V[0, -1]))


def check_bv_monotone(series: TimeSeries, tol: float | None = None) -> InvariantReport:
    """Slope total variation must not increase between snapshots."""
    bv = np.array([bv_seminorm(s.u) for s in series])
    return InvariantReport.from_margins("bv", bv[:-1] - bv[1:], _tol(series, tol),
                                        series.fingerprint, values=bv)


def check_l2_contraction(series_a: TimeSeries, series_b: TimeSeries,
                         tol: float | None = None) -> InvariantReport:
    """Discrete L2 distance between two runs must not increase."""
    if series_a.graph != series_b.graph:
        raise ValueError("contraction check needs runs with the same graph")
    if series_a.n != series_b.n or len(series_a) != len(series_b) or np.any(series_a.times != series_b.times):
        raise ValueError("contraction check needs runs on the same grid and time steps")
    Va, Vb = series_a.values, series_b.values
    if np.any(Va[:, 0] != Vb[:, 0]) or np.any(Va[:, -1] != Vb[:, -1]):
        raise ValueError("contraction check needs identical boundary data")
    h = series_a.h
    d = np.array([l2_norm(a - b, h) for a, b in zip(Va, Vb)])
    return InvariantReport.from_margins("contraction", d[:-1] - d[1:], _tol(series_a, tol),
                                        series_a.fingerprint, distances=d)


def check_convexity(series: TimeSeries, tol: float | None = None) -> InvariantReport:
    """Minimum interior second difference must stay above ``-tol``."""
    tol = _tol(series, tol)
    d0 = series[0].u.second_differences()
    if d0.size and np.min(d0) < -tol:
        return InvariantReport.skipped("convexity", "hypothesis violated: initial datum is not convex",
                                       series.fingerprint)
    if not _constant_boundary(series):
        return InvariantReport.skipped("convexity", "hypothesis violated: boundary data vary in time",
                                       series.fingerprint)
    m = [float(np.min(s.u.second_differences())) for s in series]
    return InvariantReport.from_margins("convexity", m, tol, series.fingerprint)


def check_energy_dissipation(series: TimeSeries, G: MonotoneGraph | None = None,
                             tol: float | None = None) -> InvariantReport:
    """J_h(u) = sum h W(D+u) must not increase (constant boundary data)."""
    G = series.graph if G is None else G
    if not _constant_boundary(series):
        return InvariantReport.skipped("energy", "hypothesis violated: boundary data vary in time",
                                       series.fingerprint)
    J = np.array([discrete_energy(G, s.u.values, s.u.h) for s in series])
    return InvariantReport.from_margins("energy", J[:-1] - J[1:], _tol(series, tol),
                                        series.fingerprint, values=J)


def flux_ceiling(G: MonotoneGraph, u0: GridFunction) -> float:
    """sup |L| over [-1 - s0, 1 + s0] with s0 the largest initial slope magnitude."""
    s0 = float(np.max(np.abs(u0.slopes())))
    return float(max(abs(G.lower(-1.0 - s0)), abs(G.upper(1.0 + s0))))


def check_flux_bound(series: TimeSeries, G: MonotoneGraph | None = None,
                     u0: GridFunction | None = None, tol: float | None = None) -> InvariantReport:
    G = series.graph if G is None else G
    u0 = series[0].u if u0 is None else u0
    bound = flux_ceiling(G, u0)
    m = [bound - float(np.max(np.abs(s.flux.values))) for s in series]
    return InvariantReport.from_margins("flux", m, _tol(series, tol), series.fingerprint, bound=bound)


def check_epsilon_order(report, min_order: float = 0.8, fingerprint: str = "") -> InvariantReport:
    """Fitted log-log order of the epsilon-convergence report must reach ``min_order``."""
    from .solver import fitted_order

    order = fitted_order(report)
    return InvariantReport.from_margins("eps-order", [order - min_order], 0.0, fingerprint, order=order)


SUITES = ("bv", "contraction", "convexity", "energy", "flux")


def run_suite(series: TimeSeries, suite: str = "all", partner: TimeSeries | None = None,
              tol: dict | None = None) -> list[InvariantReport]:
    """Run the named checks; ``contraction`` needs a partner run."""
    tol = tol or {}
    names = SUITES if suite == "all" else (suite,)
    out = []
    for name in names:
        t = tol.get(name)
        if name == "bv":
            out.append(check_bv_monotone(series, t))
        elif name == "contraction":
            if partner is None:
                out.append(InvariantReport.skipped("contraction", "no partner run", series.fingerprint))
            else:
                out.append(check_l2_contraction(series, partner, t))
        elif name == "convexity":
            out.append(check_convexity(series, t))
        elif name == "energy":
            out.append(check_energy_dissipation(series, tol=t))
        elif name == "flux":
            out.append(check_flux_bound(series, tol=t))
        else:
            raise ValueError(f"unknown suite {name!r}; choose from all, {', '.join(SUITES)}")
    return out
