"""Facet calculus for convex grid profiles.

Works on the piecewise-linear interpolant of nodal values: slopes live on
cells, one-sided derivatives on nodes.  A *flat* is a maximal run of at least
two cells sharing a slope; a *facet* is a flat whose slope is a jump point of
the graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Interval, MonotoneGraph
from .model import GridFunction, TimeSeries

__all__ = [
    "NonConvexError",
    "ClarkeDerivative",
    "Flat",
    "FacetRecord",
    "ComposedFlux",
    "ResidualSnapshot",
    "ResidualReport",
    "clarke_dx",
    "detect_flats",
    "compose_bar",
    "facet_records",
    "almost_classical_residual",
    "facet_trajectory",
]


class NonConvexError(ValueError):
    pass


def _as_grid(u) -> GridFunction:
    return u if isinstance(u, GridFunction) else GridFunction(np.asarray(u, dtype=float))


def _default_tol(s) -> float:
    return 1e-8 * max(1.0, float(np.max(np.abs(s))))


@dataclass(eq=False)
class ClarkeDerivative:
    """Per-node interval [min(u_x^-, u_x^+), max(u_x^-, u_x^+)]."""

    left: np.ndarray
    right: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    singleton: np.ndarray

    def interval(self, i: int) -> Interval:
        return Interval(float(self.lo[i]), float(self.hi[i]))


def clarke_dx(u, slope_tol: float | None = None) -> ClarkeDerivative:
    """Set-valued derivative from one-sided slopes; end nodes use their only slope."""
    u = _as_grid(u)
    s = u.slopes()
    tol = _default_tol(s) if slope_tol is None else slope_tol
    left = np.concatenate([[s[0]], s])
    right = np.concatenate([s, [s[-1]]])
    lo = np.minimum(left, right)
    hi = np.maximum(left, right)
    return ClarkeDerivative(left, right, lo, hi, (hi - lo) <= tol)


@dataclass(frozen=True)
class Flat:
    theta: float
    a: float
    b: float
    first_cell: int
    last_cell: int

    @property
    def ncells(self) -> int:
        return self.last_cell - self.first_cell + 1


def _runs(s, tol):
    """Maximal runs of consecutive cells whose slope spread is at most 2*tol."""
    runs = []
    j = 0
    m = s.size
    while j < m:
        lo = hi = s[j]
        k = j + 1
        while k < m:
            lo2, hi2 = min(lo, s[k]), max(hi, s[k])
            if hi2 - lo2 > 2.0 * tol:
                break
            lo, hi = lo2, hi2
            k += 1
        runs.append((j, k - 1, 0.5 * (lo + hi)))
        j = k
    return runs


def detect_flats(u, flat_tol: float | None = None) -> list[Flat]:
    """Flat parts of the slope profile: runs of >= 2 cells with a common slope."""
    u = _as_grid(u)
    s = u.slopes()
    tol = _default_tol(s) if flat_tol is None else flat_tol
    h = u.h
    return [
        Flat(theta, j0 * h, (j1 + 1) * h, j0, j1)
        for j0, j1, theta in _runs(s, tol)
        if j1 > j0
    ]


@dataclass(eq=False)
class FacetRecord:
    theta: float
    xi_minus: float
    xi_plus: float
    jump: Interval
    speed: float | None
    boundary_touch: str = "none"
    isolated: bool = False
    height: float = 0.0
    first_cell: int = 0
    last_cell: int = 0

    @property
    def width(self) -> float:
        return self.xi_plus - self.xi_minus

    def field(self, x):
        """Linear interpolation from a at xi_minus to b at xi_plus."""
        a, b = self.jump
        lam = np.clip((np.asarray(x) - self.xi_minus) / self.width, 0.0, 1.0)
        return a + (b - a) * lam


def _refine_edges(s, j0, j1, theta, h):
    """Sub-cell facet endpoints.

    The edge cell next to the facet is split into a part with the facet slope
    and a part with the slope of the following cell, so that the interpolant
    still passes through both nodes.
    """
    m = s.size
    xi_minus = j0 * h
    if j0 >= 1:
        sigma = s[j0 - 1]
        outer = s[j0 - 2] if j0 >= 2 else sigma
        if outer != theta:
            v = h * np.clip((sigma - outer) / (theta - outer), 0.0, 1.0)
            xi_minus = j0 * h - v
    xi_plus = (j1 + 1) * h
    if j1 <= m - 2:
        sigma = s[j1 + 1]
        outer = s[j1 + 2] if j1 <= m - 3 else sigma
        if outer != theta:
            w = h * np.clip((sigma - outer) / (theta - outer), 0.0, 1.0)
            xi_plus = (j1 + 1) * h + w
    return xi_minus, xi_plus


@dataclass(eq=False)
class ComposedFlux:
    """Midpoint field of the canonical selection; single-cell jump slopes are flagged."""

    values: np.ndarray
    isolated: np.ndarray
    intervals: dict = field(default_factory=dict)
    facets: list = field(default_factory=list)


def _check_convex(u, conv_tol, G=None):
    if G is not None and not len(G.jump_points()):
        # without jumps the composition is single valued for any profile
        return
    d2 = u.second_differences()
    tol = 1e-8 if conv_tol is None else conv_tol
    if d2.size and d2.min() < -tol:
        i = int(np.argmin(d2)) + 1
        raise NonConvexError(f"profile is not convex: second difference {d2.min():.3e} at node {i}")


def _classify(G: MonotoneGraph, u: GridFunction, flat_tol):
    s = u.slopes()
    tol = _default_tol(s) if flat_tol is None else flat_tol
    h = u.h
    m = s.size
    recs = []
    for j0, j1, theta in _runs(s, tol):
        hit = G.nearest_jump(theta, tol)
        if hit is None:
            continue
        p, iv = hit
        touch_l, touch_r = j0 == 0, j1 == m - 1
        height = float(np.mean(u.values[j0 : j1 + 2] - p * u.x[j0 : j1 + 2]))
        if j1 == j0 and not (touch_l or touch_r):
            recs.append(FacetRecord(p, j0 * h, (j0 + 1) * h, iv, None, "none", True, height, j0, j1))
            continue
        xm, xp = _refine_edges(s, j0, j1, p, h)
        touch = {(True, True): "both", (True, False): "left", (False, True): "right"}.get(
            (touch_l, touch_r), "none"
        )
        if touch == "none":
            speed = iv.width / (xp - xm)
        else:
            speed = 0.0
        if touch == "left":
            xm = 0.0
        elif touch == "right":
            xp = 1.0
        elif touch == "both":
            xm, xp = 0.0, 1.0
        recs.append(FacetRecord(p, xm, xp, iv, speed, touch, False, height, j0, j1))
    return s, recs


def compose_bar(G: MonotoneGraph, u, flat_tol: float | None = None,
                conv_tol: float | None = None) -> ComposedFlux:
    """Canonical monotone selection of L∘u_x at cell midpoints for convex u.

    * cells off facets: L(slope) (single valued there);
    * interior facets: linear from a at xi_minus to b at xi_plus;
    * facets touching x=0 (x=1): the constant b (a);
    * a facet covering [0, 1]: the midpoint (a+b)/2;
    * a single cell with a jump slope: midpoint value, flagged, interval kept.

    Convexity is only required when G has jumps.
    """
    u = _as_grid(u)
    _check_convex(u, conv_tol, G)
    s, recs = _classify(G, u, flat_tol)
    xm = (np.arange(s.size) + 0.5) * u.h
    vals = G.selection(s)
    isolated = np.zeros(s.size, dtype=bool)
    intervals = {}
    for r in recs:
        sl = slice(r.first_cell, r.last_cell + 1)
        a, b = r.jump
        if r.isolated:
            vals[sl] = r.jump.mid
            isolated[sl] = True
            intervals[r.first_cell] = r.jump
        elif r.boundary_touch == "none":
            vals[sl] = r.field(xm[sl])
        elif r.boundary_touch == "left":
            vals[sl] = b
        elif r.boundary_touch == "right":
            vals[sl] = a
        else:
            vals[sl] = 0.5 * (a + b)
    return ComposedFlux(vals, isolated, intervals, recs)


def facet_records(G: MonotoneGraph, u, flat_tol: float | None = None,
                  conv_tol: float | None = None) -> list[FacetRecord]:
    """One record per flat whose slope is a jump point of G."""
    u = _as_grid(u)
    _check_convex(u, conv_tol, G)
    return _classify(G, u, flat_tol)[1]


# ----------------------------------------------------------------------


@dataclass(eq=False)
class ResidualSnapshot:
    t: float
    residual: np.ndarray
    violations: np.ndarray
    measure: float


@dataclass(eq=False)
class ResidualReport:
    snapshots: list
    res_tol: float

    @property
    def aggregate(self) -> float:
        """Space-time measure of the violation set."""
        tot = 0.0
        prev = None
        for r in self.snapshots:
            if prev is not None:
                tot += r.measure * (r.t - prev)
            prev = r.t
        return tot

    @property
    def max_measure(self) -> float:
        return max((r.measure for r in self.snapshots), default=0.0)


def almost_classical_residual(series: TimeSeries, G: MonotoneGraph | None = None,
                              res_tol: float | None = None, rel_tol: float = 0.25,
                              flat_tol: float | None = None,
                              conv_tol: float | None = None,
                              include_initial: bool = False) -> ResidualReport:
    """Pointwise residual u_t - d/dx (canonical selection) at interior nodes.

    u_t is the backward difference between consecutive snapshots and the
    selection is taken at the later one.  Nodes next to a flagged single-cell
    facet are excluded (NaN).  The violation threshold defaults to
    ``rel_tol * max(1, max |u_t|)`` per snapshot.

    The initial datum need not have a finite time derivative (a kink under
    the sign graph gives u_t ~ t**-0.5), so by default the first difference
    quotient taken is between the first two positive times; pass
    ``include_initial=True`` to start from t = 0.
    """
    G = series.graph if G is None else G
    out = []
    h = series.h
    snaps = series.snapshots if include_initial else series.snapshots[1:]
    for prev, cur in zip(snaps, snaps[1:]):
        dt = cur.t - prev.t
        ut = (cur.u.values[1:-1] - prev.u.values[1:-1]) / dt
        cf = compose_bar(G, cur.u, flat_tol=flat_tol, conv_tol=conv_tol)
        res = ut - np.diff(cf.values) / h
        bad = cf.isolated[:-1] | cf.isolated[1:]
        res[bad] = np.nan
        tol = res_tol if res_tol is not None else rel_tol * max(1.0, float(np.max(np.abs(ut))))
        viol = np.flatnonzero(np.abs(np.nan_to_num(res)) > tol) + 1
        full = np.full(series.n, np.nan)
        full[1:-1] = res
        out.append(ResidualSnapshot(cur.t, full, viol, viol.size * h))
    return ResidualReport(out, res_tol if res_tol is not None else float("nan"))


def facet_trajectory(series: TimeSeries, G: MonotoneGraph | None = None,
                     flat_tol: float | None = None) -> list[dict]:
    """Facet table over time with predicted and measured height rates.

    The measured speed is the backward difference of the facet height
    (intercept of the affine piece) between matching facets in consecutive
    snapshots.  An implicit step makes the height increment over a step equal
    to (b - a) * dt over the mean facet width of the two snapshots (the
    facet gains mass b - a per unit time while its edges sweep outward), which
    is reported as ``speed_predicted_mid``.  A facet without a predecessor uses
    the forward difference and has no midpoint prediction.
    """
    G = series.graph if G is None else G
    per = []
    for snap in series:
        try:
            recs = [r for r in facet_records(G, snap.u, flat_tol) if not r.isolated]
        except NonConvexError:
            recs = []
        per.append(recs)

    def match(rec, others):
        for o in others:
            if o.theta == rec.theta and o.xi_minus <= rec.xi_plus and rec.xi_minus <= o.xi_plus:
                return o
        return None

    times = series.times
    rows = []
    for k, recs in enumerate(per):
        for r in recs:
            before = match(r, per[k - 1]) if k > 0 else None
            after = match(r, per[k + 1]) if k + 1 < len(per) else None
            mid = float("nan")
            if before is not None:
                meas = (r.height - before.height) / (times[k] - times[k - 1])
                if r.speed is not None and r.boundary_touch == "none":
                    mid = (r.jump.hi - r.jump.lo) / (0.5 * (r.width + before.width))
            elif after is not None:
                meas = (after.height - r.height) / (times[k + 1] - times[k])
            else:
                meas = float("nan")
            rows.append(
                dict(
                    t=float(times[k]),
                    theta=r.theta,
                    xi_minus=r.xi_minus,
                    xi_plus=r.xi_plus,
                    a=r.jump.lo,
                    b=r.jump.hi,
                    speed_predicted=r.speed if r.speed is not None else float("nan"),
                    speed_measured=meas,
                    speed_predicted_mid=mid,
                    boundary_touch=r.boundary_touch,
                    height=r.height,
                )
            )
    return rows
