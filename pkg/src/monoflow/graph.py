"""Piecewise-linear maximal monotone graphs.

A graph is stored by its knots ``(p, y_lo, y_hi)`` together with the two tail
slopes.  Between consecutive knots the graph is the straight segment joining
``(p_k, y_hi_k)`` to ``(p_{k+1}, y_lo_{k+1})``; at a knot with ``y_lo < y_hi``
the graph contains the whole vertical segment.  Knots with ``y_lo == y_hi`` are
plain corners.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "GraphError",
    "Interval",
    "MonotoneGraph",
    "SmoothMonotoneFn",
    "eval_set",
    "jump_points",
    "primitive",
    "resolvent",
    "mollify",
    "check_subdifferential",
    "identity",
    "sign",
    "one_sided",
    "tv_plus_linear",
    "PRESETS",
    "preset",
]


class GraphError(ValueError):
    """Raised when a graph literal violates monotonicity or consistency."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, v: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= v <= self.hi + tol

    def distance(self, v: float) -> float:
        return max(self.lo - v, v - self.hi, 0.0)

    def __iter__(self):
        yield self.lo
        yield self.hi


@dataclass(frozen=True)
class MonotoneGraph:
    """Maximal monotone piecewise-linear multifunction on the real line.

    Parameters
    ----------
    knots : sequence of (p, y_lo, y_hi)
        Jump or corner points with strictly increasing abscissae.
    left_slope, right_slope : float
        Slopes of the two unbounded tails.
    anchor : (p0, y0), optional
        A point on the graph; only used (and required to be consistent with
        ``left_slope == right_slope``) when there are no knots.
    """

    knots: tuple = ()
    left_slope: float = 0.0
    right_slope: float = 0.0
    anchor: tuple | None = None
    _arr: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        knots = tuple(tuple(float(v) for v in k) for k in self.knots)
        for k in knots:
            if len(k) != 3:
                raise GraphError(f"knot {k} must be a triple (p, y_lo, y_hi)")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "left_slope", float(self.left_slope))
        object.__setattr__(self, "right_slope", float(self.right_slope))
        if self.anchor is not None:
            object.__setattr__(self, "anchor", tuple(float(v) for v in self.anchor))

        if not all(np.isfinite(v) for k in knots for v in k):
            raise GraphError("knot coordinates must be finite")
        if self.left_slope < 0 or self.right_slope < 0:
            raise GraphError("tail slopes must be nonnegative")
        P = np.array([k[0] for k in knots], dtype=float)
        ylo = np.array([k[1] for k in knots], dtype=float)
        yhi = np.array([k[2] for k in knots], dtype=float)
        if np.any(np.diff(P) <= 0):
            raise GraphError("knot abscissae must be strictly increasing")
        if np.any(ylo > yhi):
            bad = int(np.argmax(ylo > yhi))
            raise GraphError(f"knot {bad}: y_lo > y_hi")
        if np.any(yhi[:-1] > ylo[1:]):
            bad = int(np.argmax(yhi[:-1] > ylo[1:]))
            raise GraphError(f"knots {bad},{bad + 1}: graph decreases between knots")

        K = len(knots)
        slopes = np.empty(K + 1)
        slopes[0] = self.left_slope
        slopes[K] = self.right_slope
        if K >= 2:
            slopes[1:K] = (ylo[1:] - yhi[:-1]) / (P[1:] - P[:-1])
        if K == 0:
            if self.left_slope != self.right_slope:
                raise GraphError("a graph without knots needs equal tail slopes")
            anchor = self.anchor if self.anchor is not None else (0.0, 0.0)
            object.__setattr__(self, "anchor", anchor)

        arr = dict(P=P, ylo=ylo, yhi=yhi, slopes=slopes, K=K)
        # antiderivative F of the selection, F(P[0]) = 0
        if K:
            seg = 0.5 * (yhi[:-1] + ylo[1:]) * np.diff(P)
            arr["F"] = np.concatenate([[0.0], np.cumsum(seg)])
        object.__setattr__(self, "_arr", arr)
        object.__setattr__(self, "_W0", 0.0)
        object.__setattr__(self, "_W0", float(self._antiderivative(np.array(0.0))))

    # ------------------------------------------------------------------
    # vectorized evaluation

    def _locate(self, p):
        """Return (at_knot mask, knot index, gap index) for each entry of p."""
        a = self._arr
        P = a["P"]
        idx = np.searchsorted(P, p, side="left")
        at = np.zeros(np.shape(p), dtype=bool)
        if a["K"]:
            inside = idx < a["K"]
            at[inside] = P[idx[inside]] == p[inside]
        return at, idx

    def _line(self, p, gap):
        """Value of the affine piece on ``gap`` (0 = left tail, K = right tail)."""
        a = self._arr
        K = a["K"]
        if K == 0:
            p0, y0 = self.anchor
            return y0 + a["slopes"][0] * (p - p0)
        s = a["slopes"][gap]
        left = gap == 0
        ref_p = np.where(left, a["P"][0], a["P"][np.maximum(gap - 1, 0)])
        ref_y = np.where(left, a["ylo"][0], a["yhi"][np.maximum(gap - 1, 0)])
        return ref_y + s * (p - ref_p)

    def lower(self, p):
        """Lower end L^-(p) of the value set (vectorized)."""
        p = np.asarray(p, dtype=float)
        at, idx = self._locate(p)
        out = self._line(p, idx)
        if np.any(at):
            out = np.where(at, self._arr["ylo"][np.minimum(idx, max(self._arr["K"] - 1, 0))], out)
        return out

    def upper(self, p):
        """Upper end L^+(p) of the value set (vectorized)."""
        p = np.asarray(p, dtype=float)
        at, idx = self._locate(p)
        out = self._line(p, idx)
        if np.any(at):
            out = np.where(at, self._arr["yhi"][np.minimum(idx, max(self._arr["K"] - 1, 0))], out)
        return out

    def selection(self, p):
        """Single-valued selection: the midpoint of the value set."""
        return 0.5 * (self.lower(p) + self.upper(p))

    def hull(self, p_lo, p_hi):
        """Smallest interval containing L([p_lo, p_hi]), vectorized."""
        return self.lower(p_lo), self.upper(p_hi)

    def eval_set(self, p: float) -> Interval:
        return Interval(float(self.lower(p)), float(self.upper(p)))

    # ------------------------------------------------------------------

    @property
    def slopes(self) -> np.ndarray:
        return self._arr["slopes"].copy()

    @property
    def knot_abscissae(self) -> np.ndarray:
        return self._arr["P"].copy()

    def jump_points(self) -> list[tuple[float, Interval]]:
        return [(p, Interval(lo, hi)) for p, lo, hi in self.knots if lo < hi]

    @property
    def jump_abscissae(self) -> np.ndarray:
        a = self._arr
        return a["P"][a["ylo"] < a["yhi"]]

    def nearest_jump(self, p: float, tol: float):
        """Return (theta, Interval) for the jump point within ``tol`` of p, else None."""
        best = None
        for q, iv in self.jump_points():
            d = abs(q - p)
            if d <= tol and (best is None or d < abs(best[0] - p)):
                best = (q, iv)
        return best

    def _antiderivative(self, p):
        a = self._arr
        p = np.asarray(p, dtype=float)
        K = a["K"]
        if K == 0:
            p0, y0 = self.anchor
            d = p - p0
            return y0 * d + 0.5 * a["slopes"][0] * d * d
        P, ylo, yhi, s, F = a["P"], a["ylo"], a["yhi"], a["slopes"], a["F"]
        gap = np.searchsorted(P, p, side="right")  # number of knots <= p
        k = np.maximum(gap - 1, 0)
        d = p - P[k]
        right = F[k] + yhi[k] * d + 0.5 * s[gap] * d * d
        dl = P[0] - p
        left = -ylo[0] * dl + 0.5 * s[0] * dl * dl
        return np.where(gap == 0, left, right)

    def primitive(self, p):
        """Convex primitive W with W(0) = 0 (vectorized)."""
        return self._antiderivative(p) - self._W0

    def resolvent(self, tau: float, q):
        """Solve x + tau*L(x) ∋ q for x (vectorized, exact)."""
        x, _ = self._resolvent(tau, q)
        return x

    def resolvent_derivative(self, tau: float, q):
        """Slope of the resolvent map at q (0 inside jumps)."""
        _, d = self._resolvent(tau, q)
        return d

    def _resolvent(self, tau, q):
        if tau <= 0:
            raise ValueError("tau must be positive")
        a = self._arr
        q = np.asarray(q, dtype=float)
        s = a["slopes"]
        if a["K"] == 0:
            p0, y0 = self.anchor
            c = 1.0 + tau * s[0]
            return p0 + (q - p0 - tau * y0) / c, np.full(q.shape, 1.0 / c)
        P = a["P"]
        lo = P + tau * a["ylo"]
        hi = P + tau * a["yhi"]
        k = np.searchsorted(lo, q, side="right") - 1  # last knot with lo_k <= q
        kk = np.maximum(k, 0)
        in_jump = (k >= 0) & (q <= hi[kk])
        gap = k + 1
        c = 1.0 + tau * s[gap]
        x_left = P[0] - (lo[0] - q) / c
        x_gap = P[kk] + (q - hi[kk]) / c
        x = np.where(k < 0, x_left, np.where(in_jump, P[kk], x_gap))
        d = np.where(in_jump, 0.0, 1.0 / c)
        return x, d

    def lipschitz_near(self, p_lo: float, p_hi: float) -> float:
        """Largest piece slope of the graph over gaps meeting [p_lo, p_hi]."""
        a = self._arr
        if a["K"] == 0:
            return float(a["slopes"][0])
        P = a["P"]
        g0 = int(np.searchsorted(P, p_lo, side="left"))
        g1 = int(np.searchsorted(P, p_hi, side="right"))
        return float(np.max(a["slopes"][g0 : g1 + 1]))

    def mollify(self, epsilon: float) -> "SmoothMonotoneFn":
        return SmoothMonotoneFn(self, epsilon)

    # ------------------------------------------------------------------
    # literal format

    def to_literal(self) -> dict:
        out = {
            "knots": [list(k) for k in self.knots],
            "left_slope": self.left_slope,
            "right_slope": self.right_slope,
        }
        if not self.knots:
            out["anchor"] = list(self.anchor)
        return out

    @classmethod
    def from_literal(cls, lit) -> "MonotoneGraph":
        if isinstance(lit, str):
            return preset(lit)
        if not isinstance(lit, dict):
            raise GraphError("graph literal must be a preset name or a mapping")
        if "preset" in lit:
            extra = set(lit) - {"preset"}
            if extra:
                raise GraphError(f"preset graph takes no other keys, got {sorted(extra)}")
            return preset(lit["preset"])
        unknown = set(lit) - {"knots", "left_slope", "right_slope", "anchor"}
        if unknown:
            raise GraphError(f"unknown graph keys {sorted(unknown)}")
        return cls(
            knots=tuple(tuple(k) for k in lit.get("knots", ())),
            left_slope=lit.get("left_slope", 0.0),
            right_slope=lit.get("right_slope", 0.0),
            anchor=lit.get("anchor"),
        )


# ----------------------------------------------------------------------
# quadratic B-spline kernel supported on [-eps, eps]


def _bspline_parts(x, eps):
    """Kernel, its CDF and the integral of the CDF, evaluated at x."""
    s = 2.0 * eps / 3.0
    t = np.clip((x + eps) / s, 0.0, 3.0)
    t2 = t * t
    t3 = t2 * t
    r = 3.0 - t
    p1 = t <= 1.0
    p3 = t >= 2.0
    B = np.where(p1, 0.5 * t2, np.where(p3, 0.5 * r * r, 0.5 * (-2.0 * t2 + 6.0 * t - 3.0)))
    C = np.where(
        p1, t3 / 6.0, np.where(p3, 1.0 - r**3 / 6.0, 0.5 - t3 / 3.0 + 1.5 * t2 - 1.5 * t)
    )
    Q = np.where(
        p1,
        t2 * t2 / 24.0,
        np.where(
            p3,
            t - 1.5 + r**4 / 24.0,
            1.0 / 24.0 - 1.0 / 6.0 + 0.5 * t - t2 * t2 / 12.0 + 0.5 * t3 - 0.75 * t2,
        ),
    )
    beyond = x >= eps
    Q = np.where(beyond, (x + eps) / s - 1.5, Q)
    return B / s, C, s * Q


@dataclass(frozen=True)
class SmoothMonotoneFn:
    """The regularization p -> (L * kernel)(p) + eps*p with a quadratic B-spline kernel.

    The convolution is evaluated in closed form: the selection of L is written
    as an affine function plus Heaviside jumps and ramp slope changes at the
    knots, whose convolutions with the kernel are its CDF and the integral of
    that CDF.
    """

    base: MonotoneGraph
    epsilon: float
    kernel_halfwidth: float = field(default=None)

    def __post_init__(self):
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "kernel_halfwidth", self.epsilon)
        a = self.base._arr
        s = a["slopes"]
        if a["K"] == 0:
            p0, y0 = self.base.anchor
            c1, c0 = s[0], y0 - s[0] * p0
            P = np.zeros(0)
            J = np.zeros(0)
            ds = np.zeros(0)
        else:
            P = a["P"]
            c1 = s[0]
            c0 = a["ylo"][0] - c1 * P[0]
            J = a["yhi"] - a["ylo"]
            ds = np.diff(s)
        object.__setattr__(self, "_c", (float(c0), float(c1), P, J, ds))

    def __call__(self, p):
        c0, c1, P, J, ds = self._c
        p = np.asarray(p, dtype=float)
        out = c0 + (c1 + self.epsilon) * p
        for k in range(P.size):
            _, C, Q = _bspline_parts(p - P[k], self.epsilon)
            out = out + J[k] * C + ds[k] * Q
        return out

    def derivative(self, p):
        c0, c1, P, J, ds = self._c
        p = np.asarray(p, dtype=float)
        out = np.full(p.shape, c1 + self.epsilon)
        for k in range(P.size):
            B, C, _ = _bspline_parts(p - P[k], self.epsilon)
            out = out + J[k] * B + ds[k] * C
        return out

    def max_derivative(self, p_lo: float, p_hi: float) -> float:
        """Upper bound of the derivative over slopes in [p_lo, p_hi]."""
        eps = self.epsilon
        _, _, P, J, _ = self._c
        bound = self.base.lipschitz_near(p_lo - eps, p_hi + eps) + eps
        near = (P >= p_lo - eps) & (P <= p_hi + eps)
        peak = 9.0 / (8.0 * eps)
        return float(bound + peak * np.sum(J[near]))


# ----------------------------------------------------------------------
# functional interface


def eval_set(G: MonotoneGraph, p: float) -> Interval:
    return G.eval_set(p)


def jump_points(G: MonotoneGraph) -> list[tuple[float, Interval]]:
    return G.jump_points()


def primitive(G: MonotoneGraph, p):
    return G.primitive(p)


def resolvent(G: MonotoneGraph, tau: float, q):
    return G.resolvent(tau, q)


def mollify(G: MonotoneGraph, epsilon: float) -> SmoothMonotoneFn:
    return SmoothMonotoneFn(G, epsilon)


def check_subdifferential(G: MonotoneGraph, p_grid: Sequence[float], h: float) -> float:
    """Largest violation of W(p+d) - W(p) >= l*d over l in L(p), d = +-h.

    A valid graph gives a value <= 0 up to round-off.
    """
    p = np.asarray(p_grid, dtype=float)
    W = G.primitive(p)
    worst = -np.inf
    for d in (h, -h):
        dW = G.primitive(p + d) - W
        for ell in (G.lower(p), G.upper(p)):
            worst = max(worst, float(np.max(ell * d - dW)))
    return worst


# ----------------------------------------------------------------------
# presets


def identity() -> MonotoneGraph:
    return MonotoneGraph((), 1.0, 1.0, (0.0, 0.0))


def sign() -> MonotoneGraph:
    return MonotoneGraph(((0.0, -1.0, 1.0),), 0.0, 0.0)


def one_sided() -> MonotoneGraph:
    """L(p) = |p| + p."""
    return MonotoneGraph(((0.0, 0.0, 0.0),), 0.0, 2.0)


def tv_plus_linear() -> MonotoneGraph:
    """L(p) = p + sgn(p)."""
    return MonotoneGraph(((0.0, -1.0, 1.0),), 1.0, 1.0)


PRESETS = {
    "identity": identity,
    "sign": sign,
    "one_sided": one_sided,
    "tv_plus_linear": tv_plus_linear,
}


def preset(name: str) -> MonotoneGraph:
    try:
        return PRESETS[name]()
    except KeyError:
        raise GraphError(f"unknown graph preset {name!r}; choose from {sorted(PRESETS)}") from None
