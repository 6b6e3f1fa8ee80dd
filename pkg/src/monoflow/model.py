"""Problem data and result containers."""

from __future__ import annotations

import ast
import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .graph import MonotoneGraph

__all__ = [
    "ScenarioError",
    "GridFunction",
    "BoundaryEvaluator",
    "InitialDatum",
    "Tolerances",
    "Scenario",
    "FluxField",
    "Diagnostics",
    "Snapshot",
    "TimeSeries",
    "State",
    "slopes",
    "bv_seminorm",
    "discrete_energy",
    "l2_norm",
]


class ScenarioError(ValueError):
    """Invalid scenario data."""


# ----------------------------------------------------------------------
# discrete quantities


def slopes(u, h):
    """Forward differences D+u_i = (u_{i+1} - u_i)/h."""
    return np.diff(np.asarray(u, dtype=float)) / h


def bv_seminorm(u, h=None) -> float:
    """Total variation of the discrete slope profile."""
    if isinstance(u, GridFunction):
        u, h = u.values, u.h
    s = slopes(u, h)
    return float(np.sum(np.abs(np.diff(s))))


def discrete_energy(graph: MonotoneGraph, u, h) -> float:
    return float(h * np.sum(graph.primitive(slopes(u, h))))


def l2_norm(v, h) -> float:
    return float(np.sqrt(h * np.sum(np.asarray(v, dtype=float) ** 2)))


# ----------------------------------------------------------------------


@dataclass(eq=False)
class GridFunction:
    """Nodal values on the uniform grid x_i = i*h, h = 1/(n-1)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 3:
            raise ValueError("a grid function needs at least 3 nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def slopes(self) -> np.ndarray:
        return slopes(self.values, self.h)

    def second_differences(self) -> np.ndarray:
        v = self.values
        return v[2:] - 2.0 * v[1:-1] + v[:-2]

    @classmethod
    def sample(cls, f, n: int) -> "GridFunction":
        return cls(f(np.linspace(0.0, 1.0, n)))


@dataclass(frozen=True)
class BoundaryEvaluator:
    """Dirichlet datum: a constant or a piecewise-linear table of (t, value)."""

    value0: float = 0.0
    table: tuple = ()

    def __post_init__(self):
        if self.table:
            tab = tuple((float(t), float(v)) for t, v in self.table)
            ts = [t for t, _ in tab]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ScenarioError("boundary table times must be strictly increasing")
            object.__setattr__(self, "table", tab)
            object.__setattr__(self, "value0", float(np.interp(0.0, ts, [v for _, v in tab])))
        else:
            object.__setattr__(self, "value0", float(self.value0))

    @property
    def is_constant(self) -> bool:
        return not self.table or len({v for _, v in self.table}) == 1

    def value(self, t: float) -> float:
        if not self.table:
            return self.value0
        ts, vs = zip(*self.table)
        return float(np.interp(t, ts, vs))

    def rate(self, t: float) -> float:
        """Right derivative of the datum (zero beyond the table)."""
        if len(self.table) < 2:
            return 0.0
        ts = np.array([p[0] for p in self.table])
        vs = np.array([p[1] for p in self.table])
        k = int(np.searchsorted(ts, t, side="right")) - 1
        if k < 0 or k >= ts.size - 1:
            return 0.0
        return float((vs[k + 1] - vs[k]) / (ts[k + 1] - ts[k]))

    def to_literal(self):
        if self.table:
            return {"table": [list(p) for p in self.table]}
        return self.value0

    @classmethod
    def from_literal(cls, lit) -> "BoundaryEvaluator":
        if isinstance(lit, (int, float)) and not isinstance(lit, bool):
            return cls(float(lit))
        if isinstance(lit, dict) and set(lit) == {"table"}:
            tab = lit["table"]
            if not tab or any(len(p) != 2 for p in tab):
                raise ScenarioError("boundary table must be a nonempty list of [t, value] pairs")
            return cls(table=tuple(tuple(p) for p in tab))
        raise ScenarioError(f"boundary datum must be a number or {{table: [[t, v], ...]}}, got {lit!r}")


_ALLOWED_FUNCS = ("sin", "cos", "exp", "sqrt", "Abs", "Max", "Min", "pi", "log", "tanh")
_ALLOWED_NAMES = set(_ALLOWED_FUNCS) | {"x", "abs", "max", "min", "E"}
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
                  ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def _check_expression(text: str):
    """Reject anything beyond arithmetic on x, numbers and whitelisted functions."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as err:
        raise ScenarioError(f"cannot parse initial expression {text!r}: {err.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ScenarioError(f"initial expression {text!r}: {type(node).__name__} is not allowed")
        if isinstance(node, ast.Name) and node.id not in _ALLOWED_NAMES:
            raise ScenarioError(f"initial expression {text!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ScenarioError(f"initial expression {text!r}: only numeric constants are allowed")
        if isinstance(node, ast.Call) and (not isinstance(node.func, ast.Name) or node.keywords):
            raise ScenarioError(f"initial expression {text!r}: only plain function calls are allowed")


@dataclass(frozen=True)
class InitialDatum:
    """Initial profile given as an expression in x or as explicit nodal values."""

    expr: str | None = None
    values: tuple | None = None

    def __post_init__(self):
        if (self.expr is None) == (self.values is None):
            raise ScenarioError("initial datum needs exactly one of 'expr' or 'values'")
        if self.values is not None:
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def function(self):
        if self.expr is None:
            vals = np.array(self.values)
            xs = np.linspace(0.0, 1.0, vals.size)
            return lambda x: np.interp(x, xs, vals)
        import sympy

        _check_expression(self.expr)
        x = sympy.Symbol("x")
        ns = {name: getattr(sympy, name) for name in _ALLOWED_FUNCS}
        ns.update(abs=sympy.Abs, max=sympy.Max, min=sympy.Min, E=sympy.E, x=x)
        try:
            e = sympy.sympify(self.expr, locals=ns)
        except (sympy.SympifyError, SyntaxError, TypeError) as err:
            raise ScenarioError(f"cannot parse initial expression {self.expr!r}: {err}") from None
        if e.free_symbols - {x}:
            raise ScenarioError(f"initial expression may only use x, got {e.free_symbols}")
        f = sympy.lambdify(x, e, "numpy")
        return lambda xs: np.broadcast_to(np.asarray(f(xs), dtype=float), np.shape(xs)).copy()

    def sample(self, n: int) -> GridFunction:
        if self.values is not None and len(self.values) == n:
            return GridFunction(np.array(self.values))
        return GridFunction.sample(self.function(), n)

    def to_literal(self):
        return {"expr": self.expr} if self.expr is not None else {"values": list(self.values)}


@dataclass(frozen=True)
class Tolerances:
    tol_prox: float = 1e-12
    max_iters: int = 200
    max_substeps: int = 2_000_000
    cfl_safety: float = 0.9
    slope_tol: float = 1e-8
    tol_flux: float = 1e-8


@dataclass(frozen=True)
class Scenario:
    """Complete description of one evolution problem."""

    graph: MonotoneGraph
    initial: InitialDatum
    A: BoundaryEvaluator
    B: BoundaryEvaluator
    n: int
    T: float
    dt: float
    method: str = "prox"
    epsilon_schedule: tuple = tuple(0.1 * 2.0**-k for k in range(6))
    prox_solver: str = "newton"
    tolerances: Tolerances = field(default_factory=Tolerances)
    snapshot_every: int = 1
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "epsilon_schedule", tuple(float(e) for e in self.epsilon_schedule))
        if self.n < 3:
            raise ScenarioError("discretization.n must be at least 3")
        if not self.dt > 0:
            raise ScenarioError("discretization.dt must be positive")
        if not self.T >= self.dt:
            raise ScenarioError("discretization.T must be at least dt")
        if self.method not in ("prox", "regularized"):
            raise ScenarioError(f"solver.method must be 'prox' or 'regularized', got {self.method!r}")
        if self.prox_solver not in ("newton", "cd"):
            raise ScenarioError(f"solver.prox_solver must be 'newton' or 'cd', got {self.prox_solver!r}")
        eps = self.epsilon_schedule
        if self.method == "regularized":
            if not eps or any(e <= 0 for e in eps):
                raise ScenarioError("solver.epsilon_schedule must be a nonempty list of positive values")
            if any(b >= a for a, b in zip(eps, eps[1:])):
                raise ScenarioError("solver.epsilon_schedule must be strictly decreasing")
        if self.snapshot_every < 1:
            raise ScenarioError("solver.snapshot_every must be >= 1")

    @cached_property
    def u0(self) -> GridFunction:
        u = self.initial.sample(self.n)
        a, b = self.A.value(0.0), self.B.value(0.0)
        scale = 1.0 + np.max(np.abs(u.values))
        if abs(u.values[0] - a) > 1e-9 * scale or abs(u.values[-1] - b) > 1e-9 * scale:
            raise ScenarioError(
                f"initial datum endpoints ({u.values[0]:.12g}, {u.values[-1]:.12g}) "
                f"do not match boundary data A(0)={a:.12g}, B(0)={b:.12g}"
            )
        u.values[0], u.values[-1] = a, b
        return u

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    @property
    def nsteps(self) -> int:
        return int(np.ceil(self.T / self.dt - 1e-9))

    def step_time(self, k: int) -> float:
        return min(k * self.dt, self.T)

    @property
    def constant_boundary(self) -> bool:
        return self.A.is_constant and self.B.is_constant

    def replace(self, **changes) -> "Scenario":
        if "tolerances" in changes and isinstance(changes["tolerances"], dict):
            changes["tolerances"] = replace(self.tolerances, **changes["tolerances"])
        return replace(self, **changes)

    def to_dict(self) -> dict:
        tol = self.tolerances
        return {
            "name": self.name,
            "graph": self.graph.to_literal(),
            "initial": self.initial.to_literal(),
            "boundary": {"A": self.A.to_literal(), "B": self.B.to_literal()},
            "discretization": {"n": self.n, "dt": self.dt, "T": self.T},
            "solver": {
                "method": self.method,
                "epsilon_schedule": list(self.epsilon_schedule),
                "prox_solver": self.prox_solver,
                "snapshot_every": self.snapshot_every,
                "tol_prox": tol.tol_prox,
                "max_iters": tol.max_iters,
                "max_substeps": tol.max_substeps,
                "cfl_safety": tol.cfl_safety,
                "slope_tol": tol.slope_tol,
                "tol_flux": tol.tol_flux,
            },
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ----------------------------------------------------------------------
# results


@dataclass(eq=False)
class FluxField:
    """Flux values at cell midpoints x_{i+1/2}, i = 0..n-2, at time t."""

    values: np.ndarray
    t: float = 0.0
    flagged: bool = False
    violation: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def admissibility(self, graph: MonotoneGraph, u: GridFunction, slope_tol: float = 0.0) -> float:
        """Largest distance of a midpoint value from L(D+u) (slopes widened by slope_tol)."""
        s = u.slopes()
        lo, hi = graph.hull(s - slope_tol, s + slope_tol)
        d = np.maximum(lo - self.values, self.values - hi)
        return float(max(np.max(d), 0.0))


@dataclass(frozen=True)
class Diagnostics:
    energy: float
    bv: float
    min_second_difference: float
    max_flux: float

    @classmethod
    def compute(cls, graph: MonotoneGraph, u: GridFunction, flux: FluxField) -> "Diagnostics":
        return cls(
            energy=discrete_energy(graph, u.values, u.h),
            bv=bv_seminorm(u),
            min_second_difference=float(np.min(u.second_differences())),
            max_flux=float(np.max(np.abs(flux.values))),
        )


@dataclass(eq=False)
class Snapshot:
    t: float
    u: GridFunction
    flux: FluxField
    diagnostics: Diagnostics


@dataclass(eq=False)
class State:
    """Solver state carried between time steps."""

    t: float
    u: GridFunction
    flux: FluxField | None = None
    aux: dict = field(default_factory=dict)


@dataclass(eq=False)
class TimeSeries:
    """Ordered snapshots of one run; the first snapshot is the initial datum."""

    graph: MonotoneGraph
    method: str
    dt: float
    epsilon: float | None = None
    snapshots: list = field(default_factory=list)
    convergence: list | None = None
    fingerprint: str = ""
    info: dict = field(default_factory=dict)

    def append(self, snap: Snapshot):
        if self.snapshots and not snap.t > self.snapshots[-1].t:
            raise ValueError(f"snapshot times must increase ({snap.t} after {self.snapshots[-1].t})")
        self.snapshots.append(snap)

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    def __getitem__(self, k):
        return self.snapshots[k]

    @property
    def n(self) -> int:
        return self.snapshots[0].u.n

    @property
    def h(self) -> float:
        return self.snapshots[0].u.h

    @property
    def x(self) -> np.ndarray:
        return self.snapshots[0].u.x

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def values(self) -> np.ndarray:
        return np.stack([s.u.values for s in self.snapshots])

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]

    def at(self, t: float, atol: float = 1e-12) -> Snapshot:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.snapshots[k].t - t) > atol:
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[k]
