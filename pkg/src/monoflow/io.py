"""Scenario files, run archives and text reports.

Scenario files are YAML documents with the sections ``graph``, ``initial``,
``boundary``, ``discretization`` and ``solver``::

    name: tv_vee
    graph: sign                     # preset name, {preset: ...} or explicit knots
    initial: abs(x - 0.5)           # expression in x, or {values: [...]}
    boundary: {A: 0.5, B: 0.5}      # numbers or {table: [[t, v], ...]}
    discretization: {n: 101, dt: 1.0e-4, T: 0.05}
    solver: {method: prox}

A run archive is a directory holding ``scenario.yaml`` (the fully resolved
scenario), ``series.csv`` (columns ``t,x,u,omega_mid,slope``) and
``summary.json``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import time
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .graph import GraphError, MonotoneGraph
from .model import (
    BoundaryEvaluator,
    Diagnostics,
    FluxField,
    GridFunction,
    InitialDatum,
    Scenario,
    ScenarioError,
    Snapshot,
    TimeSeries,
    Tolerances,
    l2_norm,
)

__all__ = [
    "SchemaError",
    "ArchiveError",
    "FORMAT_VERSION",
    "parse_scenario",
    "load_scenario",
    "dump_scenario",
    "SCENARIO_PRESETS",
    "preset_scenario",
    "emit_series",
    "load_series",
    "report",
    "compare",
    "write_columns",
]

FORMAT_VERSION = 1
CSV_HEADER = ("t", "x", "u", "omega_mid", "slope")


class SchemaError(ScenarioError):
    """Scenario document error with the offending field and source line."""

    def __init__(self, msg, field=None, line=None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)
        self.field = field
        self.line = line


class ArchiveError(IOError):
    pass


# ----------------------------------------------------------------------
# scenario documents

_SECTIONS = ("name", "graph", "initial", "boundary", "discretization", "solver")
_SOLVER_KEYS = ("method", "epsilon_schedule", "prox_solver", "snapshot_every")
_TOL_KEYS = tuple(f.name for f in fields(Tolerances))


class _Lines:
    """Maps dotted key paths to 1-based source lines."""

    def __init__(self, node):
        self.node = node

    def __call__(self, *path):
        node = self.node
        line = node.start_mark.line + 1 if node is not None else None
        for key in path:
            if not isinstance(node, yaml.MappingNode):
                break
            for k, v in node.value:
                if k.value == key:
                    line, node = k.start_mark.line + 1, v
                    break
            else:
                break
        return line


def _number(val, field, lines, *path, integer=False):
    if isinstance(val, str):
        try:
            val = float(val)
        except ValueError:
            raise SchemaError(f"expected a number, got {val!r}", field, lines(*path)) from None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SchemaError(f"expected a number, got {val!r}", field, lines(*path))
    if integer:
        if float(val) != int(val):
            raise SchemaError(f"expected an integer, got {val!r}", field, lines(*path))
        return int(val)
    return float(val)


def _mapping(val, field, lines, *path):
    if not isinstance(val, dict):
        raise SchemaError("expected a mapping", field, lines(*path))
    return val


def _numeric_literal(lit, field, lines, *path):
    """Coerce numbers written as strings (YAML reads '1e-4' as text)."""
    if isinstance(lit, str):
        return _number(lit, field, lines, *path)
    if isinstance(lit, list):
        return [_numeric_literal(v, field, lines, *path) for v in lit]
    if isinstance(lit, dict):
        return {k: _numeric_literal(v, field, lines, *path) for k, v in lit.items()}
    return lit


def parse_scenario(text: str) -> Scenario:
    """Validate a YAML scenario document and resolve all defaults."""
    try:
        root = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise SchemaError(f"malformed document: {getattr(err, 'problem', err)}",
                          line=mark.line + 1 if mark else None) from None
    lines = _Lines(root)
    if not isinstance(doc, dict):
        raise SchemaError("scenario must be a mapping of sections", line=lines())
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        key = sorted(unknown)[0]
        raise SchemaError(f"unknown section {key!r}; expected {', '.join(_SECTIONS)}", key, lines(key))
    if "boundary" not in doc:
        raise SchemaError("missing 'boundary' section: Dirichlet data u(0,t) = A(t) and u(1,t) = B(t) "
                          "are required", "boundary")
    for key in ("graph", "initial", "discretization"):
        if key not in doc:
            raise SchemaError(f"missing '{key}' section", key)

    try:
        g = doc["graph"]
        if isinstance(g, dict) and "preset" not in g:
            g = _numeric_literal(g, "graph", lines, "graph")
        graph = MonotoneGraph.from_literal(g)
    except GraphError as err:
        raise SchemaError(f"graph invariant violated: {err}", "graph", lines("graph")) from None
    except SchemaError:
        raise
    except (TypeError, ValueError) as err:
        raise SchemaError(f"malformed graph: {err}", "graph", lines("graph")) from None

    ini = doc["initial"]
    if isinstance(ini, (int, float)) and not isinstance(ini, bool):
        ini = {"expr": repr(float(ini))}
    elif isinstance(ini, str):
        ini = {"expr": ini}
    ini = _mapping(ini, "initial", lines, "initial")
    if set(ini) - {"expr", "values"}:
        raise SchemaError("initial takes 'expr' or 'values'", "initial", lines("initial"))
    try:
        if "values" in ini:
            initial = InitialDatum(values=tuple(_numeric_literal(ini["values"], "initial.values",
                                                                 lines, "initial", "values")))
        else:
            initial = InitialDatum(expr=str(ini.get("expr")) if "expr" in ini else None)
        initial.function()
    except SchemaError:
        raise
    except ScenarioError as err:
        raise SchemaError(str(err), "initial", lines("initial")) from None

    bnd = _mapping(doc["boundary"], "boundary", lines, "boundary")
    for side in ("A", "B"):
        if side not in bnd:
            raise SchemaError(f"boundary section needs '{side}' (Dirichlet value at x = "
                              f"{0 if side == 'A' else 1})", f"boundary.{side}", lines("boundary"))
    if set(bnd) - {"A", "B"}:
        raise SchemaError("boundary takes only 'A' and 'B'", "boundary", lines("boundary"))
    sides = {}
    for side in ("A", "B"):
        try:
            sides[side] = BoundaryEvaluator.from_literal(
                _numeric_literal(bnd[side], f"boundary.{side}", lines, "boundary", side))
        except SchemaError:
            raise
        except ScenarioError as err:
            raise SchemaError(str(err), f"boundary.{side}", lines("boundary", side)) from None

    disc = _mapping(doc["discretization"], "discretization", lines, "discretization")
    if set(disc) - {"n", "dt", "T"}:
        key = sorted(set(disc) - {"n", "dt", "T"})[0]
        raise SchemaError(f"unknown key {key!r}", f"discretization.{key}", lines("discretization", key))
    for key in ("n", "dt", "T"):
        if key not in disc:
            raise SchemaError(f"missing '{key}'", f"discretization.{key}", lines("discretization"))
    n = _number(disc["n"], "discretization.n", lines, "discretization", "n", integer=True)
    dt = _number(disc["dt"], "discretization.dt", lines, "discretization", "dt")
    T = _number(disc["T"], "discretization.T", lines, "discretization", "T")

    sol = _mapping(doc.get("solver") or {}, "solver", lines, "solver")
    unknown = set(sol) - set(_SOLVER_KEYS) - set(_TOL_KEYS)
    if unknown:
        key = sorted(unknown)[0]
        raise SchemaError(f"unknown solver key {key!r}", f"solver.{key}", lines("solver", key))
    kw = {}
    if "method" in sol:
        kw["method"] = str(sol["method"])
    if "prox_solver" in sol:
        kw["prox_solver"] = str(sol["prox_solver"])
    if "snapshot_every" in sol:
        kw["snapshot_every"] = _number(sol["snapshot_every"], "solver.snapshot_every", lines,
                                       "solver", "snapshot_every", integer=True)
    if "epsilon_schedule" in sol:
        eps = sol["epsilon_schedule"]
        if not isinstance(eps, list):
            eps = [eps]
        kw["epsilon_schedule"] = tuple(_number(e, "solver.epsilon_schedule", lines, "solver",
                                               "epsilon_schedule") for e in eps)
    tol = {}
    for key in _TOL_KEYS:
        if key in sol:
            tol[key] = _number(sol[key], f"solver.{key}", lines, "solver", key,
                               integer=key in ("max_iters", "max_substeps"))
    name = str(doc.get("name", "scenario"))
    try:
        sc = Scenario(graph, initial, sides["A"], sides["B"], n, T, dt, tolerances=Tolerances(**tol),
                      name=name, **kw)
        sc.u0
    except ScenarioError as err:
        msg = str(err)
        field = msg.split(" ", 1)[0] if msg.startswith(("discretization.", "solver.")) else None
        section = field.split(".")[0] if field else "initial"
        raise SchemaError(msg, field or "initial", lines(section)) from None
    return sc


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())


def dump_scenario(scenario: Scenario) -> str:
    """Fully resolved YAML echo; parsing it gives back an equal scenario."""
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False, default_flow_style=None)


_PRESET_DOCS = {
    "heat": """
        name: heat
        graph: identity
        initial: sin(pi*x)
        boundary: {A: 0, B: 0}
        discretization: {n: 201, dt: 1.0e-4, T: 0.1}
    """,
    "heat_convex": """
        name: heat_convex
        graph: identity
        initial: x**2
        boundary: {A: 0, B: 1}
        discretization: {n: 101, dt: 1.0e-4, T: 0.05}
    """,
    "tv_vee": """
        name: tv_vee
        graph: sign
        initial: abs(x - 0.5)
        boundary: {A: 0.5, B: 0.5}
        discretization: {n: 101, dt: 1.0e-4, T: 0.05}
    """,
    "tv_plus_linear": """
        name: tv_plus_linear
        graph: tv_plus_linear
        initial: (x - 0.5)**2
        boundary: {A: 0.25, B: 0.25}
        discretization: {n: 101, dt: 1.0e-4, T: 0.05}
    """,
    "one_sided_linear": """
        name: one_sided_linear
        graph: one_sided
        initial: 1 - x
        boundary: {A: 1, B: 0}
        discretization: {n: 101, dt: 1.0e-3, T: 0.1}
    """,
    "one_sided_cos": """
        name: one_sided_cos
        graph: one_sided
        initial: cos(pi*x)
        boundary: {A: 1, B: -1}
        discretization: {n: 101, dt: 1.0e-3, T: 0.1}
    """,
}

SCENARIO_PRESETS = tuple(_PRESET_DOCS)


def preset_scenario(name: str, **changes) -> Scenario:
    """Built-in scenario, optionally with fields replaced."""
    try:
        text = _PRESET_DOCS[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario preset {name!r}; choose from {', '.join(SCENARIO_PRESETS)}") from None
    import textwrap

    sc = parse_scenario(textwrap.dedent(text))
    return sc.replace(**changes) if changes else sc


def resolve_scenario(ref: str) -> Scenario:
    """A scenario file path or ``preset:<name>``."""
    if ref.startswith("preset:"):
        return preset_scenario(ref.split(":", 1)[1])
    return load_scenario(ref)


# ----------------------------------------------------------------------
# run archives


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (int, float, str, bool)) or v is None:
        return v
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return None


def _series_csv(series: TimeSeries) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    x = series.x
    for snap in series:
        t = repr(float(snap.t))
        u = snap.u.values
        s = snap.u.slopes()
        om = snap.flux.values
        for i in range(u.size):
            if i < u.size - 1:
                w.writerow((t, repr(float(x[i])), repr(float(u[i])), repr(float(om[i])), repr(float(s[i]))))
            else:
                w.writerow((t, repr(float(x[i])), repr(float(u[i])), "", ""))
    return buf.getvalue()


def emit_series(series: TimeSeries, path, scenario: Scenario | None = None) -> Path:
    """Write a run archive directory and return its path."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    body = _series_csv(series).encode()
    (out / "series.csv").write_bytes(body)
    if scenario is not None:
        (out / "scenario.yaml").write_text(dump_scenario(scenario))
    fin = series.final.diagnostics
    summary = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "fingerprint": series.fingerprint,
        "method": series.method,
        "dt": series.dt,
        "epsilon": series.epsilon,
        "graph": series.graph.to_literal(),
        "n": series.n,
        "snapshots": len(series),
        "csv_bytes": len(body),
        "csv_rows": len(series) * series.n,
        "flux_flags": [[s.t, bool(s.flux.flagged), float(s.flux.violation)] for s in series],
        "final_diagnostics": {
            "t": series.final.t,
            "energy": fin.energy,
            "bv": fin.bv,
            "min_second_difference": fin.min_second_difference,
            "max_flux": fin.max_flux,
        },
        "convergence": [[e, d] for e, d in series.convergence] if series.convergence else None,
        "info": _jsonable(series.info),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return out


def load_series(path) -> TimeSeries:
    """Rebuild a series from an archive; values round-trip exactly."""
    root = Path(path)
    try:
        summary = json.loads((root / "summary.json").read_text())
        body = (root / "series.csv").read_bytes()
    except FileNotFoundError as err:
        raise ArchiveError(f"incomplete archive {root}: {err.filename} missing") from None
    except json.JSONDecodeError as err:
        raise ArchiveError(f"summary.json unreadable at byte {err.pos}: {err.msg}") from None
    ver = summary.get("format_version")
    if ver != FORMAT_VERSION:
        raise ArchiveError(f"archive format version {ver!r} is not supported (expected {FORMAT_VERSION})")
    if len(body) != summary["csv_bytes"]:
        cut = min(len(body), summary["csv_bytes"])
        raise ArchiveError(f"series.csv truncated or altered at byte offset {cut} "
                           f"(expected {summary['csv_bytes']} bytes, found {len(body)})")
    n = int(summary["n"])
    offset = 0
    rows = []
    for k, raw in enumerate(body.splitlines(keepends=True)):
        line = raw.decode().rstrip("\n")
        if k == 0:
            if tuple(line.split(",")) != CSV_HEADER:
                raise ArchiveError(f"bad header at byte offset 0: {line!r}")
        else:
            parts = line.split(",")
            try:
                if len(parts) != 5:
                    raise ValueError
                rows.append([float(p) if p else np.nan for p in parts])
            except ValueError:
                raise ArchiveError(f"malformed row at byte offset {offset}: {line!r}") from None
        offset += len(raw)
    if len(rows) != summary["csv_rows"] or len(rows) % n:
        raise ArchiveError(f"row count {len(rows)} does not match summary ({summary['csv_rows']}), "
                           f"data ends at byte offset {offset}")
    data = np.array(rows).reshape(-1, n, 5)
    graph = MonotoneGraph.from_literal(summary["graph"])
    series = TimeSeries(graph, summary["method"], summary["dt"], epsilon=summary["epsilon"],
                        fingerprint=summary["fingerprint"], info=summary.get("info") or {})
    flags = summary.get("flux_flags") or [[None, False, 0.0]] * data.shape[0]
    for block, (_, flagged, viol) in zip(data, flags):
        t = float(block[0, 0])
        u = GridFunction(block[:, 2].copy())
        flux = FluxField(block[:-1, 3].copy(), t=t, flagged=flagged, violation=viol)
        series.append(Snapshot(t, u, flux, Diagnostics.compute(graph, u, flux)))
    if summary.get("convergence"):
        series.convergence = [tuple(p) for p in summary["convergence"]]
    return series


# ----------------------------------------------------------------------
# reports


def write_columns(path, header, rows):
    """Whitespace-separated columns with a '#' header line."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for r in rows:
            fh.write(" ".join(repr(float(v)) if not isinstance(v, str) else v for v in r) + "\n")


def _table(header, rows, fmt="{:>14.6e}"):
    out = ["".join(f"{h:>14}" for h in header)]
    for r in rows:
        out.append("".join(fmt.format(v) if isinstance(v, float) else f"{v!s:>14}" for v in r))
    return "\n".join(out)


def report(series: TimeSeries, oracle=None, out_dir=None) -> str:
    """Text report: errors against an oracle, facets, invariant margins."""
    from .facets import facet_trajectory
    from .verification import run_suite

    parts = [f"run {series.fingerprint or '-'}: method={series.method} n={series.n} dt={series.dt:g}"
             + (f" eps={series.epsilon:g}" if series.epsilon else "")]
    err_rows = []
    if oracle is not None:
        x = series.x
        for snap in series:
            if snap.t > oracle.t_max:
                continue
            ref = oracle(x, snap.t)
            if np.shape(ref) != snap.u.values.shape:
                raise ValueError("oracle does not evaluate on the run grid")
            e = snap.u.values - ref
            err_rows.append((float(snap.t), l2_norm(e, series.h), float(np.max(np.abs(e)))))
        parts.append("\nerrors against " + oracle.provenance + " oracle\n"
                     + _table(("t", "L2", "Linf"), err_rows))
    fac_rows = []
    if series.graph.knots and np.any(np.array([k[2] - k[1] for k in series.graph.knots]) > 0):
        hw = oracle.info.get("half_width") if oracle is not None else None
        for r in facet_trajectory(series):
            row = [r["t"], r["theta"], r["xi_minus"], r["xi_plus"], r["a"], r["b"],
                   r["speed_predicted"], r["speed_measured"]]
            if hw is not None:
                exact = 2.0 * hw(r["t"])
                row.append((r["xi_plus"] - r["xi_minus"]) - exact)
            fac_rows.append(tuple(float(v) for v in row))
        header = ["t", "theta", "xi_minus", "xi_plus", "a", "b", "v_pred", "v_meas"]
        if hw is not None:
            header.append("width_err")
        if fac_rows:
            parts.append("\nfacets\n" + _table(header, fac_rows[:: max(1, len(fac_rows) // 20)]))
    reps = run_suite(series)
    parts.append("\ninvariants\n" + "\n".join(r.summary() for r in reps))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        diag = [(s.t, s.diagnostics.energy, s.diagnostics.bv, s.diagnostics.min_second_difference,
                 s.diagnostics.max_flux) for s in series]
        write_columns(out / "diagnostics.dat", ("t", "energy", "bv", "min_d2", "max_flux"), diag)
        if err_rows:
            write_columns(out / "errors.dat", ("t", "l2", "linf"), err_rows)
        if fac_rows:
            write_columns(out / "facets.dat", header, fac_rows)
    return "\n".join(parts)


def compare(series_a: TimeSeries, series_b: TimeSeries) -> tuple[str, list]:
    """Difference norms per common snapshot time."""
    if series_a.n != series_b.n:
        raise ValueError(f"incompatible grids: n={series_a.n} vs n={series_b.n}")
    tb = series_b.times
    rows = []
    for snap in series_a:
        k = int(np.argmin(np.abs(tb - snap.t)))
        if abs(tb[k] - snap.t) > 1e-12 * max(1.0, snap.t):
            continue
        d = snap.u.values - series_b[k].u.values
        rows.append((float(snap.t), l2_norm(d, series_a.h), float(np.max(np.abs(d)))))
    if not rows:
        raise ValueError("runs share no snapshot times")
    return _table(("t", "L2", "Linf"), rows), rows
