import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from monoflow import graph as gr
from monoflow.io import (
    CSV_HEADER,
    SCENARIO_PRESETS,
    ArchiveError,
    SchemaError,
    compare,
    dump_scenario,
    emit_series,
    load_series,
    parse_scenario,
    preset_scenario,
    report,
    resolve_scenario,
)
from monoflow.oracles import tv_vee_facet
from monoflow.solver import run

DOC = """\
name: demo
graph: sign
initial: abs(x - 0.5)
boundary:
  A: 0.5
  B: 0.5
discretization:
  n: 21
  dt: 1e-3
  T: 0.01
"""


def test_parse_sign_preset_expanded():
    sc = parse_scenario(DOC)
    assert sc.graph.knots == ((0.0, -1.0, 1.0),)
    assert (sc.graph.left_slope, sc.graph.right_slope) == (0.0, 0.0)
    assert sc.dt == 1e-3 and sc.n == 21 and sc.name == "demo"
    assert sc.to_dict()["graph"]["knots"] == [[0.0, -1.0, 1.0]]


def test_missing_boundary_names_dirichlet_requirement():
    text = DOC.split("boundary:")[0] + "discretization: {n: 21, dt: 1e-3, T: 0.01}\n"
    with pytest.raises(SchemaError, match="Dirichlet") as err:
        parse_scenario(text)
    assert err.value.field == "boundary"


def test_decreasing_knots_reported_as_graph_invariant():
    text = DOC.replace("graph: sign", "graph:\n  knots: [[1, 0, 0], [0, 1, 1]]\n  left_slope: 0\n  right_slope: 0")
    with pytest.raises(SchemaError, match="graph invariant violated.*increasing") as err:
        parse_scenario(text)
    assert err.value.field == "graph" and err.value.line == 2


@pytest.mark.parametrize(
    "old, new, field, line",
    [
        ("n: 21", "n: 2.5", "discretization.n", 8),
        ("dt: 1e-3", "dt: fast", "discretization.dt", 9),
        ("  B: 0.5\n", "  B: 0.5\n  C: 1\n", "boundary", 4),
        ("name: demo", "name: demo\nsolver: {bogus: 1}", "solver.bogus", 2),
        ("initial: abs(x - 0.5)", "initial: abs(y)", "initial", 3),
    ],
)
def test_schema_errors_carry_location(old, new, field, line):
    with pytest.raises(SchemaError) as err:
        parse_scenario(DOC.replace(old, new))
    assert err.value.field == field and err.value.line == line
    assert f"line {line}" in str(err.value)


def test_malformed_yaml():
    with pytest.raises(SchemaError, match="malformed"):
        parse_scenario("graph: [sign\n")


def test_solver_section():
    sc = parse_scenario(DOC + "solver:\n  method: regularized\n  epsilon_schedule: [0.1, 0.05]\n  tol_prox: 1e-10\n")
    assert sc.method == "regularized" and sc.epsilon_schedule == (0.1, 0.05)
    assert sc.tolerances.tol_prox == 1e-10


@pytest.mark.parametrize("name", SCENARIO_PRESETS)
def test_closure_presets(name):
    sc = preset_scenario(name)
    again = parse_scenario(dump_scenario(sc))
    assert again == sc and again.fingerprint() == sc.fingerprint()
    assert resolve_scenario(f"preset:{name}") == sc


@given(st.sampled_from(SCENARIO_PRESETS), st.integers(5, 300), st.floats(1e-5, 1e-2),
       st.sampled_from(["prox", "regularized"]), st.lists(st.floats(1e-3, 1.0), min_size=1, max_size=4, unique=True))
@settings(max_examples=50, deadline=None)
def test_closure_property(name, n, dt, method, eps):
    sc = preset_scenario(name, n=n, dt=dt, T=10 * dt, method=method,
                         epsilon_schedule=tuple(sorted(eps, reverse=True)))
    text = dump_scenario(sc)
    assert parse_scenario(text) == sc
    assert dump_scenario(parse_scenario(text)) == text


def test_closure_table_boundary_and_values():
    sc = parse_scenario(DOC.replace("A: 0.5", "A: {table: [[0, 0.5], [1, 0.7]]}"))
    assert parse_scenario(dump_scenario(sc)) == sc
    sc = parse_scenario(DOC.replace("initial: abs(x - 0.5)", "initial: {values: [0.5, 0, 0.5]}"))
    assert parse_scenario(dump_scenario(sc)) == sc


@pytest.fixture(scope="module")
def heat_archive(tmp_path_factory):
    sc = preset_scenario("heat", n=21, T=0.01, dt=1e-3)
    series = run(sc)
    path = emit_series(series, tmp_path_factory.mktemp("arch") / "heat", sc)
    return sc, series, path


def test_round_trip_exact(heat_archive):
    sc, series, path = heat_archive
    back = load_series(path)
    assert len(back) == len(series) and back.fingerprint == series.fingerprint
    np.testing.assert_array_equal(back.values, series.values)
    for a, b in zip(series, back):
        assert a.t == b.t
        np.testing.assert_array_equal(a.flux.values, b.flux.values)
        assert a.diagnostics == b.diagnostics
    assert parse_scenario((path / "scenario.yaml").read_text()) == sc


def test_csv_columns_finite(heat_archive):
    _, series, path = heat_archive
    lines = (path / "series.csv").read_text().splitlines()
    assert tuple(lines[0].split(",")) == CSV_HEADER
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == len(series) * series.n
    for r in rows:
        vals = [float(v) for v in r if v]
        assert np.all(np.isfinite(vals)) and len(vals) in (3, 5)


def test_truncated_archive_reports_offset(heat_archive, tmp_path):
    _, series, path = heat_archive
    dst = emit_series(series, tmp_path / "cut")
    body = (dst / "series.csv").read_bytes()
    (dst / "series.csv").write_bytes(body[:1000])
    with pytest.raises(ArchiveError, match="byte offset 1000"):
        load_series(dst)


def test_version_mismatch(heat_archive, tmp_path):
    _, series, _ = heat_archive
    dst = emit_series(series, tmp_path / "old")
    s = json.loads((dst / "summary.json").read_text())
    s["format_version"] = 99
    (dst / "summary.json").write_text(json.dumps(s))
    with pytest.raises(ArchiveError, match="version"):
        load_series(dst)
    with pytest.raises(ArchiveError, match="missing"):
        load_series(tmp_path / "nothing")


def test_determinism_modulo_timestamp(tmp_path):
    sc = preset_scenario("tv_vee", n=21, T=0.005, dt=1e-3)
    a = emit_series(run(sc), tmp_path / "a", sc)
    b = emit_series(run(sc), tmp_path / "b", sc)
    assert (a / "series.csv").read_bytes() == (b / "series.csv").read_bytes()
    sa, sb = (json.loads((p / "summary.json").read_text()) for p in (a, b))
    sa.pop("created"), sb.pop("created")
    assert sa == sb


def test_report_with_and_without_oracle(tmp_path):
    sc = preset_scenario("tv_vee", n=101, T=0.01, dt=2e-4)
    series = run(sc)
    text = report(series, tv_vee_facet(0.5), out_dir=tmp_path)
    assert "width_err" in text and "facet-law" in text and "invariants" in text
    rows = np.loadtxt(tmp_path / "facets.dat")
    assert rows.shape[1] == 9
    errs = np.loadtxt(tmp_path / "errors.dat")
    assert np.all(errs[:, 1] < 0.01)
    plain = report(run(preset_scenario("heat", n=21, T=0.005, dt=1e-3)))
    assert "errors against" not in plain and "bv" in plain


def test_compare_runs():
    sc = preset_scenario("heat", n=21, T=0.005, dt=1e-3)
    a = run(sc)
    text, rows = compare(a, run(sc))
    assert all(r[1] == 0.0 for r in rows) and "Linf" in text
    with pytest.raises(ValueError, match="incompatible"):
        compare(a, run(sc.replace(n=11)))


def test_yaml_output_is_plain():
    doc = yaml.safe_load(dump_scenario(preset_scenario("tv_plus_linear")))
    assert doc["graph"]["knots"] == [[0.0, -1.0, 1.0]] and doc["graph"]["left_slope"] == 1.0
    assert gr.tv_plus_linear().knots == ((0.0, -1.0, 1.0),)
