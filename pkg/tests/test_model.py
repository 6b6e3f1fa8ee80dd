import numpy as np
import pytest

from monoflow import graph as gr
from monoflow.model import (
    BoundaryEvaluator,
    Diagnostics,
    FluxField,
    GridFunction,
    InitialDatum,
    Scenario,
    ScenarioError,
    Snapshot,
    TimeSeries,
    bv_seminorm,
    discrete_energy,
    l2_norm,
)


def test_grid_function_validation():
    with pytest.raises(ValueError):
        GridFunction([0.0, 1.0])
    with pytest.raises(ValueError):
        GridFunction([0.0, np.nan, 1.0])
    u = GridFunction.sample(lambda x: x**2, 5)
    assert u.n == 5 and u.h == 0.25
    np.testing.assert_allclose(u.slopes(), [0.25, 0.75, 1.25, 1.75])
    np.testing.assert_allclose(u.second_differences(), 0.125)


@pytest.mark.parametrize("n", [11, 101, 400])
def test_bv_seminorm_examples(n):
    x = np.linspace(0, 1, n)
    h = 1.0 / (n - 1)
    if n % 2:
        assert bv_seminorm(GridFunction(np.abs(x - 0.5))) == pytest.approx(2.0, abs=1e-9)
    assert bv_seminorm(GridFunction(3 * x - 1)) == pytest.approx(0.0, abs=1e-9)
    assert bv_seminorm(GridFunction(x**2)) == pytest.approx(2 - 2 * h, abs=1e-9)


def test_energy_and_norm():
    x = np.linspace(0, 1, 11)
    assert discrete_energy(gr.sign(), np.abs(x - 0.5), 0.1) == pytest.approx(1.0)
    assert discrete_energy(gr.identity(), 2 * x, 0.1) == pytest.approx(2.0)
    assert l2_norm(np.ones(11), 0.1) == pytest.approx(np.sqrt(1.1))


def test_boundary_evaluator():
    c = BoundaryEvaluator(0.5)
    assert c.is_constant and c.value(3.0) == 0.5 and c.rate(1.0) == 0.0
    b = BoundaryEvaluator(table=((0.0, 0.0), (1.0, 2.0), (2.0, 2.0)))
    assert not b.is_constant
    assert b.value(0.5) == 1.0 and b.value(5.0) == 2.0
    assert b.rate(0.5) == 2.0 and b.rate(1.5) == 0.0 and b.rate(3.0) == 0.0
    assert BoundaryEvaluator.from_literal(b.to_literal()) == b
    assert BoundaryEvaluator.from_literal(1) == BoundaryEvaluator(1.0)
    with pytest.raises(ScenarioError):
        BoundaryEvaluator(table=((1.0, 0.0), (0.0, 1.0)))
    with pytest.raises(ScenarioError):
        BoundaryEvaluator.from_literal("zero")


def test_initial_datum():
    f = InitialDatum("sin(pi*x) + abs(x - 0.5)").function()
    x = np.linspace(0, 1, 7)
    np.testing.assert_allclose(f(x), np.sin(np.pi * x) + np.abs(x - 0.5), atol=1e-15)
    assert np.all(InitialDatum("2").sample(5).values == 2.0)
    v = InitialDatum(values=(0.0, 1.0, 0.0))
    np.testing.assert_allclose(v.sample(5).values, [0, 0.5, 1, 0.5, 0])
    for bad in ("sin(", "x + y", "__import__('os')", "x.real", "'a'", "(lambda: 1)()", "[x][0]"):
        with pytest.raises(ScenarioError):
            InitialDatum(bad).function()
    with pytest.raises(ScenarioError):
        InitialDatum()


def _scenario(**kw):
    base = dict(graph=gr.sign(), initial=InitialDatum("abs(x-0.5)"), A=BoundaryEvaluator(0.5),
                B=BoundaryEvaluator(0.5), n=11, T=0.01, dt=1e-3)
    base.update(kw)
    return Scenario(**base)


def test_scenario_validation():
    sc = _scenario()
    assert sc.nsteps == 10 and sc.u0.values[0] == 0.5
    assert sc.constant_boundary
    assert sc.fingerprint() == _scenario().fingerprint()
    assert sc.fingerprint() != _scenario(n=21).fingerprint()
    for kw in (dict(n=2), dict(dt=0.0), dict(T=1e-4), dict(method="rk4"), dict(prox_solver="x"),
               dict(method="regularized", epsilon_schedule=(0.1, 0.2)),
               dict(method="regularized", epsilon_schedule=()), dict(snapshot_every=0)):
        with pytest.raises(ScenarioError):
            _scenario(**kw)
    with pytest.raises(ScenarioError, match="boundary"):
        _scenario(A=BoundaryEvaluator(0.0)).u0


def test_scenario_replace_tolerances():
    sc = _scenario().replace(tolerances={"tol_prox": 1e-9})
    assert sc.tolerances.tol_prox == 1e-9 and sc.tolerances.max_iters == 200


def test_time_series_ordering_and_access():
    G = gr.identity()
    ts = TimeSeries(G, "prox", 0.1)
    for t in (0.0, 0.1, 0.2):
        u = GridFunction(np.full(5, t))
        fl = FluxField(np.zeros(4), t)
        ts.append(Snapshot(t, u, fl, Diagnostics.compute(G, u, fl)))
    with pytest.raises(ValueError):
        ts.append(ts[0])
    assert len(ts) == 3 and ts.n == 5
    assert ts.at(0.1).u.values[0] == 0.1
    with pytest.raises(KeyError):
        ts.at(0.15)
    assert ts.values.shape == (3, 5)


def test_flux_admissibility():
    u = GridFunction(np.abs(np.linspace(0, 1, 5) - 0.5))
    ok = FluxField([-1.0, -1.0, 1.0, 1.0])
    assert ok.admissibility(gr.sign(), u) == 0.0
    bad = FluxField([-1.0, -0.5, 1.0, 1.0])
    assert bad.admissibility(gr.sign(), u) == pytest.approx(0.5)
