import numpy as np
import pytest
from scipy import integrate

from monoflow.io import preset_scenario
from monoflow.oracles import OracleSolution, fine_grid_reference, heat_fourier, one_sided_stationary, tv_vee_facet
from monoflow.solver import run

X = np.linspace(0, 1, 41)


def test_heat_single_mode():
    orc = heat_fourier("sin(pi*x)")
    assert orc.provenance == "fourier"
    assert orc(np.array([0.5]), 0.1)[0] == pytest.approx(np.exp(-np.pi**2 * 0.1), abs=1e-12)
    assert orc(np.array([0.5]), 0.1)[0] == pytest.approx(0.37271, abs=5e-6)
    np.testing.assert_allclose(orc(X, 0.0), np.sin(np.pi * X), atol=1e-12)


def test_heat_affine_and_boundary():
    orc = heat_fourier("0.2 + 0.5*x", A=0.2, B=0.7)
    for t in (0.0, 0.05, 1.0):
        np.testing.assert_allclose(orc(X, t), 0.2 + 0.5 * X, atol=1e-13)
    assert np.all(orc.info["coefficients"] == 0.0)


def test_heat_pde_residual_within_truncation():
    orc = heat_fourier("x*(1-x)", modes=48)
    t, dt, dx = 0.01, 1e-6, 1e-3
    x = np.linspace(0.1, 0.9, 17)
    ut = (orc(x, t + dt) - orc(x, t - dt)) / (2 * dt)
    uxx = (orc(x + dx, t) - 2 * orc(x, t) + orc(x - dx, t)) / dx**2
    assert np.max(np.abs(ut - uxx)) < 1e-4
    # the kept modes reproduce the datum up to the reported bound at positive time
    exact_c = np.array([8 / (m * np.pi) ** 3 if m % 2 else 0.0 for m in range(1, 49)])
    np.testing.assert_allclose(orc.info["coefficients"], exact_c, atol=1e-12)
    assert orc.info["truncation_bound"](t) < 1e-10


def test_tv_vee_closed_form():
    orc = tv_vee_facet(0.5)
    assert orc.provenance == "facet-law"
    assert orc.info["half_width"](0.02) == pytest.approx(0.2)
    assert orc.info["facet"](0.02) == pytest.approx((0.3, 0.7))
    np.testing.assert_allclose(orc(X, 0.0), np.abs(X - 0.5))
    t = 0.01
    assert orc.info["speed"](t) == pytest.approx(2.0 / (2 * orc.info["half_width"](t)))
    with pytest.raises(ValueError):
        orc(X, 0.2)
    with pytest.raises(ValueError):
        tv_vee_facet(1.2)


def test_tv_vee_facet_mass_identity():
    orc = tv_vee_facet(0.5)
    for t in (0.005, 0.02, 0.1):
        xm, xp = orc.info["facet"](t)
        d = 1e-7

        def ut(x):
            return float((orc(np.array([x]), t + d) - orc(np.array([x]), t - d))[0] / (2 * d))

        val, _ = integrate.quad(ut, xm, xp, epsabs=1e-10)
        assert val == pytest.approx(2.0, abs=1e-6)


def test_tv_vee_zero_residual_off_edges():
    orc = tv_vee_facet(0.5)
    t = 0.02
    x = np.array([0.1, 0.2, 0.4, 0.45, 0.55, 0.8])
    # outside the facet u is affine in x and constant in t; inside u_x = 0
    ut = (orc(x, t + 1e-6) - orc(x, t - 1e-6)) / 2e-6
    outside = np.abs(x - 0.5) > 0.2
    np.testing.assert_allclose(ut[outside], 0.0, atol=1e-9)


def test_tv_vee_agrees_with_fine_grid_run():
    sc = preset_scenario("tv_vee", n=51, T=0.02, dt=4e-4)
    ref = fine_grid_reference(sc, 4)
    assert ref.info["series"].n == 201
    err = np.max(np.abs(ref.on_grid(201, 0.02) - tv_vee_facet(0.5).on_grid(201, 0.02)))
    assert err < 5e-3


def test_tv_vee_agrees_with_regularized_run():
    sc = preset_scenario("tv_vee", n=51, T=0.02, method="regularized", epsilon_schedule=(0.025,))
    u = run(sc).final.u.values
    err = np.sqrt(np.mean((u - tv_vee_facet(0.5).on_grid(51, 0.02)) ** 2))
    assert err < 5e-3


def test_one_sided_stationary():
    for expr in ("1 - x", "cos(pi*x)"):
        orc = one_sided_stationary(expr)
        assert orc.provenance == "stationary"
        np.testing.assert_array_equal(orc(X, 0.0), orc(X, 5.0))
    with pytest.raises(ValueError):
        one_sided_stationary("1 - x + 0.2*exp(-100*(x-0.5)**2)")


def test_fine_grid_factor_one_is_base_run():
    sc = preset_scenario("heat", n=21, T=0.01, dt=1e-3)
    ref = fine_grid_reference(sc, 1)
    base = run(sc)
    for snap in base:
        np.testing.assert_array_equal(ref(base.x, snap.t), snap.u.values)
    with pytest.raises(ValueError):
        fine_grid_reference(sc, 0)


def test_fine_grid_against_fourier():
    sc = preset_scenario("heat", n=21, T=0.02, dt=1e-3)
    fine = fine_grid_reference(sc, 4)
    four = heat_fourier("sin(pi*x)")
    x = np.linspace(0, 1, 21)
    fine_err = np.max(np.abs(fine(x, 0.02) - four(x, 0.02)))
    coarse_err = np.max(np.abs(run(sc).final.u.values - four(x, 0.02)))
    assert fine_err < coarse_err / 2
    assert coarse_err < 5 * (sc.h**2 + sc.dt)


def test_oracle_solution_on_grid():
    orc = OracleSolution(lambda x, t: x + t, "test", t_max=1.0)
    np.testing.assert_allclose(orc.on_grid(3, 0.5), [0.5, 1.0, 1.5])
