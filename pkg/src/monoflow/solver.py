"""Time stepping for u_t = (L(u_x))_x on [0, 1] with Dirichlet data.

Two independent routes are provided:

* ``regularized``: replace L by its smooth regularization and integrate the
  method-of-lines system with explicit Euler sub-steps under a CFL bound.
* ``prox``: one implicit (minimizing-movement) step per dt, i.e. the minimizer of

      h/(2 dt) * sum (u_i - u_i^prev)^2 + h * sum W(D+u_i)

  over interior values with boundary nodes pinned.  The default solver is a
  semismooth Newton method on the optimality system written in the resolvent
  parametrization s = R(z), flux = z - R(z); cyclic coordinate descent with
  exact scalar updates is available as ``prox_solver="cd"``.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg

from .graph import MonotoneGraph, SmoothMonotoneFn
from .model import (
    Diagnostics,
    FluxField,
    GridFunction,
    Scenario,
    Snapshot,
    State,
    TimeSeries,
    l2_norm,
    slopes,
)

log = logging.getLogger(__name__)

__all__ = [
    "SolverError",
    "ProxConvergenceError",
    "SubstepLimitError",
    "semi_discrete_rhs",
    "step_regularized",
    "prox_newton",
    "prox_cd",
    "recover_flux",
    "step_prox",
    "run",
    "run_regularized",
    "run_prox",
    "epsilon_convergence_report",
    "fitted_order",
]


class SolverError(RuntimeError):
    """A time step failed; ``t`` is the time the step was meant to reach."""

    def __init__(self, msg, t=None, residual=None):
        super().__init__(msg if t is None else f"{msg} (at t={t:.6g})")
        self.t = t
        self.residual = residual


class ProxConvergenceError(SolverError):
    pass


class SubstepLimitError(SolverError):
    pass


# ----------------------------------------------------------------------
# regularized route


def semi_discrete_rhs(Lg: SmoothMonotoneFn, u: GridFunction, A_rate: float, B_rate: float) -> np.ndarray:
    """du/dt of the method-of-lines system; boundary nodes move at the given rates."""
    v = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)
    h = 1.0 / (v.size - 1)
    flux = Lg(slopes(v, h))
    out = np.empty_like(v)
    out[1:-1] = np.diff(flux) / h
    out[0] = A_rate
    out[-1] = B_rate
    return out


def step_regularized(scenario: Scenario, state: State, epsilon: float, dt: float | None = None) -> GridFunction:
    """Advance by one dt with explicit Euler sub-steps satisfying the CFL bound."""
    dt = scenario.dt if dt is None else dt
    Lg = state.aux.get("Lg")
    if Lg is None or Lg.epsilon != epsilon:
        Lg = scenario.graph.mollify(epsilon)
    u = state.u.values.copy()
    h = 1.0 / (u.size - 1)
    s = slopes(u, h)
    # slopes of the explicit scheme stay inside their initial range (monotone scheme),
    # widened by the boundary-induced slopes reachable during this step
    t0 = state.t
    a1, b1 = scenario.A.value(t0 + dt), scenario.B.value(t0 + dt)
    s_edge = np.array([(u[1] - a1) / h, (b1 - u[-2]) / h])
    lip = Lg.max_derivative(min(s.min(), s_edge.min()), max(s.max(), s_edge.max()))
    dt_max = scenario.tolerances.cfl_safety * h * h / (2.0 * lip)
    nsub = int(np.ceil(dt / dt_max))
    if nsub > scenario.tolerances.max_substeps:
        raise SubstepLimitError(
            f"explicit route needs {nsub} sub-steps per step (ceiling {scenario.tolerances.max_substeps}); "
            f"reduce dt or increase epsilon",
            t=t0 + dt,
        )
    tau = dt / nsub
    inv_h = 1.0 / h
    A, B = scenario.A, scenario.B
    for k in range(1, nsub + 1):
        flux = Lg(np.diff(u) * inv_h)
        u[1:-1] += tau * inv_h * np.diff(flux)
        t = t0 + k * tau
        u[0] = A.value(t)
        u[-1] = B.value(t)
    state.aux["Lg"] = Lg
    state.aux["substeps"] = state.aux.get("substeps", 0) + nsub
    return GridFunction(u)


# ----------------------------------------------------------------------
# prox route


def _prox_residual(graph, tau, g, u, z, h, dt):
    """Scaled optimality residual, interleaved as (z_0, u_1, z_1, ..., u_{n-2}, z_{n-2})."""
    R, Rp = graph._resolvent(tau, z)
    om = (z - R) / tau
    F = np.empty(2 * z.size - 1)
    F[0::2] = h * R - np.diff(u)
    F[1::2] = (u[1:-1] - g[1:-1]) - (dt / h) * np.diff(om)
    return F, R, Rp, om


def _prox_jacobian(Rp, tau, h, dt):
    """Tridiagonal Jacobian of the scaled residual in banded storage."""
    m = Rp.size
    N = 2 * m - 1
    dom = (1.0 - Rp) / tau  # d flux / dz
    c = dt / h
    ab = np.zeros((3, N))
    ab[1, 0::2] = h * Rp
    ab[1, 1::2] = 1.0
    # superdiagonal A[r, r+1] stored at ab[0, r+1]
    ab[0, 1::2] = -1.0  # row 2j (z_j eq) w.r.t. u_{j+1}
    ab[0, 2::2] = -c * dom[1:]  # row 2i-1 (u_i eq) w.r.t. z_i
    # subdiagonal A[r+1, r] stored at ab[2, r]
    ab[2, 0:-1:2] = c * dom[:-1]  # row 2j+1 (u_{j+1} eq) w.r.t. z_j
    ab[2, 1::2] = 1.0  # row 2i (z_i eq) w.r.t. u_i
    return ab


def _banded_to_dense(ab):
    N = ab.shape[1]
    M = np.diag(ab[1])
    M += np.diag(ab[0, 1:], 1)
    M += np.diag(ab[2, :-1], -1)
    return M


def _newton_solve(graph, g, u, z, h, dt, tol, max_iter, tau):
    scale = tol * (1.0 + np.max(np.abs(u)))
    F, R, Rp, om = _prox_residual(graph, tau, g, u, z, h, dt)
    norm = np.linalg.norm(F)
    for it in range(max_iter + 1):
        if np.max(np.abs(F)) <= scale:
            return u, om, z, it
        if it == max_iter:
            break
        ab = _prox_jacobian(Rp, tau, h, dt)
        try:
            d = linalg.solve_banded((1, 1), ab, -F, check_finite=False)
            if not np.all(np.isfinite(d)):
                raise linalg.LinAlgError("non-finite step")
        except (linalg.LinAlgError, ValueError):
            # every cell sits inside a jump: the flux is fixed only up to a constant
            d = linalg.lstsq(_banded_to_dense(ab), -F, check_finite=False)[0]
        lam = 1.0
        while True:
            zt = z + lam * d[0::2]
            ut = u.copy()
            ut[1:-1] += lam * d[1::2]
            Ft, Rt, Rpt, omt = _prox_residual(graph, tau, g, ut, zt, h, dt)
            nt = np.linalg.norm(Ft)
            if nt <= (1.0 - 1e-4 * lam) * norm or lam < 1e-6:
                break
            lam *= 0.5
        u, z, F, R, Rp, om, norm = ut, zt, Ft, Rt, Rpt, omt, nt
    raise ProxConvergenceError(
        f"Newton did not converge in {max_iter} iterations (tau={tau:.3g}), residual {np.max(np.abs(F)):.3e}",
        residual=float(np.max(np.abs(F))),
    )


def _yosida_newton(graph, g, u, h, dt, mu, tol, max_iter=2000):
    """Damped Newton on the step objective with W replaced by its Moreau envelope.

    The smoothed objective is strongly convex with a Lipschitz, piecewise
    linear gradient and a tridiagonal generalized Hessian, so Armijo
    backtracking on the objective itself converges from any start.

    Returns ``(u, flux, converged)``.
    """
    c = dt / h

    def parts(v):
        s = np.diff(v) / h
        J, dJ = graph._resolvent(mu, s)
        om = (s - J) / mu
        phi = 0.5 / c * np.sum((v[1:-1] - g[1:-1]) ** 2) + h * np.sum(
            graph.primitive(J) + 0.5 * mu * om**2)
        grad = (v[1:-1] - g[1:-1]) / c - np.diff(om)
        return phi, grad, (1.0 - dJ) / mu, om

    phi, grad, w, om = parts(u)
    for _ in range(max_iter):
        # both terms of the gradient are flux differences
        scale = tol * (1.0 + np.max(np.abs(om)) + np.max(np.abs(u)) / c)
        if np.max(np.abs(grad)) <= scale:
            return u, om, True
        ab = np.zeros((3, grad.size))
        ab[1] = 1.0 / c + (w[:-1] + w[1:]) / h
        ab[0, 1:] = -w[1:-1] / h
        ab[2, :-1] = -w[1:-1] / h
        d = -linalg.solve_banded((1, 1), ab, grad, check_finite=False)
        slope = float(grad @ d)
        lam = 1.0
        while True:
            v = u.copy()
            v[1:-1] += lam * d
            phi_t, grad_t, w_t, om_t = parts(v)
            if phi_t <= phi + 1e-4 * lam * slope or lam < 1e-12:
                break
            lam *= 0.5
        if phi_t >= phi:
            # no further decrease representable in floating point
            break
        u, phi, grad, w, om = v, phi_t, grad_t, w_t, om_t
    scale = tol * (1.0 + np.max(np.abs(om)) + np.max(np.abs(u)) / c)
    return u, om, bool(np.max(np.abs(grad)) <= 1e3 * scale)


def prox_newton(graph: MonotoneGraph, g, a: float, b: float, h: float, dt: float,
                warm=None, tol: float = 1e-12, max_iter: int = 200, tau=None):
    """Exact implicit step via semismooth Newton.

    The unknowns are the interior values and, per cell, z = s + tau*flux with
    s = R(z) the slope, R the resolvent of tau*L.  Semismooth Newton on
    piecewise-linear systems can cycle, so unless ``tau`` is given a failed
    solve is retried with tau = h and then from the minimizers of a sequence
    of Moreau-smoothed problems with shrinking smoothing parameter.

    Parameters
    ----------
    warm : (slopes, flux), optional
        Previous cell slopes and fluxes used as the starting point.

    Returns
    -------
    u, flux, iterations
        ``flux`` lives on the n-1 cells; ``iterations`` counts all attempts.

    Raises
    ------
    ProxConvergenceError
        If no attempt brings the residual below ``tol`` (relative to the data).
    """
    g = np.asarray(g, dtype=float)
    u0 = g.copy()
    u0[0], u0[-1] = a, b
    if warm is None:
        s = slopes(u0, h)
        warm = (s, graph.selection(s))
    taus = (1.0, h) if tau is None else (float(tau),)
    total = 0
    err = None
    for k, tk in enumerate(taus):
        ws, wf = warm if k == 0 else (slopes(u0, h), graph.selection(slopes(u0, h)))
        try:
            u, om, _, its = _newton_solve(graph, g, u0.copy(), ws + tk * wf, h, dt, tol, max_iter, tk)
            return u, om, total + its
        except ProxConvergenceError as e:
            total += max_iter
            err = e
            log.debug("prox Newton retry: %s", e)
    if tau is not None:
        raise err
    # smoothing continuation: exact minimizers of Moreau-regularized steps,
    # each used as a start for the exact system
    u = u0.copy()
    mu = 1.0
    while mu > 1e-14:
        u, om, _ = _yosida_newton(graph, g, u, h, dt, mu, tol)
        s = slopes(u, h)
        J = graph.resolvent(mu, s)
        for tk in (h, 1.0):
            try:
                u1, om1, _, its = _newton_solve(graph, g, u.copy(), J + tk * om, h, dt, tol, max_iter, tk)
                return u1, om1, total + its
            except ProxConvergenceError as e:
                total += max_iter
                err = e
        mu *= 0.1
    raise err


def _scalar_updates(graph, g, left, right, h, dt):
    """Exact minimizer of the one-node subproblem for each entry (vectorized).

    The node value x must satisfy  (h/dt)(x - g) + L((x-left)/h) - L((right-x)/h) ∋ 0,
    whose left-hand side is a strictly increasing piecewise-linear multifunction.
    The bracket is located by a search over its sorted breakpoints.
    """
    P = graph.knot_abscissae
    m = g.size
    K = P.size
    c = h / dt
    bp = np.concatenate(
        [left[:, None] + h * P[None, :], right[:, None] - h * P[None, :], g[:, None]], axis=1
    )
    fam = np.concatenate([np.zeros(K, int), np.ones(K, int), [2]])
    kidx = np.concatenate([np.arange(K), np.arange(K), [0]])
    order = np.argsort(bp, axis=1, kind="stable")
    x = np.take_along_axis(bp, order, axis=1)
    f = fam[order]
    kk = kidx[order]
    arg1 = (x - left[:, None]) / h
    arg2 = (right[:, None] - x) / h
    if K:
        arg1 = np.where(f == 0, P[kk], arg1)
        arg2 = np.where(f == 1, P[kk], arg2)
    base = c * (x - g[:, None])
    Dlo = base + graph.lower(arg1) - graph.upper(arg2)
    Dhi = base + graph.upper(arg1) - graph.lower(arg2)
    rows = np.arange(m)
    inside = (Dlo <= 0.0) & (Dhi >= 0.0)
    has_in = inside.any(axis=1)
    j_in = np.argmax(inside, axis=1)
    pos = Dlo > 0.0
    has_pos = pos.any(axis=1)
    jp = np.where(has_pos, np.argmax(pos, axis=1), x.shape[1])
    slope_tail = c + (graph.slopes[0] + graph.slopes[-1]) / h
    out = np.empty(m)
    # right tail
    last = x.shape[1] - 1
    r_tail = ~has_pos
    out[r_tail] = x[r_tail, last] - Dhi[r_tail, last] / slope_tail
    l_tail = has_pos & (jp == 0)
    out[l_tail] = x[l_tail, 0] - Dlo[l_tail, 0] / slope_tail
    mid = has_pos & (jp > 0) & ~has_in
    j1 = jp[mid]
    r = rows[mid]
    x0, x1 = x[r, j1 - 1], x[r, j1]
    y0, y1 = Dhi[r, j1 - 1], Dlo[r, j1]
    out[mid] = x0 - y0 * (x1 - x0) / (y1 - y0)
    out[has_in] = x[has_in, j_in[has_in]]
    return out


def prox_cd(graph: MonotoneGraph, g, a: float, b: float, h: float, dt: float,
            u_init=None, tol: float = 1e-12, max_sweeps: int = 100_000):
    """Implicit step by cyclic coordinate descent with exact scalar minimization.

    Nodes are visited odd-then-even; nodes of one parity do not interact, so
    each half sweep is a batch of independent exact coordinate updates.  The
    objective is non-separable, so for graphs with jumps the iteration can stop
    at a non-optimal point; ``recover_flux`` flags such results.

    Returns ``(u, sweeps)``.
    """
    g = np.asarray(g, dtype=float)
    u = (g if u_init is None else np.asarray(u_init, dtype=float)).copy()
    u[0], u[-1] = a, b
    n = u.size
    scale = tol * (1.0 + np.max(np.abs(u)))
    odd = np.arange(1, n - 1, 2)
    even = np.arange(2, n - 1, 2)
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for idx in (odd, even):
            if idx.size == 0:
                continue
            new = _scalar_updates(graph, g[idx], u[idx - 1], u[idx + 1], h, dt)
            change = max(change, float(np.max(np.abs(new - u[idx]))))
            u[idx] = new
        if change <= scale:
            return u, sweep
    raise ProxConvergenceError(
        f"coordinate descent did not converge in {max_sweeps} sweeps, last change {change:.3e}",
        residual=change,
    )


def recover_flux(graph: MonotoneGraph, u_new, u_prev, dt: float, candidate=None,
                 slope_tol: float = 0.0, t: float = 0.0, value_tol: float = 0.0) -> FluxField:
    """Flux from the discrete conservation law u_t = (flux)_x.

    The flux on cell j is flux_0 + C_j with C_j the cumulative sum of
    h*(u_i - u_prev_i)/dt; flux_0 is the projection of ``candidate`` onto the
    set of values keeping every cell admissible.  An empty admissible set gives
    the value minimizing the largest violation; the field is flagged when that
    violation exceeds ``value_tol``.
    """
    u_new = np.asarray(u_new, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)
    h = 1.0 / (u_new.size - 1)
    rate = h * (u_new[1:-1] - u_prev[1:-1]) / dt
    C = np.concatenate([[0.0], np.cumsum(rate)])
    s = slopes(u_new, h)
    lo, hi = graph.hull(s - slope_tol, s + slope_tol)
    f_lo = float(np.max(lo - C))
    f_hi = float(np.min(hi - C))
    flagged = False
    violation = 0.0
    if f_lo <= f_hi:
        c0 = 0.5 * (f_lo + f_hi) if candidate is None else float(np.clip(candidate, f_lo, f_hi))
    else:
        c0 = 0.5 * (f_lo + f_hi)
        violation = 0.5 * (f_lo - f_hi)
        flagged = violation > value_tol
    return FluxField(c0 + C, t=t, flagged=flagged, violation=violation)


def step_prox(scenario: Scenario, state: State, dt: float | None = None):
    """One implicit step; returns (GridFunction, FluxField)."""
    dt = scenario.dt if dt is None else dt
    t1 = state.t + dt
    tol = scenario.tolerances
    g = state.u.values
    h = state.u.h
    a, b = scenario.A.value(t1), scenario.B.value(t1)
    graph = scenario.graph
    try:
        if scenario.prox_solver == "cd":
            u, sweeps = prox_cd(graph, g, a, b, h, dt, tol=tol.tol_prox,
                                max_sweeps=max(tol.max_iters, 100_000))
            state.aux["cd_sweeps"] = state.aux.get("cd_sweeps", 0) + sweeps
            candidate = None if state.flux is None else state.flux.values[0]
        else:
            u, om, its = prox_newton(graph, g, a, b, h, dt, warm=state.aux.get("warm"),
                                     tol=tol.tol_prox, max_iter=tol.max_iters)
            state.aux["warm"] = (slopes(u, h), om)
            state.aux["newton_iterations"] = state.aux.get("newton_iterations", 0) + its
            candidate = om[0]
    except ProxConvergenceError as err:
        raise ProxConvergenceError(str(err), t=t1, residual=err.residual) from None
    flux = recover_flux(graph, u, g, dt, candidate=candidate, slope_tol=tol.slope_tol, t=t1,
                        value_tol=tol.tol_flux)
    if flux.flagged:
        log.warning("flux recovery infeasible at t=%.6g (violation %.3e)", t1, flux.violation)
    return GridFunction(u), flux


# ----------------------------------------------------------------------
# drivers


def _snapshot(graph, t, u, flux):
    return Snapshot(t, u, flux, Diagnostics.compute(graph, u, flux))


def _initial_flux(scenario, u0, Lg=None):
    s = u0.slopes()
    vals = Lg(s) if Lg is not None else scenario.graph.selection(s)
    return FluxField(vals, t=0.0)


def run_prox(scenario: Scenario) -> TimeSeries:
    graph = scenario.graph
    u0 = scenario.u0
    series = TimeSeries(graph, "prox", scenario.dt, fingerprint=scenario.fingerprint())
    series.append(_snapshot(graph, 0.0, u0, _initial_flux(scenario, u0)))
    state = State(0.0, u0)
    flagged = 0
    for k in range(1, scenario.nsteps + 1):
        t1 = scenario.step_time(k)
        u, flux = step_prox(scenario, state, dt=t1 - state.t)
        flagged += flux.flagged
        state.t, state.u, state.flux = t1, u, flux
        if k % scenario.snapshot_every == 0 or k == scenario.nsteps:
            series.append(_snapshot(graph, t1, u, flux))
    series.info.update({k: v for k, v in state.aux.items() if k != "warm"})
    series.info["flagged_flux_steps"] = flagged
    return series


def run_regularized(scenario: Scenario, epsilon: float) -> TimeSeries:
    graph = scenario.graph
    Lg = graph.mollify(epsilon)
    u0 = scenario.u0
    series = TimeSeries(graph, "regularized", scenario.dt, epsilon=epsilon,
                        fingerprint=scenario.fingerprint())
    series.append(_snapshot(graph, 0.0, u0, _initial_flux(scenario, u0, Lg)))
    state = State(0.0, u0, aux={"Lg": Lg})
    for k in range(1, scenario.nsteps + 1):
        t1 = scenario.step_time(k)
        u = step_regularized(scenario, state, epsilon, dt=t1 - state.t)
        state.t, state.u = t1, u
        if k % scenario.snapshot_every == 0 or k == scenario.nsteps:
            flux = FluxField(Lg(u.slopes()), t=t1)
            series.append(_snapshot(graph, t1, u, flux))
    series.info["substeps"] = state.aux.get("substeps", 0)
    return series


def run(scenario: Scenario) -> TimeSeries:
    """Full evolution on [0, T].

    For the regularized method every epsilon of the schedule is run; the
    finest series is returned with ``convergence`` holding the distances of
    the coarser runs to it.
    """
    if scenario.method == "prox":
        return run_prox(scenario)
    runs = []
    for eps in scenario.epsilon_schedule:
        log.info("regularized run, epsilon=%g", eps)
        runs.append(run_regularized(scenario, eps))
    finest = runs[-1]
    if len(runs) > 1:
        finest.convergence = epsilon_convergence_report(runs)
    return finest


def epsilon_convergence_report(series_list) -> list[tuple[float, float]]:
    """Final-time L2 distance of each run to the run with the smallest epsilon."""
    if len(series_list) < 2:
        raise ValueError("need at least two series")
    ref = min(series_list, key=lambda s: s.epsilon)
    out = []
    for s in series_list:
        if s.n != ref.n or abs(s.final.t - ref.final.t) > 1e-12 or s.dt != ref.dt:
            raise ValueError("series must share grid, time step and final time")
        d = l2_norm(s.final.u.values - ref.final.u.values, s.h)
        out.append((s.epsilon, d))
    return out


def fitted_order(report) -> float:
    """Least-squares slope of log(distance) against log(epsilon), finest run excluded."""
    pts = [(e, d) for e, d in report if d > 0]
    if len(pts) < 2:
        raise ValueError("need two nonzero distances to fit an order")
    e, d = np.log(np.array(pts)).T
    return float(np.polyfit(e, d, 1)[0])
