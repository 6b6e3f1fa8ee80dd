import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from monoflow import graph as gr
from monoflow.graph import GraphError, Interval, MonotoneGraph


def two_jump():
    """sgn(p) + sgn(p - 1)."""
    return MonotoneGraph(((0.0, -2.0, 0.0), (1.0, 0.0, 2.0)), 0.0, 0.0)


@st.composite
def graphs(draw):
    k = draw(st.integers(0, 4))
    if k == 0:
        s = draw(st.floats(0, 3))
        return MonotoneGraph((), s, s, (draw(st.floats(-2, 2)), draw(st.floats(-2, 2))))
    gaps = draw(st.lists(st.floats(0.1, 1.5), min_size=k, max_size=k))
    P = np.cumsum(gaps) - 2.0
    y = draw(st.floats(-2, 2))
    knots = []
    for i, p in enumerate(P):
        if i:
            y += draw(st.floats(0, 2)) * (p - P[i - 1])
        jump = draw(st.sampled_from([0.0, 0.5, 1.0, 2.0]))
        knots.append((p, y, y + jump))
        y += jump
    return MonotoneGraph(tuple(knots), draw(st.floats(0, 2)), draw(st.floats(0, 2)))


# ----------------------------------------------------------------------
# examples


@pytest.mark.parametrize(
    "G, p, expected",
    [
        (gr.sign(), 2.0, (1.0, 1.0)),
        (gr.sign(), 0.0, (-1.0, 1.0)),
        (gr.identity(), 3.0, (3.0, 3.0)),
        (gr.one_sided(), -5.0, (0.0, 0.0)),
        (gr.tv_plus_linear(), -2.0, (-3.0, -3.0)),
    ],
)
def test_eval_set_examples(G, p, expected):
    iv = gr.eval_set(G, p)
    assert (iv.lo, iv.hi) == expected


def test_jump_points_examples():
    assert [(p, tuple(iv)) for p, iv in gr.jump_points(gr.sign())] == [(0.0, (-1.0, 1.0))]
    assert gr.jump_points(gr.identity()) == []
    assert [(p, tuple(iv)) for p, iv in gr.jump_points(two_jump())] == [(0.0, (-2.0, 0.0)), (1.0, (0.0, 2.0))]
    assert gr.jump_points(gr.one_sided()) == []


@pytest.mark.parametrize(
    "G, p, W", [(gr.sign(), 2.0, 2.0), (gr.identity(), 2.0, 2.0), (gr.one_sided(), 2.0, 4.0), (gr.one_sided(), -3.0, 0.0)]
)
def test_primitive_examples(G, p, W):
    assert gr.primitive(G, p) == pytest.approx(W, abs=1e-14)
    assert gr.primitive(G, 0.0) == 0.0


@pytest.mark.parametrize(
    "G, tau, q, x", [(gr.sign(), 1.0, 0.5, 0.0), (gr.sign(), 1.0, 2.0, 1.0), (gr.identity(), 1.0, 4.0, 2.0),
                     (gr.sign(), 0.5, -2.0, -1.5), (gr.one_sided(), 1.0, 3.0, 1.0)]
)
def test_resolvent_examples(G, tau, q, x):
    assert gr.resolvent(G, tau, q) == pytest.approx(x, abs=1e-14)


def test_identity_anchor_shifts_values():
    G = MonotoneGraph((), 1.0, 1.0, (1.0, 0.0))
    assert tuple(gr.eval_set(G, 3.0)) == (2.0, 2.0)


def test_interval_basics():
    iv = Interval(-1.0, 3.0)
    assert iv.width == 4.0 and iv.mid == 1.0
    assert iv.contains(3.0) and not iv.contains(3.1) and iv.contains(3.1, tol=0.2)
    assert iv.distance(5.0) == 2.0 and iv.distance(0.0) == 0.0
    with pytest.raises(ValueError):
        Interval(1.0, 0.0)


@pytest.mark.parametrize(
    "knots, msg",
    [
        (((1.0, 0.0, 0.0), (0.0, 1.0, 1.0)), "strictly increasing"),
        (((0.0, 1.0, 0.0),), "y_lo > y_hi"),
        (((0.0, 0.0, 2.0), (1.0, 1.0, 1.0)), "decreases"),
    ],
)
def test_invalid_graphs_rejected(knots, msg):
    with pytest.raises(GraphError, match=msg):
        MonotoneGraph(knots, 0.0, 0.0)


def test_negative_slope_and_knotless_mismatch_rejected():
    with pytest.raises(GraphError):
        MonotoneGraph(((0.0, 0.0, 0.0),), -1.0, 0.0)
    with pytest.raises(GraphError):
        MonotoneGraph((), 1.0, 2.0)


def test_literal_round_trip_and_presets():
    for name in gr.PRESETS:
        G = gr.preset(name)
        assert MonotoneGraph.from_literal(G.to_literal()) == G
    assert MonotoneGraph.from_literal("sign") == gr.sign()
    assert MonotoneGraph.from_literal({"preset": "identity"}) == gr.identity()
    assert gr.sign().knots == ((0.0, -1.0, 1.0),)
    with pytest.raises(GraphError):
        gr.preset("nope")
    with pytest.raises(GraphError):
        MonotoneGraph.from_literal({"knots": [], "bogus": 1})


# ----------------------------------------------------------------------
# mollification


def test_mollify_examples():
    eps = 0.1
    Li = gr.mollify(gr.identity(), eps)
    p = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(Li(p), (1 + eps) * p, atol=1e-14)
    Ls = gr.mollify(gr.sign(), eps)
    assert abs(Ls(0.0)) < 1e-15
    q = np.array([eps, 0.5, 2.0])
    np.testing.assert_allclose(Ls(q), 1 + eps * q, atol=1e-14)
    with pytest.raises(ValueError):
        gr.mollify(gr.sign(), 0.0)


def _kernel(x, eps):
    """Quadratic B-spline of unit mass on [-eps, eps] by direct formula."""
    s = 2 * eps / 3
    t = (x + eps) / s
    if t <= 0 or t >= 3:
        return 0.0
    if t < 1:
        b = 0.5 * t * t
    elif t < 2:
        b = 0.75 - (t - 1.5) ** 2
    else:
        b = 0.5 * (3 - t) ** 2
    return b / s


@pytest.mark.parametrize("G", [gr.sign(), two_jump(), gr.one_sided(), gr.tv_plus_linear()])
def test_mollify_matches_quadrature(G):
    eps = 0.2
    L = G.mollify(eps)
    for p in (-1.1, -0.15, 0.0, 0.07, 0.9, 1.05, 2.5):
        f = lambda y: float(G.selection(np.array(p - y))) * _kernel(y, eps)
        brk = sorted({-eps, -eps / 3, eps / 3, eps} | {p - k[0] for k in G.knots if -eps < p - k[0] < eps})
        val = sum(integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-13)[0] for a, b in zip(brk, brk[1:]))
        assert float(L(p)) == pytest.approx(val + eps * p, abs=1e-11)


@given(graphs(), st.floats(0.01, 0.5))
@settings(max_examples=60, deadline=None)
def test_mollify_derivative_floor_and_c1(G, eps):
    L = G.mollify(eps)
    p = np.linspace(-4, 4, 4001)
    v = L(p)
    fd = np.diff(v) / np.diff(p)
    assert np.all(fd >= eps - 1e-10)
    d = L.derivative(p)
    assert np.all(d >= eps - 1e-12)
    delta = 1e-6 * eps
    cd = (L(p + delta) - L(p - delta)) / (2 * delta)
    np.testing.assert_allclose(cd, d, rtol=1e-5, atol=1e-5 * (1 + np.max(d)))
    assert L.max_derivative(-4, 4) >= np.max(d) - 1e-12


@given(graphs(), st.floats(0.01, 0.3))
@settings(max_examples=60, deadline=None)
def test_mollify_close_to_selection_off_jumps(G, eps):
    L = G.mollify(eps)
    p = np.linspace(-4, 4, 801)
    J = G.jump_abscissae
    far = np.all(np.abs(p[:, None] - J[None, :]) > eps, axis=1) if J.size else np.ones(p.size, bool)
    lip = float(np.max(G.slopes)) if G.slopes.size else 0.0
    err = np.abs(L(p) - G.selection(p))[far]
    assert np.all(err <= lip * eps + eps * np.abs(p[far]) + 1e-12)


# ----------------------------------------------------------------------
# properties


@given(graphs(), st.floats(-4, 4), st.floats(-4, 4))
@settings(max_examples=200, deadline=None)
def test_monotone(G, p, q):
    p, q = min(p, q), max(p, q)
    if p < q:
        assert G.upper(p) <= G.lower(q) + 1e-12


@given(graphs(), st.floats(0.01, 5), st.floats(-10, 10), st.floats(-10, 10))
@settings(max_examples=200, deadline=None)
def test_resolvent_inverse_and_nonexpansive(G, tau, q1, q2):
    x1, x2 = G.resolvent(tau, q1), G.resolvent(tau, q2)
    assert abs(x1 - x2) <= abs(q1 - q2) + 1e-12
    iv = G.eval_set(float(x1))
    assert iv.lo - 1e-9 <= (q1 - x1) / tau <= iv.hi + 1e-9


@given(graphs())
@settings(max_examples=100, deadline=None)
def test_primitive_convex_and_subdifferential(G):
    p = np.linspace(-3, 3, 601)
    W = G.primitive(p)
    assert np.all(W[2:] - 2 * W[1:-1] + W[:-2] >= -1e-12)
    assert gr.check_subdifferential(G, p, 1e-3) <= 1e-12


@pytest.mark.parametrize("G", [gr.sign(), gr.identity(), two_jump()])
def test_check_subdifferential_examples(G):
    assert gr.check_subdifferential(G, np.linspace(-2, 2, 401), 1e-3) <= 1e-12


def test_vectorized_evaluation_matches_scalar():
    G = two_jump()
    p = np.array([-1.0, 0.0, 0.5, 1.0, 3.0])
    lo, hi = G.lower(p), G.upper(p)
    for k, pk in enumerate(p):
        iv = G.eval_set(pk)
        assert (iv.lo, iv.hi) == (lo[k], hi[k])
