import numpy as np
import pytest
from scipy.ndimage import correlate

from oracles import holder_pairs, lemma_terms_loops
from twisted_ek.estimates import (
    DELTA_LADDER,
    bump_function,
    dyadic_scan,
    holder_seminorm,
    lemma_terms,
    oscillating_function,
    positive_part_max,
    quadratic_approx,
    quadratic_function,
    random_third_derivative,
    rigidity_scan,
    supersolution_residual,
)
from twisted_ek.grid import GridField, ResolutionError, hessian_field
from twisted_ek.operators import (
    Combination,
    GaugeError,
    Linear,
    QuadraticForm,
    TwistedOperator,
    convex_concave,
    identity_gauge,
    trace_op,
    twist_k,
    twisted_ma,
)
from twisted_ek.domains import EigenBox

PRESETS = {"twist-2": twist_k(), "twist-3": twist_k(3, 3), "twist-3-2": twist_k(3, 2),
           "twisted-ma": twisted_ma(), "convex-concave": convex_concave()}


# -- lemma terms -----------------------------------------------------------


def test_zero_third_derivatives_give_zero(rng):
    op = twist_k()
    T = lemma_terms(op, np.eye(2), np.zeros((2, 2, 2)))
    assert T == (0.0, 0.0, 0.0)


def test_identity_gauge_kills_second_term(rng):
    op = convex_concave()
    M = op.domain.sample(50, 4)
    _, T2, _ = lemma_terms(op, M, random_third_derivative(2, rng, (50,)))
    assert np.all(T2 == 0)


def test_twist2_at_identity_signs(rng):
    op = twist_k()
    D3 = random_third_derivative(2, rng, (1000,))
    T1, T2, T3 = lemma_terms(op, np.broadcast_to(np.eye(2), (1000, 2, 2)), D3)
    assert np.all(T1 <= 0) and np.all(T2 <= 0) and np.all(T3 <= 0)


@pytest.mark.parametrize("name", list(PRESETS))
def test_signs_over_domain(name, rng):
    op = PRESETS[name]
    M = op.domain.sample(1000, 21)
    T = lemma_terms(op, M, random_third_derivative(op.dim, rng, (len(M),)))
    for t in T:
        assert np.max(t) <= 1e-12


@pytest.mark.parametrize("name", list(PRESETS))
def test_matches_index_loop_oracle(name, rng):
    op = PRESETS[name]
    for M in op.domain.sample(5, 33):
        U = random_third_derivative(op.dim, rng)
        x = op.fcap(M)
        ref = lemma_terms_loops(op.fcup.grad(M), op.fcup.hess(M), op.fcap.grad(M), op.fcap.hess(M),
                                float(op.gauge.Gprime(x)), float(op.gauge.Gsecond(x)), U)
        got = lemma_terms(op, M, U)
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("name", list(PRESETS))
def test_terms_sum_to_unsimplified_expression(name, rng):
    """The three terms add up to the expression before cancelling the F_cap second derivatives."""
    op = PRESETS[name]
    for M in op.domain.sample(5, 8):
        U = random_third_derivative(op.dim, rng)
        x = op.fcap(M)
        Gp, Gpp = op.gauge.Gprime(x), op.gauge.Gsecond(x)
        c1, c2 = op.fcap.grad(M), op.fcap.hess(M)
        u1, u2 = op.fcup.grad(M), op.fcup.hess(M)
        B = lambda T: np.einsum("ijrs,aij,brs->ab", T, U, U)  # noqa: E731
        v = np.einsum("ij,aij->a", c1, U)
        first = -Gp * np.sum(c1 * (B(u2) + B(c2)))
        second = np.sum((u1 + c1) * (Gp * B(c2) + Gpp * np.outer(v, v)))
        assert sum(lemma_terms(op, M, U)) == pytest.approx(first + second, rel=1e-10, abs=1e-12)


def test_gauge_domain_error():
    with pytest.raises(GaugeError):
        lemma_terms(twist_k(), np.diag([1.0, -1.0]), np.zeros((2, 2, 2)))


# -- supersolution residual --------------------------------------------------


def test_quadratic_solution_has_zero_residual():
    op = twist_k()
    c = np.sqrt(2.0) - 1.0
    u = GridField.from_function(33, lambda X, Y: 0.5 * c * (X * X + Y * Y))
    r = supersolution_residual(op, u)
    assert np.nanmax(np.abs(r.values)) <= 1e-9


def test_linear_concave_part_two_assembly_paths():
    B = np.array([[0.7, 0.1], [0.1, 0.4]])
    fcup = Combination([(1.0, trace_op(2)), (0.25, QuadraticForm(np.eye(2)))])
    op = TwistedOperator("lin", 2, fcup, Linear(B), identity_gauge(), EigenBox(2, -5, 5), 0.1, 10.0)
    u = GridField.from_function(33, lambda X, Y: np.sin(X) * np.cos(0.7 * Y) + 0.3 * X ** 4)
    r = supersolution_residual(op, u)
    h = u.h
    kxx = np.array([[0, 1, 0], [0, -2, 0], [0, 1, 0]]) / h ** 2
    kyy = kxx.T
    kxy = np.array([[1, 0, -1], [0, 0, 0], [-1, 0, 1]]) / (4 * h * h)
    v = np.asarray(u.values)
    uxx, uyy, uxy = (correlate(v, k, mode="nearest") for k in (kxx, kyy, kxy))
    phi = B[0, 0] * uxx + 2 * B[0, 1] * uxy + B[1, 1] * uyy
    pxx, pyy, pxy = (correlate(phi, k, mode="nearest") for k in (kxx, kyy, kxy))
    A11 = 1 + 0.5 * uxx + B[0, 0]
    A22 = 1 + 0.5 * uyy + B[1, 1]
    A12 = 0.5 * uxy + B[0, 1]
    direct = A11 * pxx + 2 * A12 * pxy + A22 * pyy
    sl = (slice(2, -2), slice(2, -2))
    np.testing.assert_allclose(np.asarray(r.values)[sl], direct[sl], rtol=1e-10, atol=1e-8)
    assert np.isnan(r.values[1, 1]) and np.isnan(r.values[0, 5])


def test_gauge_violation_names_node():
    u = GridField.from_function(17, lambda X, Y: X * X - Y * Y)
    with pytest.raises(GaugeError, match="node"):
        supersolution_residual(twist_k(), u)


def test_residual_nonpositive_on_solutions(twist2_family):
    vals = [positive_part_max(supersolution_residual(twist_k(), u), 1.0) for u in twist2_family]
    assert all(v >= 0 for v in vals)
    assert all(b <= a / 1.5 for a, b in zip(vals, vals[1:]))


# -- dyadic scan -------------------------------------------------------------


def test_constant_hessian_field():
    u = GridField.from_function(65, lambda X, Y: 0.3 * X * X + 0.15 * Y * Y)
    rep = dyadic_scan(twist_k(), u, 0.05, 4)
    t = [lv["t_k"] for lv in rep.levels]
    assert max(t) - min(t) <= 1e-12
    assert all(lv["measureE_k"] == 0 for lv in rep.levels)
    assert rep.Gamma == pytest.approx(0.0, abs=1e-12)


def test_solution_levels(twist2_family):
    for u in twist2_family:
        rep = dyadic_scan(twist_k(), u, 0.05, 4)
        s = [lv["s_k"] for lv in rep.levels]
        assert all(b >= a - 1e-10 for a, b in zip(s, s[1:]))
        t = [lv["t_k"] for lv in rep.levels]
        assert all(b <= a + 1e-12 for a, b in zip(t, t[1:]))
        for lv in rep.levels:
            assert lv["s_k"] == pytest.approx(lv["G(-t_k)"], abs=1e-8)
        assert set(rep.first_small) == set(DELTA_LADDER)


def test_dyadic_csv_and_resolution(twist2_family):
    rep = dyadic_scan(twist_k(), twist2_family[0], 0.05, 3)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "k,t_k,s_k,fractionE_k" and len(lines) == 4
    with pytest.raises(ResolutionError):
        dyadic_scan(twist_k(), GridField.from_function(17, lambda X, Y: 0.3 * X * X), 0.05, 3)
    with pytest.raises(ValueError):
        dyadic_scan(twist_k(), twist2_family[0], 0.0, 2)


# -- Hoelder seminorms -------------------------------------------------------


def test_quadratic_seminorm_zero():
    u = GridField.from_function(65, lambda X, Y: 0.4 * X * X - X * Y)
    assert holder_seminorm(u, 0.5, 0.5).seminorm == pytest.approx(0.0, abs=1e-9)


def test_linear_hessian_diametrical_pair():
    # D^2 u = diag(x, 0): the quotient |x1 - y1| / |x - y|^(1/2) peaks at a diameter
    u = GridField.from_function(65, lambda X, Y: X ** 3 / 6)
    rep = holder_seminorm(u, 0.5, 0.5)
    assert rep.seminorm == pytest.approx(1.0, abs=1e-9)
    (x1, y1), (x2, y2) = rep.pair
    assert np.hypot(x1 - x2, y1 - y2) == pytest.approx(1.0)
    again = holder_seminorm(u, 0.9, 0.5)
    assert again.seminorm == holder_seminorm(u, 0.9, 0.5).seminorm


def test_matches_pairwise_oracle():
    u = GridField.from_function(33, lambda X, Y: np.sin(2 * X) * np.cos(Y) + X * Y ** 3)
    H = hessian_field(u)
    X, Y = u.coords()
    sel = (X * X + Y * Y <= 0.25 + 1e-12) & np.isfinite(H[..., 0, 0])
    ref = holder_pairs(np.stack([X[sel], Y[sel]], -1), H[sel], 0.3)
    assert holder_seminorm(u, 0.3, 0.5).seminorm == pytest.approx(ref, rel=1e-12)


def test_ball_monotonicity(twist2_family):
    u = twist2_family[0]
    vals = [holder_seminorm(u, 0.5, r).seminorm for r in (0.125, 0.25, 0.5, 0.75)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_scale_identity():
    _, hess = oscillating_function()
    P = 65
    h = 2 / (P - 1)
    t = -1 + h * np.arange(P)
    X, Y = np.meshgrid(t, t, indexing="ij")
    sel = X * X + Y * Y <= 0.25 + 1e-12
    idx, pos = np.argwhere(sel), np.stack([X[sel], Y[sel]], -1)
    for R in (2.0, 4.0):
        Hs = hess(R * pos[:, 0], R * pos[:, 1])
        v = holder_seminorm((idx, h, Hs, pos), 0.5, 0.5).seminorm
        u = holder_seminorm((idx, R * h, Hs, R * pos), 0.5, 0.5 * R).seminorm
        assert v == pytest.approx(R ** 0.5 * u, rel=1e-8)
        assert rigidity_scan(None, hess, 0.5, [R], points=P)[0]["value"] == pytest.approx(v, rel=1e-12)


# -- quadratic approximation -------------------------------------------------


def test_exact_quadratic_solution():
    c = np.sqrt(2.0) - 1.0
    u = GridField.from_function(65, lambda X, Y: 0.5 * c * (X * X + Y * Y) + 0.1 * X - 0.2)
    q = quadratic_approx(u, twist_k(), 0.5)
    assert q.sup_error <= 1e-10 and abs(q.shift) <= 1e-12 and q.residual_at_P <= 1e-12


def test_cubic_bump_scaling():
    c = np.sqrt(2.0) - 1.0
    u = GridField.from_function(129, lambda X, Y: 0.5 * c * (X * X + Y * Y) + 0.01 * np.hypot(X, Y) ** 3)
    errs = [quadratic_approx(u, twist_k(), eta).sup_error for eta in (1.0, 0.5, 0.25)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    np.testing.assert_allclose(ratios, 2.0, rtol=0.05)


def test_solution_improves_with_scale(twist2_family):
    u = twist2_family[1]
    a, b = quadratic_approx(u, twist_k(), 1.0), quadratic_approx(u, twist_k(), 0.25)
    assert b.sup_error < a.sup_error
    for q in (a, b):
        assert q.residual_at_P <= 1e-10
        # recompute the sup error from the stored polynomial
        X, Y = u.coords()
        sel = X * X + Y * Y <= q.eta ** 2 + 1e-12
        err = np.max(np.abs(np.asarray(u.values)[sel] / q.eta ** 2 - q.evaluate(X[sel] / q.eta, Y[sel] / q.eta)))
        assert err == pytest.approx(q.sup_error, rel=1e-12)


def test_quadratic_approx_resolution():
    with pytest.raises(ResolutionError):
        quadratic_approx(GridField.from_function(17, lambda X, Y: X * X), twist_k(), 0.25)


# -- rigidity ----------------------------------------------------------------


def test_quadratic_rigidity_zero():
    _, hess = quadratic_function([[1.0, 0.3], [0.3, 0.5]])
    rows = rigidity_scan(twist_k(), hess, 0.5, [1, 2, 4, 8, 16])
    assert all(r["value"] == 0.0 and not r["flag"] for r in rows)


def test_bump_hessian_closed_form():
    u, hess = bump_function()
    e = 1e-4
    for x, y in [(0.1, -0.2), (0.3, 0.25), (-0.05, 0.4)]:
        fd = np.array([
            [(u(x + e, y) - 2 * u(x, y) + u(x - e, y)) / e ** 2,
             (u(x + e, y + e) - u(x + e, y - e) - u(x - e, y + e) + u(x - e, y - e)) / (4 * e * e)],
            [0.0, (u(x, y + e) - 2 * u(x, y) + u(x, y - e)) / e ** 2]])
        fd[1, 0] = fd[0, 1]
        np.testing.assert_allclose(hess(x, y), fd, atol=1e-5)


def test_bump_values_do_not_decay():
    _, hess = bump_function()
    rows = rigidity_scan(None, hess, 0.5, [1, 2, 4, 8])
    vals = [r["value"] for r in rows]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert any(r["flag"] for r in rows)


def test_oscillating_values_bounded_not_decaying():
    amp = 0.1
    _, hess = oscillating_function(amp)
    rows = rigidity_scan(None, hess, 0.5, [1, 2, 4, 8, 16])
    vals = [r["value"] for r in rows]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert max(vals) <= 2 * amp / (2 / 128) ** 0.5


def test_rigidity_bound_precondition():
    _, hess = quadratic_function([[3.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        rigidity_scan(None, hess, 0.5, [1, 2], bound=2.0)
