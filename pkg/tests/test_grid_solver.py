from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twisted_ek.grid import (
    BOUNDARY,
    INTERIOR,
    OUTSIDE,
    GridField,
    ResolutionError,
    StencilError,
    discrete_hessian,
    hessian_field,
    read_field_binary,
    read_field_csv,
    rescale_field,
    write_field_binary,
    write_field_csv,
)
from twisted_ek.operators import laplace, trace_op, twist_k
from twisted_ek.solver import (
    NonConvergenceError,
    SolveConfig,
    manufactured_rhs,
    solve_convex_auxiliary,
    solve_dirichlet,
)


def exact_manufactured(X, Y):
    return X * X + Y * Y + 0.05 * np.sin(2 * X) * np.sin(2 * Y)


def exact_manufactured_hessian(X, Y):
    s2x, s2y, c2x, c2y = np.sin(2 * X), np.sin(2 * Y), np.cos(2 * X), np.cos(2 * Y)
    hxx = 2 - 0.2 * s2x * s2y
    hyy = 2 - 0.2 * s2x * s2y
    hxy = 0.2 * c2x * c2y
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)


# -- grid fields -----------------------------------------------------------


@pytest.mark.parametrize("P", [5, 17, 65, 257])
def test_spacing_is_exact(P):
    u = GridField.from_function(P, lambda X, Y: X)
    assert u.spacing * (P - 1) == Fraction(2)


@pytest.mark.parametrize("P", [4, 3, 6])
def test_bad_sizes_rejected(P):
    with pytest.raises(ValueError):
        GridField.from_function(P, lambda X, Y: X)


def test_ball_mask_layers():
    mask = GridField.ball_mask(33)
    u = GridField(33, np.zeros((33, 33)), mask)
    X, Y = u.coords()
    assert np.all((X * X + Y * Y)[mask == INTERIOR] < 1)
    assert np.all((X * X + Y * Y)[mask == BOUNDARY] >= 1)
    # every interior node has a full stencil of data
    H = hessian_field(GridField.from_function(33, lambda X, Y: X * Y, domain="ball"))
    assert np.all(np.isfinite(H[mask == INTERIOR]))
    assert (mask == OUTSIDE).any()


def test_discrete_hessian_quadratics_exact():
    u = GridField.from_function(17, lambda X, Y: X * X)
    v = GridField.from_function(17, lambda X, Y: X * Y)
    for node in [(1, 1), (8, 8), (15, 3)]:
        assert np.array_equal(discrete_hessian(u, node).full(), np.diag([2.0, 0.0]))
        np.testing.assert_allclose(discrete_hessian(v, node).full(), [[0, 1], [1, 0]], atol=1e-12)


def test_discrete_hessian_quartic_error():
    u = GridField.from_function(21, lambda X, Y: X ** 4)
    H = discrete_hessian(u, (15, 10)).full()
    assert H[0, 0] == pytest.approx(3.02, abs=1e-10)
    # the remainder bound is attained exactly for a quartic
    assert abs(H[0, 0] - 3.0) <= 0.1 ** 2 * 24 / 12 + 1e-12


def test_stencil_error_names_node():
    u = GridField.from_function(17, lambda X, Y: X, domain="ball")
    with pytest.raises(StencilError, match=r"\(0, 8\)"):
        discrete_hessian(u, (0, 8))


def test_field_io_roundtrip(tmp_path):
    u = GridField.from_function(17, lambda X, Y: np.exp(X) * Y, domain="ball")
    write_field_binary(u, tmp_path / "u.bin")
    b = read_field_binary(tmp_path / "u.bin")
    assert np.array_equal(b.values, u.values, equal_nan=True) and np.array_equal(b.mask, u.mask)
    raw = (tmp_path / "u.bin").read_bytes()
    assert raw[:8] == b"TWEKFLD1" and int.from_bytes(raw[8:12], "little") == 17
    write_field_csv(u, tmp_path / "u.csv")
    c = read_field_csv(tmp_path / "u.csv")
    assert np.array_equal(c.values, u.values, equal_nan=True) and np.array_equal(c.mask, u.mask)


# -- rescaling -------------------------------------------------------------


def test_rescale_quadratic_and_identity():
    q = lambda X, Y: 0.7 * X * X - 0.2 * X * Y + 0.4 * Y * Y + 0.1  # noqa: E731
    u = GridField.from_function(65, q)
    assert rescale_field(u, 0) is u
    for k in (1, 2, 3):
        w = rescale_field(u, k)
        X, Y = w.coords()
        quad = 0.7 * X * X - 0.2 * X * Y + 0.4 * Y * Y
        np.testing.assert_allclose(w.values, quad + 0.1 * 4 ** k, atol=1e-10)


def test_rescale_quartic_preserves_hessians():
    u = GridField.from_function(65, lambda X, Y: X ** 4)
    w = rescale_field(u, 1)
    X, _ = w.coords()
    np.testing.assert_allclose(w.values, X ** 4 / 4, atol=1e-14)
    Hu, Hw = hessian_field(u), hessian_field(w)
    c, m = 32, 16
    np.testing.assert_allclose(Hw[1:-1, 1:-1], Hu[c - m + 1:c + m, c - m + 1:c + m] * 1.0, atol=1e-9)


def test_rescale_resolution_error():
    with pytest.raises(ResolutionError):
        rescale_field(GridField.from_function(17, lambda X, Y: X), 3)


# -- solver ----------------------------------------------------------------


def test_laplace_harmonic_quadratic():
    g = lambda X, Y: X * X - Y * Y  # noqa: E731
    u = solve_dirichlet(laplace(), 0.0, g, points=33)
    X, Y = u.coords()
    assert np.max(np.abs(u.values - g(X, Y))) <= 1e-10


def test_manufactured_order():
    op = twist_k()
    f = manufactured_rhs(op, exact_manufactured_hessian)
    errs = []
    for P in (17, 33, 65):
        u = solve_dirichlet(op, f, exact_manufactured, points=P, warm_start="coarse")
        X, Y = u.coords()
        errs.append(np.max(np.abs(u.values - exact_manufactured(X, Y))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders > 1.7) & (orders < 2.3)), orders


def test_radial_quadratic_from_zero():
    op = twist_k()
    c = np.sqrt(2.0) - 1.0  # 2c + c^2 = 1
    g = lambda X, Y: 0.5 * c * (X * X + Y * Y)  # noqa: E731
    u = solve_dirichlet(op, 0.0, g, points=33)
    assert u.meta["iterations"] <= 15
    X, Y = u.coords()
    assert np.max(np.abs(u.values - g(X, Y))) < 1e-9


def test_residual_strictly_decreases(twist2_family):
    for u in twist2_family:
        h = u.meta["residual_history"]
        assert all(b < a for a, b in zip(h, h[1:]))
        assert u.meta["max_residual"] <= 1e-10


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_laplace_comparison(bump, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, 2)
    g1 = lambda X, Y: a * X + b * Y * Y  # noqa: E731
    g2 = lambda X, Y: g1(X, Y) + bump * (1 + np.sin(3 * X + Y))  # noqa: E731
    u1 = solve_dirichlet(laplace(), 0.0, g1, points=17)
    u2 = solve_dirichlet(laplace(), 0.0, g2, points=17)
    assert np.all(u2.values >= u1.values - 1e-12)


def test_hessian_range_warning():
    op = twist_k(lo=0.5)
    u = solve_dirichlet(op, 0.0, lambda X, Y: 0.3 * X * X + 0.15 * Y * Y, points=17)
    assert u.meta["warnings"]
    assert not solve_dirichlet(twist_k(), 0.0, lambda X, Y: 0.3 * X * X + 0.15 * Y * Y, points=17).meta["warnings"]


def test_nonconvergence_carries_iterate():
    with pytest.raises(NonConvergenceError) as err:
        solve_dirichlet(twist_k(), 0.0, lambda X, Y: 0.3 * X * X, points=17, cfg=SolveConfig(max_newton=1))
    assert err.value.history and err.value.iterate.points == 17


def test_config_must_be_positive():
    with pytest.raises(ValueError):
        SolveConfig(min_step=0.0)


def test_position_dependent_right_hand_side():
    # D^2 u = diag(1 + x/10, 1), so tr + sigma_2 = 3 + x/5; second differences are exact on cubics
    u_exact = lambda X, Y: 0.5 * X * X + 0.5 * Y * Y + X ** 3 / 60  # noqa: E731
    op = twist_k(rhs=0.0).with_rhs(lambda x: 3.0 + 0.2 * x[..., 0])
    u = solve_dirichlet(op, 0.0, u_exact, points=33, warm_start="coarse")
    X, Y = u.coords()
    assert np.max(np.abs(u.values - u_exact(X, Y))) < 1e-9


def test_auxiliary_examples():
    g = lambda X, Y: X * X - Y * Y  # noqa: E731
    w = GridField.from_function(33, g)
    v = solve_convex_auxiliary(trace_op(2), 0.0, w)
    X, Y = v.coords()
    inside = v.mask != OUTSIDE
    assert np.max(np.abs(v.values[inside] - g(X, Y)[inside])) <= 1e-10
    op = twist_k()
    q = GridField.from_function(33, lambda X, Y: 0.4 * X * X + 0.25 * Y * Y)
    v = solve_convex_auxiliary(op, float(op.fcup(np.diag([0.8, 0.5]))), q)
    assert v.meta["iterations"] == 0
