import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critwave.ground_state import LambdaW_lambda, W_lambda, make_W
from critwave.radial import (
    Grid,
    PhaseState,
    RadialField,
    adjoint_boundary_term,
    apply_Lambda,
    apply_Lambda_star,
    crit_integral,
    critical_exponent,
    dilate,
    grad_inner,
    inner,
    laplacian,
    norm_crit,
    norm_grad,
    norm_L2,
    sphere_area,
)

from helpers import compact_field, smooth_field


@pytest.fixture(scope="module", params=[3, 5])
def grid(request):
    return Grid(request.param, 2048)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(4, 100)
    with pytest.raises(ValueError):
        Grid(3, 15)
    with pytest.raises(ValueError):
        Grid(3, 100, -1.0)
    g = Grid(3, 16)
    assert g.R_max == 40.0 and g.r[-1] == g.R_max
    assert Grid(5, 64).R_max == 32.0


def test_constants():
    assert sphere_area(3) == pytest.approx(4 * np.pi)
    assert sphere_area(5) == pytest.approx(8 * np.pi**2 / 3)
    assert critical_exponent(3) == 6.0
    assert critical_exponent(5) == pytest.approx(10 / 3)


def test_weights_integrate_volume(grid):
    w = np.asarray(grid.weights)
    assert np.all(w > 0)
    exact = grid.omega * grid.R_max**grid.d / grid.d
    assert abs(w.sum() - exact) / exact < 1e-6
    assert np.all(np.diff(grid.r) > 0)


def test_quadrature_even_polynomials(grid):
    # shell-volume weights are exact for constants and second order otherwise
    f = grid.field(np.asarray(grid.r) ** 2)
    one = grid.field(np.ones(grid.N))
    exact = grid.omega * grid.R_max ** (grid.d + 2) / (grid.d + 2)
    assert abs(inner(f, one) - exact) / exact < 10 * grid.h**2


def test_laplacian_of_r_squared_is_exact(grid):
    f = grid.field(np.asarray(grid.r) ** 2)
    lap = laplacian(f).values
    # exact up to rounding amplified by R^2/h^2
    tol = 1e3 * np.finfo(float).eps * (grid.R_max / grid.h) ** 2
    np.testing.assert_allclose(lap[1:-1], 2 * grid.d, rtol=0, atol=tol)
    assert lap[0] == pytest.approx(2 * grid.d, rel=1e-10)


def test_laplacian_of_constant_vanishes(grid):
    lap = laplacian(grid.field(np.full(grid.N, 3.0))).values
    assert np.max(np.abs(lap)) < 1e-10


@pytest.mark.parametrize("d", [3, 5])
def test_laplacian_order_two_on_gaussian(d):
    errs = []
    for N in (512, 1024, 2048):
        g = Grid(d, N, 10.0)
        r = np.asarray(g.r)
        f = g.field(np.exp(-(r**2)))
        exact = (4 * r**2 - 2 * d) * np.exp(-(r**2))
        errs.append(np.max(np.abs(laplacian(f).values - exact)[:-1]))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


@pytest.mark.parametrize("d", [3, 5])
def test_static_equation_residual_order_two(d):
    res = []
    for N in (1024, 2048, 4096):
        g = Grid(d, N)
        W = make_W(g).W
        p = g.p
        nl = W.values ** (p - 1)
        r = -laplacian(W).values - nl
        res.append(np.linalg.norm(r[:-1]) / np.linalg.norm(nl[:-1]))
    assert np.log2(res[0] / res[1]) > 1.9 and np.log2(res[1] / res[2]) > 1.9


def test_inner_symmetric_bilinear(grid, rng):
    f, g2, h = (smooth_field(grid, rng) for _ in range(3))
    assert inner(f, g2) == inner(g2, f)
    a, b = 0.7, -1.3
    lhs = inner(f * a + g2 * b, h)
    assert lhs == pytest.approx(a * inner(f, h) + b * inner(g2, h), rel=1e-13)
    assert inner(f, f) >= 0


def test_grad_inner_symmetric_positive(grid, rng):
    f, g2 = smooth_field(grid, rng), smooth_field(grid, rng)
    assert grad_inner(f, g2) == pytest.approx(grad_inner(g2, f), rel=1e-13)
    assert grad_inner(f, f) > 0


def test_norms_of_zero(grid):
    z = grid.zeros()
    assert norm_grad(z) == norm_L2(z) == norm_crit(z) == 0.0


def test_norm_crit_uses_critical_power(grid):
    f = grid.field(np.full(grid.N, 2.0))
    assert norm_crit(f) ** grid.p == pytest.approx(crit_integral(f), rel=1e-12)


def test_grad_norm_of_W_richardson():
    from critwave.ground_state import exact_grad_sq

    vals = []
    for N in (2048, 4096):
        g = Grid(3, N, 40.0)
        vals.append(make_W(g).grad_sq)
    rich = (4 * vals[1] - vals[0]) / 3
    assert abs(vals[1] - rich) / rich < 1e-4
    assert abs(rich - exact_grad_sq(3)) / exact_grad_sq(3) < 1e-4
    assert exact_grad_sq(3) == pytest.approx(3 * np.sqrt(3) * np.pi**2 / 4, rel=1e-10)


def test_Lambda_W_matches_scale_derivative(d3):
    fam = d3.family
    LW = apply_Lambda(fam.W)
    inner_nodes = slice(1, -1)
    err = np.max(np.abs(LW.values - fam.LambdaW.values)[inner_nodes])
    assert err < 5 * fam.grid.h**2
    for eps in (1e-2, 5e-3):
        fd = (W_lambda(fam, 1 + eps) - W_lambda(fam, 1 - eps)) / (2 * eps)
        assert np.max(np.abs(fd.values - fam.LambdaW.values)) < eps**2


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_Lambda_adjoint_identity_compact(seed):
    g = Grid(3, 1024, 20.0)
    rng = np.random.default_rng(seed)
    f = compact_field(g, rng, 8.0)
    h = compact_field(g, rng, 8.0)
    lhs = inner(apply_Lambda(f), h)
    rhs = inner(f, apply_Lambda_star(h))
    assert abs(lhs - rhs) < 1e-6 * max(1.0, norm_L2(f) * norm_L2(h))


def test_Lambda_adjoint_boundary_term(d3, rng):
    g = d3.grid
    f, h = smooth_field(g, rng, r_max=40.0), smooth_field(g, rng, r_max=40.0)
    gap = inner(apply_Lambda(f), h) - inner(f, apply_Lambda_star(h))
    assert gap == pytest.approx(adjoint_boundary_term(f, h), rel=1e-9, abs=1e-12)


def test_Lambda_commutes_with_dilation(d3):
    fam = d3.family
    for lam in (0.5, 2.0):
        lhs = apply_Lambda(W_lambda(fam, lam))
        rhs = LambdaW_lambda(fam, lam)
        assert np.max(np.abs(lhs.values - rhs.values)[1:-1]) < 5 * (lam * fam.grid.h) ** 2
        # resampled variant: Lambda(T_lam W) against T_lam(Lambda W)
        via = dilate(apply_Lambda(fam.W), lam, tail="zero")
        assert np.max(np.abs(lhs.values - via.values)[1 : fam.grid.N // 4]) < 1e-3


def test_dilate_identity_and_errors(d3, rng):
    f = smooth_field(d3.grid, rng)
    assert dilate(f, 1.0) is f
    for bad in (0.0, -1.0, np.nan):
        with pytest.raises(ValueError):
            dilate(f, bad)
    with pytest.raises(ValueError):
        dilate(f, 2.0, tail="linear")
    with pytest.raises(ValueError):
        dilate(f, 2.0, method="fft")


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_dilate_preserves_grad_norm(d3, lam):
    fam = d3.family
    out = dilate(fam.W, lam, tail="power")
    assert abs(norm_grad(out) - fam.grad_norm) / fam.grad_norm < 1e-4
    exact = W_lambda(fam, lam)
    assert np.max(np.abs(out.values - exact.values)) < 1e-4


def test_dilate_group_law(d3):
    fam = d3.family
    a, b = 0.8, 1.5
    two = dilate(dilate(fam.W, a, tail="power"), b, tail="power")
    one = dilate(fam.W, a * b, tail="power")
    exact = W_lambda(fam, a * b)
    e1 = norm_grad(one - exact)
    assert norm_grad(two - one) <= 2 * e1


def test_radialfield_invariants(d3):
    g = d3.grid
    with pytest.raises(ValueError):
        RadialField(g, np.ones(g.N + 1))
    with pytest.raises(ValueError):
        RadialField(g, np.full(g.N, np.nan))
    f = g.field(np.ones(g.N))
    with pytest.raises(ValueError):
        f.values[0] = 2.0
    other = Grid(5, g.N)
    with pytest.raises(ValueError):
        f + other.field(np.ones(g.N))


def test_phase_state(d3):
    g = d3.grid
    u = g.field(np.ones(g.N))
    s = PhaseState(u, g.zeros(), 1.5)
    assert s.time_reversed().udot == -s.udot
    assert (-s).u == -u
    with pytest.raises(ValueError):
        PhaseState(u, Grid(3, 64).zeros())
