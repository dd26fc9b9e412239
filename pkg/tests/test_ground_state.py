import numpy as np
import pytest

from critwave.functionals import static_energy, virial
from critwave.ground_state import (
    J_lambda,
    LambdaW_lambda,
    LambdaW_profile,
    W_lambda,
    W_profile,
    exact_grad_sq,
    make_W,
)
from critwave.radial import Grid, inner


@pytest.mark.parametrize("d", [3, 5])
def test_W_at_origin_positive_decreasing(d):
    fam = make_W(Grid(d, 512))
    assert fam.W.values[0] == 1.0
    assert np.all(fam.W.values > 0)
    assert np.all(np.diff(fam.W.values) < 0)


def test_W_closed_form_d3():
    assert W_profile(np.sqrt(3.0), 3) == pytest.approx(2**-0.5, rel=1e-15)
    assert W_profile(0.0, 5) == 1.0


def test_LambdaW_profile_is_scale_derivative():
    r = np.linspace(0, 20, 101)
    for d in (3, 5):
        eps = 1e-5
        fd = (W_profile(r, d, 1 + eps) - W_profile(r, d, 1 - eps)) / (2 * eps)
        np.testing.assert_allclose(LambdaW_profile(r, d), fd, atol=1e-9)


def test_cached_norms(d3):
    fam = d3.family
    assert fam.J == pytest.approx(0.5 * fam.grad_sq - fam.crit_pow / 6, rel=1e-15)
    assert fam.grad_norm == pytest.approx(np.sqrt(fam.grad_sq))
    # continuum J(W) = ||grad W||^2 / d
    assert fam.J == pytest.approx(exact_grad_sq(3) / 3, rel=1e-4)


def test_K_of_W_small(d3, d5):
    for s in (d3, d5):
        assert abs(virial(s.family.W)) < 1e-4 * s.family.grad_sq


def test_K_of_W_resolved(d3_fine):
    fam = d3_fine.family
    assert abs(virial(fam.W)) < 1e-6 * fam.grad_sq


def test_J_refinement_richardson():
    vals = [make_W(Grid(3, N)).J for N in (2048, 4096)]
    rich = (4 * vals[1] - vals[0]) / 3
    assert abs(vals[1] - rich) / abs(rich) < 1e-5
    assert rich == pytest.approx(exact_grad_sq(3) / 3, rel=1e-5)


def test_W_lambda_exact_and_validated(d3):
    fam = d3.family
    assert W_lambda(fam, 1.0) is fam.W
    W2 = W_lambda(fam, 2.0)
    np.testing.assert_array_equal(W2.values, W_profile(fam.grid.r, 3, 2.0))
    for bad in (0.0, -2.0, np.inf):
        with pytest.raises(ValueError):
            W_lambda(fam, bad)
        with pytest.raises(ValueError):
            LambdaW_lambda(fam, bad)


def test_J_invariant_under_scaling_resolved(d3_fine):
    fam = d3_fine.family
    for lam in (0.25, 4.0):
        assert abs(static_energy(W_lambda(fam, lam)) - fam.J) / fam.J < 1e-6


def test_J_lambda_reference(d3):
    fam = d3.family
    assert J_lambda(fam) == fam.J
    assert J_lambda(fam, 2.0) == pytest.approx(static_energy(W_lambda(fam, 2.0)), rel=1e-15)
    # second-order drift in lam*h at the default grid
    assert abs(J_lambda(fam, 2.0) - fam.J) / fam.J < 1e-4


def test_K_of_W_lambda_resolved(d3_fine):
    fam = d3_fine.family
    for lam in (0.5, 2.0):
        assert abs(virial(W_lambda(fam, lam))) < 1e-6 * fam.grad_sq


def test_LambdaW_orthogonal_to_rho_resolved(d3_fine):
    assert abs(inner(d3_fine.family.LambdaW, d3_fine.pair.rho)) < 1e-5
