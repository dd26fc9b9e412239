import numpy as np
import pytest
from scipy.sparse.linalg import spsolve

from critwave.functionals import (
    E_lambda,
    cubic_remainder,
    energy,
    energy_expansion,
    first_variation,
    h_functional,
    kinetic,
    mu_lambda,
    report,
    sobolev_gap,
    static_energy,
    virial,
    virial_root_scale,
)
from critwave.ground_state import J_lambda, W_lambda
from critwave.radial import PhaseState, grad_inner, norm_grad

from helpers import smooth_field, with_grad_norm


def _log_uniform(rng, lo=0.5, hi=2.0):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def test_H_identity_random_fields(d3, rng):
    g = d3.grid
    for _ in range(50):
        f = smooth_field(g, rng) * rng.uniform(0.1, 3.0)
        H = h_functional(f)
        assert abs(H - (static_energy(f) - virial(f) / g.p)) <= 1e-10 * abs(H)


def test_H_identity_d5(d5, rng):
    g = d5.grid
    for _ in range(10):
        f = smooth_field(g, rng) * rng.uniform(0.1, 3.0)
        H = h_functional(f)
        assert abs(H - (static_energy(f) - virial(f) / g.p)) <= 1e-10 * abs(H)


def test_report_matches_individual_functionals(d3, rng):
    s = PhaseState(smooth_field(d3.grid, rng), smooth_field(d3.grid, rng))
    rep = report(s)
    assert rep.E == pytest.approx(energy(s), rel=1e-13)
    assert rep.J == pytest.approx(static_energy(s.u), rel=1e-13)
    assert rep.K == pytest.approx(virial(s.u), rel=1e-12)
    assert rep.H == pytest.approx(h_functional(s.u), rel=1e-13)
    assert kinetic(s) >= 0


def test_energy_expansion_two_sided(d3, rng):
    g, fam, pair, _ = d3
    for _ in range(20):
        lam = _log_uniform(rng)
        v = with_grad_norm(smooth_field(g, rng), rng.uniform(1e-3, 0.1))
        s = PhaseState(W_lambda(fam, lam) + v, smooth_field(g, rng) * rng.uniform(0.0, 0.05))
        t = energy_expansion(s, lam, fam, pair)
        assert t.rel_error < 1e-8


def test_energy_expansion_at_W(d3):
    _, fam, pair, _ = d3
    t = energy_expansion(PhaseState.static(fam.W), 1.0, fam, pair)
    assert t.lhs == 0.0 and abs(t.rhs) < 1e-14
    assert t.mu == 0.0


def test_cubic_remainder_is_cubic(d3, rng):
    g, fam, _, _ = d3
    for _ in range(50):
        v = with_grad_norm(smooth_field(g, rng), rng.uniform(0.01, 0.3) * fam.grad_norm)
        lam = _log_uniform(rng)
        # calibrated constant: observed maximum 0.34
        assert abs(cubic_remainder(v, lam, fam)) <= 1.0 * norm_grad(v) ** 3
    v = with_grad_norm(smooth_field(g, rng), 1.0)
    ratios = [cubic_remainder(v * e, 1.0, fam) / e**3 for e in (1e-2, 5e-3)]
    assert ratios[0] == pytest.approx(ratios[1], rel=0.05)


def test_first_variation_is_discretization_defect():
    from critwave.ground_state import make_W
    from critwave.radial import Grid

    vals = []
    for N in (1024, 2048):
        fam = make_W(Grid(3, N))
        rng = np.random.default_rng(3)
        v = with_grad_norm(smooth_field(fam.grid, rng), 1.0)
        vals.append(abs(first_variation(v, 1.0, fam)))
    assert vals[1] < 2e-4 and vals[0] / vals[1] > 3.0


def test_E_lambda_vanishes_on_family(d3):
    _, fam, pair, _ = d3
    for lam in (0.5, 1.0, 2.0):
        assert E_lambda(PhaseState.static(W_lambda(fam, lam)), lam, fam, pair) == 0.0


def test_virial_of_W_lambda_resolved(d3_fine):
    fam = d3_fine.family
    for lam in (0.5, 1.0, 2.0):
        assert abs(virial(W_lambda(fam, lam))) < 1e-6 * fam.grad_sq


def test_virial_of_W_lambda_default_grid(d3):
    # O((lam h)^2) discretization offset; the resolved claim is checked above
    fam = d3.family
    for lam in (0.5, 1.0, 2.0):
        assert abs(virial(W_lambda(fam, lam))) < 2e-4 * fam.grad_sq


def test_virial_root_scale(d3, rng):
    f = smooth_field(d3.grid, rng)
    c = virial_root_scale(f)
    assert abs(virial(f * c)) < 1e-10 * grad_inner(f, f) * c**2
    with pytest.raises(ValueError):
        virial_root_scale(d3.grid.zeros())


def test_virial_sign_under_scaling(d3):
    W = d3.family.W
    assert virial(W * 0.9) > 0
    assert virial(W * 1.1) < 0


def test_sobolev_gap_random(d3, rng):
    g, fam, _, _ = d3
    for _ in range(50):
        nu = _log_uniform(rng)
        f = W_lambda(fam, nu) * rng.uniform(0.7, 1.3) + with_grad_norm(
            smooth_field(g, rng), rng.uniform(0.0, 0.5)
        )
        K = virial(f)
        # calibrated: gap / (K^2/||grad f||^2) >= -1.01 over this ensemble
        assert sobolev_gap(f, fam) >= -2.0 * K**2 / grad_inner(f, f) - 1e-4 * fam.grad_sq


def test_sobolev_gap_zero_on_family(d3_fine):
    fam = d3_fine.family
    for lam in (0.5, 2.0):
        assert abs(sobolev_gap(W_lambda(fam, lam), fam)) < 1e-6 * fam.grad_sq


def test_sobolev_gap_rejects_zero(d3):
    with pytest.raises(ValueError):
        sobolev_gap(d3.grid.zeros(), d3.family)


def test_mu_bound_by_dual_norm(d3, rng):
    g, fam, pair, _ = d3
    for lam in (0.5, 1.0, 2.0):
        dual = pair.dual_lambda(lam)
        b = np.asarray(g.weights) * dual.values
        dn = float(np.sqrt(b @ spsolve(g.stiffness.tocsc(), b)))
        for _ in range(10):
            v = with_grad_norm(smooth_field(g, rng), rng.uniform(0.01, 1.0))
            mu = mu_lambda(W_lambda(fam, lam) + v, lam, fam, pair)
            assert abs(mu) <= dn * norm_grad(v) * (1 + 1e-10)


def test_mu_along_rho(d3):
    _, fam, pair, _ = d3
    for a in (-0.01, 0.02):
        assert mu_lambda(fam.W + pair.rho * a, 1.0, fam, pair) == pytest.approx(a, rel=1e-10)


def test_J_lambda_matches_grid_energy(d3):
    fam = d3.family
    assert J_lambda(fam, 0.5) == pytest.approx(static_energy(W_lambda(fam, 0.5)), rel=1e-15)
