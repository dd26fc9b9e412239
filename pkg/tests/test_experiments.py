import numpy as np
import pytest

from critwave.evolution import TrajectoryRecord
from critwave.experiments import (
    InvalidSeed,
    NoEjectionEpisode,
    SeedSpec,
    ejection_fit,
    expected_direction,
    mu_pm,
    one_pass_audit,
    predicted_outcomes,
    quadrant_seeds,
    random_HX_seeds,
    rescale_state,
    run_pool,
    seed_state,
    variational_scan,
    variational_states,
)
from critwave.functionals import energy, virial
from critwave.ground_state import J_lambda, W_lambda
from critwave.modulation import distance_dS
from critwave.radial import PhaseState, norm_grad

from helpers import smooth_field, with_grad_norm


# --- seeds ------------------------------------------------------------------------


def test_seed_validation(d3):
    g = d3.grid
    SeedSpec(0.02, 0.0).validate()
    with pytest.raises(InvalidSeed):
        SeedSpec(0.04, 0.02).validate()
    big = with_grad_norm(smooth_field(g, np.random.default_rng(0)), 0.01)
    with pytest.raises(InvalidSeed):
        SeedSpec(0.02, 0.0, f=big).validate()
    with pytest.raises(InvalidSeed):
        SeedSpec(0.02, 0.0, nu=-1.0).validate()
    SeedSpec(0.02, 0.0, f=big * 0.1).validate()


def test_mu_pm_inverts(d3):
    k = d3.pair.k
    mp, mm = mu_pm(0.01, 0.03, k)
    assert mp + mm == pytest.approx(0.01)
    assert k * (mp - mm) == pytest.approx(0.03)


def test_quadrant_seeds_cover_sign_patterns(d3):
    k = d3.pair.k
    signs = {tuple(np.sign(mu_pm(a, b, k)).astype(int)) for a, b in quadrant_seeds(0.02, k)}
    assert signs == {(1, 1), (1, -1), (-1, -1), (-1, 1)}


def test_seed_state_assembly(d3):
    _, fam, pair, _ = d3
    s = seed_state(SeedSpec(0.02, 0.01), fam, pair)
    np.testing.assert_allclose(s.u.values, (fam.W + pair.rho * 0.02).values)
    np.testing.assert_allclose(s.udot.values, (pair.rho * 0.01).values)
    s2 = seed_state(SeedSpec(0.02, 0.01, nu=2.0), fam, pair)
    np.testing.assert_allclose(s2.u.values, (W_lambda(fam, 2.0) + pair.rho_lambda(2.0) * 0.02).values)
    np.testing.assert_allclose(s2.udot.values, (pair.rho_lambda(2.0) * 0.02).values)


def test_rescale_state_preserves_energy_norm(d3, rng):
    g = d3.grid
    s = PhaseState(smooth_field(g, rng), smooth_field(g, rng), 2.0)
    r = rescale_state(s, 2.0)
    assert r.t == 1.0
    # resampling error of the narrowest bumps
    assert norm_grad(r.u) == pytest.approx(norm_grad(s.u), rel=1e-3)
    assert energy(r) == pytest.approx(energy(s), rel=1e-3)
    assert rescale_state(s, 1.0) is s


def test_direction_and_predictions(d3):
    _, fam, pair, _ = d3
    direction = expected_direction(fam, pair)
    assert direction == -1
    # W + a rho with a > 0 has K < 0
    assert np.sign(virial(fam.W + pair.rho * 0.01)) == direction
    assert predicted_outcomes(0.01, 0.01, -1) == ("BlowsUpBackward", "BlowsUpForward")
    assert predicted_outcomes(-0.01, 0.01, -1) == ("BlowsUpBackward", "ScattersForward")
    assert predicted_outcomes(0.01, -0.01, -1) == ("ScattersBackward", "BlowsUpForward")
    assert predicted_outcomes(0.01, 0.01, +1) == ("ScattersBackward", "ScattersForward")


def test_run_pool_serial_matches_parallel():
    tasks = list(range(6))
    assert run_pool(tasks, abs, 1) == run_pool(tasks, abs, 2) == tasks


# --- audit ------------------------------------------------------------------------


def _rows(sigmas, dss):
    return [{"t": float(i), "Sigma": s, "d_S": d} for i, (s, d) in enumerate(zip(sigmas, dss))]


def test_audit_counts():
    ok = one_pass_audit(_rows([1, 1, 0, -1, -1], [1.0, 0.1, 0.01, 0.1, 1.0]), 0.05)
    assert ok.sign_changes == 1 and ok.tube_entries == 1 and ok.passed
    assert ok.change_times == (3.0,) and ok.entry_times == (2.0,)
    bad = one_pass_audit(_rows([1, -1, 1], [0.01, 1.0, 0.01]), 0.05)
    assert bad.sign_changes == 2 and bad.tube_entries == 2 and not bad.passed
    nan = one_pass_audit(_rows([0, 0], [np.nan, np.nan]), 0.05)
    assert nan.sign_changes == 0 and nan.tube_entries == 0


# --- random seeds and variational scan ----------------------------------------------


def test_random_HX_seeds_admissible(d3):
    _, fam, pair, params = d3
    seeds = random_HX_seeds(4, fam, pair, params, np.random.default_rng(5))
    assert len(seeds) == 4
    for s, meta in seeds:
        dS = distance_dS(s, params, fam, pair)
        assert dS == pytest.approx(meta["d_S"], rel=1e-12)
        assert meta["E"] == energy(s)
        assert 0.5 <= meta["nu"] <= 2.0 and meta["sign"] in (-1, 1)


def test_random_HX_seeds_reproducible(d3):
    _, fam, pair, params = d3
    a = random_HX_seeds(2, fam, pair, params, np.random.default_rng(9))
    b = random_HX_seeds(2, fam, pair, params, np.random.default_rng(9))
    for (s1, m1), (s2, m2) in zip(a, b):
        assert m1 == m2
        np.testing.assert_array_equal(s1.u.values, s2.u.values)


def test_variational_scan_small_ensemble(d3):
    _, fam, pair, params = d3
    states = variational_states(24, fam, pair, params, np.random.default_rng(1))
    assert len(states) == 24
    for s in states[:4]:
        assert energy(s) <= J_lambda(fam) + 1e-3
    reports = variational_scan(states, [params.delta_M, params.delta_H], fam, pair, params)
    for rep in reports:
        assert rep.n_states == rep.n_negative + rep.n_positive
        assert rep.kappa_hat > 0
        assert all(0 <= i < len(states) for i in rep.violations)
    assert reports[0].n_states >= reports[1].n_states


# --- ejection fit -----------------------------------------------------------------


def _episode(params, fam, rate, n=30, lam=1.0):
    t = np.linspace(0.0, 6.0, n)
    d0 = 0.5 * params.delta_M
    dS = d0 * np.exp(rate * t)
    rows = [
        {"t": ti, "d_S": di, "lam": lam, "mu_S": -di, "E": J_lambda(fam, lam)}
        for ti, di in zip(t, dS)
    ]
    return TrajectoryRecord(rows=rows)


def test_ejection_fit_synthetic(d3):
    _, fam, pair, params = d3
    fit = ejection_fit(_episode(params, fam, pair.k), pair, params, fam)
    assert fit.rate == pytest.approx(pair.k, rel=1e-10)
    assert fit.rel_err < 1e-10 and fit.lam_drift == 0.0
    assert fit.sigma == 1 and fit.sigma_consistent
    assert fit.delta0 <= params.delta_M


def test_ejection_fit_failures(d3):
    _, fam, pair, params = d3
    with pytest.raises(NoEjectionEpisode):
        ejection_fit(_episode(params, fam, 0.01), pair, params, fam)
    rec = _episode(params, fam, pair.k)
    for r in rec.rows:
        r["E"] += 1.0
    with pytest.raises(NoEjectionEpisode):
        ejection_fit(rec, pair, params, fam)
