"""Scripted experiments: seeded data near the ground state, the four-quadrant
sweep, ejection-rate fits, the one-pass audit and the variational scan."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .evolution import EvolveConfig, TrajectoryRecord, evolve
from .functionals import energy, virial
from .ground_state import GroundStateFamily, J_lambda, W_lambda
from .modulation import (
    DistanceParams,
    DistanceUndefined,
    ModulationUndefined,
    distance_dS,
    distance_report,
    in_HX,
)
from .radial import PhaseState, RadialField, dilate, grad_inner, inner, norm_grad, norm_L2
from .spectral import Eigenpair

SEED_RATIO = 0.1
DEFAULT_SEED_CAP = 0.05


class InvalidSeed(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SeedSpec:
    """Data ``u = W + a rho + f``, ``u_t = b rho + g``, optionally rescaled.

    Parameters
    ----------
    a, b : float
        Coefficients of the unstable mode in ``u`` and ``u_t``.
    f, g : RadialField, optional
        Small perturbations; ``||grad f|| + ||g|| <= 0.1 (|a| + |b|)``.
    nu : float
        Solution rescaling ``u -> nu^{d/2-1} u(nu x)``,
        ``u_t -> nu^{d/2} u_t(nu x)`` applied after assembly.
    cap : float
        Upper bound on ``|a| + |b|``.
    """

    a: float
    b: float = 0.0
    f: RadialField | None = None
    g: RadialField | None = None
    nu: float = 1.0
    cap: float = DEFAULT_SEED_CAP

    def validate(self) -> None:
        size = abs(self.a) + abs(self.b)
        if not np.isfinite(size) or size > self.cap:
            raise InvalidSeed(f"|a| + |b| = {size:.3g} exceeds the cap {self.cap:.3g}")
        pert = (norm_grad(self.f) if self.f is not None else 0.0) + (
            norm_L2(self.g) if self.g is not None else 0.0
        )
        if pert > SEED_RATIO * size:
            raise InvalidSeed(f"perturbation {pert:.3g} too large for |a| + |b| = {size:.3g}")
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise InvalidSeed("rescaling factor must be positive")


def mu_pm(a: float, b: float, k: float) -> tuple[float, float]:
    """Growing and decaying mode amplitudes ``((a + b/k)/2, (a - b/k)/2)``."""
    return 0.5 * (a + b / k), 0.5 * (a - b / k)


def rescale_state(s: PhaseState, nu: float) -> PhaseState:
    """Solution rescaling of data; W-like tails are continued as power laws."""
    if nu == 1.0:
        return s
    u = dilate(s.u, nu, tail="power")
    ud = dilate(s.udot, nu, tail="zero") * nu
    return PhaseState(u, ud, s.t / nu)


def seed_state(spec: SeedSpec, family: GroundStateFamily, pair: Eigenpair) -> PhaseState:
    """Assemble the seeded state on the working grid."""
    spec.validate()
    grid = family.grid
    nu = spec.nu
    u = W_lambda(family, nu) + pair.rho_lambda(nu) * spec.a
    ud = pair.rho_lambda(nu) * (spec.b * nu)
    if spec.f is not None:
        u = u + dilate(spec.f, nu)
    if spec.g is not None:
        ud = ud + dilate(spec.g, nu) * nu
    if u.grid != grid:
        raise InvalidSeed("seed perturbations live on another grid")
    return PhaseState(u, ud)


def expected_direction(family: GroundStateFamily, pair: Eigenpair) -> int:
    """Sign of ``K`` along ``+rho`` at ``W`` from the first-order expansion.

    ``K(W + mu rho) = -(2*-2) mu <W^{2*-1}|rho> + O(mu^2)``.  A negative
    value means a positive growing-mode amplitude drives ``K < 0`` (the
    blow-up side).  Returns that sign.
    """
    g = family.grid
    lin = -(g.p - 2) * float(np.dot(g.nl_weights, family.W.values ** (g.p - 1) * pair.rho.values))
    return 1 if lin > 0 else -1


def predicted_outcomes(mu_plus: float, mu_minus: float, direction: int) -> tuple[str, str]:
    """(backward, forward) outcome predicted from the mode amplitudes.

    With ``direction = -1`` (``K`` decreases along ``+rho``), ``mu > 0``
    leads to blow-up; the forward outcome follows ``mu_plus`` and the
    backward one ``mu_minus``.
    """

    def one(mu: float) -> str:
        blow = (mu > 0) == (direction < 0)
        return "BlowsUp" if blow else "Scatters"

    return one(mu_minus) + "Backward", one(mu_plus) + "Forward"


def backward_label(outcome: str) -> str:
    return outcome.replace("Forward", "Backward")


def _run_cell(args):
    state, cfg, family, pair, params = args
    fwd = evolve(state, cfg, family, pair, params)
    bwd = evolve(state.time_reversed(), cfg, family, pair, params)
    return fwd, bwd


def run_pool(tasks, fn, workers: int = 1):
    """Map ``fn`` over ``tasks`` in order, in a process pool when ``workers > 1``."""
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


@dataclass
class QuadrantCell:
    a: float
    b: float
    mu_plus: float
    mu_minus: float
    backward: str
    forward: str
    predicted: tuple[str, str]
    forward_record: TrajectoryRecord | None = field(default=None, repr=False)
    backward_record: TrajectoryRecord | None = field(default=None, repr=False)

    @property
    def pair(self) -> tuple[str, str]:
        return (self.backward, self.forward)

    @property
    def consistent(self) -> bool:
        return self.pair == self.predicted

    @property
    def determined(self) -> bool:
        return "Undetermined" not in self.pair and "TrappedNearS" not in self.pair[1]


@dataclass
class QuadrantReport:
    cells: list[QuadrantCell]
    k: float
    direction: int

    @property
    def distinct_pairs(self) -> int:
        return len({c.pair for c in self.cells})

    @property
    def undetermined(self) -> list[QuadrantCell]:
        return [c for c in self.cells if not c.determined]

    @property
    def all_consistent(self) -> bool:
        return all(c.consistent for c in self.cells)

    def matrix_rows(self) -> list[dict]:
        return [
            {
                "a": c.a,
                "b": c.b,
                "mu_plus": c.mu_plus,
                "mu_minus": c.mu_minus,
                "backward": c.backward,
                "forward": c.forward,
                "predicted_backward": c.predicted[0],
                "predicted_forward": c.predicted[1],
                "consistent": int(c.consistent),
            }
            for c in self.cells
        ]


def quadrant_sweep(
    seeds,
    cfg: EvolveConfig,
    family: GroundStateFamily,
    pair: Eigenpair,
    params: DistanceParams,
    workers: int = 1,
    cap: float = DEFAULT_SEED_CAP,
) -> QuadrantReport:
    """Evolve every ``(a, b)`` seed forward and backward and classify.

    Backward evolution is forward evolution of ``(u, -u_t)``.  Cells whose
    outcome is not determined by the horizon are reported as such.
    """
    specs = [SeedSpec(float(a), float(b), cap=cap) for a, b in seeds]
    states = [seed_state(sp, family, pair) for sp in specs]
    results = run_pool([(s, cfg, family, pair, params) for s in states], _run_cell, workers)
    direction = expected_direction(family, pair)
    cells = []
    for sp, (fwd, bwd) in zip(specs, results):
        mp, mm = mu_pm(sp.a, sp.b, pair.k)
        cells.append(
            QuadrantCell(
                sp.a, sp.b, mp, mm, backward_label(bwd.outcome), fwd.outcome,
                predicted_outcomes(mp, mm, direction), fwd, bwd,
            )
        )
    return QuadrantReport(cells, pair.k, direction)


def quadrant_seeds(amplitude: float, k: float) -> list[tuple[float, float]]:
    """The four seeds ``(+-A, 0)`` and ``(0, +-A k)``, one per sign pattern of
    ``(mu_plus, mu_minus)``."""
    return [(amplitude, 0.0), (0.0, amplitude * k), (-amplitude, 0.0), (0.0, -amplitude * k)]


# --- ejection ------------------------------------------------------------------


class NoEjectionEpisode(ValueError):
    pass


@dataclass(frozen=True)
class EjectionFit:
    rate: float
    rel_err: float
    lam_drift: float
    lam0: float
    t0: float
    t1: float
    delta0: float
    sigma: int
    sigma_consistent: bool
    n_points: int


def ejection_fit(
    record: TrajectoryRecord, pair: Eigenpair, params: DistanceParams, family: GroundStateFamily
) -> EjectionFit:
    """Least-squares exponential rate of ``d_S`` across an ejection episode.

    The episode runs from the last row with ``d_S <= delta_M`` to the first
    later row with ``d_S >= delta_H``.  The energy condition
    ``E - J(W) <= d_S(t0)^2/2`` is checked with the grid value of
    ``J(W_lam(t0))``, the same reference used by ``E_S``.

    Raises
    ------
    NoEjectionEpisode
        If no such episode exists or the energy condition fails.
    """
    t = record.column("t")
    dS = record.column("d_S")
    lam = record.column("lam")
    mu = record.column("mu_S")
    E = record.column("E")
    ok = np.isfinite(dS)
    hi = np.nonzero(ok & (dS >= params.delta_H))[0]
    if len(hi) == 0:
        raise NoEjectionEpisode("d_S never reaches delta_H")
    i1 = int(hi[0])
    lo = np.nonzero(ok[:i1] & (dS[:i1] <= params.delta_M))[0]
    if len(lo) == 0:
        raise NoEjectionEpisode("no row with d_S <= delta_M before the exit")
    i0 = int(lo[-1])
    seg = slice(i0, i1 + 1)
    if not np.all(ok[seg] & np.isfinite(lam[seg])):
        raise NoEjectionEpisode("modulation undefined inside the episode")
    delta0 = float(dS[i0])
    lam0 = float(lam[i0])
    if E[i0] - J_lambda(family, lam0) > 0.5 * delta0**2:
        raise NoEjectionEpisode("energy condition fails at the episode start")
    if i1 - i0 < 2:
        raise NoEjectionEpisode("episode resolved by fewer than three rows")
    slope = float(np.polyfit(t[seg], np.log(dS[seg]), 1)[0])
    target = pair.k * lam0
    signs = np.sign(mu[seg])
    sigma = int(-signs[0]) if signs[0] != 0 else 1
    return EjectionFit(
        rate=slope,
        rel_err=abs(slope - target) / target,
        lam_drift=float(np.max(np.abs(lam[seg] - lam0)) / lam0),
        lam0=lam0,
        t0=float(t[i0]),
        t1=float(t[i1]),
        delta0=delta0,
        sigma=sigma,
        sigma_consistent=bool(np.all(signs == signs[0])),
        n_points=i1 - i0 + 1,
    )


# --- one-pass audit ----------------------------------------------------------------


@dataclass(frozen=True)
class AuditResult:
    sign_changes: int
    tube_entries: int
    change_times: tuple[float, ...]
    entry_times: tuple[float, ...]

    @property
    def passed(self) -> bool:
        return self.sign_changes <= 1 and self.tube_entries <= 1


def one_pass_audit(rows, delta_star: float) -> AuditResult:
    """Count sign changes of ``Sigma`` and entries into ``{d_S < delta*}``.

    Rows with undefined ``Sigma`` (stored as 0) are skipped for the sign
    count; rows with undefined ``d_S`` count as outside the tube.
    """
    changes, ctimes = 0, []
    last = 0
    entries, etimes = 0, []
    inside = False
    for r in rows:
        s = int(r["Sigma"])
        if s != 0:
            if last != 0 and s != last:
                changes += 1
                ctimes.append(float(r["t"]))
            last = s
        d = float(r["d_S"])
        now = bool(np.isfinite(d) and d < delta_star)
        if now and not inside:
            entries += 1
            etimes.append(float(r["t"]))
        inside = now
    return AuditResult(changes, entries, tuple(ctimes), tuple(etimes))


# --- random seeds in the energy region -------------------------------------------


def random_bump(grid, rng: np.random.Generator) -> np.ndarray:
    """Smooth radial profile: a Gaussian shell with random centre and width."""
    r = np.asarray(grid.r)
    c = rng.uniform(0.0, 4.0)
    w = rng.uniform(0.5, 2.0)
    return np.exp(-(((r - c) / w) ** 2))


def random_HX_seeds(
    n: int,
    family: GroundStateFamily,
    pair: Eigenpair,
    params: DistanceParams,
    rng: np.random.Generator,
    amp_range: tuple[float, float] = (2e-3, 2e-2),
    max_tries: int = 10000,
) -> list[tuple[PhaseState, dict]]:
    """Random seeds near ``+-S`` with ``E <= J(W) + eps*^2`` and ``E < J(W) + d_S^2/2``.

    Each seed is ``+-(W_nu + a rho_nu + f, b rho_nu + g)`` with random sign,
    scale ``nu`` in ``[1/2, 2]``, mode coefficients of size ``amp_range``
    and smooth perturbations ``f, g`` at most a tenth of ``|a| + |b|``.
    Candidates violating the energy conditions are discarded.
    """
    grid = family.grid
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not draw enough admissible seeds")
        A = math.exp(rng.uniform(*np.log(amp_range)))
        theta = rng.uniform(0, 2 * np.pi)
        a, b = A * math.cos(theta), A * math.sin(theta) * pair.k
        size = abs(a) + abs(b)
        fb = grid.field(random_bump(grid, rng))
        gb = grid.field(random_bump(grid, rng))
        fb = fb * (rng.uniform(0, 0.05) * size / max(norm_grad(fb), 1e-300))
        gb = gb * (rng.uniform(0, 0.05) * size / max(norm_L2(gb), 1e-300))
        nu = math.exp(rng.uniform(np.log(0.5), np.log(2.0)))
        sign = 1 if rng.uniform() < 0.5 else -1
        spec = SeedSpec(a, b, fb, gb, nu=nu)
        s = seed_state(spec, family, pair)
        if sign < 0:
            s = -s
        try:
            rep = distance_report(s, params, family, pair)
        except (DistanceUndefined, ModulationUndefined):
            continue
        dS = rep.d_S
        lam = rep.decomposition.lam if rep.decomposition is not None else None
        if not in_HX(s, dS, params, family, lam):
            continue
        E = energy(s)
        out.append((s, {"a": a, "b": b, "nu": nu, "sign": sign, "d_S": dS, "E": E}))
    return out


# --- variational scan ------------------------------------------------------------


@dataclass(frozen=True)
class BandReport:
    delta: float
    n_states: int
    n_negative: int
    n_positive: int
    kappa_hat: float
    c_hat: float
    max_negative_K: float
    min_positive_ratio: float
    violations: tuple[int, ...]

    @property
    def width_positive(self) -> bool:
        return self.kappa_hat > 0 and self.c_hat > 0


def variational_states(
    n: int, family: GroundStateFamily, pair: Eigenpair, params: DistanceParams,
    rng: np.random.Generator,
) -> list[PhaseState]:
    """Mixed ensemble in ``E <= J(W) + eps*^2``: amplitude-scaled ground
    states, modal perturbations and generic bumps, with small velocities.

    ``J(W)`` is taken at the modulation scale of each state when defined;
    states whose distance is undefined are skipped.
    """
    grid = family.grid
    out: list[PhaseState] = []
    while len(out) < n:
        kind = len(out) % 4
        nu = math.exp(rng.uniform(np.log(0.5), np.log(2.0)))
        Wn = W_lambda(family, nu)
        if kind == 0:
            c = rng.choice([rng.uniform(0.3, 0.999), rng.uniform(1.001, 1.5)])
            u = Wn * c
        elif kind == 1:
            a = rng.choice([-1, 1]) * math.exp(rng.uniform(np.log(1e-4), np.log(5e-2)))
            u = Wn + pair.rho_lambda(nu) * a
        elif kind == 2:
            fb = grid.field(random_bump(grid, rng))
            u = Wn * rng.uniform(0.5, 1.5) + fb * rng.uniform(-0.3, 0.3)
        else:
            fb = grid.field(random_bump(grid, rng))
            u = fb * rng.uniform(0.05, 1.5)
        gb = grid.field(random_bump(grid, rng)) * rng.uniform(0.0, 0.05)
        s = PhaseState(u, gb)
        if rng.uniform() < 0.5:
            s = -s
        try:
            rep = distance_report(s, params, family, pair)
        except (DistanceUndefined, ModulationUndefined):
            continue
        lam = rep.decomposition.lam if rep.decomposition is not None else None
        if energy(s) <= J_lambda(family, lam) + params.eps_star**2:
            out.append(s)
    return out


def variational_scan(
    states: list[PhaseState],
    deltas,
    family: GroundStateFamily,
    pair: Eigenpair,
    params: DistanceParams,
    safety: float = 0.5,
    seed: int = 0,
) -> list[BandReport]:
    """Empirical gap of ``K`` away from the ground-state family.

    The states are split into two halves by a permutation drawn from
    ``seed``.  For each ``delta`` the admissible calibration states
    (``d_S >= delta``) give ``kappa_hat`` (a fraction ``safety`` of the
    smallest ``|K|`` among negative-``K`` states) and ``c_hat`` (the same
    fraction of the smallest ``K/||grad u||^2`` among the others); the
    admissible validation states are then checked against the forbidden
    band ``(-kappa_hat, min(kappa_hat, c_hat ||grad u||^2))``.  Violations
    are reported as indices into ``states``.
    """
    info = []
    for i, s in enumerate(states):
        try:
            dS = distance_dS(s, params, family, pair)
        except (DistanceUndefined, ModulationUndefined):
            continue
        info.append((dS, virial(s.u), grad_inner(s.u, s.u), i))
    perm = np.random.default_rng(seed).permutation(len(states))
    is_cal = np.zeros(len(states), dtype=bool)
    is_cal[perm[: len(states) // 2]] = True
    out = []
    for delta in deltas:
        adm = [x for x in info if x[0] >= delta]
        cal = [x for x in adm if is_cal[x[3]]]
        val = [x for x in adm if not is_cal[x[3]]]
        negK = [K for _, K, _, _ in cal if K < 0]
        posR = [K / g2 for _, K, g2, _ in cal if K >= 0 and g2 > 0]
        kappa = safety * min((abs(K) for K in negK), default=np.inf)
        c_hat = safety * min(posR, default=np.inf)
        viol = []
        for _, K, g2, i in val:
            upper = min(kappa, c_hat * g2)
            if -kappa < K < upper:
                viol.append(i)
        allneg = [K for _, K, _, _ in adm if K < 0]
        allpos = [K / min(1.0, g2) for _, K, g2, _ in adm if K >= 0 and g2 > 0]
        out.append(
            BandReport(
                delta=float(delta),
                n_states=len(adm),
                n_negative=len(allneg),
                n_positive=len(adm) - len(allneg),
                kappa_hat=float(kappa),
                c_hat=float(c_hat),
                max_negative_K=float(max(allneg, default=-np.inf)),
                min_positive_ratio=float(min(allpos, default=np.inf)),
                violations=tuple(viol),
            )
        )
    return out
