"""Time integration of the radial focusing wave equation with diagnostics.

The semi-discrete system is ``V u_tt = -dE_h/du - B u_t``: the force is the
exact gradient of the grid energy (finite-volume stiffness with its
harmonic-tail Robin term, critical power with the tail weight) and ``B`` is
an outgoing-flux damping acting on the last node only.  At ``R_max`` this
gives ``u_r = -u_t - (d-2) u / R``, the Sommerfeld condition in ``d = 3``.
The grid energy therefore decays exactly by the boundary flux.  Time
stepping is velocity Verlet (kick-drift-kick leapfrog), symmetric and
second order; the damping is treated implicitly as a centred term.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .functionals import report as functional_report
from .ground_state import GroundStateFamily
from .modulation import (
    DistanceParams,
    DistanceUndefined,
    ModulationUndefined,
    SigmaUndefined,
    chi,
    distance_report,
    sign_Sigma,
)
from .radial import Grid, PhaseState, RadialField, crit_integral, inner
from .spectral import Eigenpair

OUTCOMES = ("ScattersForward", "BlowsUpForward", "Undetermined", "TrappedNearS")

COLUMNS = (
    "t",
    "E",
    "K",
    "grad_norm",
    "udot_norm",
    "crit_norm",
    "d_S",
    "lam",
    "mu_S",
    "Sigma",
    "sigma_clause",
    "sigma_consistent",
    "E_ext_w",
    "E_ext_half",
    "V",
    "Y",
    "V_dot",
    "Y_dot",
    "status",
)


class NumericalBlowup(FloatingPointError):
    """Non-finite values produced by a time step."""

    def __init__(self, step_index: int, t: float):
        super().__init__(f"non-finite values at step {step_index} (t={t:.6g})")
        self.step_index = step_index
        self.t = t


class CFLError(ValueError):
    pass


class Stepper:
    """Precomputed operators for one grid; advances raw arrays in place."""

    def __init__(self, grid: Grid):
        self.grid = grid
        g = grid
        self.V = np.asarray(g.weights)
        self.A = np.asarray(g.flux)
        self.p = g.p
        self.nl_ratio = float(g.nl_weights[-1] / self.V[-1])
        area = g.omega * g.R_max ** (g.d - 1)
        self.beta = area / self.V[-1]
        self.gamma_b = g.robin / self.V[-1]

    @cached_property
    def max_frequency_sq(self) -> float:
        """Largest eigenvalue of the linear operator ``V^{-1} S0``."""
        V, A = self.V, self.A
        diag = np.zeros(len(V))
        diag[:-1] += A
        diag[1:] += A
        D = diag / V
        E = -A / np.sqrt(V[:-1] * V[1:])
        n = len(D)
        return float(eigh_tridiagonal(D, E, eigvals_only=True, select="i",
                                      select_range=(n - 1, n - 1))[0])

    @property
    def cfl_limit(self) -> float:
        """Largest stable Courant number of the linear scheme."""
        return 2.0 / (self.grid.h * math.sqrt(self.max_frequency_sq))

    def force(self, u: np.ndarray) -> np.ndarray:
        """``-V^{-1} dE_h/du``: acceleration without the boundary damping."""
        flux = self.A * np.diff(u)
        div = np.zeros_like(u)
        div[:-1] += flux
        div[1:] -= flux
        a = div / self.V
        if self.p == 6.0:
            u2 = u * u
            nl = u2 * u2 * u
        else:
            nl = np.abs(u) ** (self.p - 2) * u
        nl[-1] *= self.nl_ratio
        a += nl
        a[-1] -= self.gamma_b * u[-1]
        return a


def _kdk(stepper: Stepper, u: np.ndarray, ud: np.ndarray, F: np.ndarray, dt: float, n: int,
         t0: float = 0.0, step0: int = 0) -> np.ndarray:
    """Velocity Verlet with the implicit boundary damping; in place."""
    half = 0.5 * dt
    beta = stepper.beta
    damp = 1.0 / (1.0 + half * beta)
    with np.errstate(over="ignore", invalid="ignore"):
        return _kdk_loop(stepper, u, ud, F, dt, n, t0, step0, half, beta, damp)


def _kdk_loop(stepper, u, ud, F, dt, n, t0, step0, half, beta, damp):
    for i in range(n):
        # ud holds u_t at the integer step; expand the damped half kick
        ud += half * F
        ud[-1] -= half * beta * (ud[-1] - half * F[-1])
        u += dt * ud
        F = stepper.force(u)
        ud += half * F
        ud[-1] *= damp
        if not np.isfinite(np.dot(u, u)):
            raise NumericalBlowup(step0 + i + 1, t0 + (i + 1) * dt)
    return F


def step(s: PhaseState, dt: float, n: int = 1) -> PhaseState:
    """Advance ``s`` by ``n`` steps of size ``dt``.

    Raises
    ------
    CFLError
        If ``dt`` exceeds the stability limit of the grid.
    NumericalBlowup
        If a step produces non-finite values.
    """
    st = _stepper(s.grid)
    if dt <= 0 or dt > st.cfl_limit * s.grid.h:
        raise CFLError(f"dt={dt} outside (0, {st.cfl_limit * s.grid.h:.6g}]")
    u = np.array(s.u.values)
    ud = np.array(s.udot.values)
    F = st.force(u)
    _kdk(st, u, ud, F, dt, n, s.t)
    g = s.grid
    return PhaseState(RadialField(g, u), RadialField(g, ud), s.t + n * dt)


_STEPPERS: dict[Grid, Stepper] = {}


def _stepper(grid: Grid) -> Stepper:
    st = _STEPPERS.get(grid)
    if st is None:
        st = _STEPPERS[grid] = Stepper(grid)
    return st


# --- diagnostics -------------------------------------------------------------


def exterior_energy(s: PhaseState, R: float) -> float:
    """Free energy ``(|grad u|^2 + u_t^2)/2`` outside the ball of radius ``R``.

    Edges count when their midpoint lies at or beyond ``R``, nodes when the
    node does; the harmonic tail beyond ``R_max`` always counts.
    """
    g = s.grid
    if not 0.0 <= R <= g.R_max:
        raise ValueError(f"R must lie in [0, {g.R_max}]")
    u, ud = s.u.values, s.udot.values
    e = g.r_half >= R
    n = np.asarray(g.r) >= R
    grad = np.dot(g.flux[e], np.diff(u)[e] ** 2) + g.robin * u[-1] ** 2
    kin = np.dot(g.weights[n], ud[n] ** 2)
    return float(0.5 * (grad + kin))


def cutoff_weight(grid: Grid, radius: float) -> RadialField:
    """``chi(r / radius)``: 1 inside ``radius``, 0 beyond ``2 radius``."""
    return grid.field([chi(x) for x in np.asarray(grid.r) / radius])


def virial_V(s: PhaseState, w: RadialField) -> float:
    """Localized virial ``<w u_t | 2 r u_r + d u>``."""
    g = s.grid
    ru = g.euler_matrix @ s.u.values
    return float(np.dot(g.weights, w.values * s.udot.values * (2.0 * ru + g.d * s.u.values)))


def equipartition_Y(s: PhaseState, w: RadialField) -> float:
    """``<w u_t | u>``."""
    return float(np.dot(s.grid.weights, w.values * s.udot.values * s.u.values))


def identity_rates(s: PhaseState, w: RadialField) -> tuple[float, float]:
    """Exact time derivatives of ``V`` and ``Y`` along the semi-discrete flow.

    ``u_tt`` is the grid force; the boundary damping acts on the last node
    only, where the cutoff ``w`` must vanish.
    """
    g = s.grid
    if w.values[-1] != 0.0:
        raise ValueError("cutoff must vanish at R_max")
    u, ud = s.u.values, s.udot.values
    utt = _stepper(g).force(np.array(u))
    E = g.euler_matrix
    wV = g.weights * w.values
    Vd = np.dot(wV, utt * (2.0 * (E @ u) + g.d * u) + ud * (2.0 * (E @ ud) + g.d * ud))
    Yd = np.dot(wV, utt * u + ud * ud)
    return float(Vd), float(Yd)


# --- configuration and records -------------------------------------------------


@dataclass(frozen=True)
class EvolveConfig:
    """Time-stepping and detector settings.

    ``dt = cfl * h``.  ``blowup_threshold`` defaults to ``50 ||grad W||^2``
    and ``weight_radius`` (inner radius of the virial cutoff) to
    ``R_max / 4``.
    """

    T: float = 20.0
    cfl: float = 0.5
    record_every: int = 20
    blowup_threshold: float | None = None
    blowup_scale_factor: float = 4.0
    scatter_window: float = 5.0
    scatter_fraction: float = 0.99
    weight_radius: float | None = None
    diagnostics: bool = True

    def __post_init__(self):
        if not (0 < self.cfl <= 0.9):
            raise ValueError("cfl must lie in (0, 0.9]")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError("record_every must be a positive integer")
        if not (0 < self.scatter_fraction <= 1) or not self.scatter_window > 0:
            raise ValueError("invalid scatter detector settings")

    def dt(self, grid: Grid) -> float:
        return self.cfl * grid.h

    def resolved(self, grid: Grid, family: GroundStateFamily) -> dict:
        d = asdict(self)
        d["dt"] = self.dt(grid)
        d["blowup_threshold"] = self.threshold(family)
        d["weight_radius"] = self.radius(grid)
        return d

    def threshold(self, family: GroundStateFamily) -> float:
        return 50.0 * family.grad_sq if self.blowup_threshold is None else self.blowup_threshold

    def radius(self, grid: Grid) -> float:
        return grid.R_max / 4 if self.weight_radius is None else self.weight_radius


@dataclass
class TrajectoryRecord:
    """Diagnostic rows of one run and the detected outcome."""

    rows: list[dict] = field(default_factory=list)
    outcome: str = "Undetermined"
    outcome_time: float | None = None
    cause: str = ""
    config: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    final_state: PhaseState | None = field(default=None, repr=False)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    def summary(self) -> dict:
        return {
            "outcome": self.outcome,
            "outcome_time": self.outcome_time,
            "cause": self.cause,
            "n_rows": len(self.rows),
        }


def diagnostics_row(
    s: PhaseState,
    family: GroundStateFamily,
    pair: Eigenpair,
    params: DistanceParams,
    w: RadialField,
) -> dict:
    """One row of trajectory diagnostics; modulation failures are marked."""
    g = s.grid
    rep = functional_report(s)
    gsq = rep.H * g.d
    kin = inner(s.udot, s.udot)
    row = {
        "t": s.t,
        "E": rep.E,
        "K": rep.K,
        "grad_norm": math.sqrt(max(gsq, 0.0)),
        "udot_norm": math.sqrt(max(kin, 0.0)),
        "crit_norm": crit_integral(s.u) ** (1.0 / g.p),
        "d_S": math.nan,
        "lam": math.nan,
        "mu_S": math.nan,
        "Sigma": 0,
        "sigma_clause": "",
        "sigma_consistent": "",
        "E_ext_w": exterior_energy(s, min(w_radius(w), g.R_max)),
        "E_ext_half": exterior_energy(s, min(0.5 * s.t, g.R_max)),
        "V": virial_V(s, w),
        "Y": equipartition_Y(s, w),
        "V_dot": math.nan,
        "Y_dot": math.nan,
        "status": "ok",
    }
    row["V_dot"], row["Y_dot"] = identity_rates(s, w)
    try:
        dr = distance_report(s, params, family, pair)
    except (DistanceUndefined, ModulationUndefined):
        row["status"] = "modulation undefined"
        return row
    row["d_S"] = dr.d_S
    if dr.decomposition is not None:
        row["lam"] = dr.decomposition.lam
        row["mu_S"] = dr.decomposition.mu
    try:
        sg = sign_Sigma(s, params, family, pair, report=dr)
        row["Sigma"] = sg.value
        row["sigma_clause"] = sg.clause
        row["sigma_consistent"] = "" if sg.consistent is None else int(sg.consistent)
    except SigmaUndefined:
        row["status"] = "sigma undefined"
    return row


def w_radius(w: RadialField) -> float:
    """Radius where the cutoff ``w`` starts to drop below one."""
    r = np.asarray(w.grid.r)
    inside = np.nonzero(w.values < 1.0)[0]
    return float(r[inside[0]]) if len(inside) else float(r[-1])


def detect_blowup(rows: list[dict], threshold: float, grid: Grid, scale_factor: float = 4.0) -> bool:
    """Energy-norm growth past ``threshold`` with the scale unresolved.

    Fires on the last row when ``||grad u||^2 + ||u_t||^2 > threshold`` and
    either the modulation scale is undefined or the length scale ``1/lam``
    has dropped below ``scale_factor * h``.
    """
    if not rows:
        return False
    r = rows[-1]
    big = r["grad_norm"] ** 2 + r["udot_norm"] ** 2 > threshold
    lam = r["lam"]
    unresolved = not np.isfinite(lam) or 1.0 / lam < scale_factor * grid.h
    return bool(big and unresolved)


def detect_scatter(rows: list[dict], window: float, fraction: float = 0.99) -> bool:
    """Radiation proxy over the trailing ``window`` of recorded rows.

    Requires in every row of the window that the free energy outside
    ``r = t/2`` is at least ``fraction`` of the total free energy and that
    ``K >= 0``, and that ``||u||_{2*}`` does not increase across the window.
    """
    if not rows or rows[-1]["t"] - rows[0]["t"] < window:
        return False
    t_end = rows[-1]["t"]
    tail = [r for r in rows if r["t"] >= t_end - window]
    if len(tail) < 2:
        return False
    for r in tail:
        free = 0.5 * (r["grad_norm"] ** 2 + r["udot_norm"] ** 2)
        if r["E_ext_half"] < fraction * free or r["K"] < 0:
            return False
    c = np.array([r["crit_norm"] for r in tail])
    return bool(np.all(np.diff(c) <= 0.0))


def evolve(
    s: PhaseState,
    cfg: EvolveConfig,
    family: GroundStateFamily,
    pair: Eigenpair,
    params: DistanceParams,
) -> TrajectoryRecord:
    """Integrate until ``T`` or until a detector fires."""
    g = s.grid
    st = _stepper(g)
    dt = cfg.dt(g)
    if cfg.cfl > st.cfl_limit:
        raise CFLError(f"cfl {cfg.cfl} exceeds the stability limit {st.cfl_limit:.3f} of this grid")
    if not 0 < 2 * cfg.radius(g) < g.R_max:
        raise ValueError("weight_radius must lie in (0, R_max/2)")
    w = cutoff_weight(g, cfg.radius(g))
    thr = cfg.threshold(family)
    rec = TrajectoryRecord(config=cfg.resolved(g, family), params=params.to_dict(),
                           grid=g.descriptor())
    u = np.array(s.u.values)
    ud = np.array(s.udot.values)
    F = st.force(u)
    n_total = int(round(cfg.T / dt))
    n = 0
    t0 = s.t

    def state() -> PhaseState:
        return PhaseState(RadialField(g, u), RadialField(g, ud), t0 + n * dt)

    rec.rows.append(diagnostics_row(state(), family, pair, params, w))
    while n < n_total:
        m = min(cfg.record_every, n_total - n)
        try:
            F = _kdk(st, u, ud, F, dt, m, t0 + n * dt, n)
        except NumericalBlowup as exc:
            rec.outcome, rec.outcome_time, rec.cause = "BlowsUpForward", exc.t, "nonfinite"
            return rec
        n += m
        cur = state()
        # near blow-up the diagnostics may overflow; the detectors handle inf
        with np.errstate(over="ignore", invalid="ignore"):
            rec.rows.append(diagnostics_row(cur, family, pair, params, w))
        if detect_blowup(rec.rows, thr, g, cfg.blowup_scale_factor):
            rec.outcome, rec.outcome_time, rec.cause = "BlowsUpForward", cur.t, "norm-threshold"
            rec.final_state = cur
            return rec
        if detect_scatter(rec.rows, cfg.scatter_window, cfg.scatter_fraction):
            rec.outcome, rec.outcome_time, rec.cause = "ScattersForward", cur.t, "exterior-energy"
            rec.final_state = cur
            return rec
    rec.final_state = state()
    tail = [r for r in rec.rows if r["t"] >= rec.rows[-1]["t"] - cfg.scatter_window]
    dS = np.array([r["d_S"] for r in tail])
    if np.all(np.isfinite(dS)) and np.all(dS <= params.delta_E):
        rec.outcome, rec.cause = "TrappedNearS", "horizon"
    else:
        rec.outcome, rec.cause = "Undetermined", "horizon"
    rec.outcome_time = rec.rows[-1]["t"]
    return rec
