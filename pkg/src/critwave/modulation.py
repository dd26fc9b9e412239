"""Modulation around the two-signed ground-state family.

Given a state close to ``+S = {(W_lam, 0)}`` or ``-S`` this module finds the
scale ``lam(u)`` from the orthogonality condition, splits
``u = W_lam + mu rho_lam + gamma`` and evaluates the nonlinear distance
``d_S`` and the sign functional ``Sigma``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .functionals import E_lambda, energy, virial
from .ground_state import GroundStateFamily, J_lambda, W_lambda
from .radial import (
    PhaseState,
    RadialField,
    apply_Lambda_star,
    grad_inner,
    inner,
    norm_grad,
)
from .spectral import Eigenpair

LOG2_NU_RANGE = (-10.0, 10.0)


class ModulationUndefined(RuntimeError):
    """No root of the orthogonality condition near the state."""


class DistanceUndefined(RuntimeError):
    """A cutoff weight is nonzero but the modulation there failed."""


class SigmaUndefined(ValueError):
    """State outside the region where the sign functional is defined."""


class PreconditionError(ValueError):
    pass


# --- cutoff -----------------------------------------------------------------


def _bump(t: float) -> float:
    if t <= 0.0 or t >= 1.0:
        return 0.0
    return math.exp(-1.0 / (t * (1.0 - t)))


@lru_cache(maxsize=1)
def _bump_mass() -> float:
    return quad(_bump, 0.0, 1.0, epsabs=0, epsrel=1e-13)[0]


def chi(x: float) -> float:
    """Smooth even cutoff: 1 on ``|x| <= 1``, 0 on ``|x| >= 2``.

    Built as one minus the normalized running integral of a C^infinity bump
    supported on ``[1, 2]``.
    """
    a = abs(float(x))
    if a <= 1.0:
        return 1.0
    if a >= 2.0:
        return 0.0
    part = quad(_bump, 0.0, a - 1.0, epsabs=0, epsrel=1e-13)[0]
    return float(min(1.0, max(0.0, 1.0 - part / _bump_mass())))


# --- parameters -------------------------------------------------------------


@dataclass(frozen=True)
class DistanceParams:
    """Cutoff scales for ``d_S`` and the small-parameter ladder.

    Defaults follow ``delta_E = 0.05 min(1, ||grad W||)``,
    ``C_E = 20 (1 + ||grad W||)`` and a factor-ten ladder
    ``eps* < delta* < delta_M < delta_H = 0.2 delta_E``.  ``eps_V`` is a
    proxy for the energy gate of the variational gap estimate, which has no closed
    form; by default it equals ``eps*`` so the gate coincides with the
    energy condition defining the region where ``Sigma`` lives.
    """

    delta_E: float
    C_E: float
    delta_H: float
    delta_M: float
    delta_star: float
    eps_star: float
    eps_V: float
    chi: str = "smooth-bump[1,2]"

    @classmethod
    def defaults(cls, family: GroundStateFamily, **overrides) -> "DistanceParams":
        gw = family.grad_norm
        dE = overrides.pop("delta_E", 0.05 * min(1.0, gw))
        CE = overrides.pop("C_E", 20.0 * (1.0 + gw))
        dH = overrides.pop("delta_H", 0.2 * dE)
        dM = overrides.pop("delta_M", 0.1 * dH)
        ds = overrides.pop("delta_star", 0.1 * dM)
        es = overrides.pop("eps_star", 0.1 * ds)
        eV = overrides.pop("eps_V", es)
        if overrides:
            raise TypeError(f"unknown parameters {sorted(overrides)}")
        p = cls(dE, CE, dH, dM, ds, es, eV)
        p.validate(family)
        return p

    def validate(self, family: GroundStateFamily | None = None) -> None:
        vals = [self.eps_star, self.delta_star, self.delta_M, self.delta_H, self.delta_E]
        if any(not (np.isfinite(v) and v > 0) for v in vals + [self.C_E, self.eps_V]):
            raise ValueError("distance parameters must be positive and finite")
        if any(a >= b for a, b in zip(vals, vals[1:])):
            raise ValueError("ladder must satisfy eps* < delta* < delta_M < delta_H < delta_E")
        if family is not None:
            gw = family.grad_norm
            if not self.delta_E < min(1.0, gw):
                raise ValueError("delta_E must be below min(1, ||grad W||)")
            if not self.C_E > 1.0 + gw:
                raise ValueError("C_E must exceed 1 + ||grad W||")

    def to_dict(self) -> dict:
        return asdict(self)


# --- linear distance -------------------------------------------------------


@dataclass(frozen=True)
class D0Result:
    """Distance to one side of the family, minimized over scales."""

    value: float
    nu: float
    side: int
    out_of_range: bool = False


def _golden(fun, a: float, b: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def d0_side(s: PhaseState, side: int, family: GroundStateFamily, scan_step: float = 0.25) -> D0Result:
    """``inf_nu ||(side*u - W_nu, u_t)||`` in the energy norm.

    A coarse scan over ``log2 nu`` in ``[-10, 10]`` brackets the minimum,
    which is then refined by golden section in ``log nu`` to width 1e-6.
    A minimum on the scan boundary is flagged ``out_of_range``.
    """
    u = s.u if side > 0 else -s.u
    uu = grad_inner(u, u)
    kin = inner(s.udot, s.udot)
    gr = s.grid

    def g(x: float) -> float:
        Wn = W_lambda(family, math.exp(x))
        return uu - 2.0 * grad_inner(u, Wn) + grad_inner(Wn, Wn) + kin

    lo, hi = LOG2_NU_RANGE
    xs = np.log(2.0) * np.arange(lo, hi + 0.5 * scan_step, scan_step)
    vals = np.array([g(x) for x in xs])
    i = int(np.argmin(vals))
    if i == 0 or i == len(xs) - 1:
        return D0Result(float(math.sqrt(max(vals[i], 0.0))), float(math.exp(xs[i])), side, True)
    x = _golden(g, xs[i - 1], xs[i + 1], 1e-6)
    val = min(g(x), vals[i])
    return D0Result(float(math.sqrt(max(val, 0.0))), float(math.exp(x)), side, False)


def d0(s: PhaseState, family: GroundStateFamily) -> D0Result:
    """Linear distance to ``+S`` or ``-S``, whichever is closer (ties to ``+S``)."""
    a = d0_side(s, +1, family)
    b = d0_side(s, -1, family)
    return a if a.value <= b.value else b


# --- orthogonality and decomposition -----------------------------------------


def orthogonality(u: RadialField, lam: float, family: GroundStateFamily, pair: Eigenpair) -> float:
    """``F(lam) = <u - W_lam | Lambda* rho_lam>``."""
    return inner(u - W_lambda(family, lam), apply_Lambda_star(pair.rho_lambda(lam)))


def solve_lambda(
    s: PhaseState,
    side: int,
    family: GroundStateFamily,
    pair: Eigenpair,
    nu0: float | None = None,
    guard: float = 0.3,
    xtol: float = 1e-13,
    max_iter: int = 100,
) -> float:
    """Scale ``lam`` solving the orthogonality condition for ``side*u``.

    Safeguarded Newton in ``log lam`` started at the best-fit scale ``nu0``.
    ``F`` increases through the root (nondegeneracy), which orients the
    search for a sign-changing bracket; Newton steps leaving the bracket
    fall back to bisection.

    Raises
    ------
    ModulationUndefined
        If the state is farther than ``guard * ||grad W||`` from the family,
        or no sign change is found in ``[2^-10, 2^10]``.
    """
    if nu0 is None:
        r0 = d0_side(s, side, family)
        if r0.out_of_range:
            raise ModulationUndefined("scale out of range")
        if r0.value > guard * family.grad_norm:
            raise ModulationUndefined("state too far from the ground-state family")
        nu0 = r0.nu
    u = s.u if side > 0 else -s.u
    F = lambda x: orthogonality(u, math.exp(x), family, pair)  # noqa: E731
    xmin, xmax = (np.log(2.0) * b for b in LOG2_NU_RANGE)
    x0 = math.log(nu0)
    f0 = F(x0)
    if f0 == 0.0:
        return nu0
    # bracket: F < 0 below the root, F > 0 above it
    step = 0.02
    a, fa, b, fb = x0, f0, x0, f0
    direction = 1.0 if f0 < 0 else -1.0
    while True:
        xn = x0 + direction * step
        if xn < xmin or xn > xmax:
            raise ModulationUndefined("no sign change of the orthogonality condition")
        fn = F(xn)
        if np.sign(fn) != np.sign(f0):
            if direction > 0:
                a, fa, b, fb = x0, f0, xn, fn
            else:
                a, fa, b, fb = xn, fn, x0, f0
            break
        step *= 1.6
    if not (fa < 0 < fb):
        raise ModulationUndefined("orthogonality condition has the wrong orientation")
    x = a - fa * (b - a) / (fb - fa)
    for _ in range(max_iter):
        fx = F(x)
        if fx == 0.0:
            return math.exp(x)
        if fx < 0:
            a, fa = x, fx
        else:
            b, fb = x, fx
        hstep = 1e-4
        dfx = (F(x + hstep) - F(x - hstep)) / (2 * hstep)
        xn = x - fx / dfx if dfx > 0 else None
        if xn is None or not (a < xn < b):
            xn = 0.5 * (a + b)
        if abs(xn - x) < xtol or b - a < xtol:
            return math.exp(xn)
        x = xn
    raise ModulationUndefined("orthogonality root did not converge")


@dataclass(frozen=True, eq=False)
class Decomposition:
    """``side*u = W_lam + mu rho_lam + gamma`` with ``gamma`` orthogonal to ``rho_lam``."""

    lam: float
    mu: float
    gamma: RadialField = field(repr=False)
    side: int
    E_S: float
    orth_residual: float
    d0: float


def decompose(
    s: PhaseState, family: GroundStateFamily, pair: Eigenpair, side: int | None = None
) -> Decomposition:
    """Modulation decomposition around the closer side (or the given one)."""
    r0 = d0(s, family) if side is None else d0_side(s, side, family)
    if r0.out_of_range:
        raise ModulationUndefined("scale out of range")
    if r0.value > 0.3 * family.grad_norm:
        raise ModulationUndefined("state too far from the ground-state family")
    sd = r0.side
    lam = solve_lambda(s, sd, family, pair, nu0=r0.nu)
    st = s if sd > 0 else -s
    Wl = W_lambda(family, lam)
    v = st.u - Wl
    mu = inner(v, pair.dual_lambda(lam))
    gamma = v - pair.rho_lambda(lam) * mu
    ES = E_lambda(st, lam, family, pair)
    orth = inner(v, apply_Lambda_star(pair.rho_lambda(lam)))
    return Decomposition(lam, mu, gamma, sd, ES, orth, r0.value)


# --- nonlinear distance and sign -----------------------------------------------


@dataclass(frozen=True)
class DistanceReport:
    d_S: float
    d0_plus: float
    d0_minus: float
    chi_plus: float
    chi_minus: float
    decomposition: Decomposition | None


def distance_report(
    s: PhaseState, params: DistanceParams, family: GroundStateFamily, pair: Eigenpair
) -> DistanceReport:
    """Blend of ``E_S^{1/2}`` near the family and ``C_E min d0`` far from it.

    Raises
    ------
    DistanceUndefined
        If a cutoff weight is nonzero but the modulation on that side fails.
    """
    rp = d0_side(s, +1, family)
    rm = d0_side(s, -1, family)
    cp = chi(rp.value / params.delta_E)
    cm = chi(rm.value / params.delta_E)
    near = 0.0
    dec = None
    for c, r, sd in ((cp, rp, +1), (cm, rm, -1)):
        if c > 0.0:
            if r.out_of_range:
                raise DistanceUndefined("scale out of range inside the blend region")
            try:
                lam = solve_lambda(s, sd, family, pair, nu0=r.nu)
            except ModulationUndefined as exc:
                raise DistanceUndefined(str(exc)) from exc
            st = s if sd > 0 else -s
            ES = E_lambda(st, lam, family, pair)
            if sd > 0:
                tp = c * math.sqrt(max(ES, 0.0))
            else:
                tm = c * math.sqrt(max(ES, 0.0))
            if dec is None:
                dec = _finish(st, lam, sd, ES, r.value, family, pair)
    tp = tp if cp > 0.0 else 0.0
    tm = tm if cm > 0.0 else 0.0
    far = (1.0 - (cp + cm)) * params.C_E * min(rp.value, rm.value)
    near = tp + tm
    return DistanceReport(near + far, rp.value, rm.value, cp, cm, dec)


def _finish(st, lam, sd, ES, d0v, family, pair) -> Decomposition:
    Wl = W_lambda(family, lam)
    v = st.u - Wl
    mu = inner(v, pair.dual_lambda(lam))
    gamma = v - pair.rho_lambda(lam) * mu
    orth = inner(v, apply_Lambda_star(pair.rho_lambda(lam)))
    return Decomposition(lam, mu, gamma, sd, ES, orth, d0v)


def distance_dS(
    s: PhaseState, params: DistanceParams, family: GroundStateFamily, pair: Eigenpair
) -> float:
    """Nonlinear distance ``d_S`` to ``S u -S``; continuous and even."""
    return distance_report(s, params, family, pair).d_S


@dataclass(frozen=True)
class SigmaResult:
    """Value of ``Sigma`` and how it was obtained.

    ``clause`` is ``"mu"`` inside ``d_S <= delta_M`` (``-sign mu_S``) and
    ``"K"`` outside (``sign K``, with ``sign 0 = +1``).  In the overlap band
    ``delta* <= d_S <= delta_M`` both are evaluated and ``consistent``
    records whether they agree (``None`` when only one applies).
    """

    value: int
    clause: str
    d_S: float
    mu_S: float | None
    K: float
    consistent: bool | None


def _sgn(x: float) -> int:
    return 1 if x >= 0 else -1


def in_HX(s: PhaseState, d_S: float, params: DistanceParams, family: GroundStateFamily,
          lam: float | None = None) -> bool:
    """Energy conditions ``E <= J(W) + eps*^2`` and ``E < J(W) + d_S^2/2``.

    ``J(W)`` is the grid value ``J(W_lam)`` at the modulation scale when one
    is given.
    """
    E = energy(s)
    J = J_lambda(family, lam)
    return E <= J + params.eps_star**2 and E < J + 0.5 * d_S**2


def sign_Sigma(
    s: PhaseState,
    params: DistanceParams,
    family: GroundStateFamily,
    pair: Eigenpair,
    report: DistanceReport | None = None,
) -> SigmaResult:
    """Sign functional: ``-sign mu_S`` near the family, ``sign K`` away from it.

    Raises
    ------
    SigmaUndefined
        If the state violates the energy conditions.
    """
    rep = report if report is not None else distance_report(s, params, family, pair)
    dS = rep.d_S
    lam = rep.decomposition.lam if rep.decomposition is not None else None
    if not in_HX(s, dS, params, family, lam):
        raise SigmaUndefined("state outside the energy region where Sigma is defined")
    K = virial(s.u)
    mu = rep.decomposition.mu if rep.decomposition is not None else None
    sK = _sgn(K)
    k_gate = energy(s) <= J_lambda(family, lam) + params.eps_V**2 and dS >= params.delta_star
    if dS <= params.delta_M:
        if mu is None:
            raise SigmaUndefined("modulation unavailable inside the tube")
        val = -_sgn(mu)
        consistent = (sK == val) if k_gate else None
        return SigmaResult(val, "mu", dS, mu, K, consistent)
    return SigmaResult(sK, "K", dS, mu, K, None)


def eigendom_check(
    s: PhaseState, params: DistanceParams, family: GroundStateFamily, pair: Eigenpair
) -> float:
    """Ratio ``|mu_S| / d_S`` for states where the unstable mode dominates.

    Raises
    ------
    PreconditionError
        Unless ``E - J(W) <= d_S^2/2`` and ``d_S <= delta_E``.
    """
    rep = distance_report(s, params, family, pair)
    dS = rep.d_S
    lam = rep.decomposition.lam if rep.decomposition is not None else None
    if not (energy(s) - J_lambda(family, lam) <= 0.5 * dS**2 and dS <= params.delta_E):
        raise PreconditionError("unstable mode need not dominate for this state")
    if rep.decomposition is None or dS == 0.0:
        raise PreconditionError("state lies on the ground-state family")
    return abs(rep.decomposition.mu) / dS


def lipschitz_ratio(
    s1: PhaseState, s2: PhaseState, params: DistanceParams, family: GroundStateFamily, pair: Eigenpair
) -> float:
    """``|d_S(s1) - d_S(s2)| / ||s1 - s2||`` in the energy norm."""
    a = distance_dS(s1, params, family, pair)
    b = distance_dS(s2, params, family, pair)
    du = s1.u - s2.u
    dv = s1.udot - s2.udot
    dist = math.sqrt(grad_inner(du, du) + inner(dv, dv))
    return abs(a - b) / dist
