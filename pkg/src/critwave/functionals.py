"""Energy, static energy, virial and related functionals.

All functionals act on raw ``(u, u_t)`` samples.  Gradient terms use the
finite-volume Dirichlet form and ``|u|^{2*}`` terms use the tail-augmented
weights, so every quantity here is the exact value of one discrete energy
and its derivatives (the discrete L of ``spectral`` is its Hessian).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ground_state import GroundStateFamily, J_lambda, W_lambda
from .radial import PhaseState, RadialField, crit_integral, grad_inner, inner
from .spectral import Eigenpair, quadratic_form


@dataclass(frozen=True)
class FunctionalReport:
    """``E`` energy, ``J`` static energy, ``K`` virial, ``H = ||grad u||^2/d``."""

    E: float
    J: float
    K: float
    H: float


def static_energy(f: RadialField) -> float:
    """``J(f) = ||grad f||^2/2 - ||f||_{2*}^{2*}/2*``."""
    return 0.5 * grad_inner(f, f) - crit_integral(f) / f.grid.p


def virial(f: RadialField) -> float:
    """``K(f) = ||grad f||^2 - ||f||_{2*}^{2*}``."""
    return grad_inner(f, f) - crit_integral(f)


def h_functional(f: RadialField) -> float:
    """``H(f) = ||grad f||^2/d``."""
    return grad_inner(f, f) / f.d


def kinetic(s: PhaseState) -> float:
    return 0.5 * inner(s.udot, s.udot)


def energy(s: PhaseState) -> float:
    """Conserved energy ``||u_t||^2/2 + J(u)``."""
    return kinetic(s) + static_energy(s.u)


def report(s: PhaseState) -> FunctionalReport:
    g2 = grad_inner(s.u, s.u)
    c = crit_integral(s.u)
    p, d = s.grid.p, s.grid.d
    J = 0.5 * g2 - c / p
    return FunctionalReport(E=kinetic(s) + J, J=J, K=g2 - c, H=g2 / d)


def virial_root_scale(f: RadialField) -> float:
    """The unique ``c > 0`` with ``K(c f) = 0``.

    ``c^{2*-2} = ||grad f||^2 / ||f||_{2*}^{2*}``.
    """
    g2 = grad_inner(f, f)
    cp = crit_integral(f)
    if g2 <= 0 or cp <= 0:
        raise ValueError("field must be nonzero")
    return float((g2 / cp) ** (1.0 / (f.grid.p - 2)))


def sobolev_gap(f: RadialField, family: GroundStateFamily) -> float:
    """``||grad f||^2 + (d/2-1) K(f) - ||grad W||^2``.

    Nonnegative up to ``O(K^2/||grad f||^2)``; zero on the ground-state family.
    """
    g2 = grad_inner(f, f)
    if g2 <= 0:
        raise ValueError("field must be nonzero")
    return g2 + (f.d / 2 - 1) * virial(f) - family.grad_sq


def mu_lambda(f: RadialField, lam: float, family: GroundStateFamily, pair: Eigenpair) -> float:
    """Unstable-mode coordinate ``<f - W_lam | lam^2 rho_lam>``."""
    return inner(f - W_lambda(family, lam), pair.dual_lambda(lam))


def first_variation(v: RadialField, lam: float, family: GroundStateFamily) -> float:
    """``J'(W_lam) v``: the discrete stationarity defect of ``W_lam`` along ``v``.

    Zero for the continuum ground state; ``O(h^2)`` on the grid.
    """
    W = W_lambda(family, lam)
    g = v.grid
    return grad_inner(W, v) - float(np.dot(g.nl_weights, W.values ** (g.p - 1) * v.values))


def E_lambda(s: PhaseState, lam: float, family: GroundStateFamily, pair: Eigenpair) -> float:
    """``E(u) - J(W_lam) + k^2 mu_lam(u)^2``.

    The reference energy is ``J(W_lam)`` evaluated on the grid, which equals
    ``J(W)`` in the continuum and removes the ``O(h^2)`` scale dependence of
    the discrete value, so that ``E_lam(W_lam, 0) = 0`` exactly.
    """
    mu = mu_lambda(s.u, lam, family, pair)
    return energy(s) - J_lambda(family, lam) + pair.k**2 * mu**2


def cubic_remainder(v: RadialField, lam: float, family: GroundStateFamily) -> float:
    """Superquadratic part ``C_lam(v)`` of the potential energy around ``W_lam``."""
    g = v.grid
    p = g.p
    W = W_lambda(family, lam).values
    x = v.values
    dens = (
        (np.abs(x + W) ** p - W**p) / p
        - W ** (p - 1) * x
        - 0.5 * (p - 1) * W ** (p - 2) * x**2
    )
    return float(np.dot(g.nl_weights, dens))


@dataclass(frozen=True)
class ExpansionTerms:
    """Both sides of the energy expansion around ``W_lam``.

    ``lhs = E(u) - J(W)``;
    ``rhs = (||u_t||^2 - k^2 mu^2 + <L_lam g|g>)/2 - C_lam(v) + defect``,
    where ``defect`` collects the grid terms that vanish in the continuum:
    the first variation ``J'(W_lam) v``, the offset ``J(W_lam) - J(W)`` and
    the eigen-defect of the resampled ``rho_lam`` (zero at ``lam = 1``).
    """

    lhs: float
    rhs: float
    mu: float
    quad_gamma: float
    cubic: float
    defect: float
    scale: float

    @property
    def rel_error(self) -> float:
        return abs(self.lhs - self.rhs) / self.scale


def energy_expansion(
    s: PhaseState, lam: float, family: GroundStateFamily, pair: Eigenpair
) -> ExpansionTerms:
    """Assemble the energy expansion both ways.

    ``scale`` is ``(||u_t||^2 + ||grad v||^2)/2``, the size of the quadratic
    terms, used to report relative agreement.
    """
    Wl = W_lambda(family, lam)
    v = s.u - Wl
    rho_l = pair.rho_lambda(lam)
    mu = inner(v, pair.dual_lambda(lam))
    gamma = v - rho_l * mu
    kin = inner(s.udot, s.udot)
    qg = quadratic_form(gamma, family, lam)
    cross = 2 * mu * _bilinear_L(rho_l, gamma, family, lam) + mu**2 * (
        quadratic_form(rho_l, family, lam) + pair.k**2
    )
    C = cubic_remainder(v, lam, family)
    defect = first_variation(v, lam, family) + static_energy(Wl) - family.J + 0.5 * cross
    rhs = 0.5 * (kin - pair.k**2 * mu**2 + qg) - C + defect
    lhs = energy(s) - family.J
    scale = 0.5 * (kin + grad_inner(v, v))
    return ExpansionTerms(lhs, rhs, mu, qg, C, defect, max(scale, np.finfo(float).tiny))


def _bilinear_L(f: RadialField, g: RadialField, family: GroundStateFamily, lam: float) -> float:
    from .spectral import potential

    q = potential(family, lam)
    return grad_inner(f, g) - float(np.dot(f.grid.nl_weights, q * f.values * g.values))
