"""Linearized operator around the ground state and its unstable eigenpair.

The discrete operator is ``L = V^{-1} S - (2*-1) W^{2*-2}``, with ``S`` the
finite-volume stiffness (harmonic tail included) and ``V`` the cell
volumes.  In the variable ``sqrt(V) f`` it is a symmetric tridiagonal
matrix, which gives Sturm inertia counts and O(N) shifted solves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solveh_banded

from .ground_state import GroundStateFamily, W_lambda
from .radial import (
    Grid,
    RadialField,
    apply_Lambda_star,
    grad_inner,
    inner,
    norm_L2,
    stiffness_apply,
)


class EigenSolverError(RuntimeError):
    """Shift-invert iteration failed; carries the last Rayleigh quotient."""

    def __init__(self, message: str, rayleigh: float | None = None):
        super().__init__(message)
        self.rayleigh = rayleigh


def potential(family: GroundStateFamily | None, lam: float = 1.0) -> np.ndarray | float:
    """``(2*-1) W_lam^{2*-2}`` at the nodes; zero when ``family`` is None."""
    if family is None:
        return 0.0
    p = family.grid.p
    return (p - 1) * W_lambda(family, lam).values ** (p - 2)


def _tail_factor(g: Grid) -> np.ndarray:
    # potential integrals see the harmonic tail through the last weight
    return g.nl_weights / g.weights


def linearized_apply(
    f: RadialField, family: GroundStateFamily | None = None, lam: float = 1.0
) -> RadialField:
    """Discrete ``L_lam f = -Delta f - (2*-1) W_lam^{2*-2} f``.

    With ``family=None`` the potential is switched off and this is the
    discrete ``-Delta`` of the energy form.
    """
    g = f.grid
    q = potential(family, lam) * _tail_factor(g)
    return RadialField(g, stiffness_apply(f) / g.weights - q * f.values)


def quadratic_form(
    f: RadialField, family: GroundStateFamily | None = None, lam: float = 1.0
) -> float:
    """``<L_lam f|f>``, consistent with ``linearized_apply``."""
    return grad_inner(f, f) - float(
        np.dot(f.grid.nl_weights, potential(family, lam) * f.values**2)
    )


def _symmetric_bands(family: GroundStateFamily) -> tuple[np.ndarray, np.ndarray]:
    g = family.grid
    diag, off = g.stiffness_bands
    V = g.weights
    D = diag / V - potential(family) * _tail_factor(g)
    E = off / np.sqrt(V[:-1] * V[1:])
    return D, E


def count_below(D: np.ndarray, E: np.ndarray, sigma: float) -> int:
    """Number of eigenvalues below ``sigma`` of the symmetric tridiagonal
    matrix with diagonal ``D`` and off-diagonal ``E`` (Sylvester inertia of
    the LDL^T factorization of ``T - sigma``)."""
    count = 0
    piv = D[0] - sigma
    tiny = np.finfo(float).tiny
    for i in range(len(D)):
        if i > 0:
            piv = (D[i] - sigma) - E[i - 1] ** 2 / piv
        if piv == 0.0:
            piv = -tiny
        if piv < 0:
            count += 1
    return count


def count_negative(family: GroundStateFamily, zero_tol: float = 1e-4) -> int:
    """Number of eigenvalues of the discrete L below ``-zero_tol``.

    The continuum operator has the zero mode Lambda W (an eigenfunction for
    d=5, a threshold resonance for d=3).  Its discrete counterpart sits at
    ``O(h^2)`` on either side of zero, so "negative" is counted against a
    small threshold; ``zero_mode_eigenvalue`` reports where it landed.
    """
    D, E = _symmetric_bands(family)
    return count_below(D, E, -zero_tol)


def lowest_eigenvalues(family: GroundStateFamily, n: int = 2) -> np.ndarray:
    """The ``n`` lowest eigenvalues of the discrete L."""
    from scipy.linalg import eigh_tridiagonal

    D, E = _symmetric_bands(family)
    return eigh_tridiagonal(D, E, eigvals_only=True, select="i", select_range=(0, n - 1))


def zero_mode_eigenvalue(family: GroundStateFamily) -> float:
    """Second-lowest eigenvalue of the discrete L (the scaling mode)."""
    return float(lowest_eigenvalues(family, 2)[1])


@dataclass(frozen=True, eq=False)
class Eigenpair:
    """Unstable eigenpair ``L rho = -k^2 rho`` with ``||rho||_2 = 1``, ``rho > 0``."""

    k: float
    rho: RadialField = field(repr=False)
    residual: float
    iterations: int = 0

    @property
    def grid(self) -> Grid:
        return self.rho.grid

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(self.grid.r, self.rho.values, bc_type=((1, 0.0), "not-a-knot"))

    def rho_lambda(self, lam: float) -> RadialField:
        """``T_lam rho = lam^{d/2-1} rho(lam r)``, C^2 in ``lam``, zero outside."""
        g = self.grid
        if lam == 1.0:
            return self.rho
        x = lam * np.asarray(g.r)
        out = np.zeros(g.N)
        m = x <= g.R_max
        out[m] = self._spline(x[m])
        return RadialField(g, lam ** (g.d / 2 - 1) * out)

    def dual_lambda(self, lam: float) -> RadialField:
        """``lam^2 T_lam rho``; pairing against it extracts the rho_lam coordinate."""
        return self.rho_lambda(lam) * lam**2

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "k_squared": self.k**2,
            "residual": self.residual,
            "iterations": self.iterations,
            "grid": self.grid.descriptor(),
            "rho": [float(x) for x in self.rho.values],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "Eigenpair":
        gd = data["grid"]
        grid = Grid(gd["d"], gd["N"], gd["R_max"])
        return cls(float(data["k"]), RadialField(grid, data["rho"]),
                   float(data["residual"]), int(data.get("iterations", 0)))

    @classmethod
    def from_json(cls, text: str) -> "Eigenpair":
        return cls.from_dict(json.loads(text))


def ground_eigenpair(
    family: GroundStateFamily, rtol: float = 1e-10, max_iter: int = 50
) -> Eigenpair:
    """Lowest eigenpair of the discrete L by shift-invert iteration.

    The shift is placed just below the lowest eigenvalue by bisection on
    Sturm counts, so ``L - shift`` is positive definite and each step is a
    banded Cholesky solve.  Iteration stops once successive Rayleigh
    quotients agree to ``rtol`` relative.

    Raises
    ------
    EigenSolverError
        If the lowest eigenvalue is not negative, or the iteration does not
        converge within ``max_iter`` steps.
    """
    g = family.grid
    D, E = _symmetric_bands(family)
    if count_below(D, E, 0.0) == 0:
        raise EigenSolverError("lowest eigenvalue of L is not negative", None)
    absE = np.abs(E)
    gersh = D.copy()
    gersh[:-1] -= absE
    gersh[1:] -= absE
    lo, hi = float(gersh.min()) - 1.0, 0.0
    while hi - lo > 1e-9 * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if count_below(D, E, mid) == 0:
            lo = mid
        else:
            hi = mid
    shift = lo - 1e-9 * max(1.0, abs(lo))

    ab = np.zeros((2, g.N))
    ab[0, 1:] = E
    ab[1] = D - shift
    sqV = np.sqrt(g.weights)
    x = sqV * W_lambda(family, 1.0).values ** (g.p - 1)
    x /= np.linalg.norm(x)
    theta_old = np.inf
    theta = None
    for it in range(1, max_iter + 1):
        y = solveh_banded(ab, x, lower=False)
        x = y / np.linalg.norm(y)
        Tx = D * x
        Tx[:-1] += E * x[1:]
        Tx[1:] += E * x[:-1]
        theta = float(x @ Tx)
        if abs(theta - theta_old) < rtol * abs(theta):
            break
        theta_old = theta
    else:
        raise EigenSolverError(
            f"shift-invert did not converge in {max_iter} iterations", theta
        )
    if theta >= 0:
        raise EigenSolverError("lowest eigenvalue of L is not negative", theta)
    rho = x / sqV
    if rho[np.argmax(np.abs(rho))] < 0:
        rho = -rho
    rho_f = RadialField(g, rho)
    rho_f = rho_f / norm_L2(rho_f)
    k = float(np.sqrt(-theta))
    res = norm_L2(linearized_apply(rho_f, family) + rho_f * k**2) / k**2
    return Eigenpair(k, rho_f, res, it)


@dataclass(frozen=True)
class CoercivityReport:
    quad_form: float
    equiv_ratio: float
    grad_sq: float
    pairing: float
    excluded: bool


def coercivity_check(
    gamma: RadialField, family: GroundStateFamily, pair: Eigenpair
) -> CoercivityReport:
    """Quadratic form and norm-equivalence ratio on the complement of rho.

    ``gamma`` is first projected orthogonally to ``rho``.  Returns
    ``<L g|g>`` and ``||grad g||^2 / (<g|Lambda* rho>^2 + <L g|g>)``.  When
    that denominator vanishes numerically the ratio is reported as ``inf``
    and the case is flagged ``excluded``.

    Raises
    ------
    ValueError
        If the projected field is zero.
    """
    rho = pair.rho
    g = gamma - rho * inner(gamma, rho)
    scale = max(np.max(np.abs(gamma.values)), np.finfo(float).tiny)
    if np.max(np.abs(g.values)) <= 1e-12 * scale or not np.any(g.values):
        raise ValueError("field vanishes after projecting off rho")
    q = quadratic_form(g, family)
    gs = grad_inner(g, g)
    pr = inner(g, apply_Lambda_star(rho))
    den = pr**2 + q
    excluded = den <= 1e-12 * gs
    ratio = np.inf if excluded else gs / den
    return CoercivityReport(q, float(ratio), gs, pr, bool(excluded))
