"""Shared generators for randomized test ensembles."""

from __future__ import annotations

import numpy as np

from critwave.radial import Grid, RadialField, norm_grad


def smooth_field(grid: Grid, rng: np.random.Generator, n_bumps: int = 3,
                 r_max: float = 6.0) -> RadialField:
    """Sum of Gaussian bumps centred in ``[0, r_max]``, random signs and widths."""
    r = np.asarray(grid.r)
    out = np.zeros(grid.N)
    for _ in range(n_bumps):
        c = rng.uniform(0.0, r_max)
        w = rng.uniform(0.4, 2.0)
        out += rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 1.0) * np.exp(-(((r - c) / w) ** 2))
    return RadialField(grid, out)


def compact_field(grid: Grid, rng: np.random.Generator, support: float) -> RadialField:
    """Smooth field vanishing identically for ``r >= support``."""
    r = np.asarray(grid.r)
    x = np.clip(r / support, 0.0, 1.0)
    bump = np.where(x < 1.0, np.exp(-1.0 / np.maximum(1.0 - x**2, 1e-300)), 0.0)
    poly = sum(rng.normal() * x ** (2 * j) for j in range(4))
    return RadialField(grid, bump * poly)


def with_grad_norm(f: RadialField, target: float) -> RadialField:
    return f * (target / norm_grad(f))


# --- acceptance reporting ------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


class Checks:
    """Sub-checks of one acceptance criterion, rendered as a single line."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.items: list[tuple[str, bool]] = []

    def add(self, label: str, ok, note: str = "") -> bool:
        ok = bool(ok)
        self.items.append((f"{label}{' ' + note if note else ''}", ok))
        return ok

    def bound(self, label: str, value: float, limit: float, note: str = "") -> bool:
        return self.add(f"{label}={value:.3g} (< {limit:.3g})", value < limit, note)

    @property
    def passed(self) -> bool:
        return bool(self.items) and all(ok for _, ok in self.items)

    def line(self) -> str:
        parts = "; ".join(f"{txt} {'ok' if ok else 'FAILED'}" for txt, ok in self.items)
        return f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'} [{self.title}] {parts}"

    def finish(self) -> None:
        ACCEPTANCE[self.number] = (self.passed, self.line())
        print(self.line())
        failed = [txt for txt, ok in self.items if not ok]
        assert not failed, "; ".join(failed)
