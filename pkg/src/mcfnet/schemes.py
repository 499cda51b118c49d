"""Splitting schemes for the Allen-Cahn equation and the Cahn-Hilliard energy.

Both steps have the form ``K * rho(u)``: a pointwise reaction followed by an
exact Fourier multiplier.  They are the baselines the trained networks are
compared with.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, apply_fourier_multiplier, semi_implicit_symbol, spectral_gradient, stabilized_symbol
from .phasefield import W, dW


@dataclass(frozen=True)
class SchemeConfig:
    grid: Grid
    alpha: float = 2.0


def lie_semi_implicit_step(u: np.ndarray, cfg: SchemeConfig) -> np.ndarray:
    g = cfg.grid
    reacted = u - (g.delta_t / g.epsilon**2) * dW(u)
    return apply_fourier_multiplier(reacted, semi_implicit_symbol(g), g)


def eyre_step(u: np.ndarray, cfg: SchemeConfig) -> np.ndarray:
    """Convex-concave step; energy decreasing for ``alpha > sup |W''| = 1``."""
    if not cfg.alpha > 1:
        raise ValueError(f"Eyre stabilization requires alpha > 1, got {cfg.alpha}")
    g = cfg.grid
    reacted = u - (g.delta_t / g.epsilon**2) * (dW(u) - cfg.alpha * u)
    return apply_fourier_multiplier(reacted, stabilized_symbol(g, cfg.alpha), g)


def cahn_hilliard_energy(u: np.ndarray, grid: Grid) -> float:
    """``dx^d * sum(eps |grad u|^2 / 2 + W(u) / eps)`` with a spectral gradient."""
    grad_sq = sum(gi**2 for gi in spectral_gradient(u, grid))
    density = grid.epsilon * grad_sq / 2.0 + W(u) / grid.epsilon
    return float(grid.cell_volume * np.sum(density))


def stepper(name: str, grid: Grid, alpha: float = 2.0):
    """Named baseline stepper as a ``Field -> Field`` callable."""
    cfg = SchemeConfig(grid, alpha)
    if name == "lie":
        return lambda u: lie_semi_implicit_step(u, cfg)
    if name == "eyre":
        eyre_step(np.zeros(grid.shape), cfg)  # validates alpha up front
        return lambda u: eyre_step(u, cfg)
    raise ValueError(f"unknown scheme {name!r}; expected 'lie' or 'eyre'")
