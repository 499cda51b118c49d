"""Periodic Cartesian grids, circular convolution and Fourier multipliers.

Fields are plain float64 arrays of shape ``(n,) * d`` (optionally with extra
leading batch axes); the grid that carries ``delta_x``, ``epsilon`` and
``delta_t`` is passed alongside.

Frequency layout
----------------
Fourier symbols are stored in the native FFT order of ``numpy.fft``: along
each axis, array index ``j`` holds the integer frequency ``k = j`` for
``j < n/2`` and ``k = j - n`` otherwise, so the stored set is exactly
``[-n/2, n/2 - 1]`` with physical frequency ``xi_k = k / L``.  Symbols are
real and even, so only the half spectrum ``[..., : n // 2 + 1]`` is used when
applying them through real transforms.  No other module touches this layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft as sfft


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid of ``n**d`` nodes on ``[0, L]^d``."""

    d: int
    n: int
    L: float = 1.0
    epsilon: Optional[float] = None
    delta_t: Optional[float] = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if int(self.n) != self.n or self.n <= 0:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"box length must be positive, got {self.L}")
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", 2.0 * self.delta_x)
        if self.delta_t is None:
            object.__setattr__(self, "delta_t", self.epsilon**2)
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")

    @property
    def delta_x(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.delta_x**self.d

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.d, 0))

    def coordinates(self) -> list:
        """Node coordinates ``x_k = k * delta_x`` as a list of ``d`` broadcastable arrays."""
        x = np.arange(self.n) * self.delta_x
        return np.meshgrid(*([x] * self.d), indexing="ij", sparse=True)

    def center(self) -> np.ndarray:
        return np.full(self.d, self.L / 2)

    def frequencies(self) -> list:
        """Integer frequencies ``k`` per axis, native FFT order, broadcastable."""
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        return np.meshgrid(*([k] * self.d), indexing="ij", sparse=True)

    def xi_squared(self) -> np.ndarray:
        """``|xi_k|^2 = sum_i (k_i / L)^2`` over the full frequency set."""
        if "xi2" not in self._cache:
            xi2 = np.zeros(self.shape)
            for k in self.frequencies():
                xi2 = xi2 + (k / self.L) ** 2
            self._cache["xi2"] = xi2
        return self._cache["xi2"]

    def check_field(self, u: np.ndarray) -> None:
        if u.shape[-self.d:] != self.shape:
            raise ValueError(f"field shape {u.shape} does not match grid {self.shape}")


def forward(u: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.rfftn(u, axes=grid.axes)


def inverse(u_hat: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.irfftn(u_hat, s=grid.shape, axes=grid.axes)


def half_spectrum(values: np.ndarray, grid: Grid) -> np.ndarray:
    return values[..., : grid.n // 2 + 1]


def apply_fourier_multiplier(u: np.ndarray, symbol: np.ndarray, grid: Grid) -> np.ndarray:
    """Multiply ``u`` by a real even symbol in Fourier space."""
    grid.check_field(u)
    if symbol.shape != grid.shape:
        raise ValueError(f"symbol shape {symbol.shape} does not match grid {grid.shape}")
    return inverse(forward(u, grid) * half_spectrum(symbol, grid), grid)


def semi_implicit_symbol(grid: Grid) -> np.ndarray:
    """Symbol of ``(I - dt * Laplacian)^{-1}``: ``1 / (1 + dt 4 pi^2 |xi|^2)``."""
    return 1.0 / (1.0 + grid.delta_t * 4.0 * np.pi**2 * grid.xi_squared())


def stabilized_symbol(grid: Grid, alpha: float) -> np.ndarray:
    """Symbol of ``(I - dt (Laplacian - alpha / eps^2))^{-1}``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return 1.0 / (1.0 + grid.delta_t * (4.0 * np.pi**2 * grid.xi_squared() + alpha / grid.epsilon**2))


def _window_index(size: int, n: int) -> np.ndarray:
    half = (size - 1) // 2
    return np.arange(-half, half + 1) % n


def _check_kernel(kernel: np.ndarray, grid: Grid) -> int:
    if kernel.ndim != grid.d or len(set(kernel.shape)) != 1:
        raise ValueError(f"kernel of shape {kernel.shape} is not a {grid.d}-d square kernel")
    size = kernel.shape[0]
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if size > grid.n:
        raise ValueError(f"kernel size {size} exceeds grid size {grid.n}")
    return size


def embed_kernel(kernel: np.ndarray, grid: Grid) -> np.ndarray:
    """Place a centered kernel on the grid with its center at index 0 (periodic wrap)."""
    size = _check_kernel(kernel, grid)
    idx = _window_index(size, grid.n)
    out = np.zeros(grid.shape)
    out[np.ix_(*([idx] * grid.d))] = kernel
    return out


def extract_window(values: np.ndarray, size: int, grid: Grid) -> np.ndarray:
    """Centered ``size**d`` window around index 0 of a periodic grid array."""
    idx = _window_index(size, grid.n)
    return values[(...,) + np.ix_(*([idx] * grid.d))]


def kernel_symbol(kernel: np.ndarray, grid: Grid) -> np.ndarray:
    """Half-spectrum transform of the embedded kernel (complex)."""
    return forward(embed_kernel(kernel, grid), grid)


def periodic_convolve(u: np.ndarray, kernel: np.ndarray, grid: Grid) -> np.ndarray:
    """``(K * u)_k = sum_l K_l u_{k-l}`` with periodic padding, via FFT."""
    grid.check_field(u)
    return inverse(forward(u, grid) * kernel_symbol(kernel, grid), grid)


def symbol_to_spatial_kernel(symbol: np.ndarray, size: int, grid: Grid) -> np.ndarray:
    """Inverse-transform a symbol and truncate to the centered ``size**d`` window."""
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if size > grid.n:
        raise ValueError(f"kernel size {size} exceeds grid size {grid.n}")
    spatial = np.fft.ifftn(symbol).real
    return extract_window(spatial, size, grid)


def spectral_gradient(u: np.ndarray, grid: Grid) -> list:
    """Spectral partial derivatives of ``u`` along each axis."""
    u_hat = np.fft.fftn(u, axes=grid.axes)
    out = []
    for k in grid.frequencies():
        k = np.where(np.abs(k) == grid.n / 2, 0.0, k)  # Nyquist mode has no real derivative
        out.append(np.fft.ifftn(2j * np.pi * (k / grid.L) * u_hat, axes=grid.axes).real)
    return out
