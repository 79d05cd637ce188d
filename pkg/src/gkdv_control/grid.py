"""Uniform periodic grids and spectral differentiation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft


class DomainError(ValueError):
    """Raised when an argument is outside the mathematical domain of an operation."""


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridFunction:
    """Real samples on the periodic grid ``x_j = x_min + j*L/N``.

    ``x_min`` defaults to ``-L/2`` so that the grid is centred at the origin.
    """

    domain_length: float
    n_points: int
    samples: np.ndarray = field(repr=False)
    x_min: float | None = None

    def __post_init__(self):
        if self.n_points < 16 or not _is_power_of_two(self.n_points):
            raise DomainError(f"n_points must be a power of two >= 16, got {self.n_points}")
        if not self.domain_length > 0:
            raise DomainError("domain_length must be positive")
        s = np.asarray(self.samples, dtype=float)
        if s.shape != (self.n_points,):
            raise DomainError(f"samples must have shape ({self.n_points},), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DomainError("samples must be finite")
        object.__setattr__(self, "samples", s)
        if self.x_min is None:
            object.__setattr__(self, "x_min", -0.5 * self.domain_length)

    @classmethod
    def from_function(cls, f, domain_length: float, n_points: int, x_min: float | None = None):
        x0 = -0.5 * domain_length if x_min is None else x_min
        x = x0 + np.arange(n_points) * (domain_length / n_points)
        return cls(domain_length, n_points, np.asarray(f(x), dtype=float), x0)

    @property
    def dx(self) -> float:
        return self.domain_length / self.n_points

    @property
    def x(self) -> np.ndarray:
        return self.x_min + np.arange(self.n_points) * self.dx

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * sfft.rfftfreq(self.n_points, d=self.dx)

    def with_samples(self, samples) -> "GridFunction":
        return GridFunction(self.domain_length, self.n_points, samples, self.x_min)

    def derivative(self, order: int = 1) -> np.ndarray:
        return spectral_derivative(self.samples, self.dx, order)

    def integral(self) -> float:
        # trapezoid == rectangle rule on a periodic grid; spectrally accurate for decaying data
        return float(np.sum(self.samples) * self.dx)


def spectral_derivative(u: np.ndarray, dx: float, order: int = 1) -> np.ndarray:
    """Fourier derivative of a real periodic sample vector.

    The Nyquist mode is zeroed for odd orders so that the result stays real.
    """
    n = u.shape[-1]
    k = 2.0 * np.pi * sfft.rfftfreq(n, d=dx)
    mult = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[-1] = 0.0
    return sfft.irfft(mult * sfft.rfft(u), n=n)


def make_grid_x(domain_length: float, n_points: int, x_min: float | None = None) -> np.ndarray:
    x0 = -0.5 * domain_length if x_min is None else x_min
    return x0 + np.arange(n_points) * (domain_length / n_points)
