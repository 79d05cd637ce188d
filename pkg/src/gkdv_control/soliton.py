"""Soliton profiles of gKdV, the scaling generator and the conserved functionals.

Conventions: ``Q`` is the unit-speed soliton of ``u_t + (u_xx + u^p)_x = 0``,
``Q_c(y) = c^{1/(p-1)} Q(sqrt(c) y)`` travels with speed ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from .grid import DomainError, GridFunction, spectral_derivative

ALLOWED_P = (2, 3, 4)


def check_p(p) -> int:
    if p not in ALLOWED_P:
        raise DomainError(f"nonlinearity exponent p must be one of {ALLOWED_P}, got {p!r}")
    return int(p)


def check_c(c) -> float:
    if not np.all(np.asarray(c) > 0):
        raise DomainError(f"scaling c must be positive, got {c!r}")
    return c


@dataclass(frozen=True)
class SolitonParams:
    p: int
    c: float
    rho: float = 0.0

    def __post_init__(self):
        check_p(self.p)
        check_c(self.c)


def _sech(x):
    ax = np.abs(x)
    e = np.exp(-ax)
    return 2.0 * e / (1.0 + e * e)


def eval_Q(p: int, s):
    """Closed-form ground state ``[(p+1)/(2 cosh^2((p-1)s/2))]^{1/(p-1)}``."""
    check_p(p)
    s = np.asarray(s, dtype=float)
    out = (0.5 * (p + 1) * _sech(0.5 * (p - 1) * s) ** 2) ** (1.0 / (p - 1))
    return out if out.ndim else float(out)


def eval_phi(p: int, s):
    """``-Q'/Q``; for every p this is ``tanh((p-1)s/2)``."""
    check_p(p)
    out = np.tanh(0.5 * (p - 1) * np.asarray(s, dtype=float))
    return out if out.ndim else float(out)


def eval_Q_deriv(p: int, s, k: int = 1):
    """k-th derivative of Q for k <= 3, using ``Q' = -phi Q`` and ``Q'' = Q - Q^p``."""
    q = np.asarray(eval_Q(p, s))
    if k == 0:
        return q
    dq = -np.asarray(eval_phi(p, s)) * q
    if k == 1:
        return dq
    if k == 2:
        return q - q**p
    if k == 3:
        return dq - p * q ** (p - 1) * dq
    raise DomainError("derivative order must be <= 3")


def eval_Qc(params: SolitonParams, y):
    p, c = params.p, check_c(params.c)
    return c ** (1.0 / (p - 1)) * eval_Q(p, np.sqrt(c) * np.asarray(y, dtype=float))


def eval_Qc_deriv(params: SolitonParams, y, k: int = 1):
    p, c = params.p, check_c(params.c)
    sc = np.sqrt(c)
    return c ** (1.0 / (p - 1)) * sc**k * eval_Q_deriv(p, sc * np.asarray(y, dtype=float), k)


def eval_LambdaQc(params: SolitonParams, y):
    """``dQ_c/dc = (1/c)[Q_c/(p-1) + y Q_c'/2]``."""
    p, c = params.p, check_c(params.c)
    y = np.asarray(y, dtype=float)
    return (eval_Qc(params, y) / (p - 1) + 0.5 * y * eval_Qc_deriv(params, y, 1)) / c


def eval_LambdaQc_deriv(params: SolitonParams, y):
    p, c = params.p, params.c
    y = np.asarray(y, dtype=float)
    d1 = eval_Qc_deriv(params, y, 1)
    d2 = eval_Qc_deriv(params, y, 2)
    return (d1 / (p - 1) + 0.5 * d1 + 0.5 * y * d2) / c


def soliton_ode_residual(params: SolitonParams, grid: GridFunction) -> float:
    """Max-norm of ``Q_c'' - c Q_c + Q_c^p`` with Fourier second derivatives.

    ``grid`` supplies the discretisation (length, size, offset); the profile is
    centred at ``params.rho``.
    """
    x = grid.x
    q = eval_Qc(params, x - params.rho)
    qxx = spectral_derivative(q, grid.dx, 2)
    return float(np.max(np.abs(qxx - params.c * q + q**params.p)))


@dataclass(frozen=True)
class QuadratureConstants:
    p: int
    intQ: float
    intQ2: float
    intQ3: float
    lambda_p: float

    def int_Q_power(self, k: int) -> float:
        return {1: self.intQ, 2: self.intQ2, 3: self.intQ3}[k]


def _gauss_panels(f, a: float, b: float, panels: int = 480, order: int = 20) -> float:
    nodes, weights = roots_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    x = mid + half * nodes[None, :]
    return float(np.sum(half * weights[None, :] * f(x)))


@lru_cache(maxsize=None)
def quadrature_constants(p: int) -> QuadratureConstants:
    """Integrals of Q, Q^2, Q^3 by composite Gauss-Legendre on [-60, 60]."""
    check_p(p)
    vals = [_gauss_panels(lambda s, k=k: eval_Q(p, s) ** k, -60.0, 60.0) for k in (1, 2, 3)]
    lam = 4.0 * (p - 1) / (5.0 - p) * vals[2] / vals[1]
    return QuadratureConstants(p, vals[0], vals[1], vals[2], lam)


def scaled_integral_Q_power(p: int, c: float, k: int) -> float:
    """``int Q_c^k = c^{k/(p-1) - 1/2} int Q^k``."""
    consts = quadrature_constants(p)
    return c ** (k / (p - 1) - 0.5) * consts.int_Q_power(k)


def mass(u: GridFunction) -> float:
    return 0.5 * float(np.sum(u.samples**2) * u.dx)


def energy(u: GridFunction, p: int) -> float:
    check_p(p)
    ux = u.derivative(1)
    return float((0.5 * np.sum(ux**2) - np.sum(u.samples ** (p + 1)) / (p + 1)) * u.dx)


def h1_norm(u: GridFunction) -> float:
    ux = u.derivative(1)
    return float(np.sqrt((np.sum(u.samples**2) + np.sum(ux**2)) * u.dx))


def h1_norm_samples(v: np.ndarray, dx: float) -> float:
    vx = spectral_derivative(v, dx, 1)
    return float(np.sqrt((np.sum(v * v) + np.sum(vx * vx)) * dx))


def soliton_grid(params: SolitonParams, domain_length: float, n_points: int) -> GridFunction:
    """Q_c(x - rho) sampled on a grid centred at the origin."""
    return GridFunction.from_function(lambda x: eval_Qc(params, x - params.rho), domain_length, n_points)


def is_adequately_resolved(params: SolitonParams, grid: GridFunction) -> bool:
    """Edge value below 1e-12 and ``sqrt(c) dx <= 0.15``."""
    edge = min(abs(grid.x_min - params.rho), abs(grid.x_min + grid.domain_length - params.rho))
    return bool(eval_Qc(params, edge) < 1e-12 and np.sqrt(params.c) * grid.dx <= 0.15)
