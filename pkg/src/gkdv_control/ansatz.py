"""Localized approximate solution ``u~ = eta_eps(y)(Q_c + eps d A_c)`` and its residual."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import make_interp_spline

from .control import ControlSpec, eval_a0_deriv
from .grid import DomainError, GridFunction, spectral_derivative
from .linearized import (
    OperatorGrid,
    corrector_scaling_exponent,
    solve_D_E_components,
)
from .soliton import (
    SolitonParams,
    eval_LambdaQc,
    eval_Qc,
    h1_norm_samples,
)

# ---------------------------------------------------------------- cut-off


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _cutoff_table():
    from scipy.special import roots_legendre

    edges = np.linspace(-1.0, 1.0, 4097)
    xg, wg = roots_legendre(12)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1] - edges[0])
    panel = half * np.sum(wg[None, :] * _bump(mid + half * xg[None, :]), axis=1)
    cdf = np.concatenate([[0.0], np.cumsum(panel)])
    z = cdf[-1]
    return make_interp_spline(edges, cdf / z, k=5), z


def eval_eta(s):
    """Smooth step: 0 for s <= -1, 1 for s >= 1, derivative proportional to exp(-1/(1-s^2))."""
    s = np.asarray(s, dtype=float)
    spl, _ = _cutoff_table()
    out = np.where(s >= 1.0, 1.0, 0.0)
    mid = np.abs(s) < 1.0
    out[mid] = np.clip(spl(s[mid]), 0.0, 1.0)
    return out


def eval_eta_deriv(s):
    _, z = _cutoff_table()
    return _bump(s) / z


def eval_cutoff(eps: float, y):
    """``eta(eps y + 2)``: zero for ``y <= -3/eps`` and one for ``y >= -1/eps``."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    return eval_eta(eps * np.asarray(y, dtype=float) + 2.0)


# ---------------------------------------------------------------- corrector family


@dataclass(frozen=True)
class _Piece:
    beta: float
    kappa: float
    spline: object = field(repr=False)
    y_lo: float
    y_hi: float
    p_minus_1: int

    def unit(self, s, deriv=0):
        """The c = 1 profile (or its s-derivatives) at points s."""
        out = np.zeros_like(s)
        inside = (s >= self.y_lo) & (s <= self.y_hi)
        if np.any(inside):
            out[inside] = self.spline(s[inside], deriv)
        th = np.tanh(0.5 * (self.p_minus_1) * s)
        if deriv == 0:
            out += self.beta * (th - 1.0)
        else:
            out += self.beta * 0.5 * self.p_minus_1 * (1.0 - th * th)
        return out


class CorrectorFamily:
    """``A(c, c0 - c, rho0 - rho; y)`` for all c from three solves at c = 1.

    Each piece ``X`` satisfies ``X_c(y) = c^kappa X_1(sqrt(c) y)``, so values,
    y-derivatives and c-derivatives are all available without re-solving.
    """

    def __init__(self, p: int, n: int = 8192):
        self.p = p
        grid = OperatorGrid.default(1.0, p, n)
        comps = solve_D_E_components(p, 1.0, grid)
        k0 = corrector_scaling_exponent(p)
        self.pieces = {}
        for name, shift in (("s", 0.0), ("E", -1.0), ("D", 0.5)):
            cr = comps[name]
            piece = _Piece(cr.beta_c, k0 + shift, make_interp_spline(grid.y, cr.A_hat, k=5),
                           grid.y[0], grid.y[-1], p - 1)
            self.pieces[name] = piece
        self.residuals = {k: v.residual_pde for k, v in comps.items()}

    def _scaled(self, name, c, y):
        pc = self.pieces[name]
        sc = np.sqrt(c)
        s = sc * y
        v0 = pc.unit(s)
        v1 = pc.unit(s, 1)
        val = c**pc.kappa * v0
        dy = c**pc.kappa * sc * v1
        dc = pc.kappa * c ** (pc.kappa - 1.0) * v0 + c**pc.kappa * v1 * s / (2.0 * c)
        return val, dy, dc

    def evaluate(self, c: float, dc0: float, r: float, y):
        """Return ``A, A_y, dA/dc`` (at fixed c0 and rho0), ``E``, ``D``."""
        y = np.asarray(y, dtype=float)
        s, s_y, s_c = self._scaled("s", c, y)
        E, E_y, E_c = self._scaled("E", c, y)
        D, D_y, D_c = self._scaled("D", c, y)
        A = s + dc0 * E + r * D
        A_y = s_y + dc0 * E_y + r * D_y
        # dc0 = c0 - c depends on c as well
        A_c = s_c + dc0 * E_c + r * D_c - E
        return A, A_y, A_c, E, D


@lru_cache(maxsize=None)
def corrector_family(p: int, n: int = 8192) -> CorrectorFamily:
    return CorrectorFamily(p, n)


# ---------------------------------------------------------------- ansatz


@dataclass
class Ansatz:
    u_tilde: GridFunction
    params: SolitonParams
    d: float
    ref: tuple
    spec: ControlSpec
    with_corrector: bool = True
    parts: dict = field(default_factory=dict, repr=False)

    @property
    def y(self) -> np.ndarray:
        return self.u_tilde.x - self.params.rho

    def distance_to_soliton(self) -> float:
        q = eval_Qc(self.params, self.y)
        return h1_norm_samples(self.u_tilde.samples - q, self.u_tilde.dx)


def build_ansatz(params: SolitonParams, ref, spec: ControlSpec, grid: GridFunction,
                 with_corrector: bool = True, family: CorrectorFamily | None = None) -> Ansatz:
    """Sample ``u~`` on the x-grid of ``grid`` (its samples are ignored)."""
    if params.p != spec.p:
        raise DomainError("soliton and control exponents differ")
    c0, rho0 = ref
    eps = spec.eps
    y = grid.x - params.rho
    eta = eval_cutoff(eps, y)
    q = eval_Qc(params, y)
    d = float(eval_a0_deriv(spec, eps * params.rho, 1))
    parts = {"eta": eta, "q": q}
    if with_corrector:
        fam = corrector_family(spec.p) if family is None else family
        A, A_y, A_c, E, D = fam.evaluate(params.c, c0 - params.c, rho0 - params.rho, y)
    else:
        A = A_y = A_c = E = D = np.zeros_like(y)
    parts.update(A=A, A_y=A_y, A_c=A_c, E=E, D=D)
    u = eta * (q + eps * d * A)
    return Ansatz(grid.with_samples(u), params, d, (c0, rho0), spec, with_corrector, parts)


def ansatz_partials(an: Ansatz):
    """``du~/dc`` and ``du~/drho`` at fixed ``(c0, rho0)`` and fixed x."""
    spec, eps, d = an.spec, an.spec.eps, an.d
    P = an.parts
    lq = eval_LambdaQc(an.params, an.y)
    du_c = P["eta"] * (lq + eps * d * P["A_c"])
    u_y = an.u_tilde.derivative(1)
    dd = eps * float(eval_a0_deriv(spec, eps * an.params.rho, 2))
    # rho enters through y = x - rho, through d and through r = rho0 - rho
    du_rho = -u_y + P["eta"] * eps * (dd * P["A"] - d * P["D"])
    return du_c, du_rho


@dataclass(frozen=True)
class ModulatedRates:
    """Rates of ``(c, rho, c0, rho0)`` along the exactly modulated trajectory."""

    c: float
    rho: float
    c0: float
    rho0: float


def modulated_rates(params: SolitonParams, ref, spec: ControlSpec) -> ModulatedRates:
    from .linearized import compute_f1, compute_f2

    c0, rho0 = ref
    eps = spec.eps
    f1 = compute_f1(params, ref, spec)
    f2 = compute_f2(params, ref, spec)
    p = spec.p
    dc0 = -eps * spec.lambda_p * float(eval_a0_deriv(spec, eps * rho0, 1)) * c0 ** (p / (p - 1.0))
    return ModulatedRates(eps * f1, params.c + eps * f2, dc0, c0)


@dataclass(frozen=True)
class ResidualReport:
    projections: tuple
    tilde_S_norm: float
    S: np.ndarray = field(repr=False)


def residual_S(an: Ansatz, rates: ModulatedRates | None = None) -> ResidualReport:
    """Residual of the controlled equation on u~ along the modulated trajectory.

    With the default rates the dynamical part vanishes and ``S = S~``. The norm
    is the H^1 norm over ``y > -2/eps``; the projections are ``(|int Q_c S|, |int y Q_c S|)``.
    """
    spec, eps, p = an.spec, an.spec.eps, an.spec.p
    rates = modulated_rates(an.params, an.ref, spec) if rates is None else rates
    c0, rho0 = an.ref
    u = an.u_tilde.samples
    dx = an.u_tilde.dx
    x = an.u_tilde.x
    P = an.parts
    u_x = spectral_derivative(u, dx, 1)
    lq = eval_LambdaQc(an.params, an.y)
    dd = eps * float(eval_a0_deriv(spec, eps * an.params.rho, 2)) * rates.rho
    dA = (P["A_c"] + P["E"]) * rates.c + P["E"] * (rates.c0 - rates.c) + P["D"] * (rates.rho0 - rates.rho)
    u_t = -rates.rho * u_x + P["eta"] * (rates.c * lq + eps * (dd * P["A"] + an.d * dA))
    flux = spectral_derivative(u, dx, 2) + u**p
    control = eps * eval_a0_deriv(spec, eps * x, 1) * eval_Qc(SolitonParams(p, c0), x - rho0)
    S = u_t + spectral_derivative(flux, dx, 1) + control * u
    y = an.y
    mask = y > -2.0 / eps
    S_x = spectral_derivative(S, dx, 1)
    norm = float(np.sqrt(np.sum((S[mask] ** 2 + S_x[mask] ** 2)) * dx))
    q = P["q"]
    proj = (abs(float(np.sum(q * S) * dx)), abs(float(np.sum(y * q * S) * dx)))
    return ResidualReport(proj, norm, S)


def residual_grid(eps: float, dx_target: float = 0.04) -> GridFunction:
    """Grid centred near the soliton that contains the whole cut-off region."""
    left = 3.0 / eps + 40.0
    right = 60.0
    length = left + right
    n = 1 << int(np.ceil(np.log2(length / dx_target)))
    return GridFunction(length, n, np.zeros(n), -left)


def dump_profiles(an: Ansatz, report: ResidualReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "u_tilde", "S"])
        for row in zip(an.y, an.u_tilde.samples, report.S):
            w.writerow([repr(float(v)) for v in row])
