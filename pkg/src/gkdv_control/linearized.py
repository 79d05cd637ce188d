"""Linearized operator around Q_c and the first-order corrector A_c.

The corrector solves ``(L A)_y = F1~`` with ``L = -d_yy + c - p Q_c^{p-1}``.
``A`` is bounded but tends to ``-2 sqrt(c) beta_c`` behind the soliton, so it is
stored as ``beta_c (phi_c - sqrt(c)) + A_hat`` where ``A_hat`` decays on both
sides and the first term is known in closed form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
from scipy.interpolate import make_interp_spline
from scipy.sparse.linalg import splu

from .control import ControlSpec, eval_a0_deriv
from .grid import DomainError, spectral_derivative
from .soliton import (
    SolitonParams,
    check_c,
    check_p,
    eval_LambdaQc,
    eval_Qc,
    eval_Qc_deriv,
    quadrature_constants,
    QuadratureConstants,
)


DEFAULT_FD_ORDER = 8


class CorrectorSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class OperatorGrid:
    """Uniform points ``y_j = y_min + j h``, ``h = (y_max - y_min)/n``."""

    y_min: float
    y_max: float
    n: int
    c: float
    p: int
    fd_order: int = DEFAULT_FD_ORDER

    def __post_init__(self):
        check_p(self.p)
        check_c(self.c)
        sc = np.sqrt(self.c)
        if not (self.y_min < -10 / sc and self.y_max > 10 / sc):
            raise DomainError("operator grid must contain [-10/sqrt(c), 10/sqrt(c)]")
        if self.h * sc > 0.15:
            raise DomainError(f"grid too coarse: sqrt(c)*h = {self.h * sc:.3f} > 0.15")

    @classmethod
    def default(cls, c: float, p: int, n: int = 8192, half_width: float = 80.0,
                fd_order: int = DEFAULT_FD_ORDER) -> "OperatorGrid":
        w = half_width / np.sqrt(c)
        return cls(-w, w, n, c, p, fd_order)

    @property
    def h(self) -> float:
        return (self.y_max - self.y_min) / self.n

    @property
    def y(self) -> np.ndarray:
        return self.y_min + np.arange(self.n) * self.h

    @property
    def soliton(self) -> SolitonParams:
        return SolitonParams(self.p, self.c)


# one-sided 4th-order closures for the first/last two rows
_D2_EDGE0 = np.array([15.0 / 4, -77.0 / 6, 107.0 / 6, -13.0, 61.0 / 12, -5.0 / 6])
_D2_EDGE1 = np.array([5.0 / 6, -5.0 / 4, -1.0 / 3, 7.0 / 6, -1.0 / 2, 1.0 / 12])


def centered_d2_weights(order: int) -> np.ndarray:
    """Weights of the centred second-difference stencil of the given even order."""
    if order < 2 or order % 2:
        raise DomainError("stencil order must be even and >= 2")
    m = order // 2
    offs = np.arange(-m, m + 1, dtype=float)
    V = np.vander(offs, increasing=True).T
    rhs = np.zeros(2 * m + 1)
    rhs[2] = 2.0
    return np.linalg.solve(V, rhs)


def second_difference_matrix(n: int, h: float, order: int = DEFAULT_FD_ORDER) -> sp.csr_matrix:
    """Centred interior stencil; rows too close to an end fall back to lower order."""
    m = order // 2
    w = centered_d2_weights(order)
    D = sp.diags([np.full(n - abs(k), w[k + m]) for k in range(-m, m + 1)],
                 list(range(-m, m + 1)), shape=(n, n), format="lil")
    for i in range(2, m):
        wi = centered_d2_weights(2 * i)
        for r in (i, n - 1 - i):
            D.rows[r], D.data[r] = [], []
            D[r, r - i:r + i + 1] = wi
    for r, start, wr in ((0, 0, _D2_EDGE0), (1, 0, _D2_EDGE1),
                         (n - 1, n - 6, _D2_EDGE0[::-1]), (n - 2, n - 6, _D2_EDGE1[::-1])):
        D.rows[r], D.data[r] = [], []
        D[r, start:start + 6] = wr
    return D.tocsr() / h**2


def operator_matrix(grid: OperatorGrid) -> sp.csr_matrix:
    pot = grid.c - grid.p * eval_Qc(grid.soliton, grid.y) ** (grid.p - 1)
    return (-second_difference_matrix(grid.n, grid.h, grid.fd_order) + sp.diags(pot)).tocsr()


def apply_L(grid: OperatorGrid, v) -> np.ndarray:
    """``-v'' + c v - p Q_c^{p-1} v`` with centred differences of order ``grid.fd_order``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.n,):
        raise DomainError(f"expected {grid.n} samples, got shape {v.shape}")
    return operator_matrix(grid) @ v


def eval_phi_c(c: float, p: int, y):
    """``-Q_c'/Q_c = sqrt(c) tanh((p-1) sqrt(c) y / 2)``."""
    check_p(p)
    sc = np.sqrt(check_c(c))
    return sc * np.tanh(0.5 * (p - 1) * sc * np.asarray(y, dtype=float))


def _L_of_phi_tail(c: float, p: int, y: np.ndarray) -> np.ndarray:
    """Closed form of ``L(phi_c - sqrt(c))``."""
    sc = np.sqrt(c)
    al = 0.5 * (p - 1)
    th = np.tanh(al * sc * y)
    s2 = 1.0 - th * th
    phi_yy = -2.0 * al**2 * c * sc * s2 * th
    pot = c - p * eval_Qc(SolitonParams(p, c), y) ** (p - 1)
    return -phi_yy + pot * (sc * th - sc)


def _L_of_phi_tail_deriv(c: float, p: int, y: np.ndarray) -> np.ndarray:
    sc = np.sqrt(c)
    al = 0.5 * (p - 1)
    th = np.tanh(al * sc * y)
    s2 = 1.0 - th * th
    phi = sc * th
    phi_y = al * c * s2
    phi_yyy = -2.0 * al**3 * c**2 * s2 * (s2 - 2.0 * th * th)
    q = eval_Qc(SolitonParams(p, c), y)
    qy = eval_Qc_deriv(SolitonParams(p, c), y, 1)
    pot = c - p * q ** (p - 1)
    pot_y = -p * (p - 1) * q ** (p - 2) * qy
    return -phi_yyy + pot_y * (phi - sc) + pot * phi_y


@dataclass(frozen=True)
class ScaledIntegrals:
    """Closed-form integrals of Q_c and Lambda Q_c obtained from the c = 1 constants."""

    p: int
    c: float
    Q1: float
    Q2: float
    Q3: float
    LQ: float        # int Lambda Q_c
    LQ_Q: float      # int Lambda Q_c * Q_c
    LQ_Q2: float     # int Lambda Q_c * Q_c^2

    @classmethod
    def of(cls, p: int, c: float, consts: QuadratureConstants | None = None) -> "ScaledIntegrals":
        consts = quadrature_constants(p) if consts is None else consts
        e = lambda k: k / (p - 1) - 0.5  # noqa: E731
        Q = [c ** e(k) * consts.int_Q_power(k) for k in (1, 2, 3)]
        # int Q_c^k Lambda Q_c = (1/k) d/dc int Q_c^{k+1}
        LQ = e(1) * c ** (e(1) - 1) * consts.intQ
        LQ_Q = 0.5 * e(2) * c ** (e(2) - 1) * consts.intQ2
        LQ_Q2 = e(3) * c ** (e(3) - 1) * consts.intQ3 / 3.0
        return cls(p, c, Q[0], Q[1], Q[2], LQ, LQ_Q, LQ_Q2)


@dataclass(frozen=True)
class ForcingCoefficients:
    """Per-unit-``d`` coefficients of the forcing, affine in ``dc = c0 - c`` and ``r = rho0 - rho``.

    ``f1/d = f1_s + dc*f1_E`` and ``f2/d = sigma_s + dc*sigma_E + r*sigma_D``.
    """

    f1_s: float
    f1_E: float
    sigma_s: float
    sigma_E: float
    sigma_D: float

    @classmethod
    def of(cls, p: int, c: float, consts: QuadratureConstants | None = None) -> "ForcingCoefficients":
        consts = quadrature_constants(p) if consts is None else consts
        si = ScaledIntegrals.of(p, c, consts)
        f1_s = -si.Q3 / si.LQ_Q
        f1_E = -si.LQ_Q2 / si.LQ_Q
        # orthogonality of A to Q_c  <=>  int F1~ (int_{-inf}^y Lambda Q_c) = 0;
        # even integrands reduce the weight to (1/2) int Lambda Q_c
        sigma_s = -0.5 * si.LQ * (f1_s * si.LQ + si.Q2) / si.LQ_Q
        sigma_E = -0.5 * si.LQ * (f1_E * si.LQ + si.LQ_Q) / si.LQ_Q
        sigma_D = 0.5 * si.LQ_Q2 / si.LQ_Q
        return cls(f1_s, f1_E, sigma_s, sigma_E, sigma_D)

    def f1_per_d(self, dc: float) -> float:
        return self.f1_s + dc * self.f1_E

    def f2_per_d(self, dc: float, r: float) -> float:
        return self.sigma_s + dc * self.sigma_E + r * self.sigma_D


def compute_f1(state: SolitonParams, ref_params, spec: ControlSpec) -> float:
    """Modulation forcing of the speed, fixed by ``int F1 Q_c = 0``."""
    c0, _ = ref_params
    d = float(eval_a0_deriv(spec, spec.eps * state.rho, 1))
    return d * ForcingCoefficients.of(state.p, state.c).f1_per_d(c0 - state.c)


def compute_f2(state: SolitonParams, ref_params, spec: ControlSpec,
               consts: QuadratureConstants | None = None) -> float:
    """Modulation forcing of the position, fixed by ``int A_c Q_c = 0``.

    For ``c0 = c`` it equals ``mu_p a0'(eps rho) c^{(3-p)/(2(p-1))}`` with
    ``mu_3 = 0``.
    """
    check_p(state.p)
    c0, rho0 = ref_params
    d = float(eval_a0_deriv(spec, spec.eps * state.rho, 1))
    coef = ForcingCoefficients.of(state.p, state.c, consts)
    return d * coef.f2_per_d(c0 - state.c, rho0 - state.rho)


def mu_p(p: int, consts: QuadratureConstants | None = None) -> float:
    """Leading coefficient of ``f2`` at c = 1."""
    return ForcingCoefficients.of(p, 1.0, consts).sigma_s


def forcing_profile(p: int, c: float, y, f1_per_d: float, f2_per_d: float, dc: float, r: float):
    """``F1~(y)`` for given per-unit-d forcing coefficients."""
    s = SolitonParams(p, c)
    q = eval_Qc(s, y)
    qy = eval_Qc_deriv(s, y, 1)
    lq = eval_LambdaQc(s, y)
    return f1_per_d * lq + q * q - f2_per_d * qy + dc * lq * q + r * qy * q


def build_F1_tilde(state: SolitonParams, ref_params, spec: ControlSpec,
                   f2: float | None = None, grid: OperatorGrid | None = None) -> np.ndarray:
    """Normalized first-order forcing ``F1/d`` sampled on the operator grid.

    When ``a0'(eps rho) = 0`` the ratio ``f2/d`` is taken as its limit.
    """
    c0, rho0 = ref_params
    grid = OperatorGrid.default(state.c, state.p) if grid is None else grid
    coef = ForcingCoefficients.of(state.p, state.c)
    dc, r = c0 - state.c, rho0 - state.rho
    d = float(eval_a0_deriv(spec, spec.eps * state.rho, 1))
    if f2 is None or d == 0.0:
        s2 = coef.f2_per_d(dc, r)
    else:
        s2 = f2 / d
    return forcing_profile(state.p, state.c, grid.y, coef.f1_per_d(dc), s2, dc, r)


def antiderivative_from_right(f: np.ndarray, h: float, c: float, y: np.ndarray) -> np.ndarray:
    """``G(y) = -int_y^inf f`` for f decaying at both ends, spectrally accurate.

    The mass of f is carried by a tanh step whose primitive is exact; the
    zero-mean remainder is integrated in Fourier space.
    """
    n = f.size
    m = float(np.sum(f) * h)
    k = np.sqrt(c)
    step = 0.5 * (1.0 + np.tanh(k * y))
    bump = 0.5 * k * (1.0 - np.tanh(k * y) ** 2)
    g = f - m * bump
    kk = 2.0 * np.pi * sfft.rfftfreq(n, d=h)
    gh = sfft.rfft(g)
    ph = np.zeros_like(gh)
    ph[1:] = gh[1:] / (1j * kk[1:])
    if n % 2 == 0:
        ph[-1] = 0.0
    prim = sfft.irfft(ph, n=n)
    prim -= prim[0]
    return prim + m * step - m


@dataclass
class Corrector:
    grid: OperatorGrid
    A: np.ndarray = field(repr=False)
    A_hat: np.ndarray = field(repr=False)
    beta_c: float
    mu_c: float
    delta_c: float
    f2: float
    f2_per_d: float
    residual_pde: float
    residual_orth: tuple
    F1_tilde: np.ndarray = field(default=None, repr=False)
    fredholm_multiplier: float = 0.0

    def __post_init__(self):
        self._spline = None

    def _hat_spline(self):
        if self._spline is None:
            self._spline = make_interp_spline(self.grid.y, self.A_hat, k=5)
        return self._spline

    def evaluate(self, y, deriv: int = 0):
        """A or its y-derivatives at arbitrary points (A_hat taken as 0 off-grid)."""
        g = self.grid
        y = np.asarray(y, dtype=float)
        inside = (y >= g.y[0]) & (y <= g.y[-1])
        out = np.zeros_like(y)
        if np.any(inside):
            out[inside] = self._hat_spline()(y[inside], deriv)
        sc = np.sqrt(g.c)
        al = 0.5 * (g.p - 1)
        th = np.tanh(al * sc * y)
        if deriv == 0:
            out += self.beta_c * (sc * th - sc)
        elif deriv == 1:
            out += self.beta_c * al * g.c * (1 - th * th)
        elif deriv == 2:
            out += self.beta_c * (-2.0 * al**2 * g.c * sc * (1 - th * th) * th)
        else:
            raise DomainError("deriv must be 0, 1 or 2")
        return out

    @property
    def far_field_left(self) -> float:
        return -2.0 * np.sqrt(self.grid.c) * self.beta_c

    def to_csv(self, path) -> None:
        q = eval_Qc(self.grid.soliton, self.grid.y)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "A", "Q_c", "F1_tilde"])
            for row in zip(self.grid.y, self.A, q, self.F1_tilde):
                w.writerow([repr(float(v)) for v in row])


class _BorderedSolver:
    """LU factorization of ``[[L, Q_c'], [h Q_c'^T, 0]]`` on a grid.

    The end rows of L are replaced by Dirichlet conditions: the unknown decays
    at both ends, and without them round-off excites the homogeneous mode
    ``exp(-sqrt(c)(y - y_min))`` at the left edge.
    """

    def __init__(self, grid: OperatorGrid):
        self.grid = grid
        n, h = grid.n, grid.h
        q = eval_Qc_deriv(grid.soliton, grid.y, 1)
        L = operator_matrix(grid).tolil()
        for r in (0, n - 1):
            L.rows[r], L.data[r] = [r], [1.0]
        M = sp.bmat([[L.tocsr(), sp.csr_matrix(q[:, None])], [sp.csr_matrix(h * q[None, :]), None]],
                    format="csc")
        try:
            self.lu = splu(M)
        except RuntimeError as exc:  # singular factor
            raise CorrectorSolveError(str(exc)) from exc
        self.n = n

    def solve(self, rhs: np.ndarray):
        b = np.concatenate([rhs, [0.0]])
        b[0] = b[self.n - 1] = 0.0
        sol = self.lu.solve(b)
        if not np.all(np.isfinite(sol)):
            raise CorrectorSolveError("bordered system produced non-finite values")
        return sol[: self.n], float(sol[self.n])


def solve_corrector_for_forcing(grid: OperatorGrid, F_nof2: np.ndarray, f2_per_d: float,
                                d: float = 1.0, solver: _BorderedSolver | None = None) -> Corrector:
    """Bounded solution of ``(L A)_y = F_nof2 - (f2/d) Q_c'`` with ``A`` orthogonal to Q_c and yQ_c.

    ``F_nof2`` must satisfy ``int F_nof2 Q_c = 0``. ``delta_c`` (coefficient of
    Lambda Q_c) comes out of the orthogonality to Q_c; it agrees with
    ``f2/d`` exactly when the supplied f2 is the consistent one, and any
    mismatch shows up in ``residual_pde``.
    """
    c, p, y, h = grid.c, grid.p, grid.y, grid.h
    s = grid.soliton
    sc = np.sqrt(c)
    q = eval_Qc(s, y)
    qy = eval_Qc_deriv(s, y, 1)
    lq = eval_LambdaQc(s, y)
    F_full = F_nof2 - f2_per_d * qy

    m = float(np.sum(F_nof2) * h)
    beta = m / (2.0 * c * sc)
    G = antiderivative_from_right(F_nof2, h, c, y)
    tail = eval_phi_c(c, p, y) - sc
    H = G - beta * _L_of_phi_tail(c, p, y)

    solver = _BorderedSolver(grid) if solver is None else solver
    A0, nu = solver.solve(H)

    base = A0 + beta * tail
    mu = -np.sum(base * y * q) / np.sum(qy * y * q)
    delta = -np.sum(base * q) / np.sum(lq * q)
    A_hat = A0 + mu * qy + delta * lq
    A = A_hat + beta * tail

    # residual measured with Fourier derivatives of A_hat and the closed-form tail
    pot = c - p * q ** (p - 1)
    LA_hat = -spectral_derivative(A_hat, h, 2) + pot * A_hat
    dLA = spectral_derivative(LA_hat, h, 1) + beta * _L_of_phi_tail_deriv(c, p, y)
    residual_pde = float(np.max(np.abs(dLA - F_full)))
    orth = (abs(float(np.sum(A * q) * h)), abs(float(np.sum(A * y * q) * h)))
    return Corrector(grid, A, A_hat, beta, float(mu), float(delta), d * f2_per_d, f2_per_d,
                     residual_pde, orth, F_full, nu)


def solve_corrector(state: SolitonParams, ref_params, spec: ControlSpec,
                    consts: QuadratureConstants | None = None,
                    grid: OperatorGrid | None = None) -> Corrector:
    """Corrector A_c for the modulated state ``(c, rho)`` and reference ``(c0, rho0)``."""
    c0, rho0 = ref_params
    grid = OperatorGrid.default(state.c, state.p) if grid is None else grid
    if grid.c != state.c or grid.p != state.p:
        raise DomainError("operator grid does not match the soliton state")
    coef = ForcingCoefficients.of(state.p, state.c, consts)
    dc, r = c0 - state.c, rho0 - state.rho
    d = float(eval_a0_deriv(spec, spec.eps * state.rho, 1))
    F_nof2 = forcing_profile(state.p, state.c, grid.y, coef.f1_per_d(dc), 0.0, dc, r)
    f2 = compute_f2(state, ref_params, spec, consts)
    s2 = f2 / d if d != 0.0 else coef.f2_per_d(dc, r)
    return solve_corrector_for_forcing(grid, F_nof2, s2, d)


def corrector_scaling_exponent(p: int) -> float:
    return (7.0 - 3.0 * p) / (2.0 * (p - 1))


def corrector_scaling_check(c: float, p: int, n: int = 8192) -> float:
    """Max discrepancy between ``A_c(y)`` and ``c^{(7-3p)/(2(p-1))} A_1(sqrt(c) y)``.

    Both solves use the same number of points on ``[-80/sqrt(c), 80/sqrt(c)]``,
    so ``sqrt(c) y_j`` are exactly the nodes of the c = 1 grid.
    """
    spec = ControlSpec(p, 2.0, 0.05)
    g1 = OperatorGrid.default(1.0, p, n)
    gc = OperatorGrid.default(c, p, n)
    a1 = solve_corrector(SolitonParams(p, 1.0), (1.0, 0.0), spec, grid=g1)
    ac = solve_corrector(SolitonParams(p, c), (c, 0.0), spec, grid=gc)
    return float(np.max(np.abs(ac.A - c ** corrector_scaling_exponent(p) * a1.A)))


def solve_D_E_components(p: int, c: float, grid: OperatorGrid | None = None):
    """Split ``A = A_s + (c0-c) E + (rho0-rho) D`` into its three bounded pieces.

    The decomposition is exact because F1~ and the forcing coefficients are
    affine in ``(c0 - c, rho0 - rho)``.
    """
    grid = OperatorGrid.default(c, p) if grid is None else grid
    coef = ForcingCoefficients.of(p, c)
    y = grid.y
    solver = _BorderedSolver(grid)
    s = SolitonParams(p, c)
    q = eval_Qc(s, y)
    qy = eval_Qc_deriv(s, y, 1)
    lq = eval_LambdaQc(s, y)
    comps = {}
    for name, F, s2 in (
        ("s", coef.f1_s * lq + q * q, coef.sigma_s),
        ("E", coef.f1_E * lq + lq * q, coef.sigma_E),
        ("D", qy * q, coef.sigma_D),
    ):
        comps[name] = solve_corrector_for_forcing(grid, F, s2, 1.0, solver)
    return comps
