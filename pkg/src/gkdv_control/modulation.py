"""Modulation fits ``(c(t), rho(t))`` and the stability diagnostics computed from them."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import roots_legendre

from .ansatz import Ansatz, ansatz_partials, build_ansatz, eval_eta
from .control import ControlSpec
from .grid import DomainError, GridFunction, spectral_derivative
from .linearized import compute_f1, compute_f2
from .soliton import SolitonParams, eval_LambdaQc, eval_Qc_deriv, h1_norm_samples


class FitError(RuntimeError):
    pass


@dataclass
class ModulationFit:
    c: float
    rho: float
    z_h1: float
    orth_residuals: tuple
    newton_iters: int
    ansatz: Ansatz = field(default=None, repr=False)
    z: np.ndarray = field(default=None, repr=False)

    @property
    def params(self) -> SolitonParams:
        return SolitonParams(self.ansatz.params.p, self.c, self.rho)


def _functionals(v: np.ndarray, an: Ansatz, dx: float):
    y = an.y
    q = an.parts["q"]
    z = v - an.u_tilde.samples
    return np.array([np.sum(z * y * q) * dx, np.sum(z * q) * dx]), z


def fit_modulation(u: GridFunction, warm_start: SolitonParams, spec: ControlSpec, ref,
                   max_iter: int = 25, with_corrector: bool = True,
                   c_window: tuple | None = None) -> ModulationFit:
    """Newton iteration on ``J1 = int z y Q_c``, ``J2 = int z Q_c`` with ``z = u - u~(c, rho)``.

    ``ref`` is the reference pair ``(c0, rho0)`` at the time of ``u``.
    """
    v = u.samples
    dx = u.dx
    scale = float(np.sqrt(np.sum(v * v) * dx))
    tol = 1e-10 * max(scale, 1e-300)
    lo, hi = c_window if c_window is not None else (0.25 * spec.c_min, 4.0 * spec.c_max)
    c, rho = float(warm_start.c), float(warm_start.rho)
    for it in range(max_iter + 1):
        an = build_ansatz(SolitonParams(spec.p, c, rho), ref, spec, u, with_corrector)
        J, z = _functionals(v, an, dx)
        if np.max(np.abs(J)) <= tol and it > 0:
            break
        if it == max_iter:
            raise FitError(f"modulation fit did not converge in {max_iter} iterations (|J|={np.max(np.abs(J)):.2e})")
        du_c, du_rho = ansatz_partials(an)
        y, q = an.y, an.parts["q"]
        qy = eval_Qc_deriv(an.params, y, 1)
        lq = eval_LambdaQc(an.params, y)
        # dJ/d(c, rho) with q, y q depending on (c, rho) as well
        jac = np.array([
            [np.sum(-du_c * y * q + z * y * lq), np.sum(-du_rho * y * q - z * (q + y * qy))],
            [np.sum(-du_c * q + z * lq), np.sum(-du_rho * q - z * qy)],
        ]) * dx
        try:
            dc, drho = np.linalg.solve(jac, -J)
        except np.linalg.LinAlgError as exc:
            raise FitError("singular modulation Jacobian") from exc
        c, rho = c + dc, rho + drho
        if not (lo <= c <= hi) or not np.isfinite(rho):
            raise FitError(f"fitted speed {c:.4g} left the window [{lo:.3g}, {hi:.3g}]")
        if max(abs(dc), abs(drho)) < 1e-15 * max(1.0, abs(rho)):
            an = build_ansatz(SolitonParams(spec.p, c, rho), ref, spec, u, with_corrector)
            J, z = _functionals(v, an, dx)
            break
    return ModulationFit(float(c), float(rho), h1_norm_samples(z, dx),
                         (float(abs(J[0])), float(abs(J[1]))), it, an, z)


# ---------------------------------------------------------------- virial weight

_BLEND = (1.0, 1.1)


def _phi(s):
    """Even, non-increasing: 1 on [0,1], exp(-|s|) beyond 1.1, smooth blend in between."""
    a = np.abs(np.asarray(s, dtype=float))
    lo, hi = _BLEND
    w = eval_eta(2.0 * (a - lo) / (hi - lo) - 1.0)
    return np.exp(-w * a)


def _psi_constants():
    xg, wg = roots_legendre(40)
    lo, hi = _BLEND
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    blend = half * float(np.sum(wg * _phi(mid + half * xg)))
    return blend, lo + blend + np.exp(-hi)


_PSI_BLEND, PSI_INF = _psi_constants()


def eval_psi(s):
    """Odd primitive of the weight: ``psi(s) = int_0^s phi``."""
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    lo, hi = _BLEND
    out = np.where(a <= lo, a, PSI_INF - np.exp(-a))
    mid = (a > lo) & (a < hi)
    if np.any(mid):
        xg, wg = roots_legendre(40)
        am = a[mid][:, None]
        half = 0.5 * (am - lo)
        nodes = lo + half * (xg[None, :] + 1.0)
        out[mid] = lo + np.sum(half * wg[None, :] * _phi(nodes), axis=1)
    return np.sign(s) * out


def virial_weight(A0: float, y):
    """``psi_A0(y) = A0 psi(y / A0)``."""
    if not A0 > 0:
        raise DomainError("A0 must be positive")
    return A0 * eval_psi(np.asarray(y, dtype=float) / A0)


def virial_weight_deriv(A0: float, y):
    return _phi(np.asarray(y, dtype=float) / A0)


# ---------------------------------------------------------------- Lyapunov functional


def lyapunov(u: GridFunction, fit: ModulationFit, p: int | None = None) -> float:
    """Quadratic-plus-nonlinear energy of ``z = u - u~`` around the ansatz."""
    an = fit.ansatz
    p = an.params.p if p is None else p
    ut = an.u_tilde.samples
    z = u.samples - ut
    dx = u.dx
    zx = spectral_derivative(z, dx, 1)
    quad = 0.5 * np.sum(zx * zx + fit.c * z * z) * dx
    nl = np.sum((ut + z) ** (p + 1) - ut ** (p + 1) - (p + 1) * ut**p * z) * dx / (p + 1)
    return float(quad - nl)


# ---------------------------------------------------------------- time series


@dataclass
class DiagnosticsSample:
    t: float
    c: float
    rho: float
    mass: float
    energy: float
    z_h1: float
    u_h1: float
    virial: float
    lyapunov: float
    weighted_l2: float
    c0: float
    rho0: float
    c1_proxy: float = float("nan")
    rho1_proxy: float = float("nan")


def diagnostics(t: float, u: GridFunction, fit: ModulationFit, ref, A0: float = 20.0) -> DiagnosticsSample:
    from .soliton import energy, mass

    p = fit.ansatz.params.p
    z = u.samples - fit.ansatz.u_tilde.samples
    y = u.x - fit.rho
    dx = u.dx
    return DiagnosticsSample(
        t=t, c=fit.c, rho=fit.rho, mass=mass(u), energy=energy(u, p), z_h1=fit.z_h1,
        u_h1=h1_norm_samples(u.samples, dx),
        virial=float(np.sum(z * z * virial_weight(A0, y)) * dx),
        lyapunov=lyapunov(u, fit),
        weighted_l2=float(np.sum(z * z * np.exp(-np.abs(y) / A0)) * dx),
        c0=float(ref[0]), rho0=float(ref[1]),
    )


def modulation_rates(samples: list, spec: ControlSpec) -> list:
    """Fill ``c1_proxy = |c' - eps f1|`` and ``rho1_proxy = |rho' - c - eps f2|``.

    Derivatives are centred differences over the output nodes, one-sided at the ends.
    """
    if len(samples) < 3:
        raise DomainError("need at least three samples")
    t = np.array([s.t for s in samples])
    c = np.array([s.c for s in samples])
    rho = np.array([s.rho for s in samples])
    dc = np.gradient(c, t)
    drho = np.gradient(rho, t)
    eps = spec.eps
    for k, s in enumerate(samples):
        st = SolitonParams(spec.p, s.c, s.rho)
        ref = (s.c0, s.rho0)
        s.c1_proxy = float(abs(dc[k] - eps * compute_f1(st, ref, spec)))
        s.rho1_proxy = float(abs(drho[k] - s.c - eps * compute_f2(st, ref, spec)))
    return samples


def integrated_c1(samples: list) -> float:
    t = np.array([s.t for s in samples])
    v = np.array([s.c1_proxy for s in samples])
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)))


RECORD_COLUMNS = ["t", "c", "rho", "mass", "energy", "z_h1", "virial", "lyapunov", "c1_proxy", "rho1_proxy"]


def write_record_csv(path, samples: list, columns=RECORD_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for s in samples:
            w.writerow([repr(float(getattr(s, k))) for k in columns])


def read_record_csv(path) -> list:
    names = {f.name for f in fields(DiagnosticsSample)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({k: float(v) for k, v in row.items() if k in names})
    return out
