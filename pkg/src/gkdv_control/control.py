"""Control profile, slow parameter ODE and the space-time bilinear control."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .grid import DomainError
from .soliton import SolitonParams, check_p, eval_Qc, quadrature_constants


class IntegrationError(RuntimeError):
    pass


class TrajectoryRangeError(ValueError):
    pass


def a_infinity(p: int, c_f: float, lambda_p: float) -> float:
    """Profile amplitude that steers the soliton speed from 1 to ``c_f``."""
    check_p(p)
    if not c_f > 0:
        raise DomainError(f"c_f must be positive, got {c_f}")
    if p == 2:
        return -np.log(c_f) / lambda_p
    return (p - 1) / (lambda_p * (p - 2)) * (1.0 - c_f ** ((p - 2) / (p - 1)))


@dataclass(frozen=True)
class ControlSpec:
    p: int
    c_f: float
    eps: float
    delta0: float = 0.05
    gamma0: float = 1.0
    a_inf: float = field(init=False)

    def __post_init__(self):
        check_p(self.p)
        if not self.c_f > 0:
            raise DomainError("c_f must be positive")
        if not (self.eps > 0 and self.delta0 > 0 and self.gamma0 > 0):
            raise DomainError("eps, delta0 and gamma0 must be positive")
        lam = quadrature_constants(self.p).lambda_p
        object.__setattr__(self, "a_inf", a_infinity(self.p, self.c_f, lam))

    @property
    def lambda_p(self) -> float:
        return quadrature_constants(self.p).lambda_p

    @property
    def rho_start(self) -> float:
        return -self.eps ** (-1.0 - self.delta0)

    @property
    def interaction_time(self) -> float:
        return self.eps ** (-1.0 - self.delta0)

    @property
    def c_min(self) -> float:
        return 0.5 * min(self.c_f, 1.0)

    @property
    def c_max(self) -> float:
        return 2.0 * max(1.0, self.c_f)


def eval_a0(spec: ControlSpec, x):
    """``a0(x) = (a_inf/2)(1 + tanh(gamma0 x))``."""
    return 0.5 * spec.a_inf * (1.0 + np.tanh(spec.gamma0 * np.asarray(x, dtype=float)))


def eval_a0_deriv(spec: ControlSpec, x, k: int = 1):
    if k == 0:
        return eval_a0(spec, x)
    if k not in (1, 2, 3):
        raise DomainError(f"derivative order must be 0..3, got {k}")
    g = spec.gamma0
    th = np.tanh(g * np.asarray(x, dtype=float))
    s2 = 1.0 - th * th
    amp = 0.5 * spec.a_inf
    if k == 1:
        return amp * g * s2
    if k == 2:
        return -2.0 * amp * g**2 * th * s2
    return amp * g**3 * s2 * (4.0 * th * th - 2.0 * s2)


def f1_leading(spec: ControlSpec, c, rho):
    """``-lambda_p a0'(eps rho) c^{p/(p-1)}``."""
    p = spec.p
    return -spec.lambda_p * eval_a0_deriv(spec, spec.eps * rho, 1) * c ** (p / (p - 1.0))


def closed_form_c0(spec: ControlSpec, rho0, a0_offset: float = 0.0):
    """Leading-order speed as a function of position.

    ``a0_offset`` is ``a0(eps rho0(0))``; the exact ODE solution is recovered
    with it, the asymptotic formula with the default 0.
    """
    p = spec.p
    a = np.asarray(eval_a0(spec, spec.eps * np.asarray(rho0, dtype=float))) - a0_offset
    if p == 2:
        out = np.exp(-spec.lambda_p * a)
    else:
        bracket = 1.0 - spec.lambda_p * (p - 2) / (p - 1) * a
        if np.any(bracket <= 0):
            raise DomainError("non-positive bracket: a0 too large for the power-law branch")
        out = bracket ** ((p - 1) / (p - 2))
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ParameterTrajectory:
    """(c0, rho0) on a uniform time grid with Hermite cubic interpolation."""

    times: np.ndarray
    c0: np.ndarray
    rho0: np.ndarray
    dc0: np.ndarray
    drho0: np.ndarray
    step_times: np.ndarray = field(default=None, repr=False)
    step_c0: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_ci", CubicHermiteSpline(self.times, self.c0, self.dc0))
        object.__setattr__(self, "_ri", CubicHermiteSpline(self.times, self.rho0, self.drho0))

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def _check(self, t):
        tt = np.asarray(t)
        tol = 1e-9 * max(1.0, self.t_end)
        if np.any(tt < self.times[0] - tol) or np.any(tt > self.times[-1] + tol):
            raise TrajectoryRangeError(f"t={t} outside [{self.times[0]}, {self.times[-1]}]")

    def at(self, t):
        self._check(t)
        return float(self._ci(t)), float(self._ri(t))

    def rates(self, t):
        self._check(t)
        return float(self._ci(t, 1)), float(self._ri(t, 1))


def _rhs(spec: ControlSpec):
    eps, lam, p = spec.eps, spec.lambda_p, spec.p
    expo = p / (p - 1.0)

    def f(t, y):
        c, r = y
        return [-eps * lam * eval_a0_deriv(spec, eps * r, 1) * c**expo, c]

    return f


def integrate_parameter_ode(
    spec: ControlSpec, t_end: float, stride: float = 0.05, tol: float = 1e-10
) -> ParameterTrajectory:
    """Adaptive embedded Runge-Kutta solve of the slow ODE from (1, -eps^{-1-delta0})."""
    if not t_end > 0:
        raise DomainError("t_end must be positive")
    f = _rhs(spec)
    sol = solve_ivp(
        f, (0.0, t_end), [1.0, spec.rho_start], method="DOP853",
        rtol=tol, atol=tol, dense_output=True,
    )
    if sol.status != 0:
        raise IntegrationError(sol.message)
    c_steps = sol.y[0]
    if np.any(c_steps < spec.c_min) or np.any(c_steps > spec.c_max):
        raise IntegrationError("parameter ODE left the box [c_m, c_M]")
    n = max(2, int(np.ceil(t_end / stride)) + 1)
    times = np.linspace(0.0, t_end, n)
    c0, rho0 = sol.sol(times)
    dc0 = np.array([f(t, (c, r))[0] for t, c, r in zip(times, c0, rho0)])
    return ParameterTrajectory(times, c0, rho0, dc0, c0.copy(), sol.t, c_steps)


def transit_time(spec: ControlSpec, t_max: float | None = None) -> float:
    """First time with ``rho0(t) = +eps^{-1-delta0}``, mirror image of the start.

    ``a0`` is then as close to ``a_inf`` as it was to 0 at t = 0.
    """
    target = -spec.rho_start
    t_max = 5.0 * spec.interaction_time if t_max is None else t_max

    def hit(t, y):
        return y[1] - target

    hit.terminal = True
    sol = solve_ivp(_rhs(spec), (0.0, t_max), [1.0, spec.rho_start], method="DOP853",
                    rtol=1e-10, atol=1e-10, events=hit)
    if not sol.t_events[0].size:
        raise IntegrationError("soliton does not complete the transit before t_max")
    return float(sol.t_events[0][0])


def eval_control(spec: ControlSpec, traj: ParameterTrajectory, t: float, x):
    """``a(t,x) = -eps a0'(eps x) Q_{c0(t)}(x - rho0(t))``."""
    c0, r0 = traj.at(t)
    x = np.asarray(x, dtype=float)
    return -spec.eps * eval_a0_deriv(spec, spec.eps * x, 1) * eval_Qc(SolitonParams(spec.p, c0), x - r0)


def eval_control_from_params(spec: ControlSpec, c0: float, rho0: float, x):
    x = np.asarray(x, dtype=float)
    return -spec.eps * eval_a0_deriv(spec, spec.eps * x, 1) * eval_Qc(SolitonParams(spec.p, c0), x - rho0)
