"""Classical side of the transformation.

An :class:`LsodeSpec` describes x'' + f'(t) x' + w^2(t) x = Lambda(t) together with
the mass and hbar of the quantum problem. :func:`solve_basis` integrates the
normalized solution pair (u1, u2) and the particular solution u_p, and
:func:`analytic_basis_damped_ho` gives the closed forms for constant damping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from . import quadrature
from .errors import IntegrationFailure, NonFiniteCoefficient, OutsideWindow, UnknownPreset

RTOL = 1e-10
ATOL = 1e-12
SAMPLE_DT = 1e-3
ZERO_XTOL = 1e-10
FD_STEP = 1e-6

ScalarFn = Callable[[np.ndarray], np.ndarray]


def _zero(t):
    return np.zeros_like(np.asarray(t, dtype=float))


def evaluate(fn: ScalarFn, t) -> np.ndarray:
    """Evaluate a coefficient function, broadcasting scalar returns to the shape of t."""
    t = np.asarray(t, dtype=float)
    try:
        val = np.asarray(fn(t), dtype=float)
        if val.shape != t.shape:
            val = np.broadcast_to(val, t.shape).copy()
    except (TypeError, ValueError):
        val = np.vectorize(lambda s: float(fn(float(s))))(t)
    return val


@dataclass(frozen=True, eq=False)
class LsodeSpec:
    """Coefficients of x'' + f' x' + w^2 x = Lambda plus the mass and hbar.

    ``forcing_lambda=None`` marks the homogeneous case. ``friction_rate`` is
    the derivative f'(t); when absent it is taken by central differences.
    """

    friction_f: ScalarFn = _zero
    omega_sq: ScalarFn = _zero
    forcing_lambda: ScalarFn | None = None
    mass: float = 1.0
    hbar: float = 1.0
    friction_rate: ScalarFn | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")

    @property
    def forced(self) -> bool:
        return self.forcing_lambda is not None

    def f(self, t):
        return evaluate(self.friction_f, t)

    def fdot(self, t):
        if self.friction_rate is not None:
            return evaluate(self.friction_rate, t)
        t = np.asarray(t, dtype=float)
        h = FD_STEP * np.maximum(1.0, np.abs(t))
        return (self.f(t + h) - self.f(t - h)) / (2 * h)

    def w2(self, t):
        return evaluate(self.omega_sq, t)

    def lam(self, t):
        if self.forcing_lambda is None:
            return _zero(t)
        return evaluate(self.forcing_lambda, t)

    def wronskian(self, t):
        """The exact Wronskian exp(-f) of a normalized basis."""
        return np.exp(-self.f(t))

    def check_finite(self, t) -> None:
        for label, fn in (("f", self.f), ("f'", self.fdot), ("omega^2", self.w2), ("Lambda", self.lam)):
            vals = fn(t)
            if not np.all(np.isfinite(vals)):
                bad = np.asarray(t)[~np.isfinite(vals)]
                raise NonFiniteCoefficient(f"{label} is not finite at t={bad.flat[0]:g}")

    def homogeneous(self) -> "LsodeSpec":
        return LsodeSpec(self.friction_f, self.omega_sq, None, self.mass, self.hbar,
                         self.friction_rate, self.name, dict(self.params))


# ---------------------------------------------------------------- presets

def _linear_friction(gamma):
    return (lambda t: gamma * np.asarray(t, dtype=float),
            lambda t: np.full_like(np.asarray(t, dtype=float), gamma))


def _const(value):
    return lambda t: np.full_like(np.asarray(t, dtype=float), value)


PRESETS = ("free", "damped_particle", "harmonic", "damped_harmonic", "forced_damped_harmonic")


def preset(name: str, *, gamma: float | None = None, omega: float | None = None,
           amplitude: float = 1.0, drive: float = 2.0, mass: float = 1.0,
           hbar: float = 1.0) -> LsodeSpec:
    """Named systems. Defaults: damped_particle gamma=1; the oscillators use
    gamma=0.2, omega=1; the forced oscillator is driven by amplitude*cos(drive*t)."""
    if name == "free":
        return LsodeSpec(mass=mass, hbar=hbar, friction_rate=_zero, name=name)
    if name == "damped_particle":
        g = 1.0 if gamma is None else gamma
        f, fd = _linear_friction(g)
        return LsodeSpec(f, _zero, None, mass, hbar, fd, name, {"gamma": g, "omega": 0.0})
    if name == "harmonic":
        w = 1.0 if omega is None else omega
        return LsodeSpec(_zero, _const(w * w), None, mass, hbar, _zero, name, {"gamma": 0.0, "omega": w})
    if name in ("damped_harmonic", "forced_damped_harmonic"):
        g = 0.2 if gamma is None else gamma
        w = 1.0 if omega is None else omega
        f, fd = _linear_friction(g)
        params = {"gamma": g, "omega": w}
        forcing = None
        if name == "forced_damped_harmonic":
            forcing = lambda t: amplitude * np.cos(drive * np.asarray(t, dtype=float))  # noqa: E731
            params.update(amplitude=amplitude, drive=drive)
        return LsodeSpec(f, _const(w * w), forcing, mass, hbar, fd, name, params)
    raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


# ---------------------------------------------------------------- basis

class ClassicalBasis:
    """Evaluable u1, u2, u_p and first derivatives on a closed time span.

    ``window`` is the open interval around 0 on which u2 has no zero. The
    functions remain evaluable on the whole ``span``; callers that need the
    transformation itself check :meth:`in_window`.
    """

    def __init__(self, evaluator, span, wronskian=None, forced=False, label="basis",
                 zero_scan=None):
        self._eval = evaluator
        self.span = (float(span[0]), float(span[1]))
        self._wronskian = wronskian
        self.forced = forced
        self.label = label
        self.u2_zeros = self._locate_u2_zeros(zero_scan)
        neg = [z for z in self.u2_zeros if z < 0]
        pos = [z for z in self.u2_zeros if z > 0]
        self.window = (max(neg) if neg else self.span[0], min(pos) if pos else self.span[1])
        self.clipped = bool(neg or pos)

    # raw evaluation -------------------------------------------------
    def values(self, t) -> np.ndarray:
        """Array (u1, u1', u2, u2', up, up') stacked on the first axis."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.span
        tol = 1e-12 * max(1.0, hi - lo)
        if np.any(t < lo - tol) or np.any(t > hi + tol):
            raise OutsideWindow(f"t outside the computed span [{lo:g}, {hi:g}]")
        return self._eval(np.clip(t, lo, hi))

    def u1(self, t):
        return self.values(t)[0]

    def u1dot(self, t):
        return self.values(t)[1]

    def u2(self, t):
        return self.values(t)[2]

    def u2dot(self, t):
        return self.values(t)[3]

    def up(self, t):
        return self.values(t)[4]

    def updot(self, t):
        return self.values(t)[5]

    def wronskian(self, t):
        """u1' u2 - u1 u2' from the stored solutions."""
        v = self.values(t)
        return v[1] * v[2] - v[0] * v[3]

    def exact_wronskian(self, t):
        if self._wronskian is None:
            return self.wronskian(t)
        return self._wronskian(t)

    # window ---------------------------------------------------------
    def in_window(self, t) -> bool:
        lo, hi = self.window
        t = np.asarray(t, dtype=float)
        lo_ok = t > lo if lo in self.u2_zeros else t >= lo
        hi_ok = t < hi if hi in self.u2_zeros else t <= hi
        return bool(np.all(lo_ok & hi_ok))

    def require_window(self, t) -> None:
        if not self.in_window(t):
            raise OutsideWindow(f"t={float(np.max(t)):g} outside validity window "
                                f"({self.window[0]:g}, {self.window[1]:g})")

    def zeros_between(self, t: float) -> int:
        """Number of u2 zeros strictly between 0 and t."""
        if t >= 0:
            return sum(1 for z in self.u2_zeros if 0 < z < t)
        return sum(1 for z in self.u2_zeros if t < z < 0)

    def _locate_u2_zeros(self, scan):
        lo, hi = self.span
        if scan is None:
            scan = np.linspace(lo, hi, max(2, int(math.ceil((hi - lo) / 0.01)) + 1))
        vals = self._eval(scan)[2]
        zeros = []
        for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
            z = brentq(lambda s: float(self._eval(np.array([s]))[2][0]), scan[i], scan[i + 1],
                       xtol=ZERO_XTOL * 1e-2, rtol=4 * np.finfo(float).eps)
            zeros.append(float(z))
        zeros += [float(s) for s in scan[vals == 0.0] if s != 0.0]
        return tuple(sorted(zeros))

    # SL(2) reparametrization ----------------------------------------
    def shifted(self, a: float, b: float, c: float, d: float) -> "ClassicalBasis":
        """Basis with u1 -> a u1 + b u2, u2 -> c u1 + d u2 (u_p unchanged)."""
        base = self._eval

        def evaluator(t):
            v = base(t)
            out = v.copy()
            out[0] = a * v[0] + b * v[2]
            out[1] = a * v[1] + b * v[3]
            out[2] = c * v[0] + d * v[2]
            out[3] = c * v[1] + d * v[3]
            return out

        return ClassicalBasis(evaluator, self.span, self._wronskian, self.forced,
                              f"{self.label}-shifted")


# ---------------------------------------------------------------- numerical basis

def _rhs(spec: LsodeSpec):
    def rhs(t, y):
        fd = float(spec.fdot(t))
        w2 = float(spec.w2(t))
        lam = float(spec.lam(t))
        return [y[1], -fd * y[1] - w2 * y[0],
                y[3], -fd * y[3] - w2 * y[2],
                y[5], -fd * y[5] - w2 * y[4] + lam]
    return rhs


def _integrate_leg(spec: LsodeSpec, t_end: float):
    n = max(2, int(math.ceil(abs(t_end) / SAMPLE_DT)) + 1)
    ts = np.linspace(0.0, t_end, n)
    if t_end == 0.0:
        return ts[:1], np.array([[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]]).T
    sol = solve_ivp(_rhs(spec), (0.0, t_end), [0.0, 1.0, 1.0, 0.0, 0.0, 0.0], method="RK45",
                    rtol=RTOL, atol=ATOL, t_eval=ts)
    if sol.status != 0:
        raise IntegrationFailure(sol.message)
    return ts, sol.y


def solve_basis(spec: LsodeSpec, t_max: float, t_min: float = 0.0) -> ClassicalBasis:
    """Integrate u1, u2 (and u_p) on [t_min, t_max] with Dormand-Prince 5(4).

    Samples are stored every ~1e-3 and joined by cubic Hermite splines that use
    the ODE itself for the second derivative, so u and u' are both smooth.
    The integration covers the full span; ``window`` is clipped at the zeros
    of u2 closest to 0 (see ``basis.clipped``).
    """
    if not t_min <= 0.0 <= t_max:
        raise ValueError("need t_min <= 0 <= t_max")
    probe = np.linspace(t_min, t_max, max(3, int(math.ceil((t_max - t_min) / SAMPLE_DT)) + 1))
    spec.check_finite(probe)
    ts_p, ys_p = _integrate_leg(spec, t_max)
    ts_n, ys_n = _integrate_leg(spec, t_min)
    ts = np.concatenate([ts_n[:0:-1], ts_p])
    ys = np.concatenate([ys_n[:, :0:-1], ys_p], axis=1)
    fd, w2, lam = spec.fdot(ts), spec.w2(ts), spec.lam(ts)
    acc = np.empty_like(ys)
    acc[0], acc[2], acc[4] = ys[1], ys[3], ys[5]
    acc[1] = -fd * ys[1] - w2 * ys[0]
    acc[3] = -fd * ys[3] - w2 * ys[2]
    acc[5] = -fd * ys[5] - w2 * ys[4] + lam
    if len(ts) == 1:
        raise ValueError("empty time span")
    spline = CubicHermiteSpline(ts, ys, acc, axis=1)

    def evaluator(t):
        return spline(np.asarray(t, dtype=float))

    return ClassicalBasis(evaluator, (t_min, t_max), spec.wronskian, spec.forced,
                          f"{spec.name}-numerical", zero_scan=ts)


# ---------------------------------------------------------------- closed forms

def _sc(q: float, t: np.ndarray):
    """S = sin(sqrt(q) t)/sqrt(q) and C = cos(sqrt(q) t), continued to q <= 0."""
    if q > 0:
        r = math.sqrt(q)
        return np.sin(r * t) / r, np.cos(r * t)
    if q < 0:
        r = math.sqrt(-q)
        return np.sinh(r * t) / r, np.cosh(r * t)
    return t.copy(), np.ones_like(t)


def analytic_basis_damped_ho(gamma: float, omega: float, span=(-10.0, 10.0)) -> ClassicalBasis:
    """Closed-form normalized basis for x'' + gamma x' + omega^2 x = 0.

    Covers the underdamped (trigonometric), critical (polynomial) and
    overdamped (hyperbolic) regimes.
    """
    if gamma < 0 or omega < 0:
        raise ValueError("gamma and omega must be non-negative")
    q = omega * omega - gamma * gamma / 4.0
    half = gamma / 2.0

    def evaluator(t):
        t = np.asarray(t, dtype=float)
        s, c = _sc(q, t)
        e = np.exp(-half * t)
        zero = np.zeros_like(t)
        return np.stack([e * s, e * (c - half * s), e * (c + half * s), -omega * omega * e * s,
                         zero, zero])

    return ClassicalBasis(evaluator, span, lambda t: np.exp(-gamma * np.asarray(t, dtype=float)),
                          False, f"dho-analytic(gamma={gamma:g}, omega={omega:g})")


# ---------------------------------------------------------------- particular solution

@dataclass(frozen=True)
class ParticularSolution:
    up: Callable
    updot: Callable
    K1: Callable
    K2: Callable


def particular_solution(spec: LsodeSpec, basis: ClassicalBasis, tol: float = 1e-12) -> ParticularSolution:
    """u_p = K1 u1 + K2 u2 with K1 = int (u2/W) Lambda, K2 = -int (u1/W) Lambda.

    The running integrals are taken panel by panel on a ~1e-3 grid with
    adaptive Gauss-Legendre quadrature and joined by Hermite splines whose
    slopes are the exact integrands.
    """
    lo, hi = basis.span
    if not spec.forced:
        zero = lambda t: np.zeros_like(np.asarray(t, dtype=float))  # noqa: E731
        return ParticularSolution(zero, zero, zero, zero)
    n_neg = max(1, int(math.ceil(-lo / SAMPLE_DT))) if lo < 0 else 0
    n_pos = max(1, int(math.ceil(hi / SAMPLE_DT))) if hi > 0 else 0
    grid = np.concatenate([np.linspace(lo, 0.0, n_neg + 1)[:-1] if n_neg else [],
                           np.linspace(0.0, hi, n_pos + 1)])
    origin = n_neg

    def k1dot(t):
        return basis.u2(t) / spec.wronskian(t) * spec.lam(t)

    def k2dot(t):
        return -basis.u1(t) / spec.wronskian(t) * spec.lam(t)

    K1s = quadrature.cumulative(k1dot, grid, origin, tol)
    K2s = quadrature.cumulative(k2dot, grid, origin, tol)
    K1 = CubicHermiteSpline(grid, K1s, k1dot(grid))
    K2 = CubicHermiteSpline(grid, K2s, k2dot(grid))

    def up(t):
        v = basis.values(t)
        return K1(t) * v[0] + K2(t) * v[2]

    def updot(t):
        v = basis.values(t)
        return K1(t) * v[1] + K2(t) * v[3]

    return ParticularSolution(up, updot, K1, K2)


def particular_residual(spec: LsodeSpec, up, updot, ts, h: float = 1e-3) -> float:
    """max |u_p'' + f' u_p' + w^2 u_p - Lambda| with u_p'' from a 4th-order difference of u_p'."""
    ts = np.asarray(ts, dtype=float)
    acc = (-updot(ts + 2 * h) + 8 * updot(ts + h) - 8 * updot(ts - h) + updot(ts - 2 * h)) / (12 * h)
    res = acc + spec.fdot(ts) * updot(ts) + spec.w2(ts) * up(ts) - spec.lam(ts)
    return float(np.max(np.abs(res)))


def homogeneous_residual(spec: LsodeSpec, u, udot, ts, h: float = 1e-3) -> float:
    """Same check as :func:`particular_residual` for the homogeneous equation."""
    ts = np.asarray(ts, dtype=float)
    acc = (-udot(ts + 2 * h) + 8 * udot(ts + h) - 8 * udot(ts - h) + udot(ts - 2 * h)) / (12 * h)
    return float(np.max(np.abs(acc + spec.fdot(ts) * udot(ts) + spec.w2(ts) * u(ts))))
