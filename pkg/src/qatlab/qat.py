"""The quantum Arnold transformation between an LSODE system and the free particle.

Forward map, for a state phi at time t in the validity window::

    tau   = u1 / u2
    kappa = (x - u_p) / u2
    varphi(kappa) = sqrt(u2) * exp(-i Phi(x)) * phi(x)

with the phase

    Phi(x) = (m / 2 hbar) (u2' / (W u2)) (x - u_p)^2 + (m / hbar) (u_p' / W) x
             + (m / 2 hbar) A_p(t),
    A_p(t) = int_0^t (u_p^2 w^2 - u_p'^2) / W dt'.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from . import quadrature
from .classical import SAMPLE_DT, ClassicalBasis, LsodeSpec, solve_basis
from .errors import GridMismatch, InsufficientSamples, OutsideWindow, TimeNotInImage
from .wavegrid import (Frame, WaveFunction, derivative, dilate_array, translate_array)

TAU_XTOL = 1e-12


class QatContext:
    """A system, its classical basis and the cached action integral A_p."""

    def __init__(self, spec: LsodeSpec, basis: ClassicalBasis, tol: float = 1e-10):
        if not basis.window[1] > basis.window[0]:
            raise OutsideWindow("empty validity window")
        self.spec = spec
        self.basis = basis
        self.forced = spec.forced
        self._ap = None
        if self.forced:
            self._ap = self._action_spline(tol)

    @classmethod
    def build(cls, spec: LsodeSpec, t_max: float, t_min: float = 0.0) -> "QatContext":
        return cls(spec, solve_basis(spec, t_max, t_min))

    @property
    def m(self) -> float:
        return self.spec.mass

    @property
    def hbar(self) -> float:
        return self.spec.hbar

    def _action_integrand(self, t):
        v = self.basis.values(t)
        return (v[4] ** 2 * self.spec.w2(t) - v[5] ** 2) / self.W(t)

    def _action_spline(self, tol):
        lo, hi = self.basis.span
        n_neg = int(math.ceil(-lo / SAMPLE_DT)) if lo < 0 else 0
        n_pos = int(math.ceil(hi / SAMPLE_DT)) if hi > 0 else 0
        grid = np.concatenate([np.linspace(lo, 0.0, n_neg + 1)[:-1] if n_neg else [],
                               np.linspace(0.0, hi, n_pos + 1)])
        vals = quadrature.cumulative(self._action_integrand, grid, n_neg, tol)
        return CubicHermiteSpline(grid, vals, self._action_integrand(grid))

    def A_p(self, t):
        if self._ap is None:
            return np.zeros_like(np.asarray(t, dtype=float))
        return self._ap(np.asarray(t, dtype=float))

    def W(self, t):
        return self.spec.wronskian(t)

    def with_basis(self, basis: ClassicalBasis) -> "QatContext":
        ctx = object.__new__(QatContext)
        ctx.spec, ctx.basis, ctx.forced, ctx._ap = self.spec, basis, self.forced, self._ap
        return ctx

    def phase(self, t: float, x: np.ndarray) -> np.ndarray:
        """Phi(x) at time t (see module docstring)."""
        u1, u1d, u2, u2d, up, upd = (float(v) for v in self.basis.values(t))
        w = float(self.W(t))
        c = self.m / self.hbar
        out = 0.5 * c * u2d / (w * u2) * (x - up) ** 2
        if self.forced:
            out = out + c * upd / w * x + 0.5 * c * float(self.A_p(t))
        return out


# ---------------------------------------------------------------- time map

def map_time(ctx: QatContext, t: float) -> float:
    """tau = u1(t) / u2(t)."""
    ctx.basis.require_window(t)
    return float(ctx.basis.u1(t) / ctx.basis.u2(t))


def time_from_tau(ctx: QatContext, tau: float) -> float:
    """Invert map_time by bracketing and Brent's method on the monotone branch."""
    if tau == 0:
        return 0.0
    lo, hi = ctx.basis.window
    edge = hi if tau > 0 else lo
    # stay just inside an open edge at a zero of u2
    inner = edge - math.copysign(1e-13 * max(1.0, abs(edge)), edge) if edge in ctx.basis.u2_zeros else edge
    if inner == 0.0:
        raise TimeNotInImage(f"tau={tau:g} outside the image of the window")

    def g(s):
        return float(ctx.basis.u1(s) / ctx.basis.u2(s)) - tau

    if g(inner) * (1 if tau > 0 else -1) < 0:
        raise TimeNotInImage(f"tau={tau:g} outside the image of the window")
    return float(brentq(g, 0.0, inner, xtol=TAU_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500))


# ---------------------------------------------------------------- forward / inverse

def qat_forward(ctx: QatContext, phi: WaveFunction) -> WaveFunction:
    """LSODE-frame state at time t -> free-frame state at tau = u1/u2.

    Applied as: shift by u_p, multiply by the phase exp(-i Phi), then the
    unitary dilation kappa = (x - u_p)/u2 carrying the sqrt(u2) factor.
    """
    if phi.frame is not Frame.LSODE:
        raise GridMismatch("qat_forward expects an LSODE-frame wavefunction")
    t = phi.time_label
    tau = map_time(ctx, t)
    u2, up = float(ctx.basis.u2(t)), float(ctx.basis.up(t))
    x = phi.grid.x
    shifted = translate_array(phi.amplitudes, phi.grid, -up)
    phased = shifted * np.exp(-1j * ctx.phase(t, x + up))
    out = dilate_array(phased, phi.grid, 1.0 / u2)
    return WaveFunction(phi.grid, out, tau, Frame.FREE, phi.flags)


def qat_inverse(ctx: QatContext, varphi: WaveFunction) -> WaveFunction:
    """Free-frame state at tau -> LSODE-frame state at the t with u1/u2 = tau."""
    if varphi.frame is not Frame.FREE:
        raise GridMismatch("qat_inverse expects a free-frame wavefunction")
    t = time_from_tau(ctx, varphi.time_label)
    return inverse_at(ctx, varphi.amplitudes, varphi.grid, t, varphi.flags)


def inverse_at(ctx: QatContext, arr, grid, t: float, flags=frozenset()) -> WaveFunction:
    u2, up = float(ctx.basis.u2(t)), float(ctx.basis.up(t))
    x = grid.x
    out = dilate_array(arr, grid, u2)
    out = translate_array(out, grid, up)
    out = out * np.exp(1j * ctx.phase(t, x))
    return WaveFunction(grid, out, t, Frame.LSODE, flags)


# ---------------------------------------------------------------- Hamiltonian and residual

def hamiltonian_apply(spec: LsodeSpec, arr: np.ndarray, grid, t: float) -> np.ndarray:
    """H(t) = -(hbar^2/2m) e^{-f} d^2 + (m w^2 x^2/2 - m Lambda x) e^{f}."""
    m, hbar = spec.mass, spec.hbar
    x = grid.x
    ef = float(np.exp(spec.f(t)))
    pot = (0.5 * m * float(spec.w2(t)) * x ** 2 - m * float(spec.lam(t)) * x) * ef
    return -(hbar ** 2 / (2 * m)) / ef * derivative(arr, grid, 2) + pot * arr


def free_hamiltonian_apply(arr: np.ndarray, grid, m: float, hbar: float) -> np.ndarray:
    return -(hbar ** 2 / (2 * m)) * derivative(arr, grid, 2)


def schrodinger_residual(spec: LsodeSpec, psi_series, rtol_spacing: float = 1e-6) -> float:
    """Relative residual of i hbar d/dt psi = H psi on a time series.

    The time derivative is the central difference of neighbouring samples;
    each interior sample contributes max|i hbar dpsi/dt - H psi| / max|H psi|
    and the largest value is returned. Free-frame series are checked against
    the free Hamiltonian with the same m and hbar.
    """
    series = list(psi_series)
    if len(series) < 3:
        raise InsufficientSamples("need at least three time samples")
    times = np.array([p.time_label for p in series])
    steps = np.diff(times)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=rtol_spacing, atol=0.0):
        raise InsufficientSamples("time samples must be strictly increasing and equally spaced")
    dt = steps.mean()
    grid = series[0].grid
    frame = series[0].frame
    if any(p.grid != grid or p.frame is not frame for p in series):
        raise GridMismatch("series mixes grids or frames")
    worst = 0.0
    for j in range(1, len(series) - 1):
        lhs = 1j * spec.hbar * (series[j + 1].amplitudes - series[j - 1].amplitudes) / (2 * dt)
        if frame is Frame.FREE:
            rhs = free_hamiltonian_apply(series[j].amplitudes, grid, spec.mass, spec.hbar)
        else:
            rhs = hamiltonian_apply(spec, series[j].amplitudes, grid, series[j].time_label)
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))))
    return worst


def sample_times(center: float, delta: float, count: int = 3) -> np.ndarray:
    """``count`` equally spaced times centred on ``center``."""
    half = (count - 1) / 2
    return center + delta * (np.arange(count) - half)
