"""Three independent routes to the evolution operator U(t).

* ``evolve_qat_exact``: the factorized operator built from the classical basis.
* ``evolve_crank_nicolson``: midpoint Crank-Nicolson with a 4th-order
  finite-difference Laplacian, used as the reference integrator.
* ``magnus_omega`` / ``magnus_omega6_dho``: truncated Magnus exponents,
  exponentiated with :func:`matrix_exponential`.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import expm, solve_banded

from .classical import LsodeSpec
from .errors import OutsideWindow, SolverDivergence, SupportOverflow
from .qat import QatContext
from .wavegrid import (BOUNDARY_MASS_TOL, Frame, Grid, WaveFunction, boundary_mass,
                       dilate_array, free_evolve_array, translate_array)

U2_SINGULAR = 1e-8
CN_NORM_TOL = 1e-10
_GL_X, _GL_W = leggauss(16)


class Mode(enum.Enum):
    QAT_EXACT = "qat_exact"
    CRANK_NICOLSON = "crank_nicolson"
    MAGNUS = "magnus"


# ---------------------------------------------------------------- exact factorization

def maslov_phase(ctx: QatContext, t: float) -> complex:
    """exp(-i pi k/2) for k zeros of u2 crossed between 0 and t (sign follows t)."""
    k = ctx.basis.zeros_between(t)
    return complex(np.exp(-0.5j * np.pi * k * math.copysign(1.0, t)))


def qat_exact_array(ctx: QatContext, arr: np.ndarray, grid: Grid, t: float) -> np.ndarray:
    """U(t) on the last axis of ``arr``; applies dilation, shift, free kernel, phases.

    Past a zero of u2 the dilation factor is negative (a reflection) and the
    crossing is accounted for by :func:`maslov_phase`.
    """
    u1, _, u2, _, up, _ = (float(v) for v in ctx.basis.values(t))
    if abs(u2) < U2_SINGULAR:
        raise OutsideWindow(f"u2({t:g}) vanishes; the factorization is singular there")
    out = dilate_array(arr, grid, u2)
    out = translate_array(out, grid, up)
    out = free_evolve_array(out, grid, u1 * u2, ctx.m, ctx.hbar)
    out = out * np.exp(1j * ctx.phase(t, grid.x))
    return out * maslov_phase(ctx, t)


def qat_exact_adjoint_array(ctx: QatContext, arr: np.ndarray, grid: Grid, t: float) -> np.ndarray:
    u1, _, u2, _, up, _ = (float(v) for v in ctx.basis.values(t))
    if abs(u2) < U2_SINGULAR:
        raise OutsideWindow(f"u2({t:g}) vanishes; the factorization is singular there")
    out = np.asarray(arr) * np.exp(-1j * ctx.phase(t, grid.x)) * np.conj(maslov_phase(ctx, t))
    out = free_evolve_array(out, grid, -u1 * u2, ctx.m, ctx.hbar)
    out = translate_array(out, grid, -up)
    return dilate_array(out, grid, 1.0 / u2)


def evolve_qat_exact(ctx: QatContext, psi0: WaveFunction, t: float) -> WaveFunction:
    """Exact U(t) psi0 for psi0 given at t=0 in the LSODE frame.

    ``t`` may lie beyond a zero of u2 as long as it is inside the span the
    basis was computed on; see :func:`maslov_phase`.
    """
    if psi0.frame is not Frame.LSODE:
        raise ValueError("psi0 must be an LSODE-frame state")
    if psi0.time_label != 0.0:
        raise ValueError("psi0 must be given at t=0")
    out = qat_exact_array(ctx, psi0.amplitudes, psi0.grid, t)
    flags = psi0.flags
    if boundary_mass(out, psi0.grid) > BOUNDARY_MASS_TOL:
        warnings.warn(f"evolved state reaches the box boundary at t={t:g}", SupportOverflow, stacklevel=2)
        flags = flags | {"support_overflow"}
    return WaveFunction(psi0.grid, out, t, Frame.LSODE, flags)


def evolve_qat_exact_adjoint(ctx: QatContext, psi: WaveFunction) -> WaveFunction:
    """U(t)^dagger applied to a state labelled t, giving the t=0 state."""
    out = qat_exact_adjoint_array(ctx, psi.amplitudes, psi.grid, psi.time_label)
    return WaveFunction(psi.grid, out, 0.0, Frame.LSODE, psi.flags)


def qat_exact_matrix(ctx: QatContext, grid: Grid, t: float, adjoint: bool = False) -> np.ndarray:
    """Dense matrix of U(t) (or its adjoint) on the grid, column by column."""
    eye = np.eye(grid.n, dtype=complex)
    fn = qat_exact_adjoint_array if adjoint else qat_exact_array
    return fn(ctx, eye, grid, t).T


# ---------------------------------------------------------------- Crank-Nicolson

_FD4 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def _hamiltonian_bands(spec: LsodeSpec, grid: Grid, t: float):
    """Diagonal and the two off-diagonals of the finite-difference H(t)."""
    m, hbar = spec.mass, spec.hbar
    x = grid.x
    ef = float(np.exp(spec.f(t)))
    kin = -(hbar ** 2) / (2 * m) / ef / grid.dx ** 2
    pot = (0.5 * m * float(spec.w2(t)) * x ** 2 - m * float(spec.lam(t)) * x) * ef
    return kin * _FD4[2] + pot, kin * _FD4[1], kin * _FD4[0]


def _cn_step(spec: LsodeSpec, grid: Grid, psi: np.ndarray, t: float, dt: float) -> np.ndarray:
    d0, d1, d2 = _hamiltonian_bands(spec, grid, t + 0.5 * dt)
    a = 0.5j * dt / spec.hbar
    n = grid.n
    rhs = (1 - a * d0) * psi
    rhs[1:] -= a * d1 * psi[:-1]
    rhs[:-1] -= a * d1 * psi[1:]
    rhs[2:] -= a * d2 * psi[:-2]
    rhs[:-2] -= a * d2 * psi[2:]
    ab = np.empty((5, n), dtype=complex)
    ab[0] = a * d2
    ab[1] = a * d1
    ab[2] = 1 + a * d0
    ab[3] = a * d1
    ab[4] = a * d2
    return solve_banded((2, 2), ab, rhs, check_finite=False)


def _cn_segment(spec, grid, psi, t0, t1, dt):
    span = t1 - t0
    if span == 0:
        return psi
    steps = max(1, int(math.ceil(abs(span) / dt - 1e-9)))
    h = span / steps
    norm0 = float(np.vdot(psi, psi).real)
    for i in range(steps):
        psi = _cn_step(spec, grid, psi, t0 + i * h, h)
    norm1 = float(np.vdot(psi, psi).real)
    if not np.isfinite(norm1):
        raise SolverDivergence("non-finite amplitudes in Crank-Nicolson stepping")
    if abs(norm1 - norm0) > CN_NORM_TOL * steps * max(norm0, 1.0):
        raise SolverDivergence(f"norm drift {abs(norm1 - norm0):.3e} over {steps} steps")
    return psi


def evolve_crank_nicolson(spec: LsodeSpec, psi0: WaveFunction, t: float, dt: float = 1e-4) -> WaveFunction:
    """Crank-Nicolson from psi0.time_label to t with step close to ``dt`` (landing exactly on t)."""
    out = _cn_segment(spec, psi0.grid, np.array(psi0.amplitudes), psi0.time_label, t, dt)
    return WaveFunction(psi0.grid, out, t, Frame.LSODE, psi0.flags)


def evolve_crank_nicolson_series(spec: LsodeSpec, psi0: WaveFunction, times, dt: float = 1e-4):
    """States at each of the increasing ``times``, stepping through them in order."""
    out = []
    psi = np.array(psi0.amplitudes)
    t_prev = psi0.time_label
    for t in times:
        psi = _cn_segment(spec, psi0.grid, psi, t_prev, float(t), dt)
        out.append(WaveFunction(psi0.grid, psi.copy(), float(t), Frame.LSODE, psi0.flags))
        t_prev = float(t)
    return out


# ---------------------------------------------------------------- grid matrices

def derivative_matrix(grid: Grid, order: int) -> np.ndarray:
    """Real spectral differentiation matrix, symmetric for even and antisymmetric for odd order."""
    n = grid.n
    mult = (1j * grid.k) ** order
    if order % 2:
        mult[n // 2] = 0.0
    col = np.fft.ifft(mult).real
    mat = col[(np.arange(n)[:, None] - np.arange(n)[None, :]) % n]
    return 0.5 * (mat - mat.T) if order % 2 else 0.5 * (mat + mat.T)


def kinetic_matrix(grid: Grid, m: float, hbar: float) -> np.ndarray:
    return -(hbar ** 2) / (2 * m) * derivative_matrix(grid, 2)


def dilation_generator_matrix(grid: Grid, hbar: float) -> np.ndarray:
    """-i hbar (x d/dx + 1/2) realized as the Hermitian -i hbar (x D + D x)/2."""
    d1 = derivative_matrix(grid, 1)
    x = grid.x
    return -0.5j * hbar * (x[:, None] * d1 + d1 * x[None, :])


def hamiltonian_matrix(spec: LsodeSpec, grid: Grid, t: float) -> np.ndarray:
    x = grid.x
    ef = float(np.exp(spec.f(t)))
    mat = kinetic_matrix(grid, spec.mass, spec.hbar) / ef
    pot = (0.5 * spec.mass * float(spec.w2(t)) * x ** 2 - spec.mass * float(spec.lam(t)) * x) * ef
    return mat + np.diag(pot)


# ---------------------------------------------------------------- Magnus

def _commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def _hamiltonian_pieces(spec: LsodeSpec, grid: Grid):
    """H(t) = sum_a c_a(t) M_a with real symmetric M_a."""
    x = grid.x
    m = spec.mass
    mats = [kinetic_matrix(grid, m, spec.hbar), np.diag(0.5 * m * x ** 2)]
    coefs = [lambda t: np.exp(-spec.f(t)), lambda t: spec.w2(t) * np.exp(spec.f(t))]
    if spec.forced:
        mats.append(np.diag(-m * x))
        coefs.append(lambda t: spec.lam(t) * np.exp(spec.f(t)))
    # constant coefficients may come back as scalars; keep the node shape
    return mats, [lambda t, c=c: np.broadcast_to(c(t), np.shape(t)) for c in coefs]


def _nodes(lo, hi):
    """Gauss-Legendre nodes/weights on [lo, hi] for arrays of interval ends."""
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    half = 0.5 * (hi - lo)
    return lo + half * (_GL_X + 1.0), half * _GL_W


def magnus_coefficients(coefs, t: float, order: int):
    """Nested Gauss-Legendre integrals of products of the scalar coefficients.

    Returns I1[a] = int c_a, I2[a,b] = int_{t1>t2} c_a(t1) c_b(t2), and
    I3[a,b,c] = int_{t1>t2>t3} c_a(t1) c_b(t2) c_c(t3).
    """
    t1, w1 = _nodes(0.0, t)
    c1 = np.array([c(t1) for c in coefs])
    I1 = c1 @ w1
    if order < 2:
        return I1, None, None
    t2, w2 = _nodes(np.zeros_like(t1), t1)
    c2 = np.array([c(t2) for c in coefs])
    # weight for each (t1, t2) node pair
    pair = w1[:, None] * w2
    I2 = np.einsum("ai,bij,ij->ab", c1, c2, pair)
    if order < 3:
        return I1, I2, None
    t3, w3 = _nodes(np.zeros_like(t2), t2)
    c3 = np.array([c(t3) for c in coefs])
    triple = pair[:, :, None] * w3
    I3 = np.einsum("ai,bij,cijk,ijk->abc", c1, c2, c3, triple)
    return I1, I2, I3


def magnus_omega(spec: LsodeSpec, t: float, order: int, grid: Grid, terms: bool = False):
    """Magnus exponent through ``order`` (1..3) as a dense anti-Hermitian matrix.

    The Hamiltonian is linear in a few fixed matrices with scalar
    time-dependent coefficients, so the nested time integrals reduce to
    scalar quadratures multiplying fixed (nested) commutators. With
    ``terms=True`` the separate Omega_1..Omega_order are returned.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    mats, coefs = _hamiltonian_pieces(spec, grid)
    I1, I2, I3 = magnus_coefficients(coefs, t, order)
    s = -1j / spec.hbar
    n = len(mats)
    omega1 = s * sum(I1[a] * mats[a] for a in range(n))
    out = [omega1]
    if order >= 2:
        comm = {(a, b): _commutator(mats[a], mats[b]) for a in range(n) for b in range(n) if a != b}
        omega2 = np.zeros_like(omega1)
        for (a, b), cab in comm.items():
            omega2 = omega2 + 0.5 * s * s * I2[a, b] * cab
        out.append(omega2)
    if order >= 3:
        omega3 = np.zeros_like(omega1)
        for (b, c), cbc in comm.items():
            for a in range(n):
                weight = I3[a, b, c]
                # second term [A(t3), [A(t2), A(t1)]] relabels to I3[c, b, a]
                mirror = I3[c, b, a]
                omega3 = omega3 + (s ** 3 / 6.0) * (weight + mirror) * _commutator(mats[a], cbc)
        out.append(omega3)
    return out if terms else sum(out)


def omega6_coefficients(gamma: float, omega: float, t: float, as_printed: bool = False):
    """Scalar prefactors of the three operator blocks in the sixth-order DHO exponent.

    Returned as (a, b, c) with Omega6 = -(i/hbar) t (a (T+V) - b (T-V) + c D).
    With ``as_printed=True`` the third block uses gamma w^2 t / 6, otherwise
    gamma w^2 t^2 / 6 (the dimensionally consistent form).
    """
    g2, w2 = gamma * gamma, omega * omega
    p1 = (1 + g2 * t ** 2 / 6 + (g2 * g2 + 2 * g2 * w2) * t ** 4 / 120
          + (g2 ** 3 + 16 * g2 * g2 * w2 + 32 * g2 * w2 * w2 / 3) * t ** 6 / 5040)
    p2 = 1 + g2 * t ** 2 / 12 + (g2 * g2 + 6 * g2 * w2) * t ** 4 / 360
    p3 = 1 + (g2 + 4 * w2 / 3) * t ** 2 / 20 + (g2 * g2 + 44 * g2 * w2 / 3 + 16 * w2 * w2 / 3) * t ** 4 / 840
    lead = t if as_printed else t * t
    return p1, 0.5 * gamma * t * p2, gamma * w2 * lead / 6 * p3


def magnus_omega6_dho(gamma: float, omega: float, t: float, grid: Grid, m: float = 1.0,
                      hbar: float = 1.0, as_printed: bool = False) -> np.ndarray:
    """Sixth-order Magnus exponent for the Caldirola-Kanai oscillator."""
    kin = kinetic_matrix(grid, m, hbar)
    pot = np.diag(0.5 * m * omega * omega * grid.x ** 2)
    dil = dilation_generator_matrix(grid, hbar)
    a, b, c = omega6_coefficients(gamma, omega, t, as_printed)
    return -1j / hbar * t * (a * (kin + pot) - b * (kin - pot) + c * dil)


def matrix_exponential(a: np.ndarray) -> np.ndarray:
    """exp(A) by scaling and squaring with a Pade approximant (scipy.linalg.expm)."""
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return expm(a)


# ---------------------------------------------------------------- EvolutionOperator

@dataclass(frozen=True, eq=False)
class EvolutionOperator:
    """One route to U(t) bound to a context and its numerical parameters."""

    ctx: QatContext
    mode: Mode = Mode.QAT_EXACT
    cn_dt: float = 1e-4
    magnus_order: int = 6

    def apply(self, psi0: WaveFunction, t: float) -> WaveFunction:
        if self.mode is Mode.QAT_EXACT:
            return evolve_qat_exact(self.ctx, psi0, t)
        if self.mode is Mode.CRANK_NICOLSON:
            return evolve_crank_nicolson(self.ctx.spec, psi0, t, self.cn_dt)
        mat = self.matrix(psi0.grid, t)
        return WaveFunction(psi0.grid, mat @ psi0.amplitudes, t, Frame.LSODE, psi0.flags)

    def matrix(self, grid: Grid, t: float) -> np.ndarray:
        if self.mode is Mode.QAT_EXACT:
            return qat_exact_matrix(self.ctx, grid, t)
        if self.mode is Mode.MAGNUS:
            spec = self.ctx.spec
            if self.magnus_order == 6:
                p = spec.params
                omega = magnus_omega6_dho(p["gamma"], p["omega"], t, grid, spec.mass, spec.hbar)
            else:
                omega = magnus_omega(spec, t, self.magnus_order, grid)
            return matrix_exponential(omega)
        eye = np.eye(grid.n, dtype=complex)
        cols = [_cn_segment(self.ctx.spec, grid, eye[:, j].copy(), 0.0, t, self.cn_dt) for j in range(grid.n)]
        return np.array(cols).T
