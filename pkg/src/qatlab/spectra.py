"""The constant-coefficient generator H* and its eigenfunction families.

H* = P2/(2m) + (m w~^2 / 2) X2 + (g~/2) XP, with W~ = sqrt(w~^2 - g~^2/4).
Its eigenfunctions, written with the shifted basis function
u2s = u2 - g~ u1/2 and rho^2 = u2s^2 + W~^2 u1^2, are

    phi_nu(x, t) = N rho^{-1/2} exp(i m beta x^2 / (2 hbar)) (z/rho)^{nu + 1/2}
                   [C1 D_nu(a x / rho) + C2 D_{-1-nu}(i a x / rho)]

with z = u2s - i W~ u1, a = sqrt(2 m W~ / hbar) and
beta = (W~^2 u1 u1' + u2s u2s') / (rho^2 W). Forced systems use x - u_p in the
spatial factor and pick up the phase exp(i m (u_p' x / W + A_p / 2) / hbar).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import rgamma

from .errors import AccuracyLoss, ComplexOmegaTilde, ForcedNotSupported, RealOmegaTilde
from .operators import Label, OperatorRep, combine, quadratic_operators
from .qat import QatContext
from .wavegrid import Frame, Grid, WaveFunction

SERIES_TOL = 1e-14
DOUBLE_SERIES_MAX = 4.0
ASYMPTOTIC_MIN = 8.0
OVERLAP_BAND = 0.5
MISMATCH_TOL = 1e-8
CRITICAL_OMEGA = 1e-6
MAX_PHASE_STEP = 0.5 * math.pi


@dataclass(frozen=True)
class HStarParams:
    omega_tilde: float
    gamma_tilde: float

    def __post_init__(self):
        if self.omega_tilde < 0 or self.gamma_tilde < 0:
            raise ValueError("omega_tilde and gamma_tilde must be non-negative")

    @property
    def Omega_sq(self) -> float:
        return self.omega_tilde ** 2 - self.gamma_tilde ** 2 / 4

    @property
    def Omega_tilde(self) -> complex:
        return cmath.sqrt(complex(self.Omega_sq))

    @property
    def regime(self) -> str:
        q = self.Omega_sq
        return "oscillatory" if q > 0 else ("critical" if q == 0 else "overdamped")


@dataclass(frozen=True)
class EigenSolution:
    nu: complex
    C1: complex
    C2: complex
    params: HStarParams
    ctx: QatContext

    @property
    def eigenvalue(self) -> complex:
        return self.ctx.hbar * _effective_omega(self.params, self.params.Omega_sq >= 0) * (self.nu + 0.5)


def _effective_omega(params: HStarParams, real_branch: bool) -> complex:
    if params.Omega_sq == 0:
        return CRITICAL_OMEGA if real_branch else 1j * CRITICAL_OMEGA
    return params.Omega_tilde


# ---------------------------------------------------------------- H*

def hstar_operator(ctx: QatContext, params: HStarParams) -> OperatorRep:
    if ctx.forced:
        raise ForcedNotSupported("H* is built from the unforced quadratic operators")
    P2, X2, XP = quadratic_operators(ctx)
    m = ctx.m
    return combine([(1 / (2 * m), P2), (0.5 * m * params.omega_tilde ** 2, X2),
                    (0.5 * params.gamma_tilde, XP)], Label.HSTAR)


def hstar_on_shell(ctx: QatContext, params: HStarParams) -> OperatorRep:
    """The same combination of the first-order (d/dt) forms."""
    from .operators import first_order_on_shell
    P2, X2, XP = first_order_on_shell(ctx)
    m = ctx.m
    return combine([(1 / (2 * m), P2), (0.5 * m * params.omega_tilde ** 2, X2),
                    (0.5 * params.gamma_tilde, XP)], Label.CUSTOM)


# ---------------------------------------------------------------- parabolic cylinder functions

def _is_nonneg_int(nu: complex) -> bool:
    nu = complex(nu)
    return nu.imag == 0 and nu.real >= 0 and float(nu.real).is_integer()


def _hermite_D(n: int, z: np.ndarray) -> np.ndarray:
    """D_n(z) = sqrt(n! sqrt(pi)) h_n(z/sqrt2) via the normalized Hermite recurrence."""
    xi = z / math.sqrt(2.0)
    h_prev = np.zeros_like(xi)
    h = np.pi ** -0.25 * np.exp(-xi * xi / 2)
    for k in range(n):
        h, h_prev = math.sqrt(2.0 / (k + 1)) * xi * h - math.sqrt(k / (k + 1)) * h_prev, h
    return math.sqrt(math.factorial(n) * math.sqrt(math.pi)) * h


def _kummer_double(a: complex, b: float, w: np.ndarray) -> np.ndarray:
    total = np.ones_like(w)
    term = np.ones_like(w)
    for k in range(2000):
        term = term * (a + k) / (b + k) * w / (k + 1)
        total = total + term
        if np.all(np.abs(term) <= SERIES_TOL * np.abs(total)):
            break
    return total


def _kummer_series_D_double(nu: complex, z: np.ndarray) -> np.ndarray:
    w = z * z / 2
    m1 = _kummer_double(-nu / 2, 0.5, w)
    m2 = _kummer_double((1 - nu) / 2, 1.5, w)
    pre = math.sqrt(math.pi) * 2 ** (nu / 2) * np.exp(-z * z / 4)
    return pre * (m1 * rgamma((1 - nu) / 2) - math.sqrt(2.0) * z * m2 * rgamma(-nu / 2))


def _kummer_series_D_mp(nu: complex, z: complex) -> complex:
    """Same series summed in extended precision; the double version cancels badly for |z| > 4."""
    dps = int(20 + abs(z) ** 2 / 4.6)
    with mpmath.workdps(dps):
        nu_m, z_m = mpmath.mpmathify(nu), mpmath.mpmathify(z)
        w = z_m * z_m / 2
        tol = mpmath.mpf(10) ** (-(dps - 2))

        def kummer(a, b):
            total = term = mpmath.mpf(1)
            k = 0
            while True:
                term = term * (a + k) / (b + k) * w / (k + 1)
                total += term
                k += 1
                if abs(term) <= tol * abs(total) or k > 5000:
                    return total

        pre = mpmath.sqrt(mpmath.pi) * mpmath.power(2, nu_m / 2) * mpmath.exp(-z_m * z_m / 4)
        val = pre * (kummer(-nu_m / 2, mpmath.mpf(1) / 2) * mpmath.rgamma((1 - nu_m) / 2)
                     - mpmath.sqrt(2) * z_m * kummer((1 - nu_m) / 2, mpmath.mpf(3) / 2)
                     * mpmath.rgamma(-nu_m / 2))
        return complex(val)


def _asymptotic_right(nu: complex, z: np.ndarray) -> np.ndarray:
    """z^nu e^{-z^2/4} sum_k (-1)^k (-nu)_{2k} / (k! (2 z^2)^k), valid for |arg z| < 3pi/4."""
    total = np.ones_like(z)
    term = np.ones_like(z)
    best = np.abs(term)
    active = np.ones(z.shape, dtype=bool)
    for k in range(1, 200):
        new = term * (-(nu - 2 * k + 2) * (nu - 2 * k + 1) / (2 * k * z * z))
        grow = np.abs(new) > best
        active &= ~grow
        if not np.any(active):
            break
        term = np.where(active, new, term)
        total = total + np.where(active, new, 0)
        best = np.where(active, np.abs(new), best)
        active &= np.abs(new) > 1e-17 * np.abs(total)
    return np.exp(nu * np.log(z) - z * z / 4) * total


def _asymptotic_D(nu: complex, z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    arg = np.angle(z)
    right = np.abs(arg) <= math.pi / 2
    out[right] = _asymptotic_right(nu, z[right])
    upper = ~right & (arg > 0)
    lower = ~right & (arg <= 0)
    coef = math.sqrt(2 * math.pi) * complex(rgamma(-nu))
    for mask, sign in ((upper, 1), (lower, -1)):
        if np.any(mask):
            zz = z[mask]
            first = np.exp(sign * 1j * math.pi * nu) * _asymptotic_right(nu, -zz)
            second = coef * np.exp(sign * 1j * math.pi * (nu + 1) / 2) * _asymptotic_right(-nu - 1, -sign * 1j * zz)
            out[mask] = first + second
    return out


def parabolic_cylinder_D(nu: complex, z) -> np.ndarray | complex:
    """Weber's parabolic cylinder function D_nu(z) for |z| <= 30.

    Non-negative integer orders use the Hermite reduction. Otherwise the
    Kummer-function series is summed in double precision for |z| <= 4 and
    in extended precision for 4 < |z| <= 8; beyond that the asymptotic
    series (with the connection formula for Re z < 0) takes over. In
    8 < |z| <= 8.5 both are evaluated and :class:`AccuracyLoss` is raised if
    they differ by more than 1e-8.
    """
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(np.abs(z) > 30):
        raise ValueError("|z| beyond the supported range 30")
    if _is_nonneg_int(nu):
        out = _hermite_D(int(complex(nu).real), z)
        return complex(out[0]) if scalar else out
    nu = complex(nu)
    r = np.abs(z)
    out = np.empty_like(z)
    small = r <= DOUBLE_SERIES_MAX
    mid = (r > DOUBLE_SERIES_MAX) & (r <= ASYMPTOTIC_MIN)
    large = r > ASYMPTOTIC_MIN
    if np.any(small):
        out[small] = _kummer_series_D_double(nu, z[small])
    for i in np.nonzero(mid)[0]:
        out[i] = _kummer_series_D_mp(nu, complex(z[i]))
    if np.any(large):
        out[large] = _asymptotic_D(nu, z[large])
        band = np.nonzero(large & (r <= ASYMPTOTIC_MIN + OVERLAP_BAND))[0]
        for i in band:
            ref = _kummer_series_D_mp(nu, complex(z[i]))
            if abs(out[i] - ref) > MISMATCH_TOL * max(abs(ref), 1e-300):
                raise AccuracyLoss(f"series and asymptotic forms of D_{nu}({z[i]}) differ by "
                                   f"{abs(out[i] - ref) / abs(ref):.2e}")
    return complex(out[0]) if scalar else out


# ---------------------------------------------------------------- shared time-dependent pieces

@dataclass(frozen=True)
class _Frame:
    rho: complex
    beta: float
    log_ratio: complex
    up: float
    upd: float
    W: float
    A_p: float


def _shifted_basis(ctx: QatContext, params: HStarParams, Om: complex, t):
    v = ctx.basis.values(t)
    g = params.gamma_tilde
    u1, u1d = v[0], v[1]
    u2s, u2sd = v[2] - 0.5 * g * v[0], v[3] - 0.5 * g * v[1]
    z = u2s - 1j * Om * u1
    rho2 = u2s * u2s + (Om * Om).real * u1 * u1
    return u1, u1d, u2s, u2sd, z, rho2, v


def tracked_log_ratio(ctx: QatContext, params: HStarParams, Om: complex, t: float, start: int = 64) -> complex:
    """log(z/rho) continued along [0, t] from log 1 = 0.

    The sampling is refined until no phase increment between neighbouring
    samples exceeds pi/2, so the continuation cannot skip a branch.
    """
    if t == 0:
        return 0j
    n = start
    while True:
        s = np.linspace(0.0, t, n + 1)
        *_, z, rho2, _ = _shifted_basis(ctx, params, Om, s)
        ratio = z / np.sqrt(rho2.astype(complex))
        steps = np.angle(ratio[1:] / ratio[:-1])
        if np.max(np.abs(steps)) < MAX_PHASE_STEP or n > 2 ** 22:
            return complex(math.log(abs(ratio[-1])), float(np.angle(ratio[0]) + np.sum(steps)))
        n *= 2


def _frame_at(ctx: QatContext, params: HStarParams, Om: complex, t: float) -> _Frame:
    u1, u1d, u2s, u2sd, z, rho2, v = _shifted_basis(ctx, params, Om, np.array([t]))
    u1, u1d, u2s, u2sd, rho2 = (float(a[0]) for a in (u1, u1d, u2s, u2sd, rho2))
    W = float(ctx.W(t))
    beta = ((Om * Om).real * u1 * u1d + u2s * u2sd) / (rho2 * W)
    return _Frame(cmath.sqrt(rho2), beta, tracked_log_ratio(ctx, params, Om, t),
                  float(v[4][0]), float(v[5][0]), W, float(ctx.A_p(t)))


def _assemble(ctx, params, Om, nu, t, grid, c1, c2, norm, support=None):
    fr = _frame_at(ctx, params, Om, t)
    m, hbar = ctx.m, ctx.hbar
    y = grid.x - fr.up
    a = cmath.sqrt(2 * m * Om / hbar)
    arg = a * y / fr.rho
    support = np.ones(grid.n, dtype=bool) if support is None else support
    spatial = np.zeros(grid.n, dtype=complex)
    if c1:
        spatial[support] += c1 * parabolic_cylinder_D(nu, arg[support])
    if c2:
        spatial[support] += c2 * parabolic_cylinder_D(-1 - nu, 1j * arg[support])
    phase = 0.5 * m / hbar * fr.beta * y * y
    if ctx.forced:
        phase = phase + m / hbar * (fr.upd / fr.W * grid.x + 0.5 * fr.A_p)
    pref = norm / cmath.sqrt(fr.rho) * cmath.exp((nu + 0.5) * fr.log_ratio)
    return pref * np.exp(1j * phase) * spatial


def eigenfunction_phi_n(ctx: QatContext, params: HStarParams, n: int, t: float, grid: Grid,
                        normalization: str = "unit") -> WaveFunction:
    """Discrete eigenfunction phi_n at time t (C1=1, C2=0, nu=n).

    ``normalization="printed"`` uses 1/sqrt(sqrt(2 pi) n! rho) alone, whose
    L2 norm is (hbar/(2 m W~))^(1/4); ``"unit"`` adds the factor
    (2 m W~/hbar)^(1/4) that makes the state normalized.
    """
    if params.Omega_sq < 0:
        raise ComplexOmegaTilde("the Hermite branch needs omega_tilde >= gamma_tilde/2")
    if n < 0 or int(n) != n:
        raise ValueError("n must be a non-negative integer")
    ctx.basis.require_window(t)
    Om = _effective_omega(params, True)
    norm = 1.0 / math.sqrt(math.sqrt(2 * math.pi) * math.factorial(n))
    if normalization == "unit":
        norm *= (2 * ctx.m * Om.real / ctx.hbar) ** 0.25
    elif normalization != "printed":
        raise ValueError("normalization must be 'unit' or 'printed'")
    amp = _assemble(ctx, params, complex(Om), complex(n), t, grid, 1.0, 0.0, norm)
    return WaveFunction(grid, amp, t, Frame.LSODE)


def eigenvalue_n(ctx: QatContext, params: HStarParams, n: int) -> float:
    return ctx.hbar * _effective_omega(params, True).real * (n + 0.5)


def continuous_branch_phi(ctx: QatContext, params: HStarParams, lam: float, t: float, grid: Grid,
                          sign: int = +1, taper=None) -> WaveFunction:
    """Delta-normalizable eigenfunction with nu = -1/2 + i lam for imaginary W~.

    ``sign=+1`` selects (C1, C2) = (1, 0) and ``sign=-1`` selects (0, 1).
    No normalization is imposed. ``taper`` (an array on the grid) multiplies
    the result, e.g. :func:`smooth_taper`; points where it is below 1e-16 are
    set to zero without evaluating D.
    """
    if params.Omega_sq > 0:
        raise RealOmegaTilde("the continuous branch needs omega_tilde <= gamma_tilde/2")
    ctx.basis.require_window(t)
    Om = _effective_omega(params, False)
    nu = complex(-0.5, lam)
    norm = 1.0 / cmath.sqrt(math.sqrt(2 * math.pi) * complex(gamma_fn(nu + 1)))
    c1, c2 = (1.0, 0.0) if sign > 0 else (0.0, 1.0)
    support = None if taper is None else np.abs(taper) > 1e-16
    amp = _assemble(ctx, params, Om, nu, t, grid, c1, c2, norm, support)
    if taper is not None:
        amp = amp * taper
    return WaveFunction(grid, amp, t, Frame.LSODE)


def continuous_eigenvalue(ctx: QatContext, params: HStarParams, lam: float) -> float:
    """h* = hbar W~ (nu + 1/2) with W~ = i|W~| and nu = -1/2 + i lam, i.e. -hbar |W~| lam."""
    val = ctx.hbar * _effective_omega(params, False) * (1j * lam)
    return float(val.real)


def smooth_taper(grid: Grid, half_width: float, edge: float = 1.0) -> np.ndarray:
    """Flat-top window built from two error functions; equals 1 to ~1e-12 for |x| < half_width - 5 edge."""
    from scipy.special import erf
    x = grid.x
    return 0.5 * (erf((x + half_width) / edge) - erf((x - half_width) / edge))
