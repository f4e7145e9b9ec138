"""Symmetry operators carried over from the free particle.

An :class:`OperatorRep` is a differential operator

    c_1(t) + c_x(t) x + c_xx(t) x^2 + c_d(t) d/dx + c_xd(t) x d/dx + c_dd(t) d^2/dx^2
      + c_dt(t) d/dt

with complex coefficient functions. Spatial derivatives are spectral; the
``dt`` monomial only makes sense on a time series of states.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ForcedNotSupported, GridMismatch, InsufficientSamples, NotUnimodular
from .propagators import (derivative_matrix, qat_exact_matrix)
from .qat import QatContext
from .wavegrid import Frame, Grid, WaveFunction, derivative, hermite_functions, quadratic_phase_array

MONOMIALS = ("1", "x", "xx", "d", "xd", "dd", "dt")


class Label(enum.Enum):
    X = "X"
    P = "P"
    P2 = "P2"
    X2 = "X2"
    XP = "XP"
    HSTAR = "HStar"
    CUSTOM = "Custom"


HERMITIAN_LABELS = {Label.X, Label.P, Label.P2, Label.X2, Label.XP, Label.HSTAR}


def _const(value):
    return lambda t: value


@dataclass(frozen=True, eq=False)
class OperatorRep:
    coeffs: dict = field(default_factory=dict)
    label: Label = Label.CUSTOM

    def coefficient(self, mono: str, t: float) -> complex:
        fn = self.coeffs.get(mono)
        return 0.0 if fn is None else complex(fn(t))

    def coefficients_at(self, t: float) -> dict:
        return {mono: self.coefficient(mono, t) for mono in MONOMIALS}

    @property
    def has_time_derivative(self) -> bool:
        return "dt" in self.coeffs

    # algebra -----------------------------------------------------
    def scaled(self, s: complex, label: Label = Label.CUSTOM) -> "OperatorRep":
        return OperatorRep({k: (lambda t, f=f: s * f(t)) for k, f in self.coeffs.items()}, label)

    def __add__(self, other: "OperatorRep") -> "OperatorRep":
        keys = set(self.coeffs) | set(other.coeffs)
        out = {}
        for k in keys:
            fa, fb = self.coeffs.get(k), other.coeffs.get(k)
            if fa is None:
                out[k] = fb
            elif fb is None:
                out[k] = fa
            else:
                out[k] = (lambda t, fa=fa, fb=fb: fa(t) + fb(t))
        return OperatorRep(out, Label.CUSTOM)

    def __sub__(self, other: "OperatorRep") -> "OperatorRep":
        return self + other.scaled(-1.0)

    def relabel(self, label: Label) -> "OperatorRep":
        return OperatorRep(dict(self.coeffs), label)

    # action ------------------------------------------------------
    def apply_array(self, arr: np.ndarray, grid: Grid, t: float) -> np.ndarray:
        if self.has_time_derivative:
            raise InsufficientSamples("operator contains d/dt; use apply_series")
        return self._spatial(arr, grid, t)

    def _spatial(self, arr, grid, t):
        c = self.coefficients_at(t)
        x = grid.x
        out = (c["1"] + c["x"] * x + c["xx"] * x * x) * arr
        if c["d"] != 0 or c["xd"] != 0:
            d1 = derivative(arr, grid, 1)
            out = out + (c["d"] + c["xd"] * x) * d1
        if c["dd"] != 0:
            out = out + c["dd"] * derivative(arr, grid, 2)
        return out

    def apply(self, psi: WaveFunction, t: float | None = None) -> WaveFunction:
        t = psi.time_label if t is None else t
        return psi.replace(amplitudes=self.apply_array(psi.amplitudes, psi.grid, t))

    def apply_series(self, series, index: int) -> WaveFunction:
        """Apply at sample ``index`` of an equally spaced series; d/dt by central difference."""
        if not 0 < index < len(series) - 1:
            raise InsufficientSamples("need a neighbour on both sides for d/dt")
        psi = series[index]
        t = psi.time_label
        out = self._spatial(psi.amplitudes, psi.grid, t)
        if self.has_time_derivative:
            dt = series[index + 1].time_label - series[index - 1].time_label
            dpsi = (series[index + 1].amplitudes - series[index - 1].amplitudes) / dt
            out = out + self.coefficient("dt", t) * dpsi
        return psi.replace(amplitudes=out)

    def matrix(self, grid: Grid, t: float) -> np.ndarray:
        if self.has_time_derivative:
            raise InsufficientSamples("operator contains d/dt and has no matrix at fixed t")
        c = self.coefficients_at(t)
        x = grid.x
        mat = np.diag(c["1"] + c["x"] * x + c["xx"] * x * x).astype(complex)
        if c["d"] != 0 or c["xd"] != 0:
            mat = mat + (c["d"] + c["xd"] * x)[:, None] * derivative_matrix(grid, 1)
        if c["dd"] != 0:
            mat = mat + c["dd"] * derivative_matrix(grid, 2)
        return mat

    def expectation(self, psi: WaveFunction, t: float | None = None) -> complex:
        out = self.apply(psi, t)
        return complex(np.vdot(psi.amplitudes, out.amplitudes) * psi.grid.dx)


def combine(terms, label: Label = Label.CUSTOM) -> OperatorRep:
    """Linear combination of (coefficient, operator) pairs."""
    terms = list(terms)
    out = terms[0][1].scaled(terms[0][0])
    for coef, op in terms[1:]:
        out = out + op.scaled(coef)
    return out.relabel(label)


# ---------------------------------------------------------------- basis helpers

def _basis_fns(ctx: QatContext):
    b = ctx.basis
    return (lambda t: float(b.u1(t)), lambda t: float(b.u1dot(t)), lambda t: float(b.u2(t)),
            lambda t: float(b.u2dot(t)), lambda t: float(b.up(t)), lambda t: float(b.updot(t)),
            lambda t: float(ctx.W(t)))


def basic_operators(ctx: QatContext):
    """(X, P) with forced terms included when the context has a force.

    P = -i hbar u2 d - m (u2'/W)(x - u_p) - m (u2/W) u_p'
    X = (u1'/W)(x - u_p) + (u1/W) u_p' + (i hbar/m) u1 d
    """
    u1, u1d, u2, u2d, up, upd, W = _basis_fns(ctx)
    m, hbar = ctx.m, ctx.hbar
    P = OperatorRep({
        "d": lambda t: -1j * hbar * u2(t),
        "x": lambda t: -m * u2d(t) / W(t),
        "1": lambda t: m * u2d(t) / W(t) * up(t) - m * u2(t) / W(t) * upd(t),
    }, Label.P)
    X = OperatorRep({
        "d": lambda t: 1j * hbar / m * u1(t),
        "x": lambda t: u1d(t) / W(t),
        "1": lambda t: -u1d(t) / W(t) * up(t) + u1(t) / W(t) * upd(t),
    }, Label.X)
    return X, P


def _require_homogeneous(ctx: QatContext):
    if ctx.forced:
        raise ForcedNotSupported("quadratic operators are only defined for the unforced system")


def quadratic_operators(ctx: QatContext):
    """(P2, X2, XP) in their second-order form, ordering constants included."""
    _require_homogeneous(ctx)
    u1, u1d, u2, u2d, _, _, W = _basis_fns(ctx)
    m, hbar = ctx.m, ctx.hbar
    P2 = OperatorRep({
        "dd": lambda t: -hbar ** 2 * u2(t) ** 2,
        "xd": lambda t: 1j * hbar * 2 * m * u2(t) * u2d(t) / W(t),
        "xx": lambda t: m ** 2 * u2d(t) ** 2 / W(t) ** 2,
        "1": lambda t: 1j * hbar * m * u2(t) * u2d(t) / W(t),
    }, Label.P2)
    X2 = OperatorRep({
        "xx": lambda t: u1d(t) ** 2 / W(t) ** 2,
        "xd": lambda t: 1j * hbar * 2 * u1(t) * u1d(t) / (m * W(t)),
        "dd": lambda t: -hbar ** 2 * u1(t) ** 2 / m ** 2,
        "1": lambda t: 1j * hbar * u1(t) * u1d(t) / (m * W(t)),
    }, Label.X2)
    XP = OperatorRep({
        "dd": lambda t: hbar ** 2 / m * u1(t) * u2(t),
        "xd": lambda t: -1j * hbar * (u1d(t) * u2(t) + u1(t) * u2d(t)) / W(t),
        "xx": lambda t: -m * u1d(t) * u2d(t) / W(t) ** 2,
        "1": lambda t: -1j * hbar * (u1d(t) * u2(t) + u1(t) * u2d(t)) / (2 * W(t)),
    }, Label.XP)
    return P2, X2, XP


def first_order_on_shell(ctx: QatContext):
    """(P2, X2, XP) rewritten with d/dt in place of d^2/dx^2; equal to the
    second-order forms only when acting on solutions."""
    _require_homogeneous(ctx)
    u1, u1d, u2, u2d, _, _, W = _basis_fns(ctx)
    m, hbar = ctx.m, ctx.hbar
    w2 = lambda t: float(ctx.spec.w2(t))  # noqa: E731
    P2 = OperatorRep({
        "dt": lambda t: 1j * hbar * 2 * m * u2(t) ** 2 / W(t),
        "xd": lambda t: 1j * hbar * 2 * m * u2(t) * u2d(t) / W(t),
        "xx": lambda t: m ** 2 * (u2d(t) ** 2 - w2(t) * u2(t) ** 2) / W(t) ** 2,
        "1": lambda t: 1j * hbar * m * u2(t) * u2d(t) / W(t),
    }, Label.P2)
    X2 = OperatorRep({
        "xx": lambda t: (u1d(t) ** 2 - w2(t) * u1(t) ** 2) / W(t) ** 2,
        "xd": lambda t: 1j * hbar * 2 * u1(t) * u1d(t) / (m * W(t)),
        "dt": lambda t: 1j * hbar * 2 * u1(t) ** 2 / (m * W(t)),
        "1": lambda t: 1j * hbar * u1(t) * u1d(t) / (m * W(t)),
    }, Label.X2)
    XP = OperatorRep({
        "dt": lambda t: -1j * hbar * 2 * u1(t) * u2(t) / W(t),
        "xd": lambda t: -1j * hbar * (u1d(t) * u2(t) + u1(t) * u2d(t)) / W(t),
        "xx": lambda t: -m * (u1d(t) * u2d(t) - w2(t) * u1(t) * u2(t)) / W(t) ** 2,
        "1": lambda t: -1j * hbar * (u1d(t) * u2(t) + u1(t) * u2d(t)) / (2 * W(t)),
    }, Label.XP)
    return P2, X2, XP


def hamiltonian_operator(ctx: QatContext) -> OperatorRep:
    """H(t) = -(hbar^2/2m) e^{-f} d^2 + (m w^2 x^2 / 2 - m Lambda x) e^{f}."""
    spec = ctx.spec
    m, hbar = spec.mass, spec.hbar
    return OperatorRep({
        "dd": lambda t: -(hbar ** 2) / (2 * m) * math.exp(-float(spec.f(t))),
        "xx": lambda t: 0.5 * m * float(spec.w2(t)) * math.exp(float(spec.f(t))),
        "x": lambda t: -m * float(spec.lam(t)) * math.exp(float(spec.f(t))),
    }, Label.CUSTOM)


# ---------------------------------------------------------------- grid measures

def probe_subspace(grid: Grid, count: int = 12, width: float | None = None) -> np.ndarray:
    """Orthonormal columns of smooth, centred Hermite functions.

    They are localized well inside the central 60% of the box and are
    band-limited far below the grid Nyquist wavenumber, so continuum
    identities hold on them to rounding error.
    """
    centre = 0.5 * (grid.x_min + grid.x_max)
    if width is None:
        width = 0.3 * grid.length / (2.5 * math.sqrt(2 * count + 1))
    xi = (grid.x - centre) / width
    funcs = hermite_functions(count - 1, xi) / math.sqrt(width)
    q, _ = np.linalg.qr(funcs.T * math.sqrt(grid.dx))
    return q.astype(complex)


def subspace_error(mat: np.ndarray, ref: np.ndarray | None, grid: Grid, q: np.ndarray,
                   fraction: float = 0.6) -> float:
    """||R (mat - ref) Q|| / ||R ref Q|| with R the interior-row restriction.

    With ``ref=None`` the absolute norm ||R mat Q|| is returned.
    """
    rows = grid.interior_mask(fraction)
    if ref is None:
        return float(np.linalg.norm((mat @ q)[rows]))
    num = np.linalg.norm(((mat - ref) @ q)[rows])
    den = np.linalg.norm((ref @ q)[rows])
    return float(num / den)


# ---------------------------------------------------------------- commutator table

@dataclass(frozen=True)
class CommutatorEntry:
    name: str
    error: float
    relative: bool


def commutator_table(ctx: QatContext, t: float, grid: Grid, q: np.ndarray | None = None):
    """The ten Schroedinger-algebra commutators measured on grid matrices.

    Each entry reports ||[A,B] - rhs|| / ||rhs|| on the test subspace and the
    interior rows, or the absolute norm when rhs = 0.
    """
    ctx.basis.require_window(t)
    q = probe_subspace(grid) if q is None else q
    X, P = basic_operators(ctx)
    P2, X2, XP = quadratic_operators(ctx)
    mats = {name: op.matrix(grid, t) for name, op in
            (("X", X), ("P", P), ("P2", P2), ("X2", X2), ("XP", XP))}
    ih = 1j * ctx.hbar
    eye = np.eye(grid.n)
    table = [
        ("X", "P", ih * eye),
        ("X", "P2", 2 * ih * mats["P"]),
        ("X", "X2", None),
        ("X", "XP", ih * mats["X"]),
        ("P", "P2", None),
        ("P", "X2", -2 * ih * mats["X"]),
        ("P", "XP", -ih * mats["P"]),
        ("X2", "P2", 4 * ih * mats["XP"]),
        ("X2", "XP", 2 * ih * mats["X2"]),
        ("P2", "XP", -2 * ih * mats["P2"]),
    ]
    out = []
    for a, b, rhs in table:
        comm = mats[a] @ mats[b] - mats[b] @ mats[a]
        out.append(CommutatorEntry(f"[{a},{b}]", subspace_error(comm, rhs, grid, q), rhs is not None))
    return out


# ---------------------------------------------------------------- SL(2) shift

@dataclass(frozen=True)
class ShiftReport:
    ctx: QatContext
    x_map_error: float
    p_map_error: float
    commutator_error: float
    boundary_map: Callable


def boundary_map_array(arr: np.ndarray, grid: Grid, c: float, d: float, m: float = 1.0,
                       hbar: float = 1.0) -> np.ndarray:
    """(A0 psi)(x) = sqrt|d| exp(-i m c d x^2 / (2 hbar)) psi(d x), unitary on L2."""
    from .wavegrid import dilate_array
    out = dilate_array(arr, grid, 1.0 / d)
    return quadratic_phase_array(out, grid, -m * c * d / (2 * hbar))


def sl2_shift(ctx: QatContext, a: float, b: float, c: float, d: float, grid: Grid | None = None,
              times=None, tol: float = 1e-12) -> ShiftReport:
    """Replace u1 -> a u1 + b u2, u2 -> c u1 + d u2 and check the operator map
    X -> a X - (b/m) P, P -> -c m X + d P on the grid."""
    det = a * d - b * c
    if abs(det - 1.0) > tol:
        raise NotUnimodular(f"ad - bc = {det!r}, expected 1")
    new = ctx.with_basis(ctx.basis.shifted(a, b, c, d))
    grid = Grid(-16.0, 16.0, 256) if grid is None else grid
    q = probe_subspace(grid)
    m, hbar = ctx.m, ctx.hbar
    X, P = basic_operators(ctx)
    Xn, Pn = basic_operators(new)
    if times is None:
        lo, hi = ctx.basis.window
        times = [0.0, 0.5 * min(hi, 1.0)]
    ex = ep = ec = 0.0
    for t in times:
        mx, mp = X.matrix(grid, t), P.matrix(grid, t)
        mxn, mpn = Xn.matrix(grid, t), Pn.matrix(grid, t)
        ex = max(ex, subspace_error(mxn, a * mx - (b / m) * mp, grid, q))
        ep = max(ep, subspace_error(mpn, -c * m * mx + d * mp, grid, q))
        comm = mxn @ mpn - mpn @ mxn
        ec = max(ec, subspace_error(comm, 1j * hbar * np.eye(grid.n), grid, q))

    def bmap(psi: WaveFunction) -> WaveFunction:
        out = boundary_map_array(psi.amplitudes, psi.grid, c, d, m, hbar)
        return WaveFunction(psi.grid, out, b / d, Frame.FREE, psi.flags)

    return ShiftReport(new, ex, ep, ec, bmap)


# ---------------------------------------------------------------- de-evolution

def de_evolve(op: OperatorRep, ctx: QatContext, t: float, grid: Grid) -> np.ndarray:
    """U(t)^dagger A(t) U(t) as a dense matrix, with U from the exact factorization."""
    u = qat_exact_matrix(ctx, grid, t)
    u_dag = qat_exact_matrix(ctx, grid, t, adjoint=True)
    return u_dag @ op.matrix(grid, t) @ u


def position_matrix(grid: Grid) -> np.ndarray:
    return np.diag(grid.x).astype(complex)


def momentum_matrix(grid: Grid, hbar: float = 1.0) -> np.ndarray:
    return -1j * hbar * derivative_matrix(grid, 1)


# ---------------------------------------------------------------- solution checks

def on_shell_difference(second: OperatorRep, first: OperatorRep, series, index: int) -> float:
    """||(A_second - A_first) psi|| / ||A_second psi|| at one interior sample."""
    a = second.apply(series[index])
    b = first.apply_series(series, index)
    return float(np.linalg.norm(a.amplitudes - b.amplitudes) / np.linalg.norm(a.amplitudes))


def expectation_series(op: OperatorRep, series) -> np.ndarray:
    return np.array([op.expectation(psi) for psi in series])


def transformed_series(op: OperatorRep, series):
    """The series A(t_j) psi(t_j), used to test whether A maps solutions to solutions."""
    out = []
    for psi in series:
        if psi.frame is not Frame.LSODE:
            raise GridMismatch("expected LSODE-frame states")
        out.append(op.apply(psi))
    return out
