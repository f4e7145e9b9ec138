"""Uniform periodic grids, wavefunctions and the spectral primitives built on them.

Every array-level helper here acts on the last axis, so a stack of states
(for instance the columns of an identity matrix) can be pushed through the
same pipeline as a single wavefunction.
"""
from __future__ import annotations

import enum
import io
import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.signal import czt

from .errors import GridMismatch, SupportOverflow

BOUNDARY_FRACTION = 0.05
BOUNDARY_MASS_TOL = 1e-6


class Frame(enum.Enum):
    LSODE = "lsode"
    FREE = "free"


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        n = int(self.n)
        if n < 8 or n & (n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))

    @classmethod
    def symmetric(cls, half_width: float, n: int) -> "Grid":
        return cls(-half_width, half_width, n)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n

    @cached_property
    def x(self) -> np.ndarray:
        x = self.x_min + self.dx * np.arange(self.n)
        x.flags.writeable = False
        return x

    @cached_property
    def k(self) -> np.ndarray:
        k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        k.flags.writeable = False
        return k

    @property
    def k_nyquist(self) -> float:
        return np.pi / self.dx

    def interior_mask(self, fraction: float = 0.6) -> np.ndarray:
        """Boolean mask for the central ``fraction`` of the box."""
        centre = 0.5 * (self.x_min + self.x_max)
        return np.abs(self.x - centre) <= 0.5 * fraction * self.length

    def boundary_mask(self, fraction: float = BOUNDARY_FRACTION) -> np.ndarray:
        return ~self.interior_mask(1.0 - 2.0 * fraction)


@dataclass(frozen=True, eq=False)
class WaveFunction:
    grid: Grid
    amplitudes: np.ndarray
    time_label: float = 0.0
    frame: Frame = Frame.LSODE
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=complex)
        if amp.shape != (self.grid.n,):
            raise GridMismatch(f"amplitudes have shape {amp.shape}, grid has n={self.grid.n}")
        amp.flags.writeable = False
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "time_label", float(self.time_label))

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def norm(self) -> float:
        return math.sqrt(float(np.sum(np.abs(self.amplitudes) ** 2)) * self.grid.dx)

    def normalized(self) -> "WaveFunction":
        return self.replace(amplitudes=self.amplitudes / self.norm())

    def replace(self, **changes) -> "WaveFunction":
        data = dict(grid=self.grid, amplitudes=self.amplitudes, time_label=self.time_label,
                    frame=self.frame, flags=self.flags)
        data.update(changes)
        return WaveFunction(**data)

    def boundary_mass(self, fraction: float = BOUNDARY_FRACTION) -> float:
        return boundary_mass(self.amplitudes, self.grid, fraction)

    def __sub__(self, other: "WaveFunction") -> "WaveFunction":
        _check_compatible(self, other)
        return self.replace(amplitudes=self.amplitudes - other.amplitudes)

    def distance(self, other: "WaveFunction") -> float:
        """L2 distance, ignoring time labels but not grids."""
        if self.grid != other.grid:
            raise GridMismatch("wavefunctions live on different grids")
        diff = self.amplitudes - other.amplitudes
        return math.sqrt(float(np.sum(np.abs(diff) ** 2)) * self.grid.dx)


def _check_compatible(a: WaveFunction, b: WaveFunction) -> None:
    if a.grid != b.grid:
        raise GridMismatch("wavefunctions live on different grids")
    if a.frame is not b.frame:
        raise GridMismatch(f"frame mismatch: {a.frame.value} vs {b.frame.value}")


def inner(a: WaveFunction, b: WaveFunction) -> complex:
    """<a|b> as the plain Riemann sum sum(conj(a) b) dx."""
    _check_compatible(a, b)
    return complex(np.vdot(a.amplitudes, b.amplitudes) * a.grid.dx)


def boundary_mass(arr: np.ndarray, grid: Grid, fraction: float = BOUNDARY_FRACTION) -> float:
    arr = np.asarray(arr)
    total = np.sum(np.abs(arr) ** 2, axis=-1)
    edge = np.sum(np.abs(arr[..., grid.boundary_mask(fraction)]) ** 2, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(total > 0, edge / np.where(total > 0, total, 1.0), 0.0)
    return float(np.max(ratio))


# ---------------------------------------------------------------- spectral kernels

def derivative(arr: np.ndarray, grid: Grid, order: int = 1) -> np.ndarray:
    """Spectral derivative along the last axis; the Nyquist mode is dropped for odd orders."""
    k = grid.k
    mult = (1j * k) ** order
    if order % 2:
        mult = mult.copy()
        mult[grid.n // 2] = 0.0
    return np.fft.ifft(np.fft.fft(arr, axis=-1) * mult, axis=-1)


def _fourier_multiply(arr: np.ndarray, mult: np.ndarray) -> np.ndarray:
    return np.fft.ifft(np.fft.fft(arr, axis=-1) * mult, axis=-1)


def free_evolve_array(arr: np.ndarray, grid: Grid, tau: float, m: float, hbar: float) -> np.ndarray:
    if tau == 0:
        return np.array(arr, dtype=complex)
    return _fourier_multiply(arr, np.exp(-1j * hbar * grid.k ** 2 * tau / (2 * m)))


def translate_array(arr: np.ndarray, grid: Grid, shift: float) -> np.ndarray:
    """psi(x) -> psi(x - shift) by the Fourier shift theorem."""
    if shift == 0:
        return np.array(arr, dtype=complex)
    phase = np.exp(-1j * grid.k * shift)
    # symmetric treatment of the Nyquist mode keeps real data real
    phase[grid.n // 2] = math.cos(grid.k_nyquist * shift)
    return _fourier_multiply(arr, phase)


def scaled_samples(arr: np.ndarray, grid: Grid, s: float) -> np.ndarray:
    """Evaluate the band-limited interpolant of ``arr`` at x/s for every grid point x.

    The interpolant is summed exactly with a chirp-z transform. Points whose
    preimage x/s falls outside the box are set to zero: states are taken to
    vanish outside the box rather than repeat periodically.
    """
    arr = np.asarray(arr, dtype=complex)
    n = grid.n
    coeffs = np.fft.fftshift(np.fft.fft(arr, axis=-1), axes=-1) / n
    # modes m = -n/2 .. n/2, Nyquist split evenly between both ends
    full = np.concatenate([coeffs, coeffs[..., :1]], axis=-1)
    full[..., 0] *= 0.5
    full[..., -1] *= 0.5
    m = np.arange(-n // 2, n // 2 + 1)
    km = 2 * np.pi * m / grid.length
    full = full * np.exp(1j * km * grid.x_min * (1.0 / s - 1.0))
    w = np.exp(2j * np.pi / (n * s))
    out = czt(full, m=n, w=w, a=1.0, axis=-1)
    j = np.arange(n)
    out = out * np.exp(-1j * np.pi * j / s)
    y = grid.x / s
    outside = (y < grid.x_min) | (y >= grid.x_max)
    if np.any(outside):
        out[..., outside] = 0.0
    return out


def dilate_array(arr: np.ndarray, grid: Grid, s: float) -> np.ndarray:
    """Unitary dilation psi(x) -> |s|^(-1/2) psi(x/s); negative s includes parity."""
    if s == 0:
        raise ValueError("dilation factor must be non-zero")
    if s == 1:
        return np.array(arr, dtype=complex)
    return scaled_samples(arr, grid, s) / math.sqrt(abs(s))


def quadratic_phase_array(arr: np.ndarray, grid: Grid, c: float) -> np.ndarray:
    return np.asarray(arr) * np.exp(1j * c * grid.x ** 2)


# ---------------------------------------------------------------- public operations

def free_evolve(psi: WaveFunction, tau: float, m: float = 1.0, hbar: float = 1.0) -> WaveFunction:
    """Evolve a free-frame state by tau with the exact Fourier multiplier."""
    if psi.frame is not Frame.FREE:
        raise GridMismatch("free_evolve expects a FreeFrame wavefunction")
    out = free_evolve_array(psi.amplitudes, psi.grid, tau, m, hbar)
    return psi.replace(amplitudes=out, time_label=psi.time_label + tau)


def quadratic_phase(psi: WaveFunction, c: float) -> WaveFunction:
    """Multiply by exp(i c x^2)."""
    return psi.replace(amplitudes=quadratic_phase_array(psi.amplitudes, psi.grid, c))


def translate(psi: WaveFunction, shift: float) -> WaveFunction:
    return psi.replace(amplitudes=translate_array(psi.amplitudes, psi.grid, shift))


def dilate(psi: WaveFunction, s: float) -> WaveFunction:
    """Unitary dilation psi(x) -> psi(x/s)/sqrt|s|.

    Emits :class:`SupportOverflow` when the result carries more than 1e-6 of
    its mass in the outer 5% of the box; the returned state then has the
    ``"support_overflow"`` flag.
    """
    out = dilate_array(psi.amplitudes, psi.grid, s)
    flags = psi.flags
    if boundary_mass(out, psi.grid) > BOUNDARY_MASS_TOL:
        warnings.warn(f"dilation by {s:g} pushes mass onto the box boundary", SupportOverflow,
                      stacklevel=2)
        flags = flags | {"support_overflow"}
    return psi.replace(amplitudes=out, flags=flags)


# ---------------------------------------------------------------- standard states

def gaussian(grid: Grid, x0: float = 0.0, p0: float = 0.0, sigma: float = 1.0,
             hbar: float = 1.0, time_label: float = 0.0, frame: Frame = Frame.LSODE) -> WaveFunction:
    """Normalized Gaussian with position spread ``sigma`` and mean momentum ``p0``."""
    x = grid.x
    amp = (2 * np.pi * sigma ** 2) ** -0.25 * np.exp(-((x - x0) ** 2) / (4 * sigma ** 2) + 1j * p0 * x / hbar)
    return WaveFunction(grid, amp, time_label, frame)


def plane_wave(grid: Grid, k: float, time_label: float = 0.0, frame: Frame = Frame.LSODE) -> WaveFunction:
    """Box-normalized exp(ikx); use a grid wavenumber for exact periodicity."""
    amp = np.exp(1j * k * grid.x) / math.sqrt(grid.length)
    return WaveFunction(grid, amp, time_label, frame)


def grid_wavenumber(grid: Grid, k: float) -> float:
    """Nearest wavenumber that is periodic on the grid."""
    step = 2 * np.pi / grid.length
    return step * round(k / step)


def hermite_functions(nmax: int, xi: np.ndarray) -> np.ndarray:
    """Orthonormal Hermite functions h_0..h_nmax at xi (rows), via the stable recurrence."""
    xi = np.asarray(xi, dtype=float)
    out = np.empty((nmax + 1,) + xi.shape)
    out[0] = np.pi ** -0.25 * np.exp(-xi ** 2 / 2)
    if nmax >= 1:
        out[1] = math.sqrt(2.0) * xi * out[0]
    for n in range(1, nmax):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * xi * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def oscillator_state(grid: Grid, n: int, m: float = 1.0, omega: float = 1.0, hbar: float = 1.0,
                     center: float = 0.0, time_label: float = 0.0,
                     frame: Frame = Frame.LSODE) -> WaveFunction:
    """n-th eigenstate of the harmonic oscillator with frequency ``omega``."""
    scale = math.sqrt(m * omega / hbar)
    h = hermite_functions(n, scale * (grid.x - center))[n] * math.sqrt(scale)
    return WaveFunction(grid, h.astype(complex), time_label, frame)


# ---------------------------------------------------------------- serialization

_MAGIC = b"QWF\x01"
_FRAME_CODES = {Frame.LSODE: 0, Frame.FREE: 1}
_HEAD = struct.Struct("<IdddB")


def write_csv(psi: WaveFunction, path) -> None:
    """Columns x, re, im with a header row, %.12e formatting and LF endings."""
    lines = ["x,re,im"]
    for x, a in zip(psi.x, psi.amplitudes):
        lines.append(f"{x:.12e},{a.real:.12e},{a.imag:.12e}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_csv(path, time_label: float = 0.0, frame: Frame = Frame.LSODE) -> WaveFunction:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x, re, im = data[:, 0], data[:, 1], data[:, 2]
    n = len(x)
    dx = (x[-1] - x[0]) / (n - 1)
    grid = Grid(x[0], x[0] + n * dx, n)
    return WaveFunction(grid, re + 1j * im, time_label, frame)


def to_bytes(psi: WaveFunction) -> bytes:
    g = psi.grid
    payload = _HEAD.pack(g.n, g.x_min, g.x_max, psi.time_label, _FRAME_CODES[psi.frame])
    payload += psi.amplitudes.astype("<c16").tobytes()
    return _MAGIC + struct.pack("<I", len(payload)) + payload


def from_bytes(blob: bytes) -> WaveFunction:
    buf = io.BytesIO(blob)
    magic = buf.read(4)
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    (length,) = struct.unpack("<I", buf.read(4))
    payload = buf.read(length)
    if len(payload) != length:
        raise ValueError("truncated wavefunction payload")
    n, x_min, x_max, t, code = _HEAD.unpack_from(payload)
    amp = np.frombuffer(payload, dtype="<c16", offset=_HEAD.size, count=n)
    frame = {v: k for k, v in _FRAME_CODES.items()}[code]
    return WaveFunction(Grid(x_min, x_max, n), amp.copy(), t, frame)
