"""Eigenfunctions of the quadratic invariant and the parabolic cylinder functions behind them."""
import cmath
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gamma_fn

from qatlab.classical import preset
from qatlab.errors import ComplexOmegaTilde, ForcedNotSupported, RealOmegaTilde
from qatlab.qat import QatContext, schrodinger_residual
from qatlab.spectra import (HStarParams, continuous_branch_phi, continuous_eigenvalue, eigenfunction_phi_n,
                            eigenvalue_n, hstar_on_shell, hstar_operator, parabolic_cylinder_D, smooth_taper,
                            tracked_log_ratio)
from qatlab.wavegrid import Grid, inner, oscillator_state

DHO = HStarParams(1.0, 0.2)
OVER = HStarParams(0.5, 2.0)


@pytest.fixture(scope="module")
def over_ctx():
    return QatContext.build(preset("damped_harmonic", gamma=2.0, omega=0.5), 1.0, -0.1)


def pcfd(nu, z):
    return complex(mpmath.pcfd(nu, z))


def rel_residual(a, b, mask=None):
    mask = slice(None) if mask is None else mask
    return float(np.max(np.abs(a[mask] - b[mask])) / np.max(np.abs(b[mask])))


# ------------------------------------------------------------ D_nu

def test_D_closed_forms():
    z = np.linspace(-6, 6, 49)
    np.testing.assert_allclose(parabolic_cylinder_D(0, z), np.exp(-z * z / 4), atol=1e-13)
    np.testing.assert_allclose(parabolic_cylinder_D(1, z), z * np.exp(-z * z / 4), atol=1e-13)
    np.testing.assert_allclose(parabolic_cylinder_D(2, z), (z * z - 1) * np.exp(-z * z / 4), atol=1e-12)


@pytest.mark.parametrize("nu", [-0.5, 0.3, -1.7, complex(-0.5, 0.8)])
def test_D_at_origin(nu):
    ref = 2 ** (nu / 2) * math.sqrt(math.pi) / complex(gamma_fn((1 - complex(nu)) / 2))
    assert abs(parabolic_cylinder_D(nu, 0.0) - ref) < 1e-10 * abs(ref)


@pytest.mark.parametrize("nu", [-0.5, 0.7, complex(-0.5, 1.3), complex(-0.5, -0.4)])
@pytest.mark.parametrize("z", [0.3, -2.5, 3.9, 5.5 + 1j, -7.0, 8.2, 8.4j * cmath.exp(0.3j), 12.0, -15 + 3j, 25.0])
def test_D_against_mpmath(nu, z):
    ref = pcfd(nu, z)
    got = parabolic_cylinder_D(nu, z)
    assert abs(got - ref) <= 1e-8 * max(abs(ref), 1e-280)


@settings(max_examples=40, deadline=None)
@given(r=st.floats(0.0, 20.0), theta=st.floats(0, 2 * math.pi), lam=st.floats(-2, 2))
def test_D_continuous_orders_property(r, theta, lam):
    nu = complex(-0.5, lam)
    z = r * cmath.exp(1j * theta)
    ref = pcfd(nu, z)
    got = parabolic_cylinder_D(nu, z)
    assert abs(got - ref) <= 1e-7 * abs(ref) + 1e-300


def test_D_recurrence():
    # D_{nu+1}(z) - z D_nu(z) + nu D_{nu-1}(z) = 0
    nu, z = complex(-0.5, 0.6), np.linspace(-7, 7, 29) + 0.5j
    lhs = parabolic_cylinder_D(nu + 1, z) - z * parabolic_cylinder_D(nu, z) + nu * parabolic_cylinder_D(nu - 1, z)
    assert np.max(np.abs(lhs)) < 1e-9 * np.max(np.abs(parabolic_cylinder_D(nu, z)))


def test_D_range_limit():
    with pytest.raises(ValueError):
        parabolic_cylinder_D(-0.5, 31.0)


def test_lambda_zero_branches_related_by_conjugation_and_reflection():
    a = cmath.sqrt(2j)
    y = np.linspace(-5, 5, 81)
    d1 = parabolic_cylinder_D(-0.5, a * y)
    d2 = parabolic_cylinder_D(-0.5, 1j * a * y)
    assert np.max(np.abs(d2 - np.conj(d1[::-1]))) < 1e-8


# ------------------------------------------------------------ discrete branch

def test_params_validation_and_regimes():
    with pytest.raises(ValueError):
        HStarParams(-1.0, 0.0)
    assert DHO.regime == "oscillatory"
    assert OVER.regime == "overdamped"
    assert HStarParams(0.1, 0.2).regime == "critical"
    assert DHO.Omega_sq == pytest.approx(0.99)


def test_free_particle_ground_state(free_ctx):
    g = Grid(-16, 16, 512)
    phi = eigenfunction_phi_n(free_ctx, HStarParams(1.0, 0.0), 0, 0.0, g)
    assert phi.distance(oscillator_state(g, 0)) < 1e-12


def test_printed_normalization(dho_ctx, grid_cn):
    phi = eigenfunction_phi_n(dho_ctx, DHO, 0, 0.5, grid_cn, normalization="printed")
    assert phi.norm() == pytest.approx((1 / (2 * math.sqrt(0.99))) ** 0.25, abs=1e-8)
    assert phi.norm() == pytest.approx(0.84195, abs=1e-5)
    with pytest.raises(ValueError):
        eigenfunction_phi_n(dho_ctx, DHO, 0, 0.5, grid_cn, normalization="other")


@pytest.mark.parametrize("t", [0.0, 0.6, 1.3])
def test_orthonormality(dho_ctx, grid_cn, t):
    phis = [eigenfunction_phi_n(dho_ctx, DHO, n, t, grid_cn) for n in range(6)]
    gram = np.array([[inner(a, b) for b in phis] for a in phis])
    assert np.max(np.abs(gram - np.eye(6))) < 1e-6


@pytest.mark.parametrize("t", [0.3, 1.2])
def test_eigen_equation(dho_ctx, grid_cn, t):
    h = hstar_operator(dho_ctx, DHO)
    for n in range(5):
        phi = eigenfunction_phi_n(dho_ctx, DHO, n, t, grid_cn)
        hphi = h.apply(phi)
        assert rel_residual(hphi.amplitudes, eigenvalue_n(dho_ctx, DHO, n) * phi.amplitudes) < 1e-8


def test_rayleigh_quotients_ladder(dho_ctx, grid_cn):
    h = hstar_operator(dho_ctx, DHO)
    ns = np.arange(6)
    vals = [h.expectation(eigenfunction_phi_n(dho_ctx, DHO, int(n), 0.8, grid_cn)).real for n in ns]
    slope, icpt = np.polyfit(ns, vals, 1)
    assert slope == pytest.approx(math.sqrt(0.99), rel=1e-8)
    assert icpt == pytest.approx(0.5 * math.sqrt(0.99), rel=1e-8)


@pytest.mark.parametrize("n", [0, 3])
def test_eigenfunctions_solve_schrodinger(dho_ctx, grid_cn, n):
    series = [eigenfunction_phi_n(dho_ctx, DHO, n, t, grid_cn) for t in (0.7 - 1e-4, 0.7, 0.7 + 1e-4)]
    assert schrodinger_residual(dho_ctx.spec, series) < 1e-6


@settings(max_examples=10, deadline=None)
@given(gt=st.floats(0.0, 1.5))
def test_any_admissible_gamma_tilde_gives_eigenfunctions(dho_ctx, gt):
    params = HStarParams(1.0, gt)
    g = Grid(-16, 16, 512)
    phi = eigenfunction_phi_n(dho_ctx, params, 1, 0.5, g)
    h = hstar_operator(dho_ctx, params)
    assert rel_residual(h.apply(phi).amplitudes, eigenvalue_n(dho_ctx, params, 1) * phi.amplitudes) < 1e-8
    assert abs(phi.norm() - 1) < 1e-8


def test_on_shell_hstar_consistent(dho_ctx, grid_cn):
    series = [eigenfunction_phi_n(dho_ctx, DHO, 2, t, grid_cn) for t in (0.5 - 1e-4, 0.5, 0.5 + 1e-4)]
    a = hstar_operator(dho_ctx, DHO).apply(series[1]).amplitudes
    b = hstar_on_shell(dho_ctx, DHO).apply_series(series, 1).amplitudes
    assert rel_residual(b, a) < 1e-6


def test_phase_tracking_is_continuous(dho_ctx):
    om = complex(DHO.Omega_tilde)
    ts = np.linspace(0, 2.0, 81)
    phases = np.array([tracked_log_ratio(dho_ctx, DHO, om, t).imag for t in ts])
    assert np.max(np.abs(np.diff(phases))) < 0.5
    # u2 crosses zero near t=1.68: the tracked phase keeps going past -pi/2
    assert phases[-1] < -math.pi / 2


def test_critical_case(dho_ctx, grid_cn):
    params = HStarParams(0.1, 0.2)
    phi = eigenfunction_phi_n(dho_ctx, params, 0, 0.0, Grid(-16, 16, 256))
    assert np.all(np.isfinite(phi.amplitudes))
    with pytest.raises(RealOmegaTilde):
        continuous_branch_phi(dho_ctx, DHO, 0.5, 0.2, grid_cn)


def test_regime_dispatch(over_ctx, grid_cn):
    with pytest.raises(ComplexOmegaTilde):
        eigenfunction_phi_n(over_ctx, OVER, 0, 0.2, grid_cn)
    with pytest.raises(ValueError):
        eigenfunction_phi_n(over_ctx, DHO, -1, 0.2, grid_cn)


def test_forced_hstar_rejected(forced_ctx):
    with pytest.raises(ForcedNotSupported):
        hstar_operator(forced_ctx, DHO)


def test_forced_ground_state_solves_schrodinger(forced_ctx, grid_cn):
    series = [eigenfunction_phi_n(forced_ctx, DHO, 0, t, grid_cn) for t in (0.6 - 1e-4, 0.6, 0.6 + 1e-4)]
    assert abs(series[1].norm() - 1) < 1e-8
    assert schrodinger_residual(forced_ctx.spec, series) < 1e-6


# ------------------------------------------------------------ continuous branch

GC = Grid(-16, 16, 1024)
INNER = np.abs(GC.x) < 3


@pytest.mark.parametrize("lam", [0.0, 0.7, -1.2])
@pytest.mark.parametrize("sign", [1, -1])
def test_continuous_eigen_equation(over_ctx, lam, sign):
    taper = smooth_taper(GC, 8, 1)
    phi = continuous_branch_phi(over_ctx, OVER, lam, 0.2, GC, sign, taper)
    hphi = hstar_operator(over_ctx, OVER).apply(phi).amplitudes
    h = continuous_eigenvalue(over_ctx, OVER, lam)
    err = np.max(np.abs(hphi - h * phi.amplitudes)[INNER])
    assert err < 1e-4 * np.max(np.abs(phi.amplitudes[INNER]))


def test_continuous_eigenvalue_convention(over_ctx):
    om = math.sqrt(OVER.gamma_tilde ** 2 / 4 - OVER.omega_tilde ** 2)
    assert continuous_eigenvalue(over_ctx, OVER, 0.8) == pytest.approx(-om * 0.8)


@pytest.mark.parametrize("lam", [0.0, 0.9])
def test_continuous_branch_solves_schrodinger(over_ctx, lam):
    taper = smooth_taper(GC, 8, 1)
    series = [continuous_branch_phi(over_ctx, OVER, lam, t, GC, 1, taper) for t in (0.3 - 1e-4, 0.3, 0.3 + 1e-4)]
    dt = 1e-4
    lhs = 1j * (series[2].amplitudes - series[0].amplitudes) / (2 * dt)
    from qatlab.qat import hamiltonian_apply
    rhs = hamiltonian_apply(over_ctx.spec, series[1].amplitudes, GC, 0.3)
    assert rel_residual(lhs, rhs, INNER) < 1e-4


def test_smooth_taper_shape():
    tp = smooth_taper(GC, 8, 1)
    assert np.max(np.abs(tp[np.abs(GC.x) < 3] - 1)) < 1e-12
    assert np.max(tp[np.abs(GC.x) > 14]) < 1e-12
