"""Exact factorized propagator, Crank-Nicolson reference and Magnus exponents."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qatlab.classical import preset
from qatlab.errors import OutsideWindow, SolverDivergence, SupportOverflow
from qatlab.propagators import (EvolutionOperator, Mode, evolve_crank_nicolson, evolve_crank_nicolson_series,
                                evolve_qat_exact, hamiltonian_matrix, magnus_omega, magnus_omega6_dho,
                                matrix_exponential, qat_exact_matrix)
from qatlab.qat import QatContext, map_time, qat_forward, qat_inverse
from qatlab.wavegrid import Frame, Grid, WaveFunction, free_evolve, gaussian, grid_wavenumber, oscillator_state

GM = Grid(-16.0, 16.0, 256)


def expm_apply(omega, psi):
    return WaveFunction(psi.grid, matrix_exponential(omega) @ psi.amplitudes, psi.time_label)


def test_qat_exact_identity_at_zero(dho_ctx, grid_cn):
    psi = gaussian(grid_cn, 0.5, 0.2, 1.0)
    assert evolve_qat_exact(dho_ctx, psi, 0.0).distance(psi) < 1e-13


@pytest.mark.parametrize("t", [0.4, 1.0, 2.0])
def test_damped_particle_plane_wave(dp_ctx, t):
    g = Grid(-16.0, 16.0, 512)
    gamma, k = 1.0, grid_wavenumber(g, 1.7)
    psi = WaveFunction(g, np.exp(1j * k * g.x))
    with pytest.warns(SupportOverflow):
        out = evolve_qat_exact(dp_ctx, psi, t)
    ref = np.exp(1j * k * g.x - 1j * k ** 2 * (1 - math.exp(-gamma * t)) / (2 * gamma))
    assert np.max(np.abs(out.amplitudes - ref)) < 1e-8


def test_dho_exact_vs_crank_nicolson(dho_ctx, grid_cn):
    psi0 = gaussian(grid_cn, 1.0, 0.0, 1.0)
    cn = evolve_crank_nicolson(dho_ctx.spec, psi0, 1.0, 1e-4)
    assert evolve_qat_exact(dho_ctx, psi0, 1.0).distance(cn) < 1e-5


@pytest.mark.parametrize("t", [0.3, 0.6, 1.0])
def test_composition_with_forward_and_inverse(dho_ctx, forced_ctx, t):
    g = Grid(-16.0, 16.0, 512)
    psi0 = gaussian(g, 0.5, -0.3, 0.8)
    for ctx in (dho_ctx, forced_ctx):
        free = free_evolve(qat_forward(ctx, psi0).replace(frame=Frame.FREE), map_time(ctx, t))
        composed = qat_inverse(ctx, free)
        assert evolve_qat_exact(ctx, psi0, t).distance(composed) < 1e-7


def test_exact_requires_initial_state_at_zero(dho_ctx, grid_cn):
    psi = gaussian(grid_cn)
    with pytest.raises(ValueError):
        evolve_qat_exact(dho_ctx, psi.replace(time_label=0.2), 1.0)
    with pytest.raises(ValueError):
        evolve_qat_exact(dho_ctx, psi.replace(frame=Frame.FREE), 1.0)


def test_exact_singular_at_zero_of_u2(dho_ctx, grid_cn):
    with pytest.raises(OutsideWindow):
        evolve_qat_exact(dho_ctx, gaussian(grid_cn), dho_ctx.basis.u2_zeros[0])


@settings(max_examples=15, deadline=None)
@given(t=st.floats(0.0, 1.4), x0=st.floats(-2, 2), p0=st.floats(-1, 1))
def test_exact_unitary(dho_ctx, t, x0, p0):
    g = Grid(-16.0, 16.0, 512)
    assert abs(evolve_qat_exact(dho_ctx, gaussian(g, x0, p0, 0.9), t).norm() - 1) < 1e-8


def test_cn_free_particle_matches_spectral(grid_cn):
    spec = preset("free")
    psi0 = gaussian(grid_cn, 0.0, 0.5, 1.0)
    cn = evolve_crank_nicolson(spec, psi0, 1.0, 1e-4)
    ref = free_evolve(psi0.replace(frame=Frame.FREE), 1.0).replace(frame=Frame.LSODE)
    assert cn.distance(ref) < 1e-6


def test_cn_harmonic_ground_state_stationary(grid_cn):
    spec = preset("harmonic", omega=1.0)
    psi0 = oscillator_state(grid_cn, 0)
    t = 1.0
    out = evolve_crank_nicolson(spec, psi0, t, 1e-4)
    overlap = np.vdot(psi0.amplitudes, out.amplitudes) * grid_cn.dx
    assert abs(overlap) > 1 - 1e-6
    assert abs(np.angle(overlap) + 0.5 * t) < 1e-6


def test_cn_norm_over_many_steps(grid_cn):
    spec = preset("damped_harmonic")
    psi0 = gaussian(grid_cn, 1.0, 0.0, 1.0)
    out = evolve_crank_nicolson(spec, psi0, 1.0, 1e-4)   # 10^4 steps
    assert abs(out.norm() - 1) < 1e-7


def test_cn_convergence_order(dho_ctx):
    g = Grid(-16.0, 16.0, 512)
    psi0 = gaussian(g, 1.0, 0.0, 1.0)
    t = 0.5
    ref = evolve_qat_exact(dho_ctx, psi0, t)
    dts = np.array([8e-3, 4e-3, 2e-3])
    errs = np.array([evolve_crank_nicolson(dho_ctx.spec, psi0, t, dt).distance(ref) for dt in dts])
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - 2.0) < 0.1


def test_cn_series_matches_single_runs(grid_cn):
    spec = preset("damped_harmonic")
    psi0 = gaussian(grid_cn)
    series = evolve_crank_nicolson_series(spec, psi0, [0.1, 0.25], 1e-3)
    single = evolve_crank_nicolson(spec, psi0, 0.25, 1e-3)
    assert [s.time_label for s in series] == [0.1, 0.25]
    assert series[1].distance(single) < 1e-6


def test_cn_divergence_reported(grid_cn):
    psi = WaveFunction(grid_cn, np.full(grid_cn.n, np.nan))
    with pytest.raises(SolverDivergence):
        evolve_crank_nicolson(preset("free"), psi, 0.01, 1e-3)


def test_omega2_vanishes_for_damped_particle():
    spec = preset("damped_particle", gamma=1.0)
    for t in (0.5, 2.0):
        _, omega2 = magnus_omega(spec, t, 2, GM, terms=True)
        assert np.max(np.abs(omega2)) < 1e-10


def test_omega_for_damped_particle_is_exact(dp_ctx):
    # commuting Hamiltonians: exp(Omega_1) is the full propagator
    psi0 = gaussian(GM, 0.5, 0.3, 1.0)
    out = expm_apply(magnus_omega(dp_ctx.spec, 1.5, 1, GM), psi0)
    assert out.distance(evolve_qat_exact(dp_ctx, psi0, 1.5)) < 1e-10


@pytest.mark.parametrize("order", [1, 2, 3])
@pytest.mark.parametrize("name", ["damped_harmonic", "forced_damped_harmonic"])
def test_magnus_anti_hermitian(order, name):
    omega = magnus_omega(preset(name), 0.4, order, GM)
    assert np.max(np.abs(omega + omega.conj().T)) < 1e-10


def test_magnus_order_one_local_error_slope(dho_ctx):
    psi0 = gaussian(GM, 1.0, 0.0, 1.0)
    ts = np.array([0.05, 0.1, 0.2])
    errs = []
    for t in ts:
        cn = evolve_crank_nicolson(dho_ctx.spec, psi0, t, 1e-4)
        errs.append(expm_apply(magnus_omega(dho_ctx.spec, t, 1, GM), psi0).distance(cn))
    slope = np.polyfit(np.log(ts), np.log(errs), 1)[0]
    assert abs(slope - 3.0) < 0.2


def test_magnus_higher_orders_local_error(dho_ctx):
    # Omega_2 removes the t^3 error; Omega_3 enters at the same t^5 order as the truncation
    psi0 = gaussian(GM, 1.0, 0.0, 1.0)
    ts = np.array([0.1, 0.2, 0.4])
    errs = np.empty((3, 3))
    for i, t in enumerate(ts):
        ref = evolve_qat_exact(dho_ctx, psi0, t)
        errs[i] = [expm_apply(magnus_omega(dho_ctx.spec, t, k, GM), psi0).distance(ref) for k in (1, 2, 3)]
    assert np.all(errs[:, 0] > 100 * errs[:, 1])
    assert np.all(errs[:, 2] < 2 * errs[:, 1])
    slope = np.polyfit(np.log(ts), np.log(errs[:, 1]), 1)[0]
    assert abs(slope - 5.0) < 0.3


def test_omega6_undamped_limit():
    t = 0.7
    omega6 = magnus_omega6_dho(0.0, 1.3, t, GM)
    h = hamiltonian_matrix(preset("harmonic", omega=1.3), GM, t)
    assert np.max(np.abs(omega6 - (-1j) * t * h)) < 1e-12


def test_omega6_against_exact(dho_ctx):
    psi0 = gaussian(GM, 1.0, 0.0, 1.0)
    out = expm_apply(magnus_omega6_dho(0.2, 1.0, 0.3, GM), psi0)
    assert out.distance(evolve_qat_exact(dho_ctx, psi0, 0.3)) < 1e-4


def test_omega6_against_nested_integrals(dho_ctx):
    # two independent Magnus routes agree to the third-order truncation level
    t = 0.2
    o6 = magnus_omega6_dho(0.2, 1.0, t, GM)
    o3 = magnus_omega(dho_ctx.spec, t, 3, GM)
    psi0 = gaussian(GM, 1.0, 0.0, 1.0)
    assert expm_apply(o6, psi0).distance(expm_apply(o3, psi0)) < 1e-5


def test_omega6_printed_third_block_is_worse(dho_ctx):
    psi0 = gaussian(GM, 1.0, 0.0, 1.0)
    t = 0.3
    ref = evolve_qat_exact(dho_ctx, psi0, t)
    fixed = expm_apply(magnus_omega6_dho(0.2, 1.0, t, GM), psi0).distance(ref)
    printed = expm_apply(magnus_omega6_dho(0.2, 1.0, t, GM, as_printed=True), psi0).distance(ref)
    assert printed > 10 * fixed


def test_three_way_agreement(dho_ctx, grid_cn):
    g = Grid(-16.0, 16.0, 512)
    psi0 = gaussian(g, 1.0, 0.0, 1.0)
    for t in (0.1, 0.3):
        q = evolve_qat_exact(dho_ctx, psi0, t)
        c = evolve_crank_nicolson(dho_ctx.spec, psi0, t, 1e-4)
        m = expm_apply(magnus_omega6_dho(0.2, 1.0, t, g), psi0)
        assert max(q.distance(c), q.distance(m), c.distance(m)) < 1e-4


def test_matrix_exponential_basics(rng):
    assert np.array_equal(matrix_exponential(np.zeros((4, 4))), np.eye(4))
    d = rng.normal(size=6)
    np.testing.assert_allclose(matrix_exponential(np.diag(d)), np.diag(np.exp(d)), rtol=1e-13)
    with pytest.raises(ValueError):
        matrix_exponential(np.array([[np.inf]]))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), scale=st.floats(0.1, 5.0))
def test_matrix_exponential_inverse_pair(seed, scale):
    r = np.random.default_rng(seed)
    a = r.normal(size=(8, 8)) + 1j * r.normal(size=(8, 8))
    a *= scale / np.linalg.norm(a, 2)
    prod = matrix_exponential(a) @ matrix_exponential(-a)
    assert np.max(np.abs(prod - np.eye(8))) < 1e-10


def test_evolution_operator_modes_agree(dho_ctx):
    psi0 = gaussian(GM, 1.0, 0.0, 1.0)
    t = 0.2
    outs = [EvolutionOperator(dho_ctx, mode).apply(psi0, t) for mode in Mode]
    for o in outs:
        assert abs(o.norm() - 1) < 1e-8
    assert outs[0].distance(outs[1]) < 1e-5 and outs[0].distance(outs[2]) < 1e-5


def test_exact_matrix_unitary_on_smooth_states(dho_ctx):
    u = qat_exact_matrix(dho_ctx, GM, 0.5)
    ud = qat_exact_matrix(dho_ctx, GM, 0.5, adjoint=True)
    psi = gaussian(GM, 0.3, 0.2, 1.0).amplitudes
    np.testing.assert_allclose(ud @ (u @ psi), psi, atol=1e-10)
    np.testing.assert_allclose(u @ psi, evolve_qat_exact(dho_ctx, gaussian(GM, 0.3, 0.2, 1.0), 0.5).amplitudes,
                               atol=1e-12)
