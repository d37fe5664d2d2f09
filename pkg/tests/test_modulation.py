"""Phase extraction, gauge properties, and the remainder decomposition.

The decomposition convention throughout is the inverse composition
u(x - psi(x)) = ubar(x) + v(x): psi is the phase read in the material frame
and v is the gauge-orthogonal shape residual. Tests that need an exact
oracle therefore build fields by inverting y = x - psi(x) at every node,
the same construction the initial-data builder uses.
"""

import numpy as np
import pytest
from dataclasses import replace
from numpy.fft import fft

from modwave import modulation, spectral
from modwave.errors import AnsatzBreakdown
from modwave.evolve import InitialDataSpec, build_initial_data, evolve_pde
from modwave.modulation import (ModulationProjector, ModulationTrace,
                                NonlinearTerms, extract_psi,
                                perturbation_identity_residual)
from modwave.semigroup import MultiCellGrid


@pytest.fixture(scope="module")
def grid(profile):
    return MultiCellGrid(64, profile.N, profile.P)


@pytest.fixture(scope="module")
def projector(profile, model, grid, branch):
    return ModulationProjector.build(profile, model, grid,
                                     branch.eps0_default)


def band_limited_phase(grid, eps0, seed, amp):
    """Real phase field built from harmonics inside the inner band."""
    rng = np.random.default_rng(seed)
    kmax = int(np.floor(eps0 * grid.length / (2.0 * np.pi)))
    x = grid.x
    psi = np.zeros(grid.M)
    for m in range(1, kmax + 1):
        k = 2.0 * np.pi * m / grid.length
        a, b = rng.standard_normal(2)
        psi += a * np.cos(k * x) + b * np.sin(k * x)
    return amp * psi / max(np.abs(psi).max(), 1e-30)


def impose_phase(profile, grid, psi, v=None):
    """Field satisfying u(x - psi(x)) = ubar(x) + v(x) exactly on nodes.

    Inverts y = x - psi(x) by fixed-point iteration (valid while
    sup |psi_x| < 1) and samples the modulated wave at the preimages.
    psi and v are taken as their band-limited interpolants off the grid.
    """
    box = grid.length
    half = 0.5 * box
    x = grid.x
    xs = x.copy()
    for _ in range(200):
        step = x + spectral.trig_eval(psi[None, :], box, xs + half)[0] - xs
        xs = xs + step
        if np.abs(step).max() < 1e-14 * box:
            break
    u = profile.eval(np.mod(xs, profile.P))
    if v is not None:
        u = u + spectral.trig_eval(v, box, xs + half)
    return u


def recompose(u_field, psi, profile, grid):
    """Evaluate u(x - psi(x)) by exact trigonometric interpolation."""
    box = grid.length
    return spectral.trig_eval(u_field, box, (grid.x - psi) + 0.5 * box)


def test_projection_gain_is_unity_per_mode(profile, grid, projector):
    # a pure phase field along ubar' projects, mode by mode, to exactly
    # alpha(xi) psi_hat(xi) thanks to the <qtilde, ubar'> = 1 normalization
    psi = band_limited_phase(grid, 2.0 * projector.eps0, seed=1, amp=1.0)
    w = grid.tile(profile.ubar_x) * psi[None, :]
    coeffs = projector.coefficients(w)
    psi_hat = fft(psi) / grid.M
    for i in range(projector.columns.size):
        want = projector.alpha[i] * psi_hat[projector.m_signed[i] % grid.M]
        assert abs(coeffs[i] - want) < 1e-12


def test_synthesis_inverts_projection_inside_band(grid, projector):
    # strictly inside |xi| <= eps0 the band weight is one, so projecting a
    # band-limited phase and synthesizing it back is the identity
    psi = band_limited_phase(grid, projector.eps0, seed=2, amp=0.5)
    coeffs = fft(psi)[projector.m_signed % grid.M] / grid.M * projector.alpha
    back = projector.synthesize(coeffs)
    assert np.isrealobj(back)
    assert np.abs(back - psi).max() < 1e-12


def test_extraction_recovers_imposed_phase(profile, grid, projector):
    psi = band_limited_phase(grid, projector.eps0, seed=3, amp=0.02)
    u = impose_phase(profile, grid, psi)
    res = extract_psi(u, projector)
    assert np.abs(res.psi - psi).max() < 1e-6
    assert np.abs(res.v).max() < 1e-6
    assert res.residual < 1e-8


def test_extraction_exit_condition_is_honest(profile, grid, projector):
    psi = band_limited_phase(grid, projector.eps0, seed=4, amp=0.02)
    rng = np.random.default_rng(4)
    raw = rng.standard_normal((profile.n, grid.M))
    keep = np.abs(spectral.wavenumbers(grid.M, grid.length)) < 1.0
    v = 0.003 * np.fft.ifft(fft(raw, axis=-1) * keep, axis=-1).real
    u = impose_phase(profile, grid, psi, v=v)
    res = extract_psi(u, projector)
    w_scale = np.abs(u - grid.tile(profile.ubar)).max()
    assert projector.gauge_residual(res.v) <= 1e-8 * w_scale


def test_single_sample_shift_moves_phase_by_dx(profile, grid, projector):
    # translating the field right by one sample leaves the material shape
    # untouched and lowers the phase by exactly dx
    psi = band_limited_phase(grid, projector.eps0, seed=5, amp=0.02)
    u = impose_phase(profile, grid, psi)
    base = extract_psi(u, projector)
    rolled = extract_psi(np.roll(u, 1, axis=-1), projector)
    assert np.abs(rolled.psi - (base.psi - grid.dx)).max() < 1e-6


def test_full_cell_shift_rolls_phase(profile, grid, projector):
    # translating by a whole period cell leaves the tiled wave invariant,
    # so the phase field simply translates with the data
    psi = band_limited_phase(grid, projector.eps0, seed=6, amp=0.02)
    u = impose_phase(profile, grid, psi)
    base = extract_psi(u, projector)
    rolled = extract_psi(np.roll(u, profile.N, axis=-1), projector)
    assert np.abs(rolled.psi - np.roll(base.psi, profile.N)).max() < 1e-6


def test_ansatz_breakdown_raised_for_steep_phase(profile, grid, projector):
    x = grid.x
    psi = 0.98 * grid.length / (2.0 * np.pi) * np.sin(
        2.0 * np.pi * x / grid.length)
    with pytest.raises(AnsatzBreakdown):
        projector.compute_v(grid.tile(profile.ubar), psi)


def test_nonlinear_terms_quadratic_scaling(profile, model, grid):
    terms = NonlinearTerms(profile, model, grid)
    base_psi = band_limited_phase(grid, 0.05, seed=7, amp=1.0)
    rng = np.random.default_rng(7)
    raw = rng.standard_normal((profile.n, grid.M))
    keep = np.abs(spectral.wavenumbers(grid.M, grid.length)) < 1.0
    base_v = np.fft.ifft(fft(raw, axis=-1) * keep, axis=-1).real
    sizes = np.array([0.01, 0.005, 0.0025])
    mags = []
    for s in sizes:
        v = s * base_v
        psi_x = s * spectral.deriv(base_psi, grid.length, 1)
        psi_xx = s * spectral.deriv(base_psi, grid.length, 2)
        psi_t = s * 0.3 * base_psi
        Z_t = 0.3 * terms.Z(v, psi_x)
        total = terms.total(v, psi_t, psi_x, psi_xx, Z_t)
        mags.append(np.abs(total).max())
    slope = np.polyfit(np.log(sizes), np.log(mags), 1)[0]
    assert abs(slope - 2.0) < 0.1


def test_quadratic_closure_vanishes_on_unperturbed_state(profile, model,
                                                         grid):
    terms = NonlinearTerms(profile, model, grid)
    zero_v = np.zeros((profile.n, grid.M))
    zero = np.zeros(grid.M)
    total = terms.total(zero_v, zero, zero, zero, zero_v)
    assert np.abs(total).max() == 0.0


@pytest.fixture(scope="module")
def short_run(profile, model, grid, branch, projector):
    spec = InitialDataSpec(e0=0.01, r=1.5, h_inf=0.004, h_width=3.0, seed=0)
    data = build_initial_data(spec, profile, grid)
    traj = evolve_pde(data.u0, 30.0, model, grid, c=profile.c, dt=0.02,
                      snap_dt=0.5)
    trace = ModulationTrace.from_trajectory(traj, projector, h0=data.h0,
                                            branch=branch)
    return data, traj, trace


def test_trace_initial_phase_matches_data(short_run):
    data, _, trace = short_run
    assert np.abs(trace.psi[0] - data.h0).max() < 1e-6


def test_trace_defining_identity_holds_per_snapshot(short_run, profile,
                                                    grid):
    _, traj, trace = short_run
    ub = grid.tile(profile.ubar)
    for k in (0, 20, 60):
        lhs = recompose(traj.u[k], trace.psi[k], profile, grid)
        assert np.abs(lhs - (ub + trace.v[k])).max() < 1e-6


def test_identity_residual_refines_with_snapshot_spacing(short_run, profile,
                                                         model):
    _, _, trace = short_run
    rep1 = perturbation_identity_residual(trace, profile, model, stride=1)
    rep2 = perturbation_identity_residual(trace, profile, model, stride=2)
    late1 = rep1.times >= 6.0
    late2 = rep2.times >= 6.0
    common = np.intersect1d(rep1.times[late1], rep2.times[late2])
    r1 = np.array([rep1.residuals[np.nonzero(rep1.times == t)[0][0]]
                   for t in common])
    r2 = np.array([rep2.residuals[np.nonzero(rep2.times == t)[0][0]]
                   for t in common])
    halving = np.median(r2 / r1)
    assert 2.5 < halving < 6.0


def test_identity_residual_detects_corruption(short_run, profile, model):
    _, _, trace = short_run
    rep = perturbation_identity_residual(trace, profile, model, stride=1)
    delta = 0.1 * np.sin(16.0 * np.pi * trace.grid.x / trace.grid.length)
    psi_c = trace.psi + delta[None, :]
    bad = replace(trace, psi=psi_c,
                  psi_x=spectral.deriv(psi_c, trace.grid.length, 1),
                  psi_xx=spectral.deriv(psi_c, trace.grid.length, 2))
    rep_c = perturbation_identity_residual(bad, profile, model, stride=1)
    late = rep.times >= 6.0
    assert np.median(rep_c.residuals[late]) > 100.0 * np.median(
        rep.residuals[late])


def test_zeta_running_sup_is_monotone(short_run, branch):
    _, _, trace = short_run
    zt = modulation.zeta(trace, 0.01, 1.5, branch)
    assert zt.shape == trace.times.shape
    assert np.all(np.diff(zt) >= 0.0)


def test_zeta_tightens_with_smaller_gaussian_constant(short_run, branch):
    _, _, trace = short_run
    loose = modulation.zeta(trace, 0.01, 1.5, branch, M_env=32.0 * branch.b)
    tight = modulation.zeta(trace, 0.01, 1.5, branch, M_env=16.0 * branch.b)
    assert np.all(tight >= loose - 1e-12)


def test_phase_prediction_tracks_extracted_phase(short_run, branch,
                                                 projector):
    data, _, trace = short_run
    rep = modulation.psi_consistency(trace, branch, data.h0, projector.eps0)
    assert rep["rel_band"][0] < 1e-6
    assert rep["rel_band"][-1] < 0.1


def test_trace_roundtrip(tmp_path, short_run):
    _, _, trace = short_run
    path = tmp_path / "trace.npz"
    trace.save_npz(path)
    back = ModulationTrace.load_npz(path)
    assert np.array_equal(back.psi, trace.psi)
    assert np.array_equal(back.v, trace.v)
    assert np.array_equal(back.times, trace.times)
