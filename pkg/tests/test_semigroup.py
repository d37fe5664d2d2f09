"""Multi-cell grids, frequency-column propagators, and the heat-drift part."""

import numpy as np
import pytest

from modwave import bloch, spectral
from modwave.errors import DeltaUnresolved, NonpositiveTime, ShapeMismatch
from modwave.semigroup import (MultiCellGrid, PropagatorTable,
                               apply_semigroup_bloch, apply_semigroup_direct,
                               bloch_inverse, bloch_transform, build_propagator,
                               e_kernel_apply, green_sample, sp_star,
                               tilde_S_star, verify_linear_envelope)


@pytest.fixture(scope="module")
def grid(profile):
    return MultiCellGrid(32, profile.N, profile.P)


@pytest.fixture(scope="module")
def table(profile, model, grid):
    return build_propagator(profile, model, grid)


def smooth_field(grid, n, seed, modes=6):
    rng = np.random.default_rng(seed)
    out = np.zeros((n, grid.M))
    for i in range(n):
        spec = np.zeros(grid.M, dtype=complex)
        cf = rng.standard_normal(modes) + 1j * rng.standard_normal(modes)
        spec[:modes] = cf
        spec[-modes + 1:] = np.conj(cf[1:][::-1])
        out[i] = np.fft.ifft(spec).real * grid.M / (4.0 * modes)
    return out


def test_grid_geometry(profile):
    grid = MultiCellGrid(8, profile.N, profile.P)
    assert grid.M == 8 * profile.N
    assert grid.length == pytest.approx(8 * profile.P)
    assert abs(grid.x[0] + grid.length / 2.0) < 1e-12
    assert np.allclose(np.diff(grid.x), grid.dx)
    with pytest.raises(ValueError):
        MultiCellGrid(7, profile.N, profile.P)


def test_tile_repeats_one_period(profile):
    grid = MultiCellGrid(4, profile.N, profile.P)
    tiled = grid.tile(profile.ubar)
    assert tiled.shape == (profile.n, grid.M)
    assert np.array_equal(tiled[:, :profile.N], profile.ubar)
    assert np.array_equal(tiled[:, profile.N:2 * profile.N], profile.ubar)


def test_bloch_transform_roundtrip(profile, grid):
    w = smooth_field(grid, profile.n, seed=3)
    what = bloch_transform(w, grid)
    back = bloch_inverse(what)
    assert np.abs(back - w).max() < 1e-12


def test_transform_of_periodic_field_concentrates_at_zero_column(profile,
                                                                 grid):
    w = grid.tile(profile.ubar)
    what = bloch_transform(w, grid)
    energy = np.sum(np.abs(what) ** 2, axis=(1, 2))
    assert energy[0] > 0.0
    assert energy[1:].max() < 1e-20 * energy[0]


def test_semigroup_identity_at_time_zero(profile, grid, table):
    w = smooth_field(grid, profile.n, seed=4)
    out = apply_semigroup_bloch(w, 0.0, table)
    assert np.abs(out - w).max() < 1e-12


def test_semigroup_composition_property(profile, grid, table):
    w = smooth_field(grid, profile.n, seed=5)
    two_leg = apply_semigroup_bloch(apply_semigroup_bloch(w, 1.5, table),
                                    2.0, table)
    one_leg = apply_semigroup_bloch(w, 3.5, table)
    scale = np.abs(one_leg).max()
    assert np.abs(two_leg - one_leg).max() < 1e-8 * scale


@pytest.mark.parametrize("t", [0.5, 1.0, 5.0])
def test_bloch_and_direct_routes_agree(profile, model, grid, table, t):
    w = smooth_field(grid, profile.n, seed=6)
    via_columns = apply_semigroup_bloch(w, t, table)
    via_stepping = apply_semigroup_direct(w, t, profile, model, grid,
                                          dt=0.005)
    rel = np.abs(via_columns - via_stepping).max() / np.abs(via_columns).max()
    assert rel < 1e-5


def test_translation_mode_is_invariant(profile, grid, table):
    ubx = grid.tile(profile.ubar_x)
    out = apply_semigroup_bloch(ubx, 10.0, table)
    assert np.abs(out - ubx).max() < 1e-8 * np.abs(ubx).max()


def test_table_roundtrip_reproduces_action(tmp_path, profile, grid, table):
    path = tmp_path / "table.bin"
    table.save(path)
    back = PropagatorTable.load(path)
    w = smooth_field(grid, profile.n, seed=7)
    a = apply_semigroup_bloch(w, 2.0, table)
    b = apply_semigroup_bloch(w, 2.0, back)
    assert np.array_equal(a, b)


def test_sp_star_constant_invariance(grid):
    out = sp_star(np.ones(grid.M), 2.0, 0.3, 0.8, grid)
    assert np.abs(out.value - 1.0).max() < 1e-8


def test_sp_star_gaussian_variance_growth(profile):
    grid = MultiCellGrid(64, profile.N, profile.P)
    a, b, t = 0.3, 0.72, 3.0
    sig2 = 4.0
    h0 = np.exp(-grid.x ** 2 / (2.0 * sig2))
    out = sp_star(h0, t, a, b, grid)
    s2t = sig2 + 2.0 * b * t
    want = np.sqrt(sig2 / s2t) * np.exp(-(grid.x - a * t) ** 2 / (2.0 * s2t))
    assert np.abs(out.value - want).max() < 1e-7


def test_sp_star_time_derivative_identity(grid):
    rng = np.random.default_rng(8)
    h0 = np.fft.ifft(np.fft.fft(rng.standard_normal(grid.M))
                     * (np.abs(spectral.wavenumbers(grid.M, grid.length))
                        < 1.0)).real
    out = sp_star(h0, 1.7, -0.4, 1.1, grid)
    resid = out.d_dt - (0.4 * out.d_dx + 1.1 * out.d_dx2)
    assert np.abs(resid).max() < 1e-7


def test_sp_star_guards(grid):
    with pytest.raises(NonpositiveTime):
        sp_star(np.ones(grid.M), -1.0, 0.0, 1.0, grid)
    with pytest.raises(ValueError):
        sp_star(np.ones(grid.M), 1.0, 0.0, 0.0, grid)
    with pytest.raises(ShapeMismatch):
        sp_star(np.ones(3), 1.0, 0.0, 1.0, grid)


def test_e_kernel_dead_zone_returns_zero(profile, grid, pair0, branch):
    v = np.ones((profile.n, grid.M))
    out = e_kernel_apply(v, 0.3, branch.a, max(branch.b, 0.1), pair0.qtilde,
                         grid)
    assert np.abs(out).max() == 0.0


def test_remainder_vanishes_on_constant_offset(profile, grid, table, branch):
    # S(t)(ubar' 1) = ubar' and the heat-drift part fixes constants, so the
    # remainder of a constant phase offset is identically zero
    out = tilde_S_star(np.ones(grid.M), 4.0, table, profile, branch)
    assert np.abs(out).max() < 1e-8 * np.abs(profile.ubar_x).max()


def test_linear_envelope_passes_on_stable_wave(profile, model, branch, pair0):
    from modwave.evolve import InitialDataSpec, build_initial_data
    grid = MultiCellGrid(64, profile.N, profile.P)
    table = build_propagator(profile, model, grid)
    data = build_initial_data(InitialDataSpec(e0=0.01, seed=0), profile, grid)
    rep = verify_linear_envelope(table, profile, branch, pair0, e0=0.01,
                                 h0=data.h0,
                                 t_grid=np.array([1.0, 3.0, 10.0, 30.0,
                                                  100.0]))
    assert rep.passed
    assert rep.slope <= 0.05


def test_linear_envelope_flags_unstable_wave(model):
    from modwave.evolve import InitialDataSpec, build_initial_data
    from modwave.profiles import rgl_wave
    prof = rgl_wave(0.8, n_points=32)
    grid = MultiCellGrid(32, prof.N, prof.P)
    table = build_propagator(prof, model, grid)
    branch = bloch.critical_branch(prof, model)
    pair0 = bloch.eigenfunctions(prof, model, 0.0)
    data = build_initial_data(InitialDataSpec(e0=0.01, seed=0), prof, grid)
    rep = verify_linear_envelope(table, prof, branch, pair0, e0=0.01,
                                 h0=data.h0,
                                 t_grid=np.array([1.0, 2.0, 5.0, 10.0,
                                                  20.0]))
    assert not rep.passed
    assert rep.slope > 0.05


def test_green_sample_guards_unresolved_delta(profile, model, grid, table,
                                              branch, pair0):
    with pytest.raises(DeltaUnresolved):
        green_sample(0.0, [1e-4, 1.0], table, profile, branch, pair0)
