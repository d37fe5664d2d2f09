"""Frequency-domain spectra: exact dispersion oracles and branch fits.

The harmonic wave of the cubic two-component system admits a closed-form
dispersion relation: writing solutions as the carrier e^{i kappa x} times a
slowly varying amplitude, the linearization about the wave becomes constant
coefficient, and at Fourier frequency nu its 2x2 symbol has eigenvalues

    lambda_pm(nu) = -(nu^2 + A^2) +- sqrt(A^4 + 4 kappa^2 nu^2),

with A^2 = 1 - kappa^2. Since the carrier shifts frequencies by exactly one
dual-lattice spacing, the periodic-coefficient operator at Bloch frequency xi
has spectrum {lambda_pm(xi + j kappa) : j integer}. Taylor expansion of
lambda_+ gives the drift a = 0 and diffusion b = (1 - 3 kappa^2)/(1 - kappa^2),
which also locates the sideband stability boundary at kappa = 1/sqrt(3).
"""

import numpy as np
import pytest

from modwave import bloch, spectral
from modwave.models import linear_model, rgl_model
from modwave.profiles import constant_profile, rgl_wave

KAPPA = 0.35


def exact_dispersion(nu, kappa=KAPPA):
    A2 = 1.0 - kappa ** 2
    root = np.sqrt(A2 ** 2 + 4.0 * kappa ** 2 * np.asarray(nu) ** 2)
    base = -(np.asarray(nu) ** 2 + A2)
    return base + root, base - root


def exact_diffusion(kappa=KAPPA):
    return (1.0 - 3.0 * kappa ** 2) / (1.0 - kappa ** 2)


@pytest.mark.parametrize("xi", [0.0, 0.05, 0.12, -0.08])
def test_bloch_spectrum_matches_exact_dispersion(profile, model, xi):
    sp = bloch.spectrum(bloch.assemble_bloch(profile, model, xi))
    exact = []
    for j in range(-6, 7):
        lp, lm = exact_dispersion(xi + j * KAPPA)
        exact.extend([lp, lm])
    for lam in exact:
        err = np.abs(sp - lam).min()
        assert err < 1e-8 * (1.0 + abs(lam))


def test_zero_mode_is_simple_and_pinned_to_wave_derivative(profile, model,
                                                           pair0):
    assert abs(pair0.lam) < 1e-10
    # after the gauge normalization q carries exactly the translation mode
    gamma = spectral.mean_inner(pair0.qtilde, profile.ubar_x.astype(complex))
    assert abs(gamma - 1.0) < 1e-8
    rel = np.abs(pair0.q - profile.ubar_x).max() / np.abs(profile.ubar_x).max()
    assert rel < 1e-8


def test_amplitude_mode_at_zero_frequency(profile, model):
    # lambda_-(0) = -2 A^2 is the slowest non-translation eigenvalue
    sp = bloch.spectrum(bloch.assemble_bloch(profile, model, 0.0))
    want = -2.0 * (1.0 - KAPPA ** 2)
    assert np.abs(sp - want).min() < 1e-8


def test_critical_branch_fits_exact_coefficients(profile, model, branch):
    assert abs(branch.a) < 1e-8
    b_exact = exact_diffusion()
    err_default = abs(branch.b - b_exact)
    # the quadratic fit carries an O(window^2) bias from the quartic term
    assert err_default < 1e-3 * b_exact
    half = bloch.critical_branch(profile, model,
                                 window=0.25 * np.pi / profile.P)
    err_half = abs(half.b - b_exact)
    assert err_half < 0.5 * err_default


def test_branch_gauge_projection_weights(profile, model):
    # <qtilde, ubar'> = 1 at every tracked frequency makes the phase
    # projection coefficients dimensionless gains of exactly one
    pair = bloch.eigenfunctions(profile, model, 0.04)
    gamma = spectral.mean_inner(pair.qtilde, profile.ubar_x.astype(complex))
    assert abs(gamma - 1.0) < 1e-8
    assert abs(spectral.mean_inner(pair.qtilde, pair.q) - 1.0) < 1e-10


def test_certificate_grades_stable_wave(profile, model):
    cert = bloch.check_diffusive_stability(profile, model, xi_count=32)
    assert cert.d1_ok and cert.d2_ok and cert.d3_ok
    assert cert.theta_hat > 0.5


def test_certificate_grades_sideband_unstable_wave(model):
    # kappa beyond 1/sqrt(3): the branch curves upward and D3 fails
    prof = rgl_wave(0.62, n_points=16)
    cert = bloch.check_diffusive_stability(prof, model, xi_count=32)
    assert not cert.d3_ok
    stable = bloch.check_diffusive_stability(rgl_wave(0.5, n_points=16),
                                             rgl_model(), xi_count=32)
    assert stable.d3_ok


def test_constant_coefficient_drift_spectrum():
    model = linear_model([[0.0]])
    prof = constant_profile(model, [0.0], 2.0 * np.pi, n_points=16, speed=0.8)
    xi = 0.3
    sp = bloch.spectrum(bloch.assemble_bloch(prof, model, xi))
    for j in range(-7, 8):
        nu = xi + j
        lam = -nu ** 2 + 1j * 0.8 * nu
        assert np.abs(sp - lam).min() < 1e-8
    br = bloch.critical_branch(prof, model)
    assert abs(br.a + 0.8) < 1e-6
    assert abs(br.b - 1.0) < 1e-6


def test_eps0_default_stays_inside_first_zone(branch, profile):
    assert 0.0 < branch.eps0_default <= 0.5 * np.pi / profile.P


def test_operator_dimension_and_hermitian_symbol(profile, model):
    op = bloch.assemble_bloch(profile, model, 0.07)
    d = profile.n * profile.N
    assert op.matrix.shape == (d, d)
    # conjugating xi -> -xi mirrors the spectrum
    sp_p = bloch.spectrum(op)
    sp_m = bloch.spectrum(bloch.assemble_bloch(profile, model, -0.07))
    for lam in sp_p:
        assert np.abs(sp_m - np.conj(lam)).min() < 1e-8


def test_spectra_csv_written(tmp_path, profile, model):
    path = tmp_path / "spectra.csv"
    bloch.write_spectra_csv(path, profile, model, np.linspace(-0.1, 0.1, 5))
    text = path.read_text().splitlines()
    assert text[0].startswith("xi")
    assert len(text) == 1 + 5 * profile.n * profile.N
