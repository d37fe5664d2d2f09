"""Kernels, cutoffs, envelopes, and the algebraic-tail convolution bound."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import erf

from modwave import kernels
from modwave.errors import GridTooCoarse, NonpositiveTime
from modwave.kernels import (DecayEnvelope, EKernel, FrequencyCutoff,
                             GaussianKernel, TimeCutoff, check_convolution_lemma,
                             gaussian_convolve, smooth_step)


def test_smooth_step_plateaus_and_monotone():
    s = np.linspace(-1.0, 2.0, 301)
    v = smooth_step(s)
    assert np.all(v[s <= 0.0] == 0.0)
    assert np.all(v[s >= 1.0] == 1.0)
    assert np.all(np.diff(v) >= -1e-12)


@pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
def test_gaussian_kernel_unit_mass(t):
    kern = GaussianKernel(a=0.4, b=0.9)
    z = np.linspace(-80.0, 80.0, 20001)
    mass = np.trapezoid(kern(z, t), z)
    assert abs(mass - 1.0) < 1e-10


def test_gaussian_kernel_rejects_nonpositive_time():
    kern = GaussianKernel(a=0.0, b=1.0)
    with pytest.raises(NonpositiveTime):
        kern(np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        GaussianKernel(a=0.0, b=-1.0)


def test_decay_envelope_time_zero_is_algebraic_only():
    env = DecayEnvelope(r=2.0, M=4.0)
    x = np.array([0.0, 1.0, 3.0])
    assert np.abs(env(x, 0.0) - (1.0 + np.abs(x)) ** -2.0).max() < 1e-14
    with pytest.raises(NonpositiveTime):
        env(x, -0.5)
    with pytest.raises(ValueError):
        DecayEnvelope(r=1.2, M=4.0)


def test_time_cutoff_dead_zone_and_plateau():
    chi = TimeCutoff(0.5, 1.0)
    assert chi(0.25) == 0.0
    assert chi(0.5) == 0.0
    assert chi(1.0) == 1.0
    assert 0.0 < chi(0.75) < 1.0


def test_frequency_cutoff_band_structure():
    alpha = FrequencyCutoff(0.1)
    assert alpha(0.05) == 1.0
    assert alpha(-0.1) == 1.0
    assert alpha(0.2) == 0.0
    assert 0.0 < alpha(0.15) < 1.0


def test_convolve_constant_data_is_invariant():
    kern = GaussianKernel(a=0.3, b=0.8)
    x = np.linspace(-40.0, 40.0, 801)
    out = gaussian_convolve(kern, x, np.ones_like(x), 2.0,
                            end_minus=1.0, end_plus=1.0)
    assert np.abs(out - 1.0).max() < 1e-8


def test_convolve_gaussian_spreads_and_drifts():
    a, b, t = 0.5, 0.7, 3.0
    kern = GaussianKernel(a=a, b=b)
    x = np.linspace(-60.0, 60.0, 2401)
    sig2 = 2.0
    data = np.exp(-x ** 2 / (2.0 * sig2))
    out = gaussian_convolve(kern, x, data, t)
    s2t = sig2 + 2.0 * b * t
    want = np.sqrt(sig2 / s2t) * np.exp(-(x - a * t) ** 2 / (2.0 * s2t))
    mid = np.abs(x) < 40.0
    assert np.abs(out - want)[mid].max() < 1e-8


def test_convolve_step_matches_quadrature_oracle():
    a, b, t = 0.0, 1.0, 2.0
    h_inf = 0.5
    kern = GaussianKernel(a=a, b=b)
    x = np.linspace(-50.0, 50.0, 2001)
    data = h_inf * np.tanh(x / 3.0)
    out = gaussian_convolve(kern, x, data, t, end_minus=-h_inf, end_plus=h_inf)

    def integrand(y, xs):
        return np.exp(-(xs - y) ** 2 / (4.0 * b * t)) / np.sqrt(
            4.0 * np.pi * b * t) * h_inf * np.tanh(y / 3.0)

    for xs in (-7.3, -1.0, 0.0, 2.4, 9.9):
        want = quad(integrand, -200.0, 200.0, args=(xs,), limit=400)[0]
        got = out[np.argmin(np.abs(x - xs))]
        assert abs(got - want) < 1e-6 * max(abs(want), h_inf)


def test_sharp_step_tends_to_error_function():
    # a hard sign step convolved with the kernel is an exact erf ramp
    b, t = 0.6, 1.5
    kern = GaussianKernel(a=0.0, b=b)
    x = np.linspace(-30.0, 30.0, 4001)
    data = np.sign(x)
    out = gaussian_convolve(kern, x, data, t, end_minus=-1.0, end_plus=1.0)
    want = erf(x / np.sqrt(4.0 * b * t))
    mid = np.abs(x) < 20.0
    assert np.abs(out - want)[mid].max() < 2e-3  # data grid resolves the jump


def test_convolve_guards_unresolved_kernel():
    kern = GaussianKernel(a=0.0, b=1.0)
    x = np.linspace(-10.0, 10.0, 21)
    with pytest.raises(GridTooCoarse):
        gaussian_convolve(kern, x, np.ones_like(x), 1e-4)


def test_e_kernel_weights_periodic_and_cutoff():
    qt = np.array([[1.0, 2.0, 1.0, 0.0]])
    ek = EKernel(GaussianKernel(0.0, 1.0), qt, P=4.0)
    y = np.array([0.0, 4.0, 8.0])
    w = ek.weights(y)
    assert np.abs(w - w[:, :1]).max() < 1e-12
    assert np.abs(ek(0.0, 0.3, y)).max() == 0.0  # chi dead zone


def test_lemma_ratio_finite_and_refinement_stable():
    rep = check_convolution_lemma(2.0, b=1.0)
    assert np.isfinite(rep.C_hat) and rep.C_hat > 0.0
    fine = check_convolution_lemma(2.0, b=1.0, dy=0.05)
    coarse = check_convolution_lemma(2.0, b=1.0, dy=0.1)
    assert abs(fine.C_hat - coarse.C_hat) < 0.05 * coarse.C_hat


def test_lemma_sup_monotone_in_grid():
    full = check_convolution_lemma(1.5, b=1.0,
                                   t_grid=np.geomspace(0.1, 100.0, 25))
    sub = check_convolution_lemma(1.5, b=1.0,
                                  t_grid=np.geomspace(0.1, 100.0, 25)[::2])
    assert sub.C_hat <= full.C_hat + 1e-12


def test_lemma_rejects_nonintegrable_rate():
    with pytest.raises(ValueError):
        check_convolution_lemma(0.9)


def test_lemma_report_csv(tmp_path):
    rep = check_convolution_lemma(2.0, b=1.0,
                                  x_grid=np.linspace(-5.0, 5.0, 5),
                                  t_grid=np.array([0.5, 1.0]))
    path = tmp_path / "lemma.csv"
    rep.save_csv(path)
    assert len(path.read_text().splitlines()) == 1 + 10
