"""Fourth-order exponential time differencing (ETDRK4) in Fourier space.

Integrates u_t = l(k) u + N(u) where l is a diagonal Fourier symbol and N is
an arbitrary (pointwise-in-x) term supplied in Fourier space. The phi-function
coefficients are evaluated by contour averaging over roots of unity centered
at each l(k) dt, which is stable for symbols of any stiffness, including
complex ones.
"""

from __future__ import annotations

import numpy as np
from numpy.fft import fft, ifft


class FourierETDRK4:
    """One Fourier-space ETDRK4 stepper for a fixed symbol and step size."""

    def __init__(self, symbol: np.ndarray, dt: float, n_contour: int = 32):
        self.symbol = np.asarray(symbol, dtype=complex)
        self.dt = float(dt)
        lc = self.symbol * dt
        self.e_full = np.exp(lc)
        self.e_half = np.exp(lc / 2.0)

        theta = np.exp(2j * np.pi * (np.arange(n_contour) + 0.5) / n_contour)
        z = lc[..., None] + theta
        self.q = dt * ((np.exp(z / 2.0) - 1.0) / z).mean(axis=-1)
        self.f1 = dt * ((-4.0 - z + np.exp(z) * (4.0 - 3.0 * z + z ** 2))
                        / z ** 3).mean(axis=-1)
        self.f2 = dt * ((2.0 + z + np.exp(z) * (-2.0 + z))
                        / z ** 3).mean(axis=-1)
        self.f3 = dt * ((-4.0 - 3.0 * z - z ** 2 + np.exp(z) * (4.0 - z))
                        / z ** 3).mean(axis=-1)

    def step(self, v: np.ndarray, nonlin) -> np.ndarray:
        """Advance Fourier coefficients v by one step; nonlin maps v -> N(v)."""
        n0 = nonlin(v)
        a = self.e_half * v + self.q * n0
        na = nonlin(a)
        b = self.e_half * v + self.q * na
        nb = nonlin(b)
        c = self.e_half * a + self.q * (2.0 * nb - n0)
        nc = nonlin(c)
        return (self.e_full * v + n0 * self.f1 + 2.0 * (na + nb) * self.f2
                + nc * self.f3)


def reaction_diffusion_symbol(k: np.ndarray, c: float) -> np.ndarray:
    """Linear symbol of d_xx + c d_x in the co-moving frame."""
    return -k ** 2 + 1j * c * k


def dealias_mask(n: int) -> np.ndarray:
    """Standard 2/3-rule mask in numpy FFT ordering."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    return (np.abs(k) < n / 3.0).astype(float)


def integrate_linear(fields: np.ndarray, t: float, period: float, c: float,
                     coeff: np.ndarray, dt: float = 0.01) -> np.ndarray:
    """Integrate w_t = w_xx + c w_x + B(x) w on a periodic grid.

    coeff is the (n, n, M) multiplication operator B(x); fields is (n, M).
    Used as the direct cross-check of the per-frequency propagator route, so
    no dealiasing is applied (full band, matching the dense route).
    """
    from . import spectral

    fields = np.atleast_2d(np.asarray(fields))
    n, M = fields.shape
    k = spectral.wavenumbers(M, period)
    stepper = None
    vhat = fft(fields, axis=-1)

    def nonlin(vh):
        v = ifft(vh, axis=-1)
        Bv = np.einsum("ij...,j...->i...", coeff, v)
        return fft(Bv, axis=-1)

    nsteps = max(1, int(round(t / dt)))
    h = t / nsteps
    stepper = FourierETDRK4(reaction_diffusion_symbol(k, c), h)
    for _ in range(nsteps):
        vhat = stepper.step(vhat, nonlin)
    out = ifft(vhat, axis=-1)
    if np.isrealobj(fields):
        return out.real
    return out
