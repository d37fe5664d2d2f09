"""Pointwise decay envelopes, Gaussian kernels, and smooth cutoffs.

The central objects of the pointwise theory: the algebraic-plus-Gaussian decay
envelope, the drifting heat kernel with 4bt exponent convention, smooth time
and frequency cutoffs built from exponential bumps, and the rank-one
modulation kernel E(x,t;y) = gauss(x-y-at) qtilde(y) chi(t). Also the
whole-line Gaussian convolution used to emulate R on a finite grid, and a
quadrature check of the algebraic-data convolution bound.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import erf

from . import spectral
from .errors import (GridTooCoarse, NonpositiveTime, QuadratureNonConvergence,
                     ShapeMismatch)


def smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity monotone step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        g0 = np.where(s > 0.0, np.exp(-1.0 / np.maximum(s, 1e-300)), 0.0)
        g1 = np.where(s < 1.0, np.exp(-1.0 / np.maximum(1.0 - s, 1e-300)), 0.0)
    return g0 / (g0 + g1)


@dataclass
class DecayEnvelope:
    """(1+|x-at|+sqrt(t))^{-r} + (1+t)^{-1/2} exp(-|x-at|^2/(M t)).

    At t = 0 only the algebraic part survives: (1+|x|)^{-r}. Negative times
    raise NonpositiveTime.
    """

    r: float
    M: float
    a: float = 0.0

    def __post_init__(self):
        if self.r < 1.5:
            raise ValueError("algebraic rate r must be >= 3/2")
        if self.M <= 0.0:
            raise ValueError("Gaussian width constant M must be positive")

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0):
            raise NonpositiveTime("envelope undefined for t < 0")
        x, t = np.broadcast_arrays(x, t)
        scalar = x.ndim == 0
        x, t = np.atleast_1d(x), np.atleast_1d(t)
        z = np.abs(x - self.a * t)
        out = (1.0 + z + np.sqrt(t)) ** (-self.r)
        pos = t > 0.0
        if np.any(pos):
            out[pos] += (1.0 + t[pos]) ** (-0.5) * np.exp(
                -z[pos] ** 2 / (self.M * t[pos]))
        return float(out[0]) if scalar else out


@dataclass
class GaussianKernel:
    """Drifting heat kernel (4 pi b t)^{-1/2} exp(-|z - a t|^2 / (4 b t))."""

    a: float
    b: float

    def __post_init__(self):
        if self.b <= 0.0:
            raise ValueError("diffusion coefficient b must be positive")

    def __call__(self, z, t):
        z = np.asarray(z, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0.0):
            raise NonpositiveTime("Gaussian kernel undefined for t <= 0")
        return np.exp(-(z - self.a * t) ** 2 / (4.0 * self.b * t)) / np.sqrt(
            4.0 * np.pi * self.b * t)


@dataclass
class TimeCutoff:
    """Smooth chi(t): 0 for t <= t_on, 1 for t >= t_full."""

    t_on: float = 0.5
    t_full: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.t_on < self.t_full:
            raise ValueError("need 0 <= t_on < t_full")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = smooth_step((t - self.t_on) / (self.t_full - self.t_on))
        return out if out.ndim else float(out)


@dataclass
class FrequencyCutoff:
    """Smooth even alpha(xi): 1 for |xi| <= eps0, 0 for |xi| >= 2 eps0."""

    eps0: float

    def __post_init__(self):
        if self.eps0 <= 0.0:
            raise ValueError("eps0 must be positive")

    def __call__(self, xi):
        s = np.abs(np.asarray(xi, dtype=float)) / self.eps0 - 1.0
        out = 1.0 - smooth_step(s)
        return out if out.ndim else float(out)


@dataclass
class EKernel:
    """Leading modulation kernel E(x,t;y) = gauss(x-y, t) qtilde0(y) chi(t).

    qtilde0 holds one period of the zero-frequency left eigenfunction (n, N);
    it is trig-interpolated at arbitrary y. The result has one value per state
    component: E acts on fields by integration against y.
    """

    gauss: GaussianKernel
    qtilde0: np.ndarray
    P: float
    chi: TimeCutoff = field(default_factory=TimeCutoff)

    def __post_init__(self):
        self.qtilde0 = np.atleast_2d(np.asarray(self.qtilde0))

    def weights(self, y) -> np.ndarray:
        """qtilde0 sampled (periodically) at arbitrary points y: (n, len(y))."""
        return spectral.trig_eval(self.qtilde0, self.P, np.asarray(y, float))

    def __call__(self, x, t, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        g = self.gauss(x - y, t) * self.chi(t)
        return g * self.weights(np.atleast_1d(y))


def gaussian_convolve(kernel: GaussianKernel, x: np.ndarray, data: np.ndarray,
                      t: float, end_minus: float = 0.0,
                      end_plus: float = 0.0) -> np.ndarray:
    """Whole-line convolution of grid data with the drifting Gaussian.

    data lives on the uniform grid x and is understood to continue as
    end_minus (left) and end_plus (right) beyond the rails. The integral
    splits into a smooth reference ramp, handled analytically via the
    Gaussian CDF, and a decaying remainder integrated by trapezoid rule
    (FFT convolution). Raises GridTooCoarse when sqrt(b t) < dx.
    """
    x = np.asarray(x, dtype=float)
    data = np.asarray(data, dtype=float)
    if x.shape != data.shape:
        raise ShapeMismatch(f"x {x.shape} vs data {data.shape}")
    if t <= 0.0:
        raise NonpositiveTime("convolution needs t > 0")
    dx = x[1] - x[0]
    if np.sqrt(kernel.b * t) < dx:
        raise GridTooCoarse(
            f"kernel width {4 * np.sqrt(kernel.b * t):.3g} < 4 dx = {4 * dx:.3g}")

    yc = 0.5 * (x[0] + x[-1])
    v_ramp = (4.0 * dx) ** 2
    ramp = end_minus + (end_plus - end_minus) * 0.5 * (
        1.0 + erf((x - yc) / np.sqrt(2.0 * v_ramp)))
    w = data - ramp
    w = w.copy()
    w[0] *= 0.5
    w[-1] *= 0.5

    n = x.size
    d = np.arange(-(n - 1), n) * dx
    kern = kernel(d, t)
    loc = fftconvolve(w, kern)[n - 1:2 * n - 1] * dx

    v_tot = v_ramp + 2.0 * kernel.b * t
    analytic = end_minus + (end_plus - end_minus) * 0.5 * (
        1.0 + erf((x - kernel.a * t - yc) / np.sqrt(2.0 * v_tot)))
    return loc + analytic


# ---------------------------------------------------------------------------
# convolution bound for algebraically decaying data


@dataclass
class ConvolutionLemmaReport:
    r: float
    b: float
    a: float
    C_hat: float
    t_grid: np.ndarray
    x_grid: np.ndarray
    ratio: np.ndarray           # (len(t_grid), len(x_grid))
    dy: float

    def max_ratio_per_t(self) -> np.ndarray:
        return self.ratio.max(axis=1)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "ratio"])
            for i, t in enumerate(self.t_grid):
                for j, x in enumerate(self.x_grid):
                    w.writerow([repr(float(t)), repr(float(x)),
                                repr(float(self.ratio[i, j]))])


def _lemma_lhs(r: float, b: float, a: float, x_grid: np.ndarray, t: float,
               dy: float) -> np.ndarray:
    """Trapezoid quadrature of integral t^{-1/2} e^{-(x-y-at)^2/(bt)} (1+|y|)^{-r} dy."""
    zeta = x_grid - a * t
    width = 10.0 * np.sqrt(b * t)
    lo = min(zeta.min(), 0.0) - width - 10.0
    hi = max(zeta.max(), 0.0) + width + 10.0
    # keep y = 0 on the grid so the kink of (1+|y|)^{-r} sits on a node and
    # the trapezoid rule stays second order with a smooth constant
    n_lo = int(np.ceil(-lo / dy))
    n_hi = int(np.ceil(hi / dy))
    y = dy * np.arange(-n_lo, n_hi + 1, dtype=float)
    g = np.exp(-(zeta[:, None] - y[None, :]) ** 2 / (b * t))
    vals = g * (1.0 + np.abs(y[None, :])) ** (-r)
    return np.trapezoid(vals, y, axis=1) / np.sqrt(t)


def check_convolution_lemma(r: float, b: float = 1.0, a: float = 0.0,
                            x_grid=None, t_grid=None,
                            dy: float | None = None) -> ConvolutionLemmaReport:
    """Ratio of the convolved algebraic tail to its claimed envelope.

    For each (x, t) the left side integral t^{-1/2} e^{-|x-y-at|^2/(bt)}
    (1+|y|)^{-r} dy is computed by dense trapezoid quadrature and divided by
    (1+|x-at|+sqrt(t))^{-r} + (1+t)^{-1/2} e^{-|x-at|^2/(4bt)}. The sup of the
    ratio is the empirical constant of the bound (requires r > 1). A dy
    halving at the worst point guards the quadrature.
    """
    if r <= 1.0:
        raise ValueError("the bound needs algebraic rate r > 1")
    if x_grid is None:
        x_grid = np.linspace(-50.0, 50.0, 41)
    if t_grid is None:
        t_grid = np.geomspace(0.1, 100.0, 25)
    x_grid = np.asarray(x_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)

    ratio = np.empty((t_grid.size, x_grid.size))
    for i, t in enumerate(t_grid):
        h = dy if dy is not None else min(np.sqrt(b * t) / 8.0, 0.05)
        lhs = _lemma_lhs(r, b, a, x_grid, t, h)
        z = np.abs(x_grid - a * t)
        rhs = (1.0 + z + np.sqrt(t)) ** (-r) + (1.0 + t) ** (-0.5) * np.exp(
            -z ** 2 / (4.0 * b * t))
        ratio[i] = lhs / rhs

    i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
    t_star = t_grid[i]
    h = dy if dy is not None else min(np.sqrt(b * t_star) / 8.0, 0.05)
    fine = _lemma_lhs(r, b, a, x_grid[j:j + 1], t_star, h / 2.0)[0]
    coarse = _lemma_lhs(r, b, a, x_grid[j:j + 1], t_star, h)[0]
    if abs(fine - coarse) > 1e-3 * (1e-6 + abs(fine)):
        raise QuadratureNonConvergence(
            f"dy halving moved the worst value by {abs(fine - coarse):.3e}")

    used_dy = dy if dy is not None else -1.0
    return ConvolutionLemmaReport(r=r, b=b, a=a, C_hat=float(ratio.max()),
                                  t_grid=t_grid, x_grid=x_grid, ratio=ratio,
                                  dy=used_dy)
