"""Bloch-Floquet analysis of the linearization about a periodic wave.

For the linearization L = d_xx + c d_x + df(ubar) posed on the whole line,
the family of Bloch operators

    L_xi = (d_x + i xi)^2 + c (d_x + i xi) + df(ubar),   xi in [-pi/P, pi/P)

acts on P-periodic functions; the line spectrum is the union of the periodic
spectra over xi. This module assembles dense Fourier-collocation matrices for
L_xi, sweeps them for a diffusive-stability certificate, tracks the critical
(translation) eigenvalue branch through xi = 0, and extracts left/right
eigenfunction pairs.

State layout is component-major: a field w(x) with n components sampled on N
points becomes the flat vector [w_1(x_0..x_{N-1}), ..., w_n(...)].
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from . import spectral
from .errors import BranchLoss, DegenerateEigenvalue, EigensolverFailure
from .reporting import json_ready, write_json
from .models import ReactionModel
from .profiles import WaveProfile


@dataclass
class BlochOperator:
    xi: float
    matrix: np.ndarray          # (n*N, n*N) complex
    P: float
    N: int
    n: int


def assemble_bloch(profile: WaveProfile, model: ReactionModel,
                   xi: float) -> BlochOperator:
    """Dense collocation matrix for L_xi about the given profile."""
    N, n, P = profile.N, profile.n, profile.P
    D1 = spectral.diff_matrix(N, P, 1)
    D2 = spectral.diff_matrix(N, P, 2)
    scalar = (D2 + 2j * xi * D1 - xi ** 2 * np.eye(N)
              + profile.c * (D1 + 1j * xi * np.eye(N)))
    A = np.kron(np.eye(n), scalar).astype(complex)
    dfu = model.df(profile.ubar)            # (n, n, N)
    for i in range(n):
        for j in range(n):
            A[i * N:(i + 1) * N, j * N:(j + 1) * N] += np.diag(dfu[i, j])
    return BlochOperator(xi=xi, matrix=A, P=P, N=N, n=n)


def spectrum(op: BlochOperator) -> np.ndarray:
    """Eigenvalues of L_xi sorted by descending real part."""
    vals = scipy.linalg.eigvals(op.matrix)
    if not np.all(np.isfinite(vals)):
        raise EigensolverFailure(f"non-finite eigenvalues at xi={op.xi}")
    return vals[np.argsort(-vals.real)]


# ---------------------------------------------------------------------------
# diffusive stability certificate


@dataclass
class StabilityCertificate:
    xi_samples: np.ndarray
    max_re: np.ndarray
    theta_hat: float
    zero_count: int
    zero_gap: float
    d1_pass: bool
    d2_pass: bool
    d3_pass: bool
    tol: float
    zero_radius: float
    constant_state: bool
    model_name: str = ""
    params: dict = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return self.d1_pass and self.d2_pass and self.d3_pass

    def to_dict(self) -> dict:
        return {
            "d1_pass": bool(self.d1_pass),
            "d2_pass": bool(self.d2_pass),
            "d3_pass": bool(self.d3_pass),
            "theta_hat": float(self.theta_hat),
            "zero_count": int(self.zero_count),
            "zero_gap": float(self.zero_gap),
            "tol": float(self.tol),
            "zero_radius": float(self.zero_radius),
            "constant_state": bool(self.constant_state),
            "model": self.model_name,
            "params": json_ready(self.params),
            "xi_samples": self.xi_samples.tolist(),
            "max_re": self.max_re.tolist(),
        }

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())


def check_diffusive_stability(profile: WaveProfile, model: ReactionModel,
                              xi_count: int = 64, tol: float = 1e-10,
                              zero_radius: float = 1e-6,
                              threads: int = 1) -> StabilityCertificate:
    """Sample max Re sigma(L_xi) over the Brillouin zone and grade it.

    The three graded conditions: spectrum confined to Re <= tol at every
    sampled xi; the eigenvalue at the origin simple for L_0 (exactly one
    eigenvalue within zero_radius, next one at least 10x farther); and the
    quadratic bound max Re sigma(L_xi) <= -theta_hat xi^2 with theta_hat > tol.
    A pass certifies only the sampled resolution; xi_count is recorded.
    """
    P = profile.P
    xi_samples = -np.pi / P + (2.0 * np.pi / P) * np.arange(xi_count) / xi_count
    xi_samples[np.abs(xi_samples) < 1e-14] = 0.0

    def one(xi):
        return spectrum(assemble_bloch(profile, model, xi))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            spectra = list(ex.map(one, xi_samples))
    else:
        spectra = [one(xi) for xi in xi_samples]

    max_re = np.array([s.real.max() for s in spectra])
    i0 = int(np.argmin(np.abs(xi_samples)))
    vals0 = spectra[i0] if xi_samples[i0] == 0.0 else spectrum(
        assemble_bloch(profile, model, 0.0))
    mods = np.sort(np.abs(vals0))
    zero_count = int(np.sum(mods < zero_radius))
    zero_gap = float(mods[zero_count]) if zero_count < len(mods) else np.inf

    nz = xi_samples != 0.0
    theta_hat = float(np.min(-max_re[nz] / xi_samples[nz] ** 2))

    d1 = bool(np.all(max_re <= tol))
    d2 = zero_count == 1 and zero_gap > 10.0 * zero_radius
    d3 = theta_hat > tol and max_re[i0] <= tol

    return StabilityCertificate(
        xi_samples=xi_samples, max_re=max_re, theta_hat=theta_hat,
        zero_count=zero_count, zero_gap=zero_gap,
        d1_pass=d1, d2_pass=d2, d3_pass=d3, tol=tol, zero_radius=zero_radius,
        constant_state=profile.constant, model_name=model.name,
        params=dict(profile.params))


def write_spectra_csv(path: str | Path, profile: WaveProfile,
                      model: ReactionModel, xi_values) -> None:
    """Dump full Bloch spectra: one row per (xi, eigenvalue)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "re_lambda", "im_lambda"])
        for xi in xi_values:
            for lam in spectrum(assemble_bloch(profile, model, float(xi))):
                w.writerow([repr(float(xi)), repr(lam.real), repr(lam.imag)])


# ---------------------------------------------------------------------------
# critical branch through (xi, lambda) = (0, 0)


@dataclass
class CriticalBranch:
    xi: np.ndarray
    lam: np.ndarray             # complex, same length as xi
    a: float
    b: float
    fit_residual: float
    window: float
    min_overlap: float
    min_gap: float
    collision_xi: float | None
    P: float

    @property
    def eps0_default(self) -> float:
        """Quarter of the first collision distance, capped inside the zone."""
        cap = np.pi / (2.0 * self.P)
        if self.collision_xi is None:
            return cap
        return min(self.collision_xi / 4.0, cap)

    def to_dict(self) -> dict:
        return {
            "a": self.a, "b": self.b, "fit_residual": self.fit_residual,
            "window": self.window, "min_overlap": self.min_overlap,
            "min_gap": self.min_gap, "collision_xi": self.collision_xi,
            "period": self.P, "eps0_default": self.eps0_default,
            "xi": self.xi.tolist(),
            "re_lambda": self.lam.real.tolist(),
            "im_lambda": self.lam.imag.tolist(),
        }

    def save(self, path: str | Path) -> None:
        write_json(path, self.to_dict())


def _seed_vector(profile: WaveProfile) -> np.ndarray:
    if profile.constant:
        v = np.zeros(profile.n * profile.N)
        v[:] = 1.0
    else:
        v = profile.ubar_x.reshape(-1)
    return v / np.linalg.norm(v)


def critical_branch(profile: WaveProfile, model: ReactionModel,
                    window: float | None = None, points: int = 33,
                    overlap_min: float = 0.5,
                    collision_frac: float = 0.05) -> CriticalBranch:
    """Track the eigenvalue branch through lambda(0) = 0 and fit a, b.

    Continuity is enforced by maximal eigenvector overlap between adjacent
    xi grid points, marching outward from 0; BranchLoss if the overlap drops
    below overlap_min. The drift a and diffusion b come from least squares of
    Im lambda ~ -a xi and Re lambda ~ -b xi^2 over the window; the residual
    max |lambda + i a xi + b xi^2| is cubic in the window size.
    """
    if window is None:
        window = 0.5 * np.pi / profile.P
    if points % 2 == 0:
        points += 1
    xi_grid = np.linspace(-window, window, points)
    half = points // 2
    xi_grid[half] = 0.0

    lam = np.empty(points, dtype=complex)
    gaps = np.empty(points)
    min_overlap = 1.0

    def eig_sorted(xi):
        op = assemble_bloch(profile, model, xi)
        vals, vecs = scipy.linalg.eig(op.matrix)
        return vals, vecs

    vals0, vecs0 = eig_sorted(0.0)
    seed = _seed_vector(profile)
    ov0 = np.abs(seed.conj() @ vecs0) / np.linalg.norm(vecs0, axis=0)
    k0 = int(np.argmax(ov0))
    lam[half] = vals0[k0]
    others = np.abs(vals0 - vals0[k0])
    others[k0] = np.inf
    gaps[half] = others.min()
    gap0 = gaps[half]

    for direction in (1, -1):
        prev = vecs0[:, k0]
        for step in range(1, half + 1):
            idx = half + direction * step
            vals, vecs = eig_sorted(xi_grid[idx])
            ov = np.abs(prev.conj() @ vecs) / (
                np.linalg.norm(vecs, axis=0) * np.linalg.norm(prev))
            k = int(np.argmax(ov))
            if ov[k] < overlap_min:
                raise BranchLoss(
                    f"overlap {ov[k]:.3f} < {overlap_min} at xi={xi_grid[idx]:.4f}")
            min_overlap = min(min_overlap, float(ov[k]))
            lam[idx] = vals[k]
            others = np.abs(vals - vals[k])
            others[k] = np.inf
            gaps[idx] = others.min()
            prev = vecs[:, k]

    collision_xi = None
    bad = np.abs(xi_grid)[gaps < collision_frac * gap0]
    if bad.size:
        collision_xi = float(bad.min())

    nz = xi_grid != 0.0
    b = -float(np.sum(lam.real[nz] * xi_grid[nz] ** 2)
               / np.sum(xi_grid[nz] ** 4))
    a = -float(np.sum(lam.imag[nz] * xi_grid[nz]) / np.sum(xi_grid[nz] ** 2))
    fit_residual = float(np.abs(lam - (-1j * a * xi_grid
                                       - b * xi_grid ** 2)).max())
    return CriticalBranch(xi=xi_grid, lam=lam, a=a, b=b,
                          fit_residual=fit_residual, window=window,
                          min_overlap=min_overlap, min_gap=float(gaps.min()),
                          collision_xi=collision_xi, P=profile.P)


# ---------------------------------------------------------------------------
# eigenfunction pairs


@dataclass
class EigenPair:
    xi: float
    lam: complex
    q: np.ndarray               # (n, N) right eigenfunction
    qtilde: np.ndarray          # (n, N) left eigenfunction, <qtilde, q> = 1
    residual_right: float
    residual_left: float


def eigenfunctions(profile: WaveProfile, model: ReactionModel, xi: float,
                   lam_target: complex = 0.0,
                   gap_tol: float = 1e-9) -> EigenPair:
    """Left/right eigenfunctions of L_xi at the eigenvalue nearest lam_target.

    Normalization: the mean-normalized period inner product <qtilde, q> = 1,
    and the eigensolver's arbitrary scale is gauged away by additionally
    requiring <qtilde, ubar'> = 1 whenever the branch overlaps the derivative
    direction. Under that gauge q(xi) is the branch component of ubar' and
    varies continuously in xi; at xi = 0 on a genuine wave q is pinned to
    ubar' exactly, which is the same convention in the limit.
    """
    op = assemble_bloch(profile, model, xi)
    vals, vl, vr = scipy.linalg.eig(op.matrix, left=True, right=True)
    order = np.argsort(np.abs(vals - lam_target))
    k, k2 = order[0], order[1]
    if abs(vals[k] - vals[k2]) < gap_tol * max(1.0, abs(vals[k])):
        raise DegenerateEigenvalue(
            f"eigenvalues {vals[k]:.3e} and {vals[k2]:.3e} at xi={xi}")
    lam = vals[k]
    n, N = profile.n, profile.N
    q = vr[:, k].reshape(n, N)
    qt = vl[:, k].reshape(n, N)

    if xi == 0.0 and not profile.constant and abs(lam) < 1e-6:
        q = profile.ubar_x.astype(complex)
    ip = spectral.mean_inner(qt, q)
    if abs(ip) < 1e-13:
        raise DegenerateEigenvalue("left/right eigenvectors nearly orthogonal")
    qt = qt / np.conj(ip)

    if not profile.constant:
        ubx = profile.ubar_x.astype(complex)
        gamma = spectral.mean_inner(qt, ubx)
        ubx_scale = np.sqrt(abs(spectral.mean_inner(ubx, ubx)))
        qt_scale = np.sqrt(abs(spectral.mean_inner(qt, qt)))
        if abs(gamma) > 1e-8 * max(1.0, ubx_scale * qt_scale):
            q = q * gamma
            qt = qt / np.conj(gamma)

    A = op.matrix
    qf, qtf = q.reshape(-1), qt.reshape(-1)
    scale = np.linalg.norm(A, ord=np.inf)
    r_right = np.linalg.norm(A @ qf - lam * qf) / (scale * np.linalg.norm(qf))
    r_left = np.linalg.norm(A.conj().T @ qtf - np.conj(lam) * qtf) / (
        scale * np.linalg.norm(qtf))
    return EigenPair(xi=xi, lam=lam, q=q, qtilde=qt,
                     residual_right=float(r_right), residual_left=float(r_left))


def projection(pair: EigenPair, w: np.ndarray) -> np.ndarray:
    """Rank-one spectral projection q <qtilde, w> associated with the pair."""
    return pair.q * spectral.mean_inner(pair.qtilde, w)


# ---------------------------------------------------------------------------
# stability boundary in a wave family


@dataclass
class BoundaryResult:
    boundary: float
    stable_side: float
    unstable_side: float
    evaluations: list

    def to_dict(self) -> dict:
        return {"boundary": self.boundary, "stable_side": self.stable_side,
                "unstable_side": self.unstable_side,
                "evaluations": self.evaluations}


def bisect_stability_boundary(make_case: Callable[[float], tuple[WaveProfile, ReactionModel]],
                              stable_param: float, unstable_param: float,
                              xi_count: int = 64, tol: float = 1e-10,
                              param_tol: float = 5e-4) -> BoundaryResult:
    """Bisect a family parameter on the D3 pass/fail boolean.

    make_case maps the parameter to (profile, model). The endpoints must
    bracket a transition: D3 passes at stable_param and fails at
    unstable_param. The midpoint of the final bracket is the boundary, located
    to param_tol; the bisection itself is the ground truth for the location.
    """
    def d3(p):
        prof, model = make_case(p)
        cert = check_diffusive_stability(prof, model, xi_count=xi_count, tol=tol)
        return cert.d3_pass

    evals = []
    s, u = float(stable_param), float(unstable_param)
    if not d3(s):
        raise ValueError(f"parameter {s} is not on the stable side")
    if d3(u):
        raise ValueError(f"parameter {u} is not on the unstable side")
    evals.extend([(s, True), (u, False)])
    while abs(u - s) > param_tol:
        mid = 0.5 * (s + u)
        ok = d3(mid)
        evals.append((mid, ok))
        if ok:
            s = mid
        else:
            u = mid
    return BoundaryResult(boundary=0.5 * (s + u), stable_side=s,
                          unstable_side=u, evaluations=evals)
