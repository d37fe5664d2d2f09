"""Periodic traveling-wave profiles in the co-moving frame.

A profile is a steady state of u_t = u_xx + c u_x + f(u) on one period [0, P):
solve ubar'' + c ubar' + f(ubar) = 0 with periodic boundary conditions. The
translation degeneracy is removed by the integral phase condition
<U - guess, guess'> = 0 and the wave speed c is an unknown of the Newton
system, so the solver finds (ubar, c) jointly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import spectral
from .errors import NonConvergence, SingularJacobian
from .models import ReactionModel


@dataclass
class WaveProfile:
    """Discretized wave: samples of ubar on the uniform period grid."""

    P: float
    N: int
    c: float
    ubar: np.ndarray            # (n, N)
    model_name: str = ""
    params: dict = field(default_factory=dict)
    residual_norm: float = 0.0
    constant: bool = False

    def __post_init__(self):
        self.ubar = np.atleast_2d(np.asarray(self.ubar, dtype=float))
        if self.ubar.shape[1] != self.N:
            raise ValueError("ubar must have N columns")

    @property
    def n(self) -> int:
        return self.ubar.shape[0]

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.N) * (self.P / self.N)

    @property
    def ubar_x(self) -> np.ndarray:
        return spectral.deriv(self.ubar, self.P, 1)

    @property
    def ubar_xx(self) -> np.ndarray:
        return spectral.deriv(self.ubar, self.P, 2)

    def eval(self, xq: np.ndarray) -> np.ndarray:
        """Trigonometric interpolation of ubar at arbitrary points."""
        return spectral.trig_eval(self.ubar, self.P, np.asarray(xq, float))

    def eval_deriv(self, xq: np.ndarray) -> np.ndarray:
        return spectral.trig_eval(self.ubar_x, self.P, np.asarray(xq, float))


def profile_residual(profile: WaveProfile, model: ReactionModel) -> float:
    """Sup norm of ubar'' + c ubar' + f(ubar), recomputed spectrally."""
    res = profile.ubar_xx + profile.c * profile.ubar_x + model.f(profile.ubar)
    return float(np.abs(res).max())


def solve_profile(model: ReactionModel, period: float, guess: np.ndarray,
                  c_guess: float = 0.0, tol: float = 1e-12,
                  max_iter: int = 40) -> WaveProfile:
    """Newton solve for (ubar, c) with an integral phase condition.

    guess: (n, N) initial iterate; its spectral derivative defines the phase
    functional. Converges quadratically from within the basin; raises
    NonConvergence otherwise, SingularJacobian if the bordered system
    degenerates (e.g. the phase reference is orthogonal to the wave's
    translation direction).
    """
    U = np.atleast_2d(np.asarray(guess, dtype=float)).copy()
    n, N = U.shape
    if n != model.n:
        raise ValueError("guess has wrong number of components")
    c = float(c_guess)

    D1 = spectral.diff_matrix(N, period, 1)
    D2 = spectral.diff_matrix(N, period, 2)
    Gp = (D1 @ U.T).T                       # phase reference derivative
    gp_flat = Gp.reshape(-1)
    G_flat = U.reshape(-1).copy()

    def residual(Uc, cc):
        Ux = (D1 @ Uc.T).T
        Uxx = (D2 @ Uc.T).T
        F = Uxx + cc * Ux + model.f(Uc)
        phase = float(np.dot(Uc.reshape(-1) - G_flat, gp_flat)) / N
        return F, Ux, phase

    size = n * N + 1
    for it in range(max_iter):
        F, Ux, phase = residual(U, c)
        rnorm = max(np.abs(F).max(), abs(phase))
        if rnorm < tol:
            return WaveProfile(P=period, N=N, c=c, ubar=U,
                               model_name=model.name, params=dict(model.params),
                               residual_norm=profile_residual(
                                   WaveProfile(P=period, N=N, c=c, ubar=U), model))
        J = np.zeros((size, size))
        dfu = model.df(U)                   # (n, n, N)
        for i in range(n):
            for j in range(n):
                blk = np.diag(dfu[i, j])
                if i == j:
                    blk = blk + D2 + c * D1
                J[i * N:(i + 1) * N, j * N:(j + 1) * N] = blk
        J[:n * N, -1] = Ux.reshape(-1)
        J[-1, :n * N] = gp_flat / N
        rhs = np.concatenate([-F.reshape(-1), [-phase]])
        try:
            delta = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(delta)):
            raise SingularJacobian("non-finite Newton step")
        U = U + delta[:n * N].reshape(n, N)
        c = c + delta[-1]
    raise NonConvergence(f"profile Newton stalled at residual {rnorm:.3e} "
                         f"after {max_iter} iterations")


def rgl_wave(kappa: float, n_points: int = 32) -> WaveProfile:
    """Harmonic wave of the real Ginzburg-Landau system at wavenumber kappa.

    Exact solution: amplitude sqrt(1 - kappa^2), speed 0, period 2*pi/kappa.
    The Newton solve is seeded with the harmonic ansatz and converges in a
    couple of steps; kappa must lie in (0, 1) for the wave to exist.
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError("kappa must lie in (0, 1)")
    from .models import rgl_model

    period = 2.0 * np.pi / kappa
    x = np.arange(n_points) * (period / n_points)
    amp = np.sqrt(1.0 - kappa ** 2)
    guess = np.vstack([amp * np.cos(kappa * x), amp * np.sin(kappa * x)])
    prof = solve_profile(rgl_model(), period, guess, c_guess=0.0)
    prof.params = {"kappa": kappa}
    return prof


def constant_profile(model: ReactionModel, u0, period: float,
                     n_points: int = 16, speed: float = 0.0) -> WaveProfile:
    """Constant steady state as a degenerate profile (flagged constant).

    Any frame speed is admissible since ubar' = 0; a nonzero speed gives the
    constant-coefficient operator with drift used as an exactly solvable
    control case.
    """
    u0 = np.asarray(u0, dtype=float).reshape(model.n)
    res = float(np.abs(model.f(u0[:, None])).max())
    if res > 1e-9:
        raise ValueError(f"f(u0) = {res:.3e} is not a steady state")
    ubar = np.repeat(u0[:, None], n_points, axis=1)
    return WaveProfile(P=period, N=n_points, c=speed, ubar=ubar,
                       model_name=model.name, params=dict(model.params),
                       residual_norm=res, constant=True)


def save_profile(profile: WaveProfile, path: str | Path) -> None:
    """Write samples as CSV plus a JSON sidecar with scalar metadata."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"u{i + 1}" for i in range(profile.n)])
        for j in range(profile.N):
            w.writerow([repr(float(profile.x[j]))]
                       + [repr(float(v)) for v in profile.ubar[:, j]])
    meta = {
        "period": float(profile.P),
        "speed": float(profile.c),
        "n_points": int(profile.N),
        "n_components": int(profile.n),
        "residual_norm": float(profile.residual_norm),
        "model": profile.model_name,
        "params": profile.params,
        "constant": bool(profile.constant),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def load_profile(path: str | Path) -> WaveProfile:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            rows.append([float(v) for v in row])
    data = np.asarray(rows).T
    return WaveProfile(P=meta["period"], N=meta["n_points"], c=meta["speed"],
                       ubar=data[1:], model_name=meta["model"],
                       params=meta["params"],
                       residual_norm=meta["residual_norm"],
                       constant=meta["constant"])
