"""Experiment orchestration: configs in, JSON reports and CSV plot data out.

A configuration is a single JSON file with nested sections (model, wave,
grid, stability, branch, data, evolution, linear, expect, stages). Every
command writes reports that embed the schema version and the sha256 of the
config file, and registers each emitted file in out/manifest.json.

Command verdict convention: return code 0 when every check the command ran
passed, 2 when the computation completed but a check failed (the expected
outcome for negative controls), 1 on operational errors (raised exceptions,
handled by the command-line wrapper).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bloch, evolve, kernels, modulation, semigroup
from .errors import AnsatzBreakdown, BlowupDetected, ModwaveError, NonConvergence
from .models import ReactionModel, model_from_config
from .reporting import write_json
from .profiles import (WaveProfile, constant_profile, load_profile,
                       profile_residual, rgl_wave, save_profile)

SCHEMA_VERSION = 1

_DEFAULTS = {
    "grid": {"cells": 256},
    "stability": {"xi_count": 64, "tol": 1e-10, "zero_radius": 1e-6},
    "branch": {"points": 33, "window": None},
    "data": {"e0": 0.01, "r": 1.5, "h_inf": 0.004, "h_width": 3.0,
             "v_family": "algebraic", "v_amp": None, "v_width": 1.0,
             "v_direction": "orthogonal", "seed": 0},
    "evolution": {"T": 100.0, "dt": 0.02, "snap_dt": 1.0},
    "linear": {"t_grid": [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
               "green_times": [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
               "green_y": 0.0, "lemma_r": 1.5, "slope_tol": 0.05},
}


@dataclass
class ExperimentConfig:
    raw: dict
    sha256: str
    path: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        text = Path(path).read_text()
        cfg = cls(raw=json.loads(text),
                  sha256=hashlib.sha256(text.encode()).hexdigest(),
                  path=str(path))
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        text = json.dumps(d, sort_keys=True)
        cfg = cls(raw=d, sha256=hashlib.sha256(text.encode()).hexdigest())
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if "model" not in self.raw or "wave" not in self.raw:
            raise ValueError("config needs 'model' and 'wave' sections")
        r = self.get("data", "r")
        if r < 1.5:
            raise ValueError("data.r must be >= 3/2")
        kind = self.raw["wave"].get("kind")
        if kind not in ("rgl", "constant"):
            raise ValueError(f"unknown wave kind {kind!r}")

    @property
    def name(self) -> str:
        return self.raw.get("name", "experiment")

    @property
    def expect(self) -> str:
        return self.raw.get("expect", "stable")

    @property
    def stages(self) -> list[str]:
        return self.raw.get("stages", ["profile", "bloch", "linear",
                                       "simulate", "decompose", "verify"])

    def get(self, section: str, key: str, default=None):
        if key in self.raw.get(section, {}):
            return self.raw[section][key]
        if default is not None:
            return default
        return _DEFAULTS.get(section, {}).get(key)


class Workspace:
    """Lazily builds and caches the artifacts one experiment needs.

    Stage outputs live in the output directory; where a later command needs
    an earlier artifact it is loaded from disk when present and recomputed
    otherwise, so the commands can run in separate processes.
    """

    def __init__(self, cfg: ExperimentConfig, out: str | Path,
                 seed: int | None = None, threads: int = 1,
                 verbose: bool = False):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.threads = max(1, threads)
        self.verbose = verbose
        self._cache: dict = {}

    def log(self, msg: str) -> None:
        if self.verbose:
            print(f"[{self.cfg.name}] {msg}", flush=True)

    def register(self, command: str, *names: str) -> None:
        path = self.out / "manifest.json"
        manifest = json.loads(path.read_text()) if path.exists() else {
            "schema_version": SCHEMA_VERSION, "config_sha256": self.cfg.sha256,
            "files": {}}
        entry = manifest["files"].setdefault(command, [])
        for name in names:
            if name not in entry:
                entry.append(name)
        path.write_text(json.dumps(manifest, indent=2))

    def report_header(self, command: str) -> dict:
        return {"schema_version": SCHEMA_VERSION, "command": command,
                "config": self.cfg.name, "config_sha256": self.cfg.sha256}

    # -- artifacts ------------------------------------------------------------

    def model(self) -> ReactionModel:
        if "model" not in self._cache:
            self._cache["model"] = model_from_config(self.cfg.raw["model"])
        return self._cache["model"]

    def profile(self) -> WaveProfile:
        if "profile" in self._cache:
            return self._cache["profile"]
        path = self.out / "profile.csv"
        if path.exists():
            prof = load_profile(path)
        else:
            prof = self._solve_profile()
            save_profile(prof, path)
            self.register("profile", "profile.csv", "profile.csv.json")
        self._cache["profile"] = prof
        return prof

    def _solve_profile(self) -> WaveProfile:
        wave = self.cfg.raw["wave"]
        if wave["kind"] == "rgl":
            return rgl_wave(wave["kappa"], n_points=wave.get("n_points", 32))
        return constant_profile(self.model(), wave["u0"], wave["period"],
                                n_points=wave.get("n_points", 16),
                                speed=wave.get("speed", 0.0))

    def grid(self) -> semigroup.MultiCellGrid:
        if "grid" not in self._cache:
            prof = self.profile()
            self._cache["grid"] = semigroup.MultiCellGrid(
                L=self.cfg.get("grid", "cells"), N=prof.N, P=prof.P)
        return self._cache["grid"]

    def certificate(self) -> bloch.StabilityCertificate:
        if "cert" not in self._cache:
            self.log("sampling Bloch spectra over the zone")
            self._cache["cert"] = bloch.check_diffusive_stability(
                self.profile(), self.model(),
                xi_count=self.cfg.get("stability", "xi_count"),
                tol=self.cfg.get("stability", "tol"),
                zero_radius=self.cfg.get("stability", "zero_radius"),
                threads=self.threads)
        return self._cache["cert"]

    def branch(self) -> bloch.CriticalBranch:
        if "branch" not in self._cache:
            self._cache["branch"] = bloch.critical_branch(
                self.profile(), self.model(),
                window=self.cfg.get("branch", "window"),
                points=self.cfg.get("branch", "points"))
        return self._cache["branch"]

    def pair0(self) -> bloch.EigenPair:
        if "pair0" not in self._cache:
            self._cache["pair0"] = bloch.eigenfunctions(
                self.profile(), self.model(), 0.0, lam_target=0.0)
        return self._cache["pair0"]

    def table(self) -> semigroup.PropagatorTable:
        if "table" not in self._cache:
            self.log("building the propagator table")
            self._cache["table"] = semigroup.build_propagator(
                self.profile(), self.model(), self.grid(),
                threads=self.threads)
        return self._cache["table"]

    def data_spec(self) -> evolve.InitialDataSpec:
        d = {k: self.cfg.get("data", k) for k in _DEFAULTS["data"]}
        if self.seed is not None:
            d["seed"] = self.seed
        return evolve.InitialDataSpec(**d)

    def initial_data(self) -> evolve.InitialData:
        if "data" not in self._cache:
            self._cache["data"] = evolve.build_initial_data(
                self.data_spec(), self.profile(), self.grid())
        return self._cache["data"]

    def trajectory(self) -> evolve.Trajectory:
        if "traj" in self._cache:
            return self._cache["traj"]
        tdir = self.out / "trajectory"
        if (tdir / "manifest.json").exists():
            traj = evolve.Trajectory.load(tdir)
        else:
            traj = self._simulate()
            traj.save(tdir)
            self.register("simulate", "trajectory/manifest.json",
                          *(f"trajectory/{n}" for n in
                            json.loads((tdir / "manifest.json").read_text())
                            ["snapshots"]))
        self._cache["traj"] = traj
        return traj

    def _simulate(self) -> evolve.Trajectory:
        data = self.initial_data()
        self.log("time stepping the full nonlinear problem")
        return evolve.evolve_pde(
            data.u0, self.cfg.get("evolution", "T"), self.model(),
            self.grid(), c=self.profile().c,
            dt=self.cfg.get("evolution", "dt"),
            snap_dt=self.cfg.get("evolution", "snap_dt"))

    def projector(self) -> modulation.ModulationProjector:
        if "projector" not in self._cache:
            eps0 = self.cfg.get("branch", "eps0",
                                self.branch().eps0_default)
            self.log(f"building the low-band projector, eps0 = {eps0:.4g}")
            self._cache["projector"] = modulation.ModulationProjector.build(
                self.profile(), self.model(), self.grid(), eps0)
        return self._cache["projector"]

    def trace(self) -> modulation.ModulationTrace:
        if "trace" in self._cache:
            return self._cache["trace"]
        path = self.out / "trace.npz"
        if path.exists():
            trace = modulation.ModulationTrace.load_npz(path)
        else:
            self.log("extracting the phase at every snapshot")
            br = self.branch()
            trace = modulation.ModulationTrace.from_trajectory(
                self.trajectory(), self.projector(), allow_partial=True,
                h0=self.initial_data().h0,
                branch=br if br.b > 0 else None)
            trace.save_npz(path)
            self.register("decompose", "trace.npz")
        self._cache["trace"] = trace
        return trace


# ---------------------------------------------------------------------------
# commands


def cmd_profile(ws: Workspace) -> tuple[int, dict]:
    prof = ws.profile()
    resid = profile_residual(prof, ws.model())
    report = ws.report_header("profile")
    report.update({
        "period": prof.P, "speed": prof.c, "n_points": prof.N,
        "n_components": prof.n, "residual_norm": resid,
        "constant": prof.constant, "params": prof.params,
        "amplitude_max": float(np.abs(prof.ubar).max()),
        "passed": bool(resid < 1e-8),
    })
    write_json(ws.out / "profile_report.json", report)
    ws.register("profile", "profile_report.json")
    return (0 if report["passed"] else 2), report


def cmd_bloch(ws: Workspace) -> tuple[int, dict]:
    cert = ws.certificate()
    br = ws.branch()
    cert.save(ws.out / "stability.json")
    br.save(ws.out / "branch.json")
    xi_csv = np.linspace(-np.pi / ws.profile().P, np.pi / ws.profile().P, 33)
    bloch.write_spectra_csv(ws.out / "spectra.csv", ws.profile(), ws.model(),
                            xi_csv)
    report = ws.report_header("bloch")
    report.update({
        "d1_pass": cert.d1_pass, "d2_pass": cert.d2_pass,
        "d3_pass": cert.d3_pass, "theta_hat": cert.theta_hat,
        "a": br.a, "b": br.b, "fit_residual": br.fit_residual,
        "eps0_default": br.eps0_default,
        "expect": ws.cfg.expect,
        "passed": bool(cert.all_pass and br.b > 0),
    })
    write_json(ws.out / "bloch_report.json", report)
    ws.register("bloch", "stability.json", "branch.json", "spectra.csv",
                "bloch_report.json")
    return (0 if report["passed"] else 2), report


def cmd_linear(ws: Workspace) -> tuple[int, dict]:
    prof, model, grid = ws.profile(), ws.model(), ws.grid()
    table, br, p0 = ws.table(), ws.branch(), ws.pair0()
    data = ws.initial_data()
    lin = ws.cfg.raw.get("linear", {})

    t_grid = np.asarray(lin.get("t_grid", _DEFAULTS["linear"]["t_grid"]))
    env_rep = semigroup.verify_linear_envelope(
        table, prof, br, p0, e0=ws.cfg.get("data", "e0"), h0=data.h0,
        r=ws.cfg.get("data", "r"), t_grid=t_grid,
        slope_tol=lin.get("slope_tol", _DEFAULTS["linear"]["slope_tol"]))
    env_rep.save_csv(ws.out / "envelope_ratio.csv")

    # semigroup route equivalence at a midrange time
    rng = np.random.default_rng(ws.cfg.get("data", "seed"))
    smooth = rng.standard_normal((prof.n, 12))
    probe = np.zeros((prof.n, grid.M))
    k_low = np.arange(1, 7)
    for i in range(prof.n):
        for j, kk in enumerate(k_low):
            probe[i] += smooth[i, 2 * j] * np.cos(
                2.0 * np.pi * kk * np.arange(grid.M) / grid.M)
            probe[i] += smooth[i, 2 * j + 1] * np.sin(
                2.0 * np.pi * kk * np.arange(grid.M) / grid.M)
    t_eq = 1.0
    via_bloch = semigroup.apply_semigroup_bloch(probe, t_eq, table)
    via_direct = semigroup.apply_semigroup_direct(probe, t_eq, prof, model,
                                                  grid, dt=0.005)
    equiv = float(np.abs(via_bloch - via_direct).max()
                  / max(np.abs(via_direct).max(), 1e-30))

    report = ws.report_header("linear")
    report["envelope"] = env_rep.to_dict()
    report["equivalence_rel_error"] = equiv
    green_ok = True
    if br.b > 0:
        g_times = np.asarray(lin.get("green_times",
                                     _DEFAULTS["linear"]["green_times"]))
        green = semigroup.green_sample(lin.get("green_y", 0.0), g_times,
                                       table, prof, br, p0)
        green.save(ws.out / "green_report.json")
        ws.register("linear", "green_report.json")
        report["green"] = {"M_fit": green.M_fit, "eta_fit": green.eta_fit,
                           "C_fit": green.C_fit, "holds": green.holds}
        green_ok = green.holds
    else:
        report["green"] = {"skipped": "nonpositive branch diffusion"}

    lemma = kernels.check_convolution_lemma(
        lin.get("lemma_r", ws.cfg.get("data", "r")), b=max(br.b, 1e-3),
        a=br.a)
    lemma.save_csv(ws.out / "lemma_ratio.csv")
    report["lemma"] = {"C_hat": lemma.C_hat, "r": lemma.r,
                       "finite": bool(np.isfinite(lemma.C_hat))}

    report["passed"] = bool(env_rep.passed and equiv < 1e-5 and green_ok
                            and np.isfinite(lemma.C_hat))
    write_json(ws.out / "linear_report.json", report)
    ws.register("linear", "linear_report.json", "envelope_ratio.csv",
                "lemma_ratio.csv")
    return (0 if report["passed"] else 2), report


def cmd_simulate(ws: Workspace) -> tuple[int, dict]:
    data = ws.initial_data()
    report = ws.report_header("simulate")
    report["initial_data"] = dict(data.class_report)
    report["initial_data"].update({"h_plus": data.h_plus,
                                   "h_minus": data.h_minus,
                                   "spec": data.spec.to_dict()})
    (ws.out / "initial_data.json").write_text(
        json.dumps(report["initial_data"], indent=2))
    ws.register("simulate", "initial_data.json")
    try:
        traj = ws.trajectory()
    except BlowupDetected as exc:
        report.update({"blowup": True, "detail": str(exc), "passed": False})
        (ws.out / "simulate_report.json").write_text(
            json.dumps(report, indent=2))
        ws.register("simulate", "simulate_report.json")
        return 2, report
    report.update({
        "blowup": False,
        "T": float(traj.times[-1]),
        "snapshots": int(traj.times.size),
        "dt": traj.dt,
        "final_amplitude": float(np.abs(traj.u[-1]).max()),
        "passed": True,
    })
    write_json(ws.out / "simulate_report.json", report)
    ws.register("simulate", "simulate_report.json")
    return 0, report


def cmd_decompose(ws: Workspace) -> tuple[int, dict]:
    report = ws.report_header("decompose")
    try:
        trace = ws.trace()
    except (AnsatzBreakdown, NonConvergence) as exc:
        report.update({"breakdown": True, "detail": str(exc),
                       "passed": False})
        (ws.out / "decompose_report.json").write_text(
            json.dumps(report, indent=2))
        ws.register("decompose", "decompose_report.json")
        return 2, report
    br = ws.branch()
    e0, r = ws.cfg.get("data", "e0"), ws.cfg.get("data", "r")
    trace.save_csv(ws.out / "trace.csv", e0, r, br)
    ws.register("decompose", "trace.csv")

    report["breakdown"] = trace.breakdown_time is not None
    report["breakdown_time"] = trace.breakdown_time
    report["extraction_residual_max"] = float(trace.residuals.max())

    identity_ok = True
    if trace.times.size >= 9:
        rep1 = modulation.perturbation_identity_residual(
            trace, ws.profile(), ws.model(), stride=1)
        rep2 = modulation.perturbation_identity_residual(
            trace, ws.profile(), ws.model(), stride=2)
        common = np.intersect1d(rep1.times, rep2.times)
        late = common[common >= 0.2 * trace.times[-1]]
        r1 = np.array([rep1.residuals[list(rep1.times).index(t)]
                       for t in late])
        r2 = np.array([rep2.residuals[list(rep2.times).index(t)]
                       for t in late])
        ratios = r2 / np.maximum(r1, 1e-300)
        halving = float(np.median(ratios))
        report["identity"] = {
            "stride1_max": rep1.max_residual,
            "stride2_max": rep2.max_residual,
            "median_halving_ratio": halving,
        }
        identity_ok = 2.5 <= halving <= 6.0
    else:
        report["identity"] = {"skipped": "too few snapshots"}

    if br.b > 0 and not report["breakdown"]:
        cons = modulation.psi_consistency(trace, br,
                                          ws.initial_data().h0,
                                          ws.projector().eps0)
        report["psi_consistency"] = {
            "rel_band_final": float(cons["rel_band"][-1]),
            "rel_band_max": float(cons["rel_band"].max()),
        }

    report["passed"] = bool(not report["breakdown"] and identity_ok)
    write_json(ws.out / "decompose_report.json", report)
    ws.register("decompose", "decompose_report.json")
    return (0 if report["passed"] else 2), report


def cmd_verify(ws: Workspace) -> tuple[int, dict]:
    report = ws.report_header("verify")
    try:
        trace = ws.trace()
    except (AnsatzBreakdown, NonConvergence) as exc:
        report.update({"breakdown": True, "detail": str(exc),
                       "all_pass": False, "passed": False})
        (ws.out / "verify_report.json").write_text(
            json.dumps(report, indent=2))
        ws.register("verify", "verify_report.json")
        return 2, report
    T_req = ws.cfg.get("evolution", "T")
    thm = modulation.check_main_theorem(
        trace, ws.initial_data(), ws.cfg.get("data", "e0"),
        ws.cfg.get("data", "r"), ws.branch())
    truncated = trace.breakdown_time is not None or \
        trace.times[-1] < T_req - 1e-9
    report.update(thm.to_dict())
    report["trace_truncated"] = bool(truncated)
    report["expect"] = ws.cfg.expect
    report["passed"] = bool(thm.all_pass and not truncated)
    write_json(ws.out / "verify_report.json", report)
    ws.register("verify", "verify_report.json")
    return (0 if report["passed"] else 2), report


_COMMANDS = {
    "profile": cmd_profile,
    "bloch": cmd_bloch,
    "linear": cmd_linear,
    "simulate": cmd_simulate,
    "decompose": cmd_decompose,
    "verify": cmd_verify,
}


def cmd_full(ws: Workspace) -> tuple[int, dict]:
    """Run every configured stage and write one combined summary."""
    summary = ws.report_header("full")
    summary["stages"] = {}
    worst = 0
    t0 = time.perf_counter()
    for stage in ws.cfg.stages:
        ws.log(f"stage: {stage}")
        code, rep = _COMMANDS[stage](ws)
        summary["stages"][stage] = {"exit_code": code,
                                    "passed": rep.get("passed")}
        worst = max(worst, code)
    summary["elapsed_seconds"] = time.perf_counter() - t0
    summary["exit_code"] = worst
    summary["expect"] = ws.cfg.expect
    summary["expectation_met"] = bool(
        (ws.cfg.expect == "stable") == (worst == 0))
    write_json(ws.out / "summary.json", summary)
    ws.register("full", "summary.json")
    return worst, summary


def run_command(command: str, cfg: ExperimentConfig, out: str | Path,
                seed: int | None = None, threads: int = 1,
                verbose: bool = False) -> tuple[int, dict]:
    ws = Workspace(cfg, out, seed=seed, threads=threads, verbose=verbose)
    if command == "full":
        return cmd_full(ws)
    if command not in _COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    return _COMMANDS[command](ws)
