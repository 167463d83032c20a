"""Experiment runner: truth, sensors, twist source and estimator wired together.

Trace CSV columns, in order:

    t          time (s)
    ang_err    principal angle of Q = R R_hat^T (rad)
    pos_err    |x|, x = b - Q b_hat (m)
    wx wy wz   angular block of Ad(g_hat)(xi - xi_hat) (rad/s)
    vx vy vz   translational block of the same (m/s)
    V          energy of the estimation error, from the true pose
    n_beacons  number of beacons seen this epoch
    newton_iters  iterations of the attitude-increment solve (0 for the continuous filter)

The summary JSON holds settling times (first time after which an error stays
below a threshold) and means/maxima over the final quarter of the run; all of
it can be recomputed from the trace alone.
"""

from __future__ import annotations

import csv
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .continuous import EstimatorState, GainSet, Sample, initial_state, integrate_step, lyapunov_value
from .discrete import NoConvergence, lgvi_init, lgvi_step
from .geometry import Pose, adjoint_apply, adjoint_inverse_apply, exp_se3, exp_so3, principal_angle
from .sensors import (
    CameraRig,
    MeasurementSet,
    NoiseModel,
    World,
    cube_world,
    horizontal_rig,
    measure_epoch,
    vector_matrices,
    visible_beacons,
    add_exact_point_velocities,
    add_finite_difference_velocities,
)
from .truth import Trajectory, TruthState, VehicleParams, simulate_truth, wrench_profile
from .velocity import TwistFilter
from .wahba import EpochTerms, WeightSpec, epoch_terms, select_weights

TRACE_COLUMNS = ["t", "ang_err", "pos_err", "wx", "wy", "wz", "vx", "vy", "vz", "V", "n_beacons", "newton_iters"]
SETTLING_THRESHOLDS = (1e-1, 1e-2, 1e-3)


class EstimatorFailure(RuntimeError):
    """The estimator could not complete a step."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"estimator failed at step {step}: {cause}")
        self.step = step


def _mat(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    return np.diag(a) if a.ndim == 1 else a


def _rotation(axis, angle_deg) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return exp_so3(np.deg2rad(angle_deg) * axis / np.linalg.norm(axis))


@dataclass(frozen=True)
class ExperimentConfig:
    vehicle: VehicleParams
    initial_truth: TruthState
    g_hat0: Pose
    xi_hat0: np.ndarray
    gains: GainSet
    world: World
    rig: CameraRig
    noise: NoiseModel
    velocity_source: str
    filtered: bool
    omega_n: float
    mu: float
    point_velocities: str
    dt: float
    truth_horizon: float
    estimator_horizon: float
    estimator: str
    seed: int
    out_dir: str
    gnuplot: bool
    raw: dict

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = cfgmod.validate(d)
        v, tr, es, g, s, vel, tm = (d[k] for k in ("vehicle", "truth", "estimate", "gains", "sensors", "velocity", "timing"))
        try:
            vehicle = VehicleParams(v["mass"], _mat(v["inertia"]), v["wrench_frame"])
            gains = GainSet(
                _mat(g["J"]), _mat(g["M"]), _mat(g["D_r"]), _mat(g["D_t"]),
                kappa=g["kappa"], weight_spec=WeightSpec(tuple(g["varsigma"]), g["tail_weight"]),
            )
        except ValueError as exc:
            raise cfgmod.ConfigError(f"gains/vehicle: {exc}") from None
        base = cube_world(s["cube_half_size"])
        dirs = tuple(np.asarray(x, dtype=float) / np.linalg.norm(x) for x in s["inertial_directions"])
        return cls(
            vehicle=vehicle,
            initial_truth=TruthState(
                Pose(_rotation(tr["attitude_axis"], tr["attitude_angle_deg"]), np.asarray(tr["position"], dtype=float)),
                np.concatenate([tr["angular_velocity"], tr["translational_velocity"]]).astype(float),
                0.0,
            ),
            g_hat0=Pose(_rotation(es["attitude_axis"], es["attitude_angle_deg"]), np.asarray(es["position"], dtype=float)),
            xi_hat0=np.concatenate([es["angular_velocity"], es["translational_velocity"]]).astype(float),
            gains=gains,
            world=World(base.beacons, dirs),
            rig=horizontal_rig(np.deg2rad(s["half_angle_deg"]), np.deg2rad(s["camera_azimuth_deg"])),
            noise=NoiseModel(s["noise_width"], s["direction_noise_width"], s["velocity_noise_width"], d["seed"]),
            velocity_source=vel["source"],
            filtered=vel["filtered"],
            omega_n=vel["omega_n"],
            mu=vel["mu"],
            point_velocities=vel["point_velocities"],
            dt=tm["dt"],
            truth_horizon=tm["truth_horizon"],
            estimator_horizon=tm["estimator_horizon"],
            estimator=d["estimator"],
            seed=d["seed"],
            out_dir=d["output"]["dir"],
            gnuplot=d["output"]["gnuplot"],
            raw=d,
        )

    @property
    def n_steps(self) -> int:
        return int(round(self.estimator_horizon / self.dt))


@dataclass
class RunReport:
    trace: np.ndarray  # (N+1, len(TRACE_COLUMNS))
    summary: dict
    truth: Trajectory
    epochs: list

    def column(self, name: str) -> np.ndarray:
        return self.trace[:, TRACE_COLUMNS.index(name)]

    @property
    def lyapunov(self) -> np.ndarray:
        return self.column("V")


# --- metrics ---------------------------------------------------------------


def error_metrics(truth: TruthState, g_hat: Pose, xi_hat) -> tuple[float, float, np.ndarray, np.ndarray]:
    """(principal angle, |x|, angular and translational velocity errors)."""
    Q = truth.pose.R @ g_hat.R.T
    x = truth.pose.b - Q @ g_hat.b
    phi = adjoint_apply(g_hat, np.asarray(truth.twist, dtype=float) - np.asarray(xi_hat, dtype=float))
    return principal_angle(Q), float(np.linalg.norm(x)), phi[:3], phi[3:]


def settling_time(t: np.ndarray, e: np.ndarray, threshold: float) -> float | None:
    above = np.nonzero(e >= threshold)[0]
    if len(above) == 0:
        return float(t[0])
    if above[-1] == len(e) - 1:
        return None
    return float(t[above[-1] + 1])


def summarize(trace: np.ndarray) -> dict:
    col = {c: trace[:, i] for i, c in enumerate(TRACE_COLUMNS)}
    t = col["t"]
    tail = t >= t[0] + 0.75 * (t[-1] - t[0])
    w = np.linalg.norm(trace[:, 3:6], axis=1)
    v = np.linalg.norm(trace[:, 6:9], axis=1)
    series = {"ang_err": col["ang_err"], "pos_err": col["pos_err"], "w_err": w, "v_err": v}
    out = {
        "settling_time": {
            name: {f"{th:g}": settling_time(t, series[name], th) for th in SETTLING_THRESHOLDS}
            for name in ("ang_err", "pos_err")
        },
        "final_quarter": {
            name: {"mean": float(np.mean(s[tail])), "max": float(np.max(s[tail]))} for name, s in series.items()
        },
        "initial": {name: float(s[0]) for name, s in series.items()},
        "final": {name: float(s[-1]) for name, s in series.items()},
        "n_beacons": {
            "min": int(col["n_beacons"].min()),
            "max": int(col["n_beacons"].max()),
            "epochs_below_3": int(np.sum(col["n_beacons"] < 3)),
        },
        "newton_iters": {"mean": float(col["newton_iters"][1:].mean()) if len(t) > 1 else 0.0,
                         "max": int(col["newton_iters"].max())},
        "steps": len(t) - 1,
    }
    return out


# --- measurement pipeline --------------------------------------------------


def simulate_epochs(cfg: ExperimentConfig, traj: Trajectory) -> list[MeasurementSet]:
    n = cfg.n_steps
    epochs = [measure_epoch(traj.state(i), cfg.world, cfg.rig, cfg.noise, epoch=i) for i in range(n + 1)]
    if cfg.velocity_source == "direct":
        return epochs
    if cfg.point_velocities == "exact":
        for i, e in enumerate(epochs):
            add_exact_point_velocities(e, traj.state(i), cfg.noise, i)
    else:
        add_finite_difference_velocities(epochs, cfg.dt)
        # at start-up the first two frames seed the first epoch's velocities
        if len(epochs) > 1:
            first, second = epochs[0], epochs[1]
            first.v_m = {j: v for j, v in second.v_m.items() if j in first.index}
    return epochs


def twist_inputs(cfg: ExperimentConfig, epochs: list[MeasurementSet]) -> np.ndarray:
    tf = TwistFilter(cfg.velocity_source, cfg.dt, cfg.omega_n, cfg.mu, cfg.filtered)
    return np.array([tf.update(e) for e in epochs])


def terms_sequence(epochs: list[MeasurementSet], spec: WeightSpec) -> list[EpochTerms]:
    out, prev = [], None
    for e in epochs:
        prev = epoch_terms(e, spec, prev)
        out.append(prev)
    return out


# --- running ---------------------------------------------------------------


def run_estimator(
    cfg: ExperimentConfig,
    traj: Trajectory,
    epochs: list[MeasurementSet],
    terms: list[EpochTerms] | None = None,
    xi_m: np.ndarray | None = None,
) -> np.ndarray:
    """Run the configured estimator over ``epochs`` and return the trace array.

    ``terms`` and ``xi_m`` may be passed in when many runs share the same
    measurements (only the initial estimate differs).
    """
    if terms is None:
        terms = terms_sequence(epochs, cfg.gains.weight_spec)
    if xi_m is None:
        xi_m = twist_inputs(cfg, epochs)
    n = cfg.n_steps
    trace = np.empty((n + 1, len(TRACE_COLUMNS)))

    def record(i, g_hat, phi, xi_hat, iters):
        truth = traj.state(i)
        ang, pos, w, v = error_metrics(truth, g_hat, xi_hat)
        V = lyapunov_value(g_hat, phi, truth.pose, terms[i], cfg.gains)
        trace[i] = [truth.time, ang, pos, *w, *v, V, epochs[i].n_beacons, iters]

    if cfg.estimator == "lgvi":
        s = lgvi_init(cfg.g_hat0, cfg.xi_hat0, xi_m[0])
        record(0, s.g_hat, s.phi, s.xi_hat, 0)
        for i in range(1, n + 1):
            try:
                s = lgvi_step(s, terms[i], xi_m[i], cfg.gains, cfg.dt)
            except (NoConvergence, np.linalg.LinAlgError) as exc:
                raise EstimatorFailure(i, exc) from exc
            record(i, s.g_hat, s.phi, s.xi_hat, s.newton_iters)
    else:
        st = initial_state(cfg.g_hat0, cfg.xi_hat0, xi_m[0])
        record(0, st.g_hat, st.phi, st.xi_hat, 0)
        for i in range(1, n + 1):
            # measurements are sampled: hold epoch i-1 over the step
            st = integrate_step(st, Sample(terms[i - 1], xi_m[i - 1]), cfg.gains, cfg.dt)
            if not np.all(np.isfinite(st.phi)):
                raise EstimatorFailure(i, FloatingPointError("non-finite state"))
            st = EstimatorState(st.g_hat, st.phi, xi_m[i] - adjoint_inverse_apply(st.g_hat, st.phi), st.t)
            record(i, st.g_hat, st.phi, st.xi_hat, 0)
    return trace


def run_experiment(cfg: ExperimentConfig | dict, write: bool = True) -> RunReport:
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    traj = simulate_truth(cfg.vehicle, cfg.initial_truth, cfg.dt, cfg.truth_horizon, wrench_profile)
    epochs = simulate_epochs(cfg, traj)
    trace = run_estimator(cfg, traj, epochs)
    report = RunReport(trace, summarize(trace), traj, epochs)
    if write:
        write_outputs(cfg, report)
    return report


# --- output ----------------------------------------------------------------


def write_trace(path, trace: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([repr(float(x)) for x in row[:-2]] + [int(row[-2]), int(row[-1])])


def read_trace(path) -> np.ndarray:
    return np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)


GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set logscale y
set xlabel 't (s)'
set multiplot layout 2,1
plot 'trace.csv' using 1:2 with lines title 'principal angle (rad)'
plot 'trace.csv' using 1:3 with lines title 'position error (m)'
unset multiplot
"""


def write_outputs(cfg: ExperimentConfig, report: RunReport, out_dir=None) -> Path:
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(out / "trace.csv", report.trace)
    (out / "summary.json").write_text(json.dumps(report.summary, indent=2, sort_keys=True))
    (out / "config.json").write_text(cfgmod.dumps(cfg.raw))
    if cfg.gnuplot:
        (out / "plot.gp").write_text(GNUPLOT)
    return out


# --- sweeps ----------------------------------------------------------------


def _cell(args):
    raw, out_dir = args
    try:
        cfg = ExperimentConfig.from_dict(raw)
        report = run_experiment(cfg, write=False)
        write_outputs(cfg, report, out_dir)
        return {"status": "ok", "summary": report.summary}
    except Exception as exc:  # recorded per cell; the sweep goes on
        return {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def sweep(raw: dict, overrides: list[tuple[str, list]], out_dir=None, workers: int | None = None) -> dict:
    """Run the Cartesian product of ``overrides`` (field path, values) as independent cells."""
    out = Path(out_dir or raw["output"]["dir"])
    names = [name for name, _ in overrides]
    combos = list(itertools.product(*[vals for _, vals in overrides])) if overrides else [()]
    jobs, cells = [], []
    for k, combo in enumerate(combos):
        cell = raw
        for name, val in zip(names, combo):
            cell = cfgmod.set_field(cell, name, val)
        cell_dir = out / f"cell_{k:03d}"
        cell = cfgmod.set_field(cell, "output.dir", str(cell_dir))
        jobs.append((cell, str(cell_dir)))
        cells.append({"index": k, "values": dict(zip(names, combo)), "dir": str(cell_dir)})
    if workers == 1 or len(jobs) == 1:
        results = [_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_cell, jobs))
    for c, r in zip(cells, results):
        c.update(r)
    report = {"fields": names, "cells": cells, "failed": sum(c["status"] != "ok" for c in cells)}
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


# --- noise-free reference measurements at arbitrary times -------------------


class ReferenceSource:
    """Noise-free measurements along a truth trajectory, callable at any time.

    ``hold(i)`` pins the truth interval and twist used until the next call, so
    multi-stage integrators see the same constant-twist motion the truth used.
    Weights depend only on the visible set and are cached per set.
    """

    def __init__(self, traj: Trajectory, world: World, rig: CameraRig | None, spec: WeightSpec = WeightSpec()):
        self.traj, self.world, self.rig, self.spec = traj, world, rig, spec
        self._cache: dict[tuple, tuple] = {}
        self._i = 0

    def hold(self, i: int) -> "ReferenceSource":
        self._i = i
        return self

    def pose(self, t: float) -> Pose:
        i = self._i
        g = Pose(self.traj.R[i], self.traj.b[i])
        tau = t - self.traj.t[i]
        return g if tau == 0.0 else g @ exp_se3(self.traj.xi[i], tau)

    def visible(self, pose: Pose) -> tuple:
        if self.rig is None:
            return tuple(sorted(self.world.beacons))
        return tuple(visible_beacons(pose, self.world, self.rig))

    def _geometry(self, index: tuple):
        if index not in self._cache:
            p = np.array([self.world.beacons[j] for j in index]).reshape(-1, 3)
            dirs = self.world.inertial_directions
            D, _, kinds, _ = vector_matrices(list(index), p, p, dirs, dirs)
            ctx = select_weights(D, self.spec)
            c0 = 2.0 * float(np.sum(D * (D @ ctx.W)))
            p_bar = p.mean(axis=0) if len(index) else None
            self._cache[index] = (D, ctx.W, ctx.K, c0, p_bar)
        return self._cache[index]

    def terms(self, pose: Pose) -> EpochTerms:
        index = self.visible(pose)
        D, W, K, c0, p_bar = self._geometry(index)
        L = pose.R.T @ D
        a_bar = None if p_bar is None else pose.R.T @ (p_bar - pose.b)
        return EpochTerms(K, D @ W @ L.T, c0, p_bar, a_bar, len(index), True)

    def __call__(self, t: float) -> Sample:
        return Sample(self.terms(self.pose(t)), self.traj.xi[self._i])


def reference_run(
    traj: Trajectory,
    source: ReferenceSource,
    gains: GainSet,
    g_hat0: Pose,
    xi_hat0,
    substeps: int = 1,
    n_intervals: int | None = None,
) -> list[EstimatorState]:
    """Continuous filter along ``traj`` with ``substeps`` RKMK4 steps per truth interval."""
    n = len(traj) - 1 if n_intervals is None else n_intervals
    h = traj.dt / substeps
    st = initial_state(g_hat0, xi_hat0, traj.xi[0], traj.t[0])
    out = [st]
    for i in range(n):
        source.hold(i)
        for _ in range(substeps):
            st = integrate_step(st, source, gains, h)
            out.append(st)
    return out

