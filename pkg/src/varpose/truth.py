"""Ground-truth rigid-body trajectories for the sensor simulator.

Body-frame Newton-Euler dynamics driven by a slowly varying wrench.  Velocities
are advanced with classical RK4; the pose is advanced with the exact group
update ``g_{i+1} = g_i exp(dt xi_i)``, so between samples the trajectory is
exactly the constant-twist motion and can be interpolated without error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, cross3, exp_se3, exp_so3


@dataclass(frozen=True)
class VehicleParams:
    mass: float  # kg
    inertia: np.ndarray  # kg m^2
    wrench_frame: str = "body"

    def __post_init__(self):
        J = np.asarray(self.inertia, dtype=float)
        if J.ndim == 1:
            J = np.diag(J)
        object.__setattr__(self, "inertia", J)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if not np.allclose(J, J.T) or np.min(np.linalg.eigvalsh(J)) <= 0:
            raise ValueError("inertia must be symmetric positive definite")
        if self.wrench_frame not in ("body", "inertial"):
            raise ValueError("wrench_frame must be 'body' or 'inertial'")

    @classmethod
    def from_grams(cls, mass_g: float, inertia_gm2, wrench_frame: str = "body"):
        return cls(mass_g * 1e-3, np.asarray(inertia_gm2, dtype=float) * 1e-3, wrench_frame)


def default_vehicle() -> VehicleParams:
    return VehicleParams.from_grams(420.0, [51.2, 60.2, 59.6])


@dataclass(frozen=True)
class TruthState:
    pose: Pose
    twist: np.ndarray
    time: float = 0.0


def default_initial_truth() -> TruthState:
    R0 = exp_so3(np.pi / 4 * np.array([3.0, -6.0, 2.0]) / 7.0)
    b0 = np.array([2.5, 0.5, -3.0])
    xi0 = np.array([0.2, -0.05, 0.1, -0.05, 0.15, 0.03])
    return TruthState(Pose(R0, b0), xi0, 0.0)


def wrench_profile(t: float) -> tuple[np.ndarray, np.ndarray]:
    """Force (N) and torque (N m) applied to the vehicle at time ``t``."""
    force = 1e-3 * np.array([10.0 * np.cos(0.1 * t), 2.0 * np.sin(0.2 * t), -2.0 * np.sin(0.5 * t)])
    return force, 1e-6 * force


def zero_wrench(t: float) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(3), np.zeros(3)


def _velocity_rate(xi, force_b, torque_b, params: VehicleParams) -> np.ndarray:
    w, v = xi[:3], xi[3:]
    J = params.inertia
    w_dot = np.linalg.solve(J, cross3(J @ w, w) + torque_b)
    v_dot = force_b / params.mass - cross3(w, v)
    return np.concatenate([w_dot, v_dot])


def truth_step(s: TruthState, params: VehicleParams, dt: float, wrench=wrench_profile) -> TruthState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    t, xi = s.time, s.twist
    R = s.pose.R

    def rate(tau: float, x: np.ndarray) -> np.ndarray:
        f, m = wrench(t + tau)
        if params.wrench_frame == "inertial":
            # attitude inside the step follows the frozen angular rate
            Rt = (R @ exp_so3(tau * xi[:3])).T
            f, m = Rt @ f, Rt @ m
        return _velocity_rate(x, f, m, params)

    k1 = rate(0.0, xi)
    k2 = rate(0.5 * dt, xi + 0.5 * dt * k1)
    k3 = rate(0.5 * dt, xi + 0.5 * dt * k2)
    k4 = rate(dt, xi + dt * k3)
    xi_next = xi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return TruthState(s.pose @ exp_se3(xi, dt), xi_next, t + dt)


@dataclass
class Trajectory:
    """Sampled truth with exact constant-twist interpolation between samples."""

    t: np.ndarray
    R: np.ndarray  # (N+1, 3, 3)
    b: np.ndarray  # (N+1, 3)
    xi: np.ndarray  # (N+1, 6)
    dt: float = field(default=0.0)

    def __len__(self) -> int:
        return len(self.t)

    def state(self, i: int) -> TruthState:
        return TruthState(Pose(self.R[i], self.b[i]), self.xi[i].copy(), float(self.t[i]))

    def _index(self, t: float) -> int:
        i = int(np.floor((t - self.t[0]) / self.dt + 1e-9))
        return min(max(i, 0), len(self.t) - 1)

    def pose_at(self, t: float) -> Pose:
        i = self._index(t)
        tau = t - self.t[i]
        g = Pose(self.R[i], self.b[i])
        if abs(tau) < 1e-15:
            return g
        return g @ exp_se3(self.xi[i], tau)

    def twist_at(self, t: float) -> np.ndarray:
        return self.xi[self._index(t)].copy()

    def state_at(self, t: float) -> TruthState:
        return TruthState(self.pose_at(t), self.twist_at(t), t)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["t"]
                + [f"R{r}{c}" for r in range(1, 4) for c in range(1, 4)]
                + ["bx", "by", "bz", "Wx", "Wy", "Wz", "nux", "nuy", "nuz"]
            )
            for i in range(len(self.t)):
                row = [self.t[i], *self.R[i].ravel(), *self.b[i], *self.xi[i]]
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(t, data[:, 1:10].reshape(-1, 3, 3), data[:, 10:13], data[:, 13:19], dt)


def simulate_truth(
    params: VehicleParams,
    initial: TruthState,
    dt: float,
    horizon: float,
    wrench=wrench_profile,
) -> Trajectory:
    n = int(round(horizon / dt))
    if n < 0 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be a non-negative multiple of dt")
    t = np.empty(n + 1)
    R = np.empty((n + 1, 3, 3))
    b = np.empty((n + 1, 3))
    xi = np.empty((n + 1, 6))
    s = initial
    for i in range(n + 1):
        t[i], R[i], b[i], xi[i] = s.time, s.pose.R, s.pose.b, s.twist
        if i < n:
            s = truth_step(s, params, dt, wrench)
    return Trajectory(t, R, b, xi, dt)


def constant_twist_trajectory(g0: Pose, xi, dt: float, horizon: float, t0: float = 0.0) -> Trajectory:
    """Force-free-like kinematic truth with a fixed body twist (test fixture)."""
    n = int(round(horizon / dt))
    xi = np.asarray(xi, dtype=float)
    step = exp_se3(xi, dt)
    t = t0 + dt * np.arange(n + 1)
    R = np.empty((n + 1, 3, 3))
    b = np.empty((n + 1, 3))
    g = g0
    for i in range(n + 1):
        R[i], b[i] = g.R, g.b
        g = g @ step
    return Trajectory(t, R, b, np.tile(xi, (n + 1, 1)), dt)
