"""Twist signals for the estimator when velocities are not measured directly.

A second-order low-pass filter (discretized with the average-acceleration
Newmark-beta scheme) smooths raw measurements; body velocities are then
recovered from beacon positions and point velocities through the point
kinematics ``v = a x Omega - nu = G(a) xi``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .geometry import hat3

COND_MAX = 1e12


class IllConditioned(np.linalg.LinAlgError):
    """The stacked point-kinematics Gram matrix is numerically singular."""


class NoBeacons(RuntimeError):
    """No beacon with a usable velocity this epoch."""


class VelocitySource(str, Enum):
    DIRECT = "direct"
    GYRO = "gyro"
    OPTICAL = "optical"


@dataclass(frozen=True)
class ButterworthState:
    z: np.ndarray
    z_dot: np.ndarray
    z_ddot: np.ndarray
    omega_n: float = 2.0
    mu: float = 0.5

    def __post_init__(self):
        if self.omega_n <= 0 or self.mu <= 0:
            raise ValueError("omega_n and mu must be positive")


def butterworth_init(z0, omega_n: float = 2.0, mu: float = 0.5, z_dot0=None) -> ButterworthState:
    z0 = np.asarray(z0, dtype=float)
    zd = np.zeros_like(z0) if z_dot0 is None else np.asarray(z_dot0, dtype=float)
    # the filter ODE evaluated with z^m = z0
    zdd = -2.0 * mu * omega_n * zd
    return ButterworthState(z0.copy(), zd.copy(), zdd, omega_n, mu)


def newmark_denominator(omega_n: float, mu: float, dt: float) -> float:
    return 4.0 + 4.0 * mu * omega_n * dt + omega_n**2 * dt**2


def butterworth_step(s: ButterworthState, z_m_prev, z_m_next, dt: float) -> ButterworthState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    w, mu = s.omega_n, s.mu
    w2h2 = (w * dt) ** 2
    den = newmark_denominator(w, mu, dt)
    zsum = np.asarray(z_m_prev, dtype=float) + np.asarray(z_m_next, dtype=float)
    z = ((4.0 + 4.0 * mu * w * dt - w2h2) * s.z + 4.0 * dt * s.z_dot + w2h2 * zsum) / den
    zd = (-4.0 * w * w * dt * s.z + (4.0 - 4.0 * mu * w * dt - w2h2) * s.z_dot + 2.0 * w * w * dt * zsum) / den
    zdd = w * w * (np.asarray(z_m_next, dtype=float) - z) - 2.0 * mu * w * zd
    return replace(s, z=z, z_dot=zd, z_ddot=zdd)


def filter_signal(z_m, dt: float, omega_n: float = 2.0, mu: float = 0.5) -> np.ndarray:
    """Run the discrete filter over a sampled signal (rows are samples)."""
    z_m = np.asarray(z_m, dtype=float)
    s = butterworth_init(z_m[0], omega_n, mu)
    out = np.empty_like(z_m)
    out[0] = s.z
    for i in range(1, len(z_m)):
        s = butterworth_step(s, z_m[i - 1], z_m[i], dt)
        out[i] = s.z
    return out


def G_of(a) -> np.ndarray:
    G = np.empty((3, 6))
    G[:, :3] = hat3(a)
    G[:, 3:] = -np.eye(3)
    return G


def stacked_G(A) -> np.ndarray:
    return np.vstack([G_of(a) for a in A])


def reconstruct_twist(A, V, cond_max: float = COND_MAX) -> np.ndarray:
    """Least-squares (j >= 3) or minimum-norm (j < 3) twist from point velocities."""
    A = np.asarray(A, dtype=float).reshape(-1, 3)
    V = np.asarray(V, dtype=float).reshape(-1, 3)
    if len(A) == 0 or len(A) != len(V):
        raise ValueError("need equally many (>= 1) beacon positions and velocities")
    G = stacked_G(A)
    v = V.ravel()
    if len(A) >= 3:
        gram = G.T @ G
        if np.linalg.cond(gram) > cond_max:
            raise IllConditioned("beacons are nearly collinear")
        return np.linalg.solve(gram, G.T @ v)
    if len(A) == 1:
        # G G^T = I - (a^x)^2 is always positive definite
        return G.T @ np.linalg.solve(G @ G.T, v)
    # two beacons: G is 6x6 of rank 5 (spin about the baseline is invisible)
    U, s, Vt = np.linalg.svd(G)
    keep = s > s[0] / np.sqrt(cond_max)
    if keep.sum() < 5:
        raise IllConditioned("coincident beacons")
    return Vt[keep].T @ ((U[:, keep].T @ v) / s[keep])


def nu_from_gyro(A, V, omega) -> np.ndarray:
    A = np.asarray(A, dtype=float).reshape(-1, 3)
    V = np.asarray(V, dtype=float).reshape(-1, 3)
    if len(A) == 0:
        raise NoBeacons("no beacons to derive translational velocity from")
    return np.mean(np.cross(A, np.asarray(omega, dtype=float)) - V, axis=0)


class _Channel:
    """One filtered vector signal that remembers its last raw sample."""

    def __init__(self, z0, omega_n, mu, z_dot0=None):
        self.state = butterworth_init(z0, omega_n, mu, z_dot0)
        self.last = np.asarray(z0, dtype=float)

    def push(self, z, dt):
        z = np.asarray(z, dtype=float)
        self.state = butterworth_step(self.state, self.last, z, dt)
        self.last = z
        return self.state.z


class TwistFilter:
    """Per-run twist source: turns measurement epochs into ``xi^f``.

    ``filtered=False`` bypasses the low-pass stage (raw reconstruction).  When
    no usable data arrive the previous output is held and ``held`` is set.
    """

    def __init__(
        self,
        source: VelocitySource | str = VelocitySource.OPTICAL,
        dt: float = 0.02,
        omega_n: float = 2.0,
        mu: float = 0.5,
        filtered: bool = True,
        initial=None,
    ):
        self.source = VelocitySource(source)
        self.dt = dt
        self.omega_n, self.mu = omega_n, mu
        self.filtered = filtered
        self.output = np.zeros(6) if initial is None else np.asarray(initial, dtype=float).copy()
        self.held = False
        self._twist: _Channel | None = None
        self._gyro: _Channel | None = None
        self._pos: dict[int, _Channel] = {}
        self._vel: dict[int, _Channel] = {}

    def _vector(self, attr: str, z):
        if not self.filtered:
            return np.asarray(z, dtype=float)
        ch = getattr(self, attr)
        if ch is None:
            setattr(self, attr, _Channel(z, self.omega_n, self.mu))
            return np.asarray(z, dtype=float)
        return ch.push(z, self.dt)

    def _beacons(self, epoch):
        """Filtered (a, v) for every beacon that has a velocity this epoch."""
        a_by = {j: epoch.a_m[k] for k, j in enumerate(epoch.index)}
        usable = [j for j in epoch.index if j in epoch.v_m]
        for store in (self._pos, self._vel):
            for j in list(store):
                if j not in usable:
                    del store[j]
        A, V = [], []
        for j in usable:
            a, v = a_by[j], epoch.v_m[j]
            if not self.filtered:
                A.append(a)
                V.append(v)
            elif j not in self._pos:
                self._pos[j] = _Channel(a, self.omega_n, self.mu, z_dot0=v)
                self._vel[j] = _Channel(v, self.omega_n, self.mu)
                A.append(a)
                V.append(v)
            else:
                A.append(self._pos[j].push(a, self.dt))
                V.append(self._vel[j].push(v, self.dt))
        return np.array(A).reshape(-1, 3), np.array(V).reshape(-1, 3)

    def update(self, epoch) -> np.ndarray:
        self.held = False
        if self.source is VelocitySource.DIRECT:
            if epoch.twist_m is None:
                raise ValueError("direct velocity source needs twist measurements")
            self.output = self._vector("_twist", epoch.twist_m).copy()
            return self.output.copy()

        if self.source is VelocitySource.GYRO:
            if epoch.gyro_m is None:
                raise ValueError("gyro-aided velocity source needs angular-rate measurements")
            omega = self._vector("_gyro", epoch.gyro_m)
            A, V = self._beacons(epoch)
            out = self.output.copy()
            out[:3] = omega
            if len(A):
                out[3:] = nu_from_gyro(A, V, omega)
            else:
                self.held = True
            self.output = out
            return out.copy()

        A, V = self._beacons(epoch)
        if len(A) == 0:
            self.held = True
            return self.output.copy()
        try:
            self.output = reconstruct_twist(A, V)
        except IllConditioned:
            self.held = True
        return self.output.copy()


def twist_source_step(filters: TwistFilter, epoch) -> np.ndarray:
    """Functional alias for :meth:`TwistFilter.update`."""
    return filters.update(epoch)
