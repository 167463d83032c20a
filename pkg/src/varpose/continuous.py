"""Continuous-time variational pose/velocity filter (reference integrator).

The filter state is the pose estimate ``g_hat`` and the velocity-error vector
``phi``; the velocity estimate is recovered as
``xi_hat = xi_m - Ad(g_hat^-1) phi``.  The dynamics

    Jb phi_dot = ad*_phi Jb phi - Z - Db phi,   g_hat_dot = g_hat xi_hat^

are integrated with a fourth-order Runge-Kutta-Munthe-Kaas step so the pose
never leaves SE(3).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .geometry import Pose, cross3, ad_small, adjoint_apply, adjoint_inverse_apply, exp_se3, principal_angle
from .wahba import EpochTerms, WeightSpec, wahba_value


def _spd(name, A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = np.diag(A)
    if A.shape != (3, 3) or not np.allclose(A, A.T) or np.min(np.linalg.eigvalsh(A)) <= 0:
        raise ValueError(f"{name} must be a symmetric positive definite 3x3 matrix")
    return A


def identity_gain(x):
    return x


def unit_slope(x):
    return 1.0


@dataclass(frozen=True)
class GainSet:
    J: np.ndarray
    M: np.ndarray
    D_r: np.ndarray
    D_t: np.ndarray
    kappa: float = 1.0
    weight_spec: WeightSpec = field(default_factory=WeightSpec)
    Phi: Callable[[float], float] = identity_gain
    dPhi: Callable[[float], float] = unit_slope

    def __post_init__(self):
        for name in ("J", "M", "D_r", "D_t"):
            object.__setattr__(self, name, _spd(name, getattr(self, name)))
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        Jb = np.zeros((6, 6))
        Jb[:3, :3], Jb[3:, 3:] = self.J, self.M
        Db = np.zeros((6, 6))
        Db[:3, :3], Db[3:, 3:] = self.D_r, self.D_t
        object.__setattr__(self, "Jb", Jb)
        object.__setattr__(self, "Db", Db)
        object.__setattr__(self, "Jb_inv", np.linalg.inv(Jb))


def default_gains(kappa: float = 1.0, weight_spec: WeightSpec | None = None) -> GainSet:
    return GainSet(
        J=np.diag([0.9, 0.6, 0.3]),
        M=np.diag([0.0608, 0.0486, 0.0365]),
        D_r=np.diag([2.7, 2.2, 1.5]),
        D_t=np.diag([0.1, 0.12, 0.14]),
        kappa=kappa,
        weight_spec=weight_spec or WeightSpec(),
    )


class Sample(NamedTuple):
    """What the filter sees at one instant."""

    terms: EpochTerms
    xi_m: np.ndarray


@dataclass(frozen=True)
class EstimatorState:
    g_hat: Pose
    phi: np.ndarray
    xi_hat: np.ndarray
    t: float = 0.0


def initial_state(g_hat0: Pose, xi_hat0, xi_m0, t0: float = 0.0) -> EstimatorState:
    xi_hat0 = np.asarray(xi_hat0, dtype=float)
    phi0 = adjoint_apply(g_hat0, np.asarray(xi_m0, dtype=float) - xi_hat0)
    return EstimatorState(g_hat0, phi0, xi_hat0.copy(), t0)


def z_vector(g_hat: Pose, terms: EpochTerms, gains: GainSet) -> np.ndarray:
    """Gradient of the measurement potential under reduced variations."""
    top = gains.dPhi(terms.U0r(g_hat.R)) * terms.S_Gamma(g_hat.R)
    if terms.p_bar is None:
        return np.concatenate([top, np.zeros(3)])
    y = terms.y(g_hat)
    k = gains.kappa
    return np.concatenate([top + k * cross3(terms.p_bar, y), k * y])


def coad_inertia(phi, gains: GainSet) -> np.ndarray:
    """``ad*_phi Jb phi`` in closed form."""
    w, u = phi[:3], phi[3:]
    Jw, Mu = gains.J @ w, gains.M @ u
    return np.concatenate([cross3(Jw, w) + cross3(Mu, u), cross3(Mu, w)])


def rhs(g_hat: Pose, phi, sample: Sample, gains: GainSet) -> tuple[np.ndarray, np.ndarray]:
    """Return (phi_dot, xi_hat)."""
    phi = np.asarray(phi, dtype=float)
    Z = z_vector(g_hat, sample.terms, gains)
    dphi = gains.Jb_inv @ (coad_inertia(phi, gains) - Z - gains.Db @ phi)
    xi_hat = np.asarray(sample.xi_m, dtype=float) - adjoint_inverse_apply(g_hat, phi)
    return dphi, xi_hat


def dexp_inv(u, v) -> np.ndarray:
    """Third-order truncation of the inverse right-trivialized dexp at ``-u``."""
    au = ad_small(u)
    av = au @ v
    return v + 0.5 * av + (au @ av) / 12.0


def integrate_step(state: EstimatorState, source, gains: GainSet, dt: float) -> EstimatorState:
    """One RKMK4 step.  ``source`` is a ``Sample`` or a callable ``t -> Sample``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    get = source if callable(source) else (lambda t: source)
    g0, phi0, t0 = state.g_hat, state.phi, state.t

    def stage(tau, u, phi):
        g = g0 @ exp_se3(u) if np.any(u) else g0
        dphi, xi_hat = rhs(g, phi, get(t0 + tau), gains)
        return dexp_inv(u, xi_hat), dphi

    zero = np.zeros(6)
    u1, p1 = stage(0.0, zero, phi0)
    u2, p2 = stage(0.5 * dt, 0.5 * dt * u1, phi0 + 0.5 * dt * p1)
    u3, p3 = stage(0.5 * dt, 0.5 * dt * u2, phi0 + 0.5 * dt * p2)
    u4, p4 = stage(dt, dt * u3, phi0 + dt * p3)
    u = dt / 6.0 * (u1 + 2 * u2 + 2 * u3 + u4)
    phi = phi0 + dt / 6.0 * (p1 + 2 * p2 + 2 * p3 + p4)
    g = g0 @ exp_se3(u)
    sample = get(t0 + dt)
    xi_hat = np.asarray(sample.xi_m, dtype=float) - adjoint_inverse_apply(g, phi)
    return EstimatorState(g, phi, xi_hat, t0 + dt)


def integrate(state: EstimatorState, source, gains: GainSet, dt: float, n_steps: int) -> list[EstimatorState]:
    out = [state]
    for _ in range(n_steps):
        state = integrate_step(state, source, gains, dt)
        out.append(state)
    return out


def pose_error(g: Pose, g_hat: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Attitude error ``Q = R R_hat^T`` and position error ``x = b - Q b_hat``."""
    Q = g.R @ g_hat.R.T
    return Q, g.b - Q @ g_hat.b


def lyapunov_value(g_hat: Pose, phi, truth_pose: Pose, terms: EpochTerms, gains: GainSet) -> float:
    """Energy of the estimation error, evaluated from the true pose (diagnostic)."""
    phi = np.asarray(phi, dtype=float)
    Q, x = pose_error(truth_pose, g_hat)
    V = 0.5 * phi @ gains.Jb @ phi + gains.Phi(wahba_value(Q, terms.K))
    if terms.p_bar is not None:
        y = Q.T @ x + (np.eye(3) - Q.T) @ terms.p_bar
        V += 0.5 * gains.kappa * y @ y
    return float(V)


def measured_energy(g_hat: Pose, phi, terms: EpochTerms, gains: GainSet) -> float:
    """Same energy built from measurements only (equals the truth form when noise-free)."""
    phi = np.asarray(phi, dtype=float)
    V = 0.5 * phi @ gains.Jb @ phi + gains.Phi(terms.U0r(g_hat.R))
    y = terms.y(g_hat)
    return float(V + 0.5 * gains.kappa * y @ y)


def total_potential(g_hat: Pose, terms: EpochTerms, gains: GainSet) -> float:
    y = terms.y(g_hat)
    return float(gains.Phi(terms.U0r(g_hat.R)) + 0.5 * gains.kappa * y @ y)


def attitude_error_angle(g: Pose, g_hat: Pose) -> float:
    return principal_angle(g.R @ g_hat.R.T)

