"""Discrete-time filter from a Lie group variational integrator (LGVI).

Each step solves an implicit equation for the attitude increment ``F`` and then
updates pose, translational and angular velocity errors in a fixed order:

    F_i                      from (J w_i)^x = (F cJ - cJ F^T) / dt
    xi_hat_i = xi_m_i - Ad(g_hat_i^-1) phi_i
    g_hat_{i+1} = g_hat_i exp(dt xi_hat_i)
    y_{i+1}  = p_bar - R_hat a_bar - b_hat          (at i+1)
    (M + dt D_t) u_{i+1} = F^T M u_i - dt kappa y_{i+1}
    (J + dt D_r) w_{i+1} = F^T J w_i + dt (M u_{i+1}) x u_{i+1}
                           - dt kappa p_bar^x y_{i+1} - dt Phi' S_Gamma(R_hat_{i+1})

with ``cJ = tr(J)/2 I - J``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .continuous import GainSet
from .geometry import Pose, cross3, adjoint_apply, adjoint_inverse_apply, exp_se3, exp_so3, hat3
from .wahba import EpochTerms

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50


class NoConvergence(RuntimeError):
    """Newton iteration for the attitude increment did not converge."""


def cal_j(J) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    return 0.5 * np.trace(J) * np.eye(3) - J


def _coeffs(theta: float):
    """sin t/t, (1-cos t)/t^2 and their derivatives divided by t."""
    if theta < 1e-2:
        t2 = theta * theta
        A = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        B = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        dA = -1.0 / 3.0 + t2 / 30.0
        dB = -1.0 / 12.0 + t2 / 180.0
        return A, B, dA, dB
    s, c = np.sin(theta), np.cos(theta)
    t2 = theta * theta
    A = s / theta
    B = 2.0 * (np.sin(0.5 * theta) / theta) ** 2
    dA = (theta * c - s) / (t2 * theta)
    dB = (theta * s - 2.0 * (1.0 - c)) / (t2 * t2)
    return A, B, dA, dB


def implicit_residual(F, J, omega, dt: float, cJ=None) -> float:
    """Frobenius norm of ``(F cJ - cJ F^T)/dt - (J omega)^x``."""
    cJ = cal_j(J) if cJ is None else cJ
    return float(np.linalg.norm((F @ cJ - cJ @ F.T) / dt - hat3(np.asarray(J) @ omega)))


def solve_F(J, omega, dt: float, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER):
    """Solve the implicit attitude update with Newton's method.

    ``F = exp(f^x)`` and the residual in vector form is
    ``A(t) J f + B(t) f x (J f) - dt J omega`` with ``t = |f|``.  Returns
    ``(F, iterations)``.
    """
    J = np.asarray(J, dtype=float)
    omega = np.asarray(omega, dtype=float)
    target = dt * (J @ omega)
    f = dt * omega
    cJ = cal_j(J)
    for it in range(max_iter + 1):
        F = exp_so3(f)
        if implicit_residual(F, J, omega, dt, cJ) < tol:
            return F, it
        if it == max_iter:
            break
        theta = float(np.linalg.norm(f))
        A, B, dA, dB = _coeffs(theta)
        Jf = J @ f
        fxJf = cross3(f, Jf)
        G = A * Jf + B * fxJf - target
        jac = (
            dA * np.outer(Jf, f)
            + A * J
            + dB * np.outer(fxJf, f)
            + B * (hat3(f) @ J - hat3(Jf))
        )
        f = f - np.linalg.solve(jac, G)
    raise NoConvergence(f"no convergence after {max_iter} iterations (|omega| = {np.linalg.norm(omega):.3g})")


@dataclass(frozen=True)
class LgviState:
    g_hat: Pose
    omega: np.ndarray  # angular velocity error
    upsilon: np.ndarray  # translational velocity error
    xi_m: np.ndarray  # twist input used at this step
    xi_hat: np.ndarray
    step_index: int = 0
    newton_iters: int = 0

    @property
    def phi(self) -> np.ndarray:
        return np.concatenate([self.omega, self.upsilon])


def lgvi_init(g_hat0: Pose, xi_hat0, xi_m0) -> LgviState:
    xi_hat0 = np.asarray(xi_hat0, dtype=float)
    xi_m0 = np.asarray(xi_m0, dtype=float)
    phi0 = adjoint_apply(g_hat0, xi_m0 - xi_hat0)
    return LgviState(g_hat0, phi0[:3], phi0[3:], xi_m0.copy(), xi_hat0.copy(), 0, 0)


@lru_cache(maxsize=32)
def _damped_inverses(key) -> tuple[np.ndarray, np.ndarray]:
    J, M, D_r, D_t, dt = key
    to = lambda x: np.array(x).reshape(3, 3)
    return np.linalg.inv(to(M) + dt * to(D_t)), np.linalg.inv(to(J) + dt * to(D_r))


def damped_inverses(gains: GainSet, dt: float):
    """``(M + dt D_t)^-1`` and ``(J + dt D_r)^-1``, cached per gain set and step."""
    key = tuple(tuple(gains.__dict__[k].ravel()) for k in ("J", "M", "D_r", "D_t")) + (float(dt),)
    return _damped_inverses(key)


def lgvi_step(state: LgviState, terms_next: EpochTerms, xi_m_next, gains: GainSet, dt: float) -> LgviState:
    J, M = gains.J, gains.M
    Minv, Jinv = damped_inverses(gains, dt)
    F, iters = solve_F(J, state.omega, dt)

    xi_hat = state.xi_m - adjoint_inverse_apply(state.g_hat, state.phi)
    g_next = state.g_hat @ exp_se3(xi_hat, dt)

    y = terms_next.y(g_next)
    k = gains.kappa
    upsilon = Minv @ (F.T @ M @ state.upsilon - dt * k * y)

    rhs = F.T @ J @ state.omega + dt * cross3(M @ upsilon, upsilon)
    if terms_next.p_bar is not None:
        rhs -= dt * k * cross3(terms_next.p_bar, y)
    rhs -= dt * gains.dPhi(terms_next.U0r(g_next.R)) * terms_next.S_Gamma(g_next.R)
    omega = Jinv @ rhs

    xi_m_next = np.asarray(xi_m_next, dtype=float)
    phi = np.concatenate([omega, upsilon])
    xi_hat_next = xi_m_next - adjoint_inverse_apply(g_next, phi)
    return LgviState(g_next, omega, upsilon, xi_m_next.copy(), xi_hat_next, state.step_index + 1, iters)


def run_lgvi(state: LgviState, terms_seq, xi_m_seq, gains: GainSet, dt: float) -> list[LgviState]:
    """Advance through epochs ``1..N`` of precomputed terms and twist inputs."""
    out = [state]
    for terms, xi_m in zip(terms_seq, xi_m_seq):
        state = lgvi_step(state, terms, xi_m, gains, dt)
        out.append(state)
    return out

