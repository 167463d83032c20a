"""Generalized Wahba potential: weight selection, critical rotations, gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import vex_unchecked

RANK_TOL = 1e-9


class RankDeficient(ValueError):
    """The reference vector matrix does not span R^3."""


@dataclass(frozen=True)
class WeightSpec:
    varsigma: tuple = (3.0, 2.0, 1.0)
    tail_weight: float = 1.0

    def __post_init__(self):
        s = tuple(float(x) for x in self.varsigma)
        if len(s) != 3 or not (s[0] > s[1] > s[2] > 0):
            raise ValueError("varsigma must be three strictly decreasing positive values")
        if self.tail_weight <= 0:
            raise ValueError("tail_weight must be positive")
        object.__setattr__(self, "varsigma", s)


@dataclass(frozen=True)
class WahbaContext:
    W: np.ndarray  # (n, n)
    K: np.ndarray  # D W D^T
    U_D: np.ndarray
    Delta: np.ndarray  # diag(varsigma)
    sigma: np.ndarray  # singular values of D


def _pin_signs(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    U, V = U.copy(), V.copy()
    for k in range(3):
        if k == 2:
            flip = np.linalg.det(U) < 0
        else:
            flip = U[np.argmax(np.abs(U[:, k])), k] < 0
        if flip:
            U[:, k] *= -1
            V[:, k] *= -1
    return U, V


def select_weights(D, spec: WeightSpec = WeightSpec(), rank_tol: float = RANK_TOL) -> WahbaContext:
    """Weights that make ``K = D W D^T`` have eigenvalues ``spec.varsigma``."""
    D = np.asarray(D, dtype=float)
    n = D.shape[1]
    if n < 3:
        raise RankDeficient(f"D has only {n} columns")
    U, s, Vt = np.linalg.svd(D, full_matrices=True)
    if s[2] <= rank_tol * s[0]:
        raise RankDeficient(f"sigma_3/sigma_1 = {s[2] / s[0]:.3e}")
    U, V = _pin_signs(U, Vt.T)
    w0 = np.full(n, spec.tail_weight)
    w0[:3] = np.asarray(spec.varsigma) / s**2
    W = (V * w0) @ V.T
    W = 0.5 * (W + W.T)
    Delta = np.diag(spec.varsigma)
    K = U @ Delta @ U.T
    return WahbaContext(W=W, K=0.5 * (K + K.T), U_D=U, Delta=Delta, sigma=s)


def critical_rotations(ctx: WahbaContext) -> list[np.ndarray]:
    out = [np.eye(3)]
    for k in range(3):
        u = ctx.U_D[:, k]
        out.append(2.0 * np.outer(u, u) - np.eye(3))
    return out


def wahba_value(Q, K) -> float:
    """Trace inner product <I - Q, K>."""
    return float(np.trace((np.eye(3) - Q).T @ K))


def s_K(Q, K) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    return vex_unchecked(K @ Q - Q.T @ K)


def s_Gamma(R_hat, L_m, D, W) -> np.ndarray:
    Gamma = np.asarray(D) @ np.asarray(W) @ np.asarray(L_m).T
    return vex_unchecked(Gamma @ R_hat.T - R_hat @ Gamma.T)


def rotational_potential(R_hat, L_m, D, W) -> float:
    """Half the W-weighted squared misalignment of D and R_hat L^m."""
    E = np.asarray(D) - R_hat @ np.asarray(L_m)
    return 0.5 * float(np.sum(E * (E @ W)))


# --- per-epoch precomputation ------------------------------------------------


@dataclass(frozen=True)
class EpochTerms:
    """Everything the estimators need from one measurement epoch.

    With Gamma = D W L^T the rotational potential is
    ``(c0 - 2 tr(R Gamma^T)) / 2`` where ``c0 = tr(D W D^T) + tr(L W L^T)``,
    and its gradient is ``vex(Gamma R^T - R Gamma^T)``.
    """

    K: np.ndarray
    Gamma: np.ndarray
    c0: float
    p_bar: np.ndarray | None
    a_bar: np.ndarray | None
    n_beacons: int
    weighted: bool = True  # False when the eigenvalue-matching weights could not be formed

    def U0r(self, R_hat) -> float:
        return 0.5 * (self.c0 - 2.0 * float(np.sum(R_hat * self.Gamma)))

    def S_Gamma(self, R_hat) -> np.ndarray:
        return vex_unchecked(self.Gamma @ R_hat.T - R_hat @ self.Gamma.T)

    def y(self, g_hat) -> np.ndarray:
        if self.p_bar is None:
            return np.zeros(3)
        return self.p_bar - g_hat.R @ self.a_bar - g_hat.b


def epoch_terms(epoch, spec: WeightSpec = WeightSpec(), previous: EpochTerms | None = None) -> EpochTerms:
    """Build :class:`EpochTerms` from a :class:`~varpose.sensors.MeasurementSet`.

    On a rank-deficient ``D`` (or an unobservable epoch) only the inertial
    columns drive the gradient, with unit weights, and ``K`` is carried over
    from ``previous`` for diagnostics.
    """
    D, L = epoch.D, epoch.L_m
    p_bar = epoch.p_bar
    a_bar = epoch.a_bar_m
    try:
        ctx = select_weights(D, spec)
        W, K, weighted = ctx.W, ctx.K, True
    except RankDeficient:
        mask = epoch.inertial_mask.astype(float) if D.shape[1] else np.zeros(0)
        W = np.diag(mask)
        K = previous.K if previous is not None else D @ W @ D.T
        weighted = False
    if D.shape[1]:
        Gamma = D @ W @ L.T
        c0 = float(np.sum(D * (D @ W)) + np.sum(L * (L @ W)))
    else:
        Gamma, c0 = np.zeros((3, 3)), 0.0
    return EpochTerms(K, Gamma, c0, p_bar, a_bar, epoch.n_beacons, weighted)
