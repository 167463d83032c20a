"""SO(3) / SE(3) primitives.

Conventions: a pose ``g = (R, b)`` maps body-frame points into the inertial
frame, ``p = R a + b``.  Twists are 6-vectors ``[omega; nu]`` expressed in
the body frame, with ``g_dot = g * twist_matrix(xi)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-8
SKEW_TOL = 1e-9
ORTHO_TOL = 1e-12


class NotSkew(ValueError):
    """Matrix handed to :func:`vex3` has a non-negligible symmetric part."""


def hat3(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross3(u, v) -> np.ndarray:
    """Cross product of two 3-vectors (much cheaper than np.cross for single vectors)."""
    return np.array([u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]])


def vex3(M, tol: float = SKEW_TOL) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    sym = 0.5 * (M + M.T)
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(sym)) > tol * scale:
        raise NotSkew(f"symmetric part {np.max(np.abs(sym)):.3e} exceeds tolerance")
    A = 0.5 * (M - M.T)
    return np.array([A[2, 1], A[0, 2], A[1, 0]])


def vex_unchecked(M) -> np.ndarray:
    """vex of the skew part of ``M``, no tolerance check."""
    return 0.5 * np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])


def twist_matrix(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    T = np.zeros((4, 4))
    T[:3, :3] = hat3(xi[:3])
    T[:3, 3] = xi[3:]
    return T


def twist_from_matrix(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if np.any(np.abs(T[3]) > SKEW_TOL):
        raise ValueError("bottom row of a twist matrix must be zero")
    return np.concatenate([vex3(T[:3, :3]), T[:3, 3]])


def _rodrigues_coeffs(theta: float) -> tuple[float, float, float]:
    """Return (sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)."""
    t2 = theta * theta
    if theta < SMALL_ANGLE:
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s = np.sin(theta)
    h = np.sin(0.5 * theta) / theta
    B = 2.0 * h * h
    # t - sin t cancels badly well above SMALL_ANGLE
    if theta < 1e-2:
        C = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        C = (theta - s) / theta**3
    return s / theta, B, C


def exp_so3(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    A, B, _ = _rodrigues_coeffs(theta)
    S = hat3(v)
    return np.eye(3) + A * S + B * (S @ S)


def left_jacobian_so3(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    _, B, C = _rodrigues_coeffs(theta)
    S = hat3(v)
    return np.eye(3) + B * S + C * (S @ S)


def log_so3(R) -> np.ndarray:
    """Rotation vector of ``R`` (principal branch, angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    theta = principal_angle(R)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return 0.5 * w * (1.0 + theta**2 / 6.0)
    if np.pi - theta > 1e-6:
        return theta / (2.0 * np.sin(theta)) * w
    # near a half-turn: axis from the symmetric part
    B = 0.5 * (R + np.eye(3))
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if np.dot(axis, w) < 0:
        axis = -axis
    return theta * axis


def principal_angle(R) -> float:
    R = np.asarray(R, dtype=float)
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def is_rotation(R, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.max(np.abs(R.T @ R - np.eye(3))) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def project_to_so3(R) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (polar decomposition)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    S = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ S @ Vt


def orthonormality_drift(R) -> float:
    R = np.asarray(R, dtype=float)
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


@dataclass(frozen=True)
class Pose:
    R: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.b
        return T

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.R @ other.b + self.b)

    def inverse(self) -> "Pose":
        Rt = self.R.T
        return Pose(Rt, -Rt @ self.b)

    def apply(self, a) -> np.ndarray:
        return self.R @ np.asarray(a, dtype=float) + self.b

    def is_valid(self, tol: float = 1e-9) -> bool:
        return is_rotation(self.R, tol) and bool(np.all(np.isfinite(self.b)))


def exp_se3(xi, dt: float = 1.0) -> Pose:
    """Closed-form exponential of ``dt * twist_matrix(xi)``."""
    xi = dt * np.asarray(xi, dtype=float)
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    A, B, C = _rodrigues_coeffs(theta)
    S = hat3(w)
    S2 = S @ S
    R = np.eye(3) + A * S + B * S2
    V = np.eye(3) + B * S + C * S2
    return Pose(R, V @ v)


def adjoint_of_pose(g: Pose) -> np.ndarray:
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = g.R
    Ad[3:, :3] = hat3(g.b) @ g.R
    Ad[3:, 3:] = g.R
    return Ad


def adjoint_inverse_apply(g: Pose, zeta) -> np.ndarray:
    """``Ad(g^-1) @ zeta`` without forming the 6x6 matrix."""
    zeta = np.asarray(zeta, dtype=float)
    Rt = g.R.T
    w = Rt @ zeta[:3]
    v = Rt @ (zeta[3:] - cross3(g.b, zeta[:3]))
    return np.concatenate([w, v])


def adjoint_apply(g: Pose, zeta) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=float)
    w = g.R @ zeta[:3]
    return np.concatenate([w, cross3(g.b, w) + g.R @ zeta[3:]])


def ad_small(zeta) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=float)
    W = hat3(zeta[:3])
    ad = np.zeros((6, 6))
    ad[:3, :3] = W
    ad[3:, :3] = hat3(zeta[3:])
    ad[3:, 3:] = W
    return ad


def coad(zeta) -> np.ndarray:
    return ad_small(zeta).T


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed rotation via QR of a Gaussian matrix."""
    Q, Rq = np.linalg.qr(rng.normal(size=(3, 3)))
    Q = Q * np.sign(np.diag(Rq))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def random_pose(rng: np.random.Generator, scale: float = 5.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-scale, scale, size=3))
