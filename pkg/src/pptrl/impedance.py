"""Cartesian impedance law with an SO(3) orientation error."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidRotationError

ROTATION_TOL = 1e-9


def hat(v) -> np.ndarray:
    """Skew matrix with ``hat(v) @ u == cross(v, u)``; batched over leading axes."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def vee(S) -> np.ndarray:
    """Inverse of :func:`hat`: reads ``(S[2,1], S[0,2], S[1,0])``."""
    S = np.asarray(S, dtype=float)
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def rot_z(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(theta.shape + (3, 3))
    out[..., 0, 0], out[..., 0, 1] = c, -s
    out[..., 1, 0], out[..., 1, 1] = s, c
    out[..., 2, 2] = 1.0
    return out


def check_rotation(R, tol: float = ROTATION_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise InvalidRotationError(f"expected (..., 3, 3), got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvalidRotationError("rotation has non-finite entries")
    gram = np.swapaxes(R, -1, -2) @ R
    if np.max(np.abs(gram - np.eye(3))) > tol or np.max(np.abs(np.linalg.det(R) - 1.0)) > tol:
        raise InvalidRotationError("matrix is not a proper rotation")
    return R


def _check_spd(M, name):
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3) or not np.allclose(M, M.T, atol=1e-12) or np.linalg.eigvalsh(M)[0] <= 0:
        raise InvalidInputError(f"{name} must be a symmetric positive definite 3x3 matrix")
    return M


@dataclass(frozen=True)
class ImpedanceGains:
    K_p: np.ndarray
    K_d: np.ndarray
    K_pR: np.ndarray
    K_dR: np.ndarray

    def __post_init__(self):
        for name in ("K_p", "K_d", "K_pR", "K_dR"):
            object.__setattr__(self, name, _check_spd(getattr(self, name), name))

    @classmethod
    def diagonal(cls, K_p, K_d, K_pR, K_dR) -> "ImpedanceGains":
        """Gains from per-axis values (scalars broadcast to all three axes)."""
        def diag(v):
            return np.diag(np.broadcast_to(np.asarray(v, dtype=float), (3,)))
        return cls(diag(K_p), diag(K_d), diag(K_pR), diag(K_dR))

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("K_p", "K_d", "K_pR", "K_dR")}

    @classmethod
    def from_dict(cls, data: dict) -> "ImpedanceGains":
        def mat(v):
            v = np.asarray(v, dtype=float)
            return np.diag(np.broadcast_to(v, (3,))) if v.ndim < 2 else v
        return cls(*(mat(data[k]) for k in ("K_p", "K_d", "K_pR", "K_dR")))


@dataclass(frozen=True)
class PoseTarget:
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "orientation", check_rotation(self.orientation))
        for name in ("position", "linear_velocity", "angular_velocity"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise InvalidInputError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))


@dataclass(frozen=True)
class WrenchTwist:
    wrench: np.ndarray
    twist: np.ndarray

    def __post_init__(self):
        for name in ("wrench", "twist"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (6,) or not np.all(np.isfinite(v)):
                raise InvalidInputError(f"{name} must be a finite 6-vector")
            object.__setattr__(self, name, v)

    @property
    def power(self) -> float:
        return float(self.wrench @ self.twist)


def orientation_error(R_d, R) -> np.ndarray:
    """``0.5 * vee(R_d^T R - R^T R_d)``; batched over leading axes."""
    R_d, R = check_rotation(R_d), check_rotation(R)
    M = np.swapaxes(R_d, -1, -2) @ R
    return 0.5 * vee(M - np.swapaxes(M, -1, -2))


def restoring_rotation_error(R_d, R) -> np.ndarray:
    """World-frame orientation error that a positive stiffness drives to zero.

    The formula is evaluated with the arguments swapped (target relative to
    current) so its sign agrees with ``e_x = x_d - x``, then rotated from the
    current body frame into the world frame.
    """
    return np.einsum("...ij,...j->...i", R, orientation_error(R, R_d))


def compute_wrench(gains: ImpedanceGains, target: PoseTarget, current_pose: Pose, current_twist) -> np.ndarray:
    """Commanded 6-D wrench ``[f; tau]``.

    ``f = K_p e_x + K_d (v_d - v)`` and ``tau = K_pR e_R + K_dR (w_d - w)``,
    everything in the world frame.
    """
    twist = np.asarray(current_twist, dtype=float)
    if twist.shape != (6,):
        raise InvalidInputError("current twist must be a 6-vector")
    R = check_rotation(current_pose.orientation)
    e_x = target.position - np.asarray(current_pose.position, dtype=float)
    de_x = target.linear_velocity - twist[:3]
    e_R = restoring_rotation_error(target.orientation, R)
    w_e = target.angular_velocity - twist[3:]
    f = gains.K_p @ e_x + gains.K_d @ de_x
    tau = gains.K_pR @ e_R + gains.K_dR @ w_e
    return np.concatenate([f, tau])


def compute_wrench_batch(gains: ImpedanceGains, x_d, R_d, v_d, w_d, x, R, v, w) -> np.ndarray:
    """Vectorized :func:`compute_wrench` over a leading environment axis.

    Rotations are trusted here (the simulator builds them from yaw angles);
    returns shape ``(N, 6)``.
    """
    M = np.swapaxes(R, -1, -2) @ R_d
    e_body = 0.5 * vee(M - np.swapaxes(M, -1, -2))
    e_R = np.einsum("nij,nj->ni", R, e_body)
    f = (x_d - x) @ gains.K_p.T + (v_d - v) @ gains.K_d.T
    tau = e_R @ gains.K_pR.T + (w_d - w) @ gains.K_dR.T
    return np.concatenate([f, tau], axis=-1)
