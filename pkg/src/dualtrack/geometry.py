"""Rigid-transform primitives: 4x4 poses, 6-DoF parameters, trajectories.

Conventions used everywhere in this package:

- A pose is a 4x4 homogeneous rigid transform (float64). Translations are
  in millimetres.
- A 6-DoF parameter vector is ``(tx, ty, tz, rx, ry, rz)`` where ``rx, ry,
  rz`` are Euler angles in degrees about the x, y and z axes. The rotation
  is composed intrinsically in Z-Y-X order::

      R = Rz(rz) @ Ry(ry) @ Rx(rx)

  so ``rz`` is yaw (applied first), ``ry`` pitch, ``rx`` roll. ``ry`` is
  the gimbal-sensitive angle and is kept in [-90, 90].
- A trajectory is an (N, 4, 4) stack of poses, N >= 1.

All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import warnings

import numpy as np

POSE_TOL = 1e-9
GIMBAL_MARGIN_DEG = 0.1


class GimbalLockWarning(UserWarning):
    """Euler decomposition requested within 0.1 degrees of +/-90 pitch."""


def identity_pose() -> np.ndarray:
    return np.eye(4, dtype=np.float64)


def is_valid_pose(T, tol: float = POSE_TOL) -> bool:
    """True when T is a 4x4 rigid homogeneous transform within tol."""
    T = np.asarray(T)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    if not np.array_equal(T[3], np.array([0.0, 0.0, 0.0, 1.0])):
        return False
    R = T[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0.0):
        return False
    return abs(float(np.linalg.det(R)) - 1.0) <= tol


def require_pose(T, tol: float = POSE_TOL, name: str = "pose") -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if not is_valid_pose(T, tol=tol):
        raise ValueError(f"{name} is not a valid rigid 4x4 pose")
    return T


def require_trajectory(traj, name: str = "trajectory") -> np.ndarray:
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim != 3 or traj.shape[1:] != (4, 4) or traj.shape[0] < 1:
        raise ValueError(f"{name} must have shape (N, 4, 4) with N >= 1")
    for i in range(traj.shape[0]):
        if not is_valid_pose(traj[i]):
            raise ValueError(f"{name}[{i}] is not a valid pose")
    return traj


def orthonormalize_rotation(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) (nearest rotation, polar sense)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(U @ Vt)))])
    return U @ D @ Vt


def _rot_x(deg: float) -> np.ndarray:
    c, s = np.cos(np.deg2rad(deg)), np.sin(np.deg2rad(deg))
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def _rot_y(deg: float) -> np.ndarray:
    c, s = np.cos(np.deg2rad(deg)), np.sin(np.deg2rad(deg))
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def _rot_z(deg: float) -> np.ndarray:
    c, s = np.cos(np.deg2rad(deg)), np.sin(np.deg2rad(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def euler_zyx_to_rotation(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation matrix for intrinsic Z-Y-X Euler angles in degrees."""
    return _rot_z(rz) @ _rot_y(ry) @ _rot_x(rx)


def params_to_matrix(p) -> np.ndarray:
    """Build a pose from a 6-vector (tx, ty, tz, rx, ry, rz); degrees, mm."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (6,):
        raise ValueError(f"expected a 6-vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("pose parameters must be finite")
    T = np.eye(4, dtype=np.float64)
    T[:3, :3] = euler_zyx_to_rotation(p[3], p[4], p[5])
    T[:3, 3] = p[:3]
    return T


def matrix_to_params(T) -> np.ndarray:
    """Decompose a pose into (tx, ty, tz, rx, ry, rz); degrees, mm.

    Issues a GimbalLockWarning when the pitch is within 0.1 degrees of
    +/-90; the returned values are still valid (roll fixed to 0 in the
    exactly-degenerate case) and reproduce the input matrix.
    """
    T = require_pose(T)
    R = T[:3, :3]
    sy = float(np.clip(-R[2, 0], -1.0, 1.0))
    ry = np.rad2deg(np.arcsin(sy))
    cy = np.sqrt(max(0.0, 1.0 - sy * sy))
    if 90.0 - abs(ry) < GIMBAL_MARGIN_DEG:
        warnings.warn(
            f"pitch {ry:.4f} deg is within {GIMBAL_MARGIN_DEG} deg of gimbal lock;"
            " roll/yaw split is ill-conditioned",
            GimbalLockWarning,
            stacklevel=2,
        )
    if cy < 1e-9:
        # Degenerate: only rx -/+ rz is determined. Pin rx = 0.
        rx = 0.0
        rz = np.rad2deg(np.arctan2(-R[0, 1], R[1, 1]))
    else:
        rx = np.rad2deg(np.arctan2(R[2, 1], R[2, 2]))
        rz = np.rad2deg(np.arctan2(R[1, 0], R[0, 0]))
    return np.array([T[0, 3], T[1, 3], T[2, 3], rx, ry, rz], dtype=np.float64)


def pose_inverse(T) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    R = T[:3, :3]
    out = np.eye(4, dtype=np.float64)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def compose(A, B) -> np.ndarray:
    """A @ B with the rotation re-projected onto SO(3) to bound drift."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    out = np.eye(4, dtype=np.float64)
    out[:3, :3] = orthonormalize_rotation(A[:3, :3] @ B[:3, :3])
    out[:3, 3] = A[:3, :3] @ B[:3, 3] + A[:3, 3]
    return out


def relative_transform(T_i, T_j) -> np.ndarray:
    """Pose of frame j expressed in frame i: inverse(T_i) @ T_j."""
    T_i = require_pose(T_i, name="T_i")
    T_j = require_pose(T_j, name="T_j")
    return compose(pose_inverse(T_i), T_j)


def compose_trajectory(rel_params, T_0=None) -> np.ndarray:
    """Chain relative 6-DoF steps into an (N, 4, 4) trajectory.

    ``rel_params`` has shape (N-1, 6); entry k is the pose of frame k+1 in
    frame k's coordinates. The output starts at ``T_0`` (identity when
    omitted) and each subsequent pose is the running product.
    """
    rel_params = np.asarray(rel_params, dtype=np.float64)
    if rel_params.size == 0:
        rel_params = rel_params.reshape(0, 6)
    if rel_params.ndim != 2 or rel_params.shape[1] != 6:
        raise ValueError(f"rel_params must have shape (N-1, 6), got {rel_params.shape}")
    T_0 = identity_pose() if T_0 is None else require_pose(T_0, name="T_0")
    out = np.empty((rel_params.shape[0] + 1, 4, 4), dtype=np.float64)
    out[0] = T_0
    for k in range(rel_params.shape[0]):
        out[k + 1] = compose(out[k], params_to_matrix(rel_params[k]))
    return out


def trajectory_to_relative_params(traj) -> np.ndarray:
    """Adjacent-frame relative 6-DoF parameters of a trajectory, (N-1, 6)."""
    traj = require_trajectory(traj)
    if len(traj) < 2:
        return np.empty((0, 6), dtype=np.float64)
    return np.stack(
        [matrix_to_params(relative_transform(traj[i], traj[i + 1])) for i in range(len(traj) - 1)]
    )


def rebase_trajectory(traj) -> np.ndarray:
    """Re-anchor a trajectory so its first pose becomes the identity."""
    traj = require_trajectory(traj)
    inv0 = pose_inverse(traj[0])
    return np.stack([compose(inv0, T) for T in traj])


def translations(traj) -> np.ndarray:
    """The (N, 3) translation columns of a trajectory."""
    traj = np.asarray(traj, dtype=np.float64)
    return traj[:, :3, 3]
