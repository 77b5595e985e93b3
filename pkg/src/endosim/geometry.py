"""Frame algebra shared by every module.

Conventions, used everywhere and nowhere else redefined:
  * poses are 6-vectors (x, y, z, phi, psi, theta): translation in mm,
    roll/pitch/yaw in degrees
  * the rotation built from a pose is R = Rz(theta) @ Ry(psi) @ Rx(phi)
    (fixed-axis roll-pitch-yaw)
  * angles are normalized to (-180, 180]
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEG = np.pi / 180.0

GIMBAL_TOL_DEG = 1e-6   # |psi - 90| below this flags gimbal lock


def wrap_angle(a):
    """Normalize degrees to (-180, 180]."""
    w = -((-np.asarray(a, float) + 180.0) % 360.0 - 180.0)
    return w


def rot_x(deg):
    c, s = np.cos(deg * DEG), np.sin(deg * DEG)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg):
    c, s = np.cos(deg * DEG), np.sin(deg * DEG)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg):
    c, s = np.cos(deg * DEG), np.sin(deg * DEG)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_matrix(phi, psi, theta):
    """R = Rz(theta) Ry(psi) Rx(phi), angles in degrees."""
    return rot_z(theta) @ rot_y(psi) @ rot_x(phi)


def rpy_matrix_derivs(phi, psi, theta):
    """Rotation and its three partial derivatives w.r.t. the angles.

    Returns (R, (dR/dphi, dR/dpsi, dR/dtheta)), derivatives per degree.
    """
    p, s, t = phi * DEG, psi * DEG, theta * DEG
    cx, sx = np.cos(p), np.sin(p)
    cy, sy = np.cos(s), np.sin(s)
    cz, sz = np.cos(t), np.sin(t)
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    Ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    Rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    dRx = np.array([[0.0, 0.0, 0.0], [0.0, -sx, -cx], [0.0, cx, -sx]]) * DEG
    dRy = np.array([[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]]) * DEG
    dRz = np.array([[-sz, -cz, 0.0], [cz, -sz, 0.0], [0.0, 0.0, 0.0]]) * DEG
    R = Rz @ Ry @ Rx
    return R, (Rz @ Ry @ dRx, Rz @ dRy @ Rx, dRz @ Ry @ Rx)


@dataclass
class RigidTransform:
    """SO(3) rotation plus translation (mm)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, float)
        self.translation = np.asarray(self.translation, float).reshape(3)
        if self.rotation.shape != (3, 3):
            raise ValueError("rotation must be 3x3")

    @classmethod
    def identity(cls):
        return cls()

    def is_valid(self, tol=1e-9):
        R = self.rotation
        return (np.linalg.norm(R.T @ R - np.eye(3)) <= tol
                and abs(np.linalg.det(R) - 1.0) <= tol)

    def apply(self, points):
        """Map points (3,) or (n, 3) through the transform."""
        pts = np.asarray(points, float)
        return pts @ self.rotation.T + self.translation

    def as_matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


def _reorthonormalize(R):
    # nearest rotation via SVD; only invoked when drift is detectable
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


def compose(t1: RigidTransform, t2: RigidTransform) -> RigidTransform:
    """t1 * t2, re-orthonormalized if rotation drift exceeds 1e-12."""
    R = t1.rotation @ t2.rotation
    if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-12:
        R = _reorthonormalize(R)
    return RigidTransform(R, t1.rotation @ t2.translation + t1.translation)


def invert(t: RigidTransform) -> RigidTransform:
    Rt = t.rotation.T
    return RigidTransform(Rt, -Rt @ t.translation)


def pose_to_transform(pose) -> RigidTransform:
    """(x, y, z, phi, psi, theta) -> RigidTransform."""
    p = np.asarray(pose, float).reshape(6)
    return RigidTransform(rpy_matrix(p[3], p[4], p[5]), p[:3])


def transform_to_pose(t: RigidTransform):
    """Inverse chart of pose_to_transform.

    Returns (pose, gimbal_flag). At |psi - 90 deg| < 1e-6 the chart is
    singular; phi is then fixed to 0 and the flag is set.
    """
    R = t.rotation
    sy = -R[2, 0]
    sy = min(1.0, max(-1.0, sy))
    psi = np.degrees(np.arcsin(sy))
    gimbal = abs(abs(psi) - 90.0) < GIMBAL_TOL_DEG
    if gimbal:
        # R reduces to a function of (theta -/+ phi); fix phi = 0
        phi = 0.0
        theta = np.degrees(np.arctan2(-R[0, 1], R[1, 1]))
    else:
        phi = np.degrees(np.arctan2(R[2, 1], R[2, 2]))
        theta = np.degrees(np.arctan2(R[1, 0], R[0, 0]))
    pose = np.array([t.translation[0], t.translation[1], t.translation[2],
                     wrap_angle(phi), wrap_angle(psi), wrap_angle(theta)])
    return pose, gimbal


def rotation_distance(r1, r2):
    """Angle of r1^T r2 in degrees, in [0, 180]."""
    R = np.asarray(r1, float).T @ np.asarray(r2, float)
    c = (np.trace(R) - 1.0) / 2.0
    return np.degrees(np.arccos(min(1.0, max(-1.0, c))))
