"""Serial 6-DoF arm model.

Classic Denavit-Hartenberg forward kinematics, geometric Jacobian in the
mm/deg chart, file-frame velocity mapping, two-file TCP calibration, and
kinematic integration of joint velocity commands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DEG, RigidTransform

SINGULARITY_CONDITION = 1e8


class SingularityError(RuntimeError):
    """Jacobian too ill-conditioned to invert; caller must halt motion."""


class DegenerateOrientationsError(ValueError):
    """Calibration orientations do not span rank 3."""


class ZeroBaselineError(ValueError):
    """The two file tips coincide; tool axis is unobservable."""


@dataclass
class DhTable:
    """Six revolute joints, rows of (a mm, alpha deg, d mm, theta_offset deg)."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, float)
        if self.rows.shape != (6, 4):
            raise ValueError("DH table must be 6x4 (a, alpha, d, theta_offset)")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("DH entries must be finite")


# Representative small 6R arm (the published system's table is not public);
# dimensions in mm chosen to match a compact desktop arm.
MECA500_LIKE = DhTable(np.array([
    # a      alpha     d      theta_offset
    [0.0,    -90.0,    135.0,   0.0],
    [135.0,    0.0,      0.0, -90.0],
    [38.0,   -90.0,      0.0,   0.0],
    [0.0,     90.0,    120.0,   0.0],
    [0.0,    -90.0,      0.0,   0.0],
    [0.0,      0.0,     70.0, 180.0],
]))

DEFAULT_JOINT_LIMITS = np.array([
    [-175.0, 175.0],
    [-70.0, 90.0],
    [-135.0, 70.0],
    [-170.0, 170.0],
    [-115.0, 115.0],
    [-180.0, 180.0],
])


@dataclass
class JointState:
    q: np.ndarray = field(default_factory=lambda: np.zeros(6))        # deg
    q_dot: np.ndarray = field(default_factory=lambda: np.zeros(6))    # deg/s

    def __post_init__(self):
        self.q = np.asarray(self.q, float).reshape(6)
        self.q_dot = np.asarray(self.q_dot, float).reshape(6)


@dataclass
class ToolCalibration:
    """Flange-to-file transform: t_F (mm), R_RF, and the working part length."""

    t_F: np.ndarray
    R_RF: np.ndarray
    working_part_length: float

    def __post_init__(self):
        self.t_F = np.asarray(self.t_F, float).reshape(3)
        self.R_RF = np.asarray(self.R_RF, float)


def _dh_link(a, alpha, d, theta):
    """Classic DH link transform, angles in degrees."""
    ct, st = np.cos(theta * DEG), np.sin(theta * DEG)
    ca, sa = np.cos(alpha * DEG), np.sin(alpha * DEG)
    return np.array([
        [ct, -st * ca,  st * sa, a * ct],
        [st,  ct * ca, -ct * sa, a * st],
        [0.0,      sa,       ca,      d],
        [0.0,     0.0,      0.0,    1.0],
    ])


def _link_frames(dh: DhTable, q):
    """4x4 frames of joints 0..6 (frame 0 = base identity)."""
    T = np.eye(4)
    frames = [T]
    for i in range(6):
        a, alpha, d, off = dh.rows[i]
        T = T @ _dh_link(a, alpha, d, q[i] + off)
        frames.append(T)
    return frames


def forward_kinematics(dh: DhTable, state: JointState) -> RigidTransform:
    """Flange pose in the base frame as the product of six link transforms."""
    T = _link_frames(dh, state.q)[-1]
    return RigidTransform(T[:3, :3], T[:3, 3])


def geometric_jacobian(dh: DhTable, state: JointState):
    """6x6 Jacobian mapping q_dot (deg/s) to (v mm/s, omega deg/s).

    Translation rows carry the deg->rad factor so that a 1 deg/s joint
    rate yields the correct mm/s tip speed; rotation rows are the joint
    axes (angular rate passes through in degrees unchanged).

    Returns (J, singular_flag); the flag is raised when the condition
    number exceeds 1e8.
    """
    frames = _link_frames(dh, state.q)
    p_end = frames[-1][:3, 3]
    J = np.zeros((6, 6))
    for i in range(6):
        z = frames[i][:3, 2]
        p = frames[i][:3, 3]
        J[:3, i] = np.cross(z, p_end - p) * DEG   # mm per deg
        J[3:, i] = z
    sv = np.linalg.svd(J, compute_uv=False)
    singular = sv[-1] <= 0 or sv[0] / sv[-1] > SINGULARITY_CONDITION
    return J, singular


def file_velocity_to_joint_rates(jac, tool: ToolCalibration, p_dot_F):
    """q_dot = J^-1 blockdiag(R_RF, R_RF) p_dot_F.

    p_dot_F is the file-frame twist (mm/s, deg/s). Raises SingularityError
    when the Jacobian is not safely invertible.
    """
    J = np.asarray(jac, float)
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > SINGULARITY_CONDITION:
        raise SingularityError("Jacobian condition number exceeds 1e8")
    v = np.asarray(p_dot_F, float).reshape(6)
    rotated = np.concatenate([tool.R_RF @ v[:3], tool.R_RF @ v[3:]])
    return np.linalg.solve(J, rotated)


def tcp_calibrate(poses_file1, poses_file2, working_len1) -> ToolCalibration:
    """Identify the flange-to-file transform from two pivot calibrations.

    Each argument is 4 flange poses (RigidTransform) recorded with the
    respective file tip held at one fixed point. Solves the stacked
    difference system (R_i - R_1) t = t_1 - t_i for each file tip in
    flange coordinates, takes the tool z-axis along the tip-to-tip
    direction, and places the file-frame origin a working-part length
    back from the first tip.
    """
    def pivot_tip(poses):
        rows, rhs = [], []
        R0, t0 = poses[0].rotation, poses[0].translation
        for p in poses[1:]:
            rows.append(p.rotation - R0)
            rhs.append(t0 - p.translation)
        A = np.vstack(rows)
        b = np.concatenate(rhs)
        if np.linalg.matrix_rank(A, tol=1e-8) < 3:
            raise DegenerateOrientationsError(
                "calibration orientations are rank deficient")
        sol, *_ = np.linalg.lstsq(A, b, rcond=None)
        return sol

    t_F1 = pivot_tip(poses_file1)
    t_F2 = pivot_tip(poses_file2)
    baseline = t_F1 - t_F2
    if np.linalg.norm(baseline) < 0.1:
        raise ZeroBaselineError("file tips coincide within 0.1 mm")
    z = baseline / np.linalg.norm(baseline)
    # complete the rotation: x = robot x-axis projected orthogonal to z
    x = np.array([1.0, 0.0, 0.0]) - z[0] * z
    if np.linalg.norm(x) < 1e-9:
        x = np.array([0.0, 1.0, 0.0]) - z[1] * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R_RF = np.column_stack([x, y, z])
    t_F = t_F1 - working_len1 * z
    return ToolCalibration(t_F=t_F, R_RF=R_RF,
                           working_part_length=float(working_len1))


def integrate_joint_command(state: JointState, q_dot_cmd, dt,
                            limits=DEFAULT_JOINT_LIMITS):
    """Explicit Euler joint update clamped to limits.

    Returns (new_state, clamped_mask).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q_dot = np.asarray(q_dot_cmd, float).reshape(6)
    q_new = state.q + q_dot * dt
    lo, hi = np.asarray(limits, float).T
    clamped = (q_new < lo) | (q_new > hi)
    q_new = np.clip(q_new, lo, hi)
    return JointState(q=q_new, q_dot=q_dot), clamped
