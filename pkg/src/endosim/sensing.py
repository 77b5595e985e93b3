"""Force/torque sensing pipeline.

Raw readings from the wrist-mounted sensor contain the handpiece weight;
this module identifies the weight vector, centroid lever, and sensor
mounting yaw from calibration poses, removes gravity from raw readings,
transfers wrenches between the sensor and file frames, and simulates
sensor noise and quantization.

Units: force N, torque mN.m, lever arms mm. The cross product mm x N
lands in mN.m directly, so no conversion factor appears anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import rot_z

FORCE_QUANTUM = 0.01     # N
TORQUE_QUANTUM = 0.25    # mN.m


class CoplanarOrientationsError(ValueError):
    """Calibration orientations do not span enough gravity directions."""


@dataclass
class Wrench6:
    """Stacked force (N) and torque (mN.m) with a frame tag."""

    force: np.ndarray
    torque: np.ndarray
    frame: str = "S"

    def __post_init__(self):
        self.force = np.asarray(self.force, float).reshape(3)
        self.torque = np.asarray(self.torque, float).reshape(3)
        if not (np.all(np.isfinite(self.force)) and np.all(np.isfinite(self.torque))):
            raise ValueError("wrench components must be finite")
        if self.frame not in ("S", "F"):
            raise ValueError(f"unknown frame tag {self.frame!r}")

    def as_vector(self) -> np.ndarray:
        return np.r_[self.force, self.torque]


@dataclass
class GravityParams:
    """Identified handpiece weight, centroid lever, and mounting yaw."""

    w_h: np.ndarray                       # N, gravity-aligned frame
    r_h: np.ndarray                       # mm, sensor frame
    R_SR: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.w_h = np.asarray(self.w_h, float).reshape(3)
        self.r_h = np.asarray(self.r_h, float).reshape(3)
        self.R_SR = np.asarray(self.R_SR, float).reshape(3, 3)


def gravity_compensate(raw: Wrench6, R_RG, params: GravityParams) -> Wrench6:
    """Remove the handpiece weight from a raw sensor reading.

    f_s = f0 - R_SR R_RG w_h and tau_s = tau0 - r_h x (f0 - f_s), with
    the lever r_h in mm so the torque correction is in mN.m.
    """
    R_RG = np.asarray(R_RG, float)
    f_grav = params.R_SR @ R_RG @ params.w_h
    f_s = raw.force - f_grav
    tau_s = raw.torque - np.cross(params.r_h, f_grav)
    return Wrench6(f_s, tau_s, frame=raw.frame)


def _stage1_design(rotations, forces, gamma):
    """Residual of the force model at mounting yaw gamma.

    For fixed gamma the weight LSQ is closed form: the stacked design
    rows Rz(gamma) R_i are orthonormal blocks, so the normal equations
    reduce to an average. Returns (residual_sq, w_h)."""
    Rz = rot_z(gamma)
    g = np.zeros(3)
    for R, f in zip(rotations, forces):
        g += R.T @ (Rz.T @ f)
    w = g / len(rotations)
    res = 0.0
    for R, f in zip(rotations, forces):
        d = f - Rz @ (R @ w)
        res += d @ d
    return res, w


def identify_gravity_params(samples) -> GravityParams:
    """Identify weight, mounting yaw, and centroid lever from poses.

    samples: list of (R_RG, Wrench6) raw readings taken free of contact.
    Stage one fits the weight vector and the single mounting yaw to the
    forces (f_s = 0); stage two fits the centroid lever to the torques
    (tau_s = 0), which is linear once the per-pose gravity force is
    known. Raises CoplanarOrientationsError when the poses do not span
    three independent gravity directions.
    """
    rotations = [np.asarray(R, float) for R, _ in samples]
    forces = [np.asarray(w.force, float) for _, w in samples]
    torques = [np.asarray(w.torque, float) for _, w in samples]
    if len(samples) < 6:
        raise ValueError("need at least 6 calibration poses")

    # the raw forces span the same subspace as the gravity directions
    # seen in the flange frame; a coplanar set cannot pin down the
    # weight vector and the mounting yaw jointly
    dirs = np.array(forces)
    if np.linalg.matrix_rank(dirs, tol=1e-8 * max(1.0, np.abs(dirs).max())) < 3:
        raise CoplanarOrientationsError(
            "calibration orientations span fewer than 3 gravity directions")

    # coarse scan then bounded refinement of the scalar yaw
    grid = np.linspace(-180.0, 180.0, 721)
    costs = [_stage1_design(rotations, forces, g)[0] for g in grid]
    k = int(np.argmin(costs))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    opt = minimize_scalar(lambda g: _stage1_design(rotations, forces, g)[0],
                          bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    gamma = float(opt.x)
    _, w_h = _stage1_design(rotations, forces, gamma)
    # alternate the two closed-form subproblems to machine precision:
    # given w the optimal yaw is a 1-D Procrustes fit, given yaw the
    # optimal w is a block-orthonormal average
    for _ in range(10):
        A = B = 0.0
        for R, f in zip(rotations, forces):
            v = R @ w_h
            A += f[0] * v[0] + f[1] * v[1]
            B += f[1] * v[0] - f[0] * v[1]
        new_gamma = float(np.degrees(np.arctan2(B, A)))
        _, w_h = _stage1_design(rotations, forces, new_gamma)
        if abs(new_gamma - gamma) < 1e-14:
            gamma = new_gamma
            break
        gamma = new_gamma
    R_SR = rot_z(gamma)

    # stage two: tau0_i = r_h x f_g_i, linear in r_h
    rows, rhs = [], []
    for R, tau in zip(rotations, torques):
        f_g = R_SR @ R @ w_h
        # r x f = -skew(f) r
        S = np.array([[0.0, -f_g[2], f_g[1]],
                      [f_g[2], 0.0, -f_g[0]],
                      [-f_g[1], f_g[0], 0.0]])
        rows.append(-S)
        rhs.append(tau)
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    r_h, *_ = np.linalg.lstsq(A, b, rcond=None)
    return GravityParams(w_h=w_h, r_h=r_h, R_SR=R_SR)


def wrench_to_file_frame(w: Wrench6, R_FS, t_FS) -> Wrench6:
    """Transfer a sensor-frame wrench to the file frame.

    f_F = R_FS f_s and tau_F = R_FS tau_s + t_FS x f_F, with t_FS in mm
    so the moment arm lands in mN.m.
    """
    if w.frame != "S":
        raise ValueError("input wrench must be in frame S")
    R_FS = np.asarray(R_FS, float)
    t_FS = np.asarray(t_FS, float).reshape(3)
    f_F = R_FS @ w.force
    tau_F = R_FS @ w.torque + np.cross(t_FS, f_F)
    return Wrench6(f_F, tau_F, frame="F")


def simulate_sensor(true_wrench: Wrench6, sigma_f=FORCE_QUANTUM / 2,
                    sigma_tau=TORQUE_QUANTUM / 2, seed=None,
                    rng=None) -> Wrench6:
    """Add Gaussian noise, then quantize to the sensor resolutions.

    Resolution is 0.01 N / 0.25 mN.m; noise defaults to half a quantum.
    Deterministic given seed (or a caller-owned rng).
    """
    if sigma_f < 0 or sigma_tau < 0:
        raise ValueError("noise levels must be nonnegative")
    if rng is None:
        rng = np.random.default_rng(seed)
    f = true_wrench.force + rng.normal(0.0, sigma_f, 3) if sigma_f > 0 \
        else true_wrench.force.copy()
    tau = true_wrench.torque + rng.normal(0.0, sigma_tau, 3) if sigma_tau > 0 \
        else true_wrench.torque.copy()
    f = np.round(f / FORCE_QUANTUM) * FORCE_QUANTUM
    tau = np.round(tau / TORQUE_QUANTUM) * TORQUE_QUANTUM
    return Wrench6(f, tau, frame=true_wrench.frame)
