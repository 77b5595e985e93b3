"""Simulated treatment plant.

Everything the controller talks to when there is no hardware: a patient
motion generator, a parametric root-canal model (degree-6 centerline
per plane, conical radius profile), penalty-based file-canal contact
with a cut-frontier abstraction of material removal, string and wrench
sensor models, and a fixed-step closed-loop episode runner that wires
them to the two-rate controller and the workflow automaton.

Frames. {P} is the patient frame; the measured relative pose is the
pose of the file-tip frame in {P}, as a 6-vector (x, y, z mm, roll,
pitch, yaw deg). The file points down -z: its z axis runs from tip to
clamp, so pressing apically means moving -z and the axial contact
reaction on the file is +z. The wrench frame {F} shares the tip frame's
orientation but sits at the force sensor, file.length up the axis, so
lateral wall forces at depth appear with their full lever arm.

The canal lives in its own frame with the entrance at the origin and
the lumen along -z down to -length; scenarios place it in {P} by the
entrance height canal_z.

Units: mm, deg, N, mN.m, s throughout (note 1 N.mm = 1 mN.m, so torque
sums of mm lever arms times N forces need no conversion).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from .control import (ControllerParams, ControlMode, HybridState,
                      compose_wrench_error, hybrid_step, tuned_params)
from .flexfile import FileModel, protaper_sx_f3
from .geometry import (DEG, compose, invert, pose_to_transform, rpy_matrix,
                       transform_to_pose, wrap_angle)
from .ptm import (POT_STROKE, PoseEstimate, PtmGeometry, _residual_jacobian,
                  pose_estimate, string_lengths)
from .sensing import Wrench6, simulate_sensor
from .workflow import (DentistEvent, Emergency, FsmInputs, FsmState, Phase,
                       fsm_step, safety_monitor)

TRAJECTORY_KINDS = ("static", "slanted_circle", "sinusoid_angles",
                    "random_walk")

PHASE_CODES = {Phase.IDLE: 0, Phase.INSERTION: 1,
               Phase.CLEANING_SHAPING: 2, Phase.REVERSE: 3,
               Phase.DISENGAGE: 4}
EMERGENCY_CODES = {Emergency.NONE: 0, Emergency.HRC_FALLBACK: 1,
                   Emergency.FREEZE: 2}


# ---------------------------------------------------------------------------
# patient motion


@dataclass(frozen=True)
class PatientTrajectory:
    """One component of head motion; episodes sum a list of these.

    speed is the path speed of the slanted circle or the RMS speed of
    the random walk, in mm/s. The angle sinusoids use amplitude (deg)
    and period (s); the default period keeps the peak angular rate
    under 1 deg/s at 5 deg amplitude.
    """

    kind: str = "static"
    speed: float = 2.0           # mm/s
    radius: float = 20.0         # mm, slanted circle
    depth: float = 20.0          # mm, total vertical excursion of the circle
    amplitude: float = 5.0       # deg, angle sinusoids
    period: float = 32.0         # s, angle sinusoids
    seed: int = 0                # random walk spectrum

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.speed <= 0 or self.radius <= 0 or self.period <= 0:
            raise ValueError("speed, radius and period must be positive")
        if not 0 <= self.depth <= 2 * self.radius:
            raise ValueError("circle depth cannot exceed its diameter")

    def _walk_table(self):
        # sum of incommensurate sines per axis, scaled to the target
        # RMS speed; built once, deterministic in the seed
        cached = getattr(self, "_walk", None)
        if cached is not None:
            return cached
        rng = np.random.default_rng(self.seed)
        freqs = np.geomspace(0.03, 0.3, 6)          # Hz
        omega = 2.0 * np.pi * freqs
        amp = rng.normal(0.0, 1.0, (3, 6)) / omega  # flat velocity content
        phase = rng.uniform(0.0, 2.0 * np.pi, (3, 6))
        v_rms = np.sqrt(np.sum((amp * omega) ** 2) / 2.0)
        amp *= self.speed / v_rms
        table = (amp, omega, phase)
        object.__setattr__(self, "_walk", table)
        return table


def patient_pose(traj: PatientTrajectory, t: float) -> np.ndarray:
    """6-DoF head displacement at time t, zero at t = 0."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    disp = np.zeros(6)
    if traj.kind == "static":
        return disp
    if traj.kind == "slanted_circle":
        # circle of the given radius on a plane tilted so the path's
        # total vertical excursion equals depth; constant path speed
        alpha = np.arcsin(min(traj.depth / (2.0 * traj.radius), 1.0))
        phi = traj.speed * t / traj.radius
        e1 = np.array([1.0, 0.0, 0.0])
        e2 = np.array([0.0, np.cos(alpha), np.sin(alpha)])
        disp[:3] = traj.radius * ((np.cos(phi) - 1.0) * e1 + np.sin(phi) * e2)
        return disp
    if traj.kind == "sinusoid_angles":
        phases = np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
        arg = 2.0 * np.pi * t / traj.period + phases
        disp[3:] = traj.amplitude * (np.sin(arg) - np.sin(phases))
        return disp
    amp, omega, phase = traj._walk_table()
    arg = omega[None, :] * t + phase
    disp[:3] = np.sum(amp * (np.sin(arg) - np.sin(phase)), axis=1)
    return disp


def _summed_displacement(trajectories, t):
    disp = np.zeros(6)
    for traj in trajectories:
        disp += patient_pose(traj, t)
    return disp


# ---------------------------------------------------------------------------
# canal geometry


@dataclass
class CanalModel:
    """Parametric root canal in its own frame.

    The centerline is (x(z), y(z), z) with degree-6 polynomials per
    plane (coefficients ascending in z), the entrance at the origin and
    the apex at z = -length. The lumen radius shrinks linearly in arc
    length from entrance_radius to apex_radius.

    Contact parameters: wall_stiffness acts on the lateral overlap at a
    wall sample in series with the file's bending compliance at that
    sample's lever arm; wall_damping acts on the overlap rate;
    axial_stiffness turns the overdrive past the cut frontier into the
    axial resistance; torque_rate turns it into axial torque at the
    nominal 150 rpm; cut_rate advances the frontier per newton of axial
    force at 150 rpm.
    """

    g: np.ndarray = field(default_factory=lambda: np.zeros(7))
    h: np.ndarray = field(default_factory=lambda: np.zeros(7))
    length: float = 14.0            # mm span along z
    entrance_radius: float = 0.45   # mm
    apex_radius: float = 0.2        # mm
    wall_stiffness: float = 10.0    # N/mm
    wall_damping: float = 0.05      # N.s/mm
    cut_rate: float = 0.2           # mm/s per N at 150 rpm
    axial_stiffness: float = 10.0   # N/mm of overdrive
    torque_rate: float = 40.0       # mN.m per mm of overdrive at 150 rpm

    def __post_init__(self):
        self.g = np.asarray(self.g, float).reshape(7)
        self.h = np.asarray(self.h, float).reshape(7)
        if self.length <= 0:
            raise ValueError("canal length must be positive")
        if not 0.0 < self.apex_radius < self.entrance_radius <= 0.75:
            raise ValueError("need 0 < apex_radius < entrance_radius <= 0.75")
        self._arc = None

    # -- centerline ---------------------------------------------------------

    def centerline_point(self, z):
        z = np.asarray(z, float)
        return np.stack([npoly.polyval(z, self.g),
                         npoly.polyval(z, self.h),
                         z], axis=-1)

    def centerline_slopes(self, z):
        z = np.asarray(z, float)
        return (npoly.polyval(z, npoly.polyder(self.g)),
                npoly.polyval(z, npoly.polyder(self.h)))

    def _arc_table(self):
        if self._arc is None:
            zs = np.linspace(-self.length, 0.0, 4097)
            dx, dy = self.centerline_slopes(zs)
            speed = np.sqrt(1.0 + dx * dx + dy * dy)
            cum = np.concatenate(([0.0], np.cumsum(
                0.5 * (speed[1:] + speed[:-1]) * np.diff(zs))))
            # arc length measured downward from the entrance at z = 0
            self._arc = (zs, cum[-1] - cum)
        return self._arc

    def arc_from_entrance(self, z):
        zs, s = self._arc_table()
        return np.interp(z, zs, s)

    @property
    def total_arc(self) -> float:
        return float(self._arc_table()[1][0])

    def radius_at_arc(self, s):
        frac = np.clip(np.asarray(s, float) / self.total_arc, 0.0, 1.0)
        return self.entrance_radius + (self.apex_radius
                                       - self.entrance_radius) * frac

    # -- stock shapes -------------------------------------------------------

    @classmethod
    def straight(cls, length=14.0, **kwargs) -> "CanalModel":
        return cls(length=length, **kwargs)

    @classmethod
    def curved(cls, length=14.0, apex_offset=(1.5, 0.8), **kwargs) -> "CanalModel":
        """Gentle curve: zero slope at the entrance, the given lateral
        apex offset, quadratic in x and cubic in y."""
        g = np.zeros(7)
        h = np.zeros(7)
        g[2] = apex_offset[0] / length ** 2
        h[3] = -apex_offset[1] / length ** 3
        return cls(g=g, h=h, length=length, **kwargs)


def fit_centerline(points):
    """Least-squares degree-6 fit x(z), y(z) through 3D points.

    Returns (g, h), both ascending-order length-7 coefficient arrays.
    Raises numpy.linalg.LinAlgError when fewer than 7 distinct z values
    are supplied (the normal system is rank deficient).
    """
    pts = np.asarray(points, float).reshape(-1, 3)
    z = pts[:, 2]
    if np.unique(z).size < 7:
        raise np.linalg.LinAlgError(
            "degree-6 centerline fit needs at least 7 distinct z values")
    V = z[:, None] ** np.arange(7)[None, :]
    g, *_ = np.linalg.lstsq(V, pts[:, 0], rcond=None)
    h, *_ = np.linalg.lstsq(V, pts[:, 1], rcond=None)
    return g, h


def centerline_length(canal: CanalModel, z_from: float, z_to: float) -> float:
    """Arc length of the centerline between two z planes (adaptive
    quadrature, absolute tolerance well under 1e-6 mm)."""
    lo, hi = sorted((float(z_from), float(z_to)))
    if lo < -canal.length - 1e-9 or hi > 1e-9:
        raise ValueError("z range outside the canal")

    def speed(z):
        dx, dy = canal.centerline_slopes(z)
        return np.sqrt(1.0 + dx * dx + dy * dy)

    val, _ = quad(speed, lo, hi, epsabs=1e-9, epsrel=1e-10, limit=200)
    return val


def insertion_depth(tip, canal: CanalModel) -> float:
    """Arc-length coordinate of the tip's projection on the centerline.

    tip is a 3-vector in the canal frame. Inside the canal the value is
    the arc length from the entrance to the nearest centerline point;
    past the entrance it is minus the distance to the entrance point,
    so the sign tells inside from outside and the map stays continuous.
    Beyond the apex it saturates at the total arc length.
    """
    tip = np.asarray(tip, float).reshape(3)
    zs = np.linspace(-canal.length, 0.0, 257)
    d2 = np.sum((canal.centerline_point(zs) - tip) ** 2, axis=1)
    i = int(np.argmin(d2))

    entrance = canal.centerline_point(0.0)
    if i == 256:
        dx, dy = canal.centerline_slopes(0.0)
        outward = np.array([dx, dy, 1.0])
        if float(np.dot(tip - entrance, outward)) > 0.0:
            return -float(np.linalg.norm(tip - entrance))
    if i == 0:
        apex = canal.centerline_point(-canal.length)
        dx, dy = canal.centerline_slopes(-canal.length)
        if float(np.dot(tip - apex, np.array([dx, dy, 1.0]))) < 0.0:
            return canal.total_arc

    def d2_at(z):
        return float(np.sum((canal.centerline_point(z) - tip) ** 2))

    lo = zs[max(i - 1, 0)]
    hi = zs[min(i + 1, 256)]
    res = minimize_scalar(d2_at, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    # the bounded solver cannot land exactly on an interval edge, so let
    # the edges compete with its answer
    cands = [float(res.x), lo, hi]
    z_star = min(cands, key=d2_at)
    z_star = float(np.clip(z_star, -canal.length, 0.0))
    if z_star >= 0.0:
        return 0.0
    if z_star <= -canal.length:
        return canal.total_arc
    return centerline_length(canal, z_star, 0.0)


# ---------------------------------------------------------------------------
# contact


@dataclass(frozen=True)
class ContactInfo:
    depth: float            # mm, tip arc coordinate
    overdrive: float        # mm past the cut frontier
    frontier_rate: float    # mm/s of material removal
    n_contacts: int
    normal_load: float      # N, sum of wall normal forces
    max_penetration: float  # mm


_SAMPLE_STEP = 0.5   # mm along the file axis
_EDGE_TAPER = 0.5    # mm, stiffness ramp at entrance and apex


def contact_wrench(canal: CanalModel, file_pose, file: FileModel,
                   depth=None, spindle_rpm=0.0, spindle_direction=0,
                   cut_frontier=0.0, pose_rate=None):
    """Penalty contact between the file and the canal walls.

    file_pose is the tip-frame pose in the canal frame. The file axis
    is sampled every 0.5 mm from the tip toward the clamp; each sample
    inside the lumen is tested against the local clearance (lumen
    radius minus file radius) in the sample's horizontal cross-section.
    A sample overlapping the wall by pen feels a restoring force of
    k_eff * pen + wall_damping * pen_rate, where k_eff is the wall
    stiffness in series with the file's cantilever compliance at the
    sample's distance from the clamp — a wall contact near the clamp
    sees the full wall stiffness, one near the tip mostly bends the
    file. Forces taper linearly over the first 0.5 mm at the entrance
    and apex so the wrench stays continuous as samples cross the ends.

    The axial channel is driven by the overdrive past the cut frontier:
    reaction axial_stiffness * overdrive along the outward centerline
    tangent, axial torque torque_rate * overdrive scaled by spindle
    speed and signed by its direction, and a frontier advance rate of
    cut_rate * f_axial * (rpm/150) while the spindle runs forward.

    Everything is summed into the sensor-frame wrench {F} (same
    orientation as the tip frame, origin file.length up the axis).
    Returns (Wrench6 in {F}, ContactInfo).
    """
    pose = np.asarray(file_pose, float).reshape(6)
    R = rpy_matrix(pose[3], pose[4], pose[5])
    tip = pose[:3]
    u_out = R[:, 2]                       # file axis, tip toward clamp

    if depth is None:
        depth = insertion_depth(tip, canal)

    if pose_rate is not None:
        rate = np.asarray(pose_rate, float).reshape(6)
        v_tip = rate[:3]
        omega = rate[3:] * DEG            # small-angle rpy rate as rad/s
    else:
        v_tip = np.zeros(3)
        omega = np.zeros(3)

    d_k = np.arange(0.0, file.length + 1e-9, _SAMPLE_STEP)
    q = tip[None, :] + d_k[:, None] * u_out[None, :]
    z = q[:, 2]
    inside = (z < 0.0) & (z > -canal.length)

    f_p = np.zeros(3)                     # net force on the file, canal frame
    tau_f = np.zeros(3)                   # torque about the sensor, {F}
    n_contacts = 0
    normal_load = 0.0
    max_pen = 0.0

    if np.any(inside):
        zi = z[inside]
        di = d_k[inside]
        qi = q[inside]
        cx = npoly.polyval(zi, canal.g)
        cy = npoly.polyval(zi, canal.h)
        off = qi[:, :2] - np.stack([cx, cy], axis=1)
        dist = np.linalg.norm(off, axis=1)
        clearance = canal.radius_at_arc(canal.arc_from_entrance(zi)) \
            - 0.5 * file.effective_diameter
        pen = dist - clearance
        touching = (pen > 0.0) & (dist > 1e-12)
        if np.any(touching):
            off = off[touching]
            dist = dist[touching]
            pen = pen[touching]
            di = di[touching]
            qi = qi[touching]
            zi = zi[touching]
            n_hat = off / dist[:, None]
            arm = file.length - di        # lever from the clamp, mm
            k_eff = 1.0 / (1.0 / canal.wall_stiffness
                           + arm ** 3 / (3.0 * file.bending_stiffness))
            v_q = v_tip[None, :] + np.cross(omega[None, :], qi - tip[None, :])
            pen_rate = np.sum(n_hat * v_q[:, :2], axis=1)
            taper = np.clip(-zi / _EDGE_TAPER, 0.0, 1.0) \
                * np.clip((zi + canal.length) / _EDGE_TAPER, 0.0, 1.0)
            fn = np.maximum(k_eff * pen + canal.wall_damping * pen_rate,
                            0.0) * taper
            forces = -fn[:, None] * np.concatenate(
                [n_hat, np.zeros((len(fn), 1))], axis=1)
            f_p += forces.sum(axis=0)
            f_f = forces @ R              # rows R.T @ force
            tau_f[0] += np.sum(arm * f_f[:, 1])
            tau_f[1] -= np.sum(arm * f_f[:, 0])
            n_contacts = int(np.count_nonzero(fn > 0.0))
            normal_load = float(np.sum(fn))
            max_pen = float(np.max(pen))

    # axial channel: overdrive past the cut frontier
    overdrive = max(depth - cut_frontier, 0.0)
    frontier_rate = 0.0
    if overdrive > 0.0:
        z_tip = float(np.clip(tip[2], -canal.length, 0.0))
        dx, dy = canal.centerline_slopes(z_tip)
        t_out = np.array([dx, dy, 1.0])
        t_out /= np.linalg.norm(t_out)
        depth_rate = -float(np.dot(t_out, v_tip))
        f_ax = max(canal.axial_stiffness * overdrive
                   + canal.wall_damping * depth_rate, 0.0)
        f_axial = f_ax * t_out
        f_p += f_axial
        f_axial_f = R.T @ f_axial
        # r x f with r = (0, 0, -file.length) in {F}
        tau_f[0] += file.length * f_axial_f[1]
        tau_f[1] -= file.length * f_axial_f[0]
        tau_f[2] += spindle_direction * (spindle_rpm / 150.0) \
            * canal.torque_rate * overdrive
        if spindle_direction > 0 and spindle_rpm > 0:
            frontier_rate = canal.cut_rate * f_ax * (spindle_rpm / 150.0)

    wrench = Wrench6(R.T @ f_p, tau_f, frame="F")
    info = ContactInfo(depth=float(depth), overdrive=float(overdrive),
                       frontier_rate=float(frontier_rate),
                       n_contacts=n_contacts, normal_load=normal_load,
                       max_penetration=max_pen)
    return wrench, info


# ---------------------------------------------------------------------------
# string sensing


@dataclass(frozen=True)
class StringMeasurement:
    lengths: np.ndarray          # mm, noisy and quantized
    stroke_exceeded: np.ndarray  # bool per string, true travel out of range


def measure_strings(geom: PtmGeometry, pose, sigma=0.05, quantization=0.2,
                    seed=None, rng=None) -> StringMeasurement:
    """Simulated string potentiometer readout at a true relative pose.

    Gaussian noise of the given sigma is added to the true lengths,
    then the result is quantized to the sensor resolution (0.2 mm by
    default; 0 disables either stage). A string whose true travel from
    the home length exceeds the potentiometer stroke is flagged.
    """
    if sigma < 0 or quantization < 0:
        raise ValueError("sigma and quantization must be nonnegative")
    true_l = string_lengths(geom, pose)
    home = string_lengths(geom, np.zeros(6))
    flags = np.abs(true_l - home) > POT_STROKE
    lengths = true_l.copy()
    if sigma > 0:
        if rng is None:
            rng = np.random.default_rng(seed)
        lengths = lengths + rng.normal(0.0, sigma, 6)
    if quantization > 0:
        lengths = np.round(lengths / quantization) * quantization
    return StringMeasurement(lengths=lengths, stroke_exceeded=flags)


# ---------------------------------------------------------------------------
# pose readout conditioning


def _map_estimate(geom: PtmGeometry, l_meas, prior, sigma_l, sigma_prior,
                  max_iter=25, tol=1e-11) -> PoseEstimate:
    """Prior-anchored pose estimate for quantized string readouts.

    Quantized lengths are consistent with several poses (the angular
    observability of six strings is weak), so a bare root-finder hops
    between them. The tracking driver instead minimizes the weighted
    string residual plus a motion-prior penalty (p - prior)/sigma_prior;
    a far-away root costs orders of magnitude more in the prior term
    than it can gain in residual, so the estimate stays on the branch
    the pose actually moved along, and the prior averages quantization
    cells over time. Plain damped Gauss-Newton; the prior rows keep the
    augmented system full rank.
    """
    prior = np.asarray(prior, float).reshape(6)
    w_l = 1.0 / max(float(sigma_l), 1e-6)
    w_p = 1.0 / np.maximum(np.asarray(sigma_prior, float).reshape(6), 1e-9)
    p = prior.copy()

    def terms(p_):
        r, J = _residual_jacobian(geom, p_, l_meas)
        d = _pose_diff(p_, prior)
        return r, J, d

    r, J, d = terms(p)
    cost = float(np.sum((r * w_l) ** 2) + np.sum((d * w_p) ** 2))
    for it in range(1, max_iter + 1):
        A = np.vstack([J * w_l, np.diag(w_p)])
        rhs = -np.concatenate([r * w_l, d * w_p])
        step = np.linalg.lstsq(A, rhs, rcond=None)[0]
        alpha = 1.0
        for _ in range(10):
            p_try = p + alpha * step
            p_try[3:] = wrap_angle(p_try[3:])
            r2, J2, d2 = terms(p_try)
            c2 = float(np.sum((r2 * w_l) ** 2) + np.sum((d2 * w_p) ** 2))
            if c2 <= cost:
                break
            alpha *= 0.5
        else:
            return PoseEstimate(pose=p, converged=True, iterations=it,
                                residual=float(np.linalg.norm(r)))
        p, r, J, d, cost = p_try, r2, J2, d2, c2
        if alpha * np.linalg.norm(step) < tol:
            return PoseEstimate(pose=p, converged=True, iterations=it,
                                residual=float(np.linalg.norm(r)))
    return PoseEstimate(pose=p, converged=False, iterations=max_iter,
                        residual=float(np.linalg.norm(r)))


# ---------------------------------------------------------------------------
# scenario


def _strict_fields(cls, data: dict, label: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"unknown {label} keys: {', '.join(unknown)}")


@dataclass
class Scenario:
    """Everything one episode needs, serializable and hashable.

    With fsm_enabled the workflow automaton owns the control mode, the
    desired wrench and the spindle, the PTM is connected at
    connect_time, and apex_reached fires when the insertion depth
    passes apex_target. Otherwise mode, desired_wrench and the spindle
    settings are fixed for the whole episode.
    """

    name: str = "episode"
    seed: int = 0
    duration: float = 20.0                    # s
    mode: ControlMode = ControlMode.HYBRID_POSITION_FORCE
    params: ControllerParams = field(default_factory=tuned_params)
    file: FileModel = field(default_factory=protaper_sx_f3)
    canal: CanalModel | None = None
    canal_z: float = 0.0                      # entrance height in {P}, mm
    trajectories: tuple = ()
    fsm_enabled: bool = False
    desired_wrench: np.ndarray = field(default_factory=lambda: np.zeros(6))
    spindle_rpm: float = 0.0
    spindle_direction: int = 0
    initial_pose: np.ndarray = field(default_factory=lambda: np.zeros(6))
    desired_pose: np.ndarray = field(default_factory=lambda: np.zeros(6))
    initial_frontier: float | None = None     # mm; None seats it at the tip
    connect_time: float = 0.5                 # s, fsm episodes
    apex_target: float | None = None          # mm, fsm episodes
    string_sigma: float = 0.02                # mm
    string_quantization: float = 0.2          # mm
    wrench_sigma_f: float = 0.002             # N, under the 0.01 N quantum
    wrench_sigma_tau: float = 0.02            # mN.m, under the 0.25 quantum
    ideal_sensors: bool = False
    est_prior_sigma: np.ndarray = field(
        default_factory=lambda: np.array([0.25, 0.25, 0.25, 0.7, 0.7, 0.7]))
    wobble_gain: float = 0.0                  # N lateral per N load at 150 rpm
    torque_spikes: tuple = ()                 # (t_on, t_off, mN.m)

    def __post_init__(self):
        self.desired_wrench = np.asarray(self.desired_wrench, float).reshape(6)
        self.initial_pose = np.asarray(self.initial_pose, float).reshape(6)
        self.desired_pose = np.asarray(self.desired_pose, float).reshape(6)
        self.est_prior_sigma = np.asarray(self.est_prior_sigma,
                                          float).reshape(6)
        if isinstance(self.mode, str):
            self.mode = ControlMode(self.mode)
        self.trajectories = tuple(self.trajectories)
        self.torque_spikes = tuple(tuple(s) for s in self.torque_spikes)
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            return v

        d = {
            "name": self.name, "seed": self.seed, "duration": self.duration,
            "mode": self.mode.value,
            "params": {f.name: plain(getattr(self.params, f.name))
                       for f in dataclasses.fields(self.params)},
            "file": {f.name: plain(getattr(self.file, f.name))
                     for f in dataclasses.fields(self.file)},
            "canal": None if self.canal is None else
                     {f.name: plain(getattr(self.canal, f.name))
                      for f in dataclasses.fields(self.canal)},
            "canal_z": self.canal_z,
            "trajectories": [
                {f.name: plain(getattr(traj, f.name))
                 for f in dataclasses.fields(traj)}
                for traj in self.trajectories],
            "fsm_enabled": self.fsm_enabled,
            "desired_wrench": plain(self.desired_wrench),
            "spindle_rpm": self.spindle_rpm,
            "spindle_direction": self.spindle_direction,
            "initial_pose": plain(self.initial_pose),
            "desired_pose": plain(self.desired_pose),
            "initial_frontier": self.initial_frontier,
            "connect_time": self.connect_time,
            "apex_target": self.apex_target,
            "string_sigma": self.string_sigma,
            "string_quantization": self.string_quantization,
            "wrench_sigma_f": self.wrench_sigma_f,
            "wrench_sigma_tau": self.wrench_sigma_tau,
            "ideal_sensors": self.ideal_sensors,
            "est_prior_sigma": plain(self.est_prior_sigma),
            "wobble_gain": self.wobble_gain,
            "torque_spikes": [list(s) for s in self.torque_spikes],
        }
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        data = dict(data)
        _strict_fields(cls, data, "scenario")
        if "params" in data and isinstance(data["params"], dict):
            _strict_fields(ControllerParams, data["params"], "controller")
            data["params"] = ControllerParams(**data["params"])
        if "file" in data and isinstance(data["file"], dict):
            _strict_fields(FileModel, data["file"], "file")
            data["file"] = FileModel(**data["file"])
        if data.get("canal") is not None and isinstance(data["canal"], dict):
            _strict_fields(CanalModel, data["canal"], "canal")
            data["canal"] = CanalModel(**data["canal"])
        if "trajectories" in data:
            trajs = []
            for td in data["trajectories"]:
                _strict_fields(PatientTrajectory, td, "trajectory")
                trajs.append(PatientTrajectory(**td))
            data["trajectories"] = tuple(trajs)
        return cls(**data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# episode log


LOG_COLUMNS = (
    ["t"]
    + [f"pose_{a}" for a in "x y z roll pitch yaw".split()]
    + [f"err_{a}" for a in "x y z roll pitch yaw".split()]
    + [f"est_{a}" for a in "x y z roll pitch yaw".split()]
    + ["f_x", "f_y", "f_z", "tau_x", "tau_y", "tau_z"]
    + ["ftrue_x", "ftrue_y", "ftrue_z", "tautrue_x", "tautrue_y", "tautrue_z"]
    + [f"cmd_{a}" for a in "x y z roll pitch yaw".split()]
    + ["depth", "frontier", "phase", "schedule", "spindle", "emergency",
       "stroke", "fracture"]
)


@dataclass
class EpisodeLog:
    """Uniformly sampled record of one closed-loop episode.

    error is desired minus true relative pose, in the patient frame.
    phase/schedule are -1 when the workflow automaton is disabled.
    """

    time: np.ndarray
    pose: np.ndarray          # (n, 6) true relative pose
    error: np.ndarray         # (n, 6) desired - true
    estimate: np.ndarray      # (n, 6) PTM estimate (nan if unavailable)
    wrench: np.ndarray        # (n, 6) sensed, {F}
    wrench_true: np.ndarray   # (n, 6)
    command: np.ndarray       # (n, 6) velocity command
    depth: np.ndarray         # (n,)
    frontier: np.ndarray      # (n,)
    phase: np.ndarray         # (n,) int codes
    schedule: np.ndarray      # (n,) force schedule index
    spindle: np.ndarray       # (n,) signed rpm
    emergency: np.ndarray     # (n,) int codes
    stroke: np.ndarray        # (n,) bool, any string out of stroke
    fracture: np.ndarray      # (n,) bool, safety monitor flag
    metadata: dict
    aborted: bool = False
    abort_reason: str = ""

    def _window(self, t_start):
        return self.time >= t_start

    def rms_error(self, axes, t_start=0.0) -> np.ndarray:
        sel = self._window(t_start)
        e = self.error[sel][:, list(axes)]
        return np.sqrt(np.mean(e * e, axis=0))

    def mean_abs_wrench(self, axes, t_start=0.0) -> np.ndarray:
        sel = self._window(t_start)
        return np.mean(np.abs(self.wrench[sel][:, list(axes)]), axis=0)

    def peak_to_peak_error(self, axis, t_start=0.0) -> float:
        sel = self._window(t_start)
        e = self.error[sel][:, axis]
        return float(np.max(e) - np.min(e))

    def as_matrix(self) -> np.ndarray:
        cols = [self.time[:, None], self.pose, self.error, self.estimate,
                self.wrench, self.wrench_true, self.command,
                self.depth[:, None], self.frontier[:, None],
                self.phase[:, None].astype(float),
                self.schedule[:, None].astype(float),
                self.spindle[:, None],
                self.emergency[:, None].astype(float),
                self.stroke[:, None].astype(float),
                self.fracture[:, None].astype(float)]
        return np.concatenate(cols, axis=1)

    def to_csv(self, path):
        meta = dict(self.metadata)
        meta["aborted"] = self.aborted
        if self.aborted:
            meta["abort_reason"] = self.abort_reason
        lines = [f"# {k}={meta[k]}" for k in sorted(meta)]
        lines.append(",".join(LOG_COLUMNS))
        mat = self.as_matrix()
        for row in mat:
            lines.append(",".join(f"{v:.17g}" for v in row))
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# episode runner


def _pose_diff(a, b):
    d = a - b
    d[3:] = wrap_angle(d[3:])
    return d


def simulate_episode(scenario: Scenario) -> EpisodeLog:
    """Run one fixed-step closed-loop episode.

    Inner-period loop: advance the patient, synthesize the contact
    wrench, run the sensor models, update the workflow automaton and
    the admittance (outer ticks), run the PD, integrate the commanded
    velocity, log. Deterministic: one seeded generator drives all
    sensor noise in a fixed per-tick order.

    The robot executes velocity commands in the sensed patient frame,
    and the patient's incremental motion re-expresses the relative pose
    each tick. A PTM solver failure in hybrid mode aborts the episode
    with the partial log (admittance-only modes keep running on the
    last estimate, which they do not use for control).
    """
    sc = scenario
    params = sc.params
    T = params.inner_period
    divider = params.divider
    n = int(round(sc.duration / T)) + 1
    rng = np.random.default_rng(sc.seed)
    geom = PtmGeometry.proposed()

    q = sc.initial_pose.copy()
    p_d = sc.desired_pose.copy()
    prev_est = q.copy()
    v_cmd_prev = np.zeros(6)
    sigma_l = 1e-6 if sc.ideal_sensors else max(
        np.hypot(sc.string_quantization / np.sqrt(12.0), sc.string_sigma),
        1e-6)
    ctrl = HybridState()
    fsm = FsmState()
    connected = False
    mode = sc.mode
    xi_d = sc.desired_wrench.copy()
    spindle_rpm = float(sc.spindle_rpm)
    spindle_dir = int(sc.spindle_direction)
    phase_code = -1
    schedule_idx = -1
    emergency_code = 0

    frontier = 0.0
    if sc.canal is not None:
        tip0 = q[:3] - np.array([0.0, 0.0, sc.canal_z])
        d0 = insertion_depth(tip0, sc.canal)
        frontier = max(d0, 0.0) if sc.initial_frontier is None \
            else float(sc.initial_frontier)

    log = {k: np.zeros(n) for k in ("time", "depth", "frontier", "spindle")}
    for k in ("pose", "error", "estimate", "wrench", "wrench_true", "command"):
        log[k] = np.zeros((n, 6))
    log["phase"] = np.full(n, -1, dtype=int)
    log["schedule"] = np.full(n, -1, dtype=int)
    log["emergency"] = np.zeros(n, dtype=int)
    log["stroke"] = np.zeros(n, dtype=bool)
    log["fracture"] = np.zeros(n, dtype=bool)

    D_prev = pose_to_transform(np.zeros(6))
    disp_prev = np.zeros(6)
    q_last = q.copy()
    aborted = False
    abort_reason = ""
    n_logged = n

    for k in range(n):
        t = k * T

        # -- patient advance ------------------------------------------------
        if sc.trajectories:
            disp = _summed_displacement(sc.trajectories, t)
            T_D = pose_to_transform(disp)
            if k > 0:
                step = compose(invert(T_D), D_prev)
                q, _ = transform_to_pose(compose(step, pose_to_transform(q)))
            D_prev = T_D
            patient_speed = np.linalg.norm((disp[:3] - disp_prev[:3]) / T) \
                if k > 0 else 0.0
            disp_prev = disp
        else:
            patient_speed = 0.0

        pose_rate = _pose_diff(q, q_last) / T if k > 0 else np.zeros(6)

        # -- contact ---------------------------------------------------------
        if sc.canal is not None:
            q_c = q.copy()
            q_c[2] -= sc.canal_z
            depth = insertion_depth(q_c[:3], sc.canal)
            w_true, info = contact_wrench(
                sc.canal, q_c, sc.file, depth=depth,
                spindle_rpm=spindle_rpm, spindle_direction=spindle_dir,
                cut_frontier=frontier, pose_rate=pose_rate)
            frontier = min(frontier + info.frontier_rate * T,
                           sc.canal.total_arc)
        else:
            depth = 0.0
            w_true = Wrench6(np.zeros(3), np.zeros(3), frame="F")
            info = None

        f_true = w_true.force.copy()
        tau_true = w_true.torque.copy()
        if spindle_rpm > 0 and sc.wobble_gain > 0 and info is not None \
                and info.normal_load > 0:
            # spindle-synchronous lateral vibration, scales with load
            ang = 2.0 * np.pi * (spindle_rpm / 60.0) * t
            wob = sc.wobble_gain * info.normal_load * (spindle_rpm / 150.0)
            f_true[0] += wob * np.cos(ang)
            f_true[1] += wob * np.sin(ang)
        for t_on, t_off, amp in sc.torque_spikes:
            if t_on <= t < t_off:
                tau_true[2] += amp
        w_true = Wrench6(f_true, tau_true, frame="F")

        # -- sensors ----------------------------------------------------------
        if sc.ideal_sensors:
            meas = measure_strings(geom, q, sigma=0.0, quantization=0.0)
            w_meas = w_true
        else:
            meas = measure_strings(geom, q, sigma=sc.string_sigma,
                                   quantization=sc.string_quantization,
                                   rng=rng)
            w_meas = simulate_sensor(w_true, sc.wrench_sigma_f,
                                     sc.wrench_sigma_tau, rng=rng)
        prior = prev_est + v_cmd_prev * T
        prior[3:] = wrap_angle(prior[3:])
        est = _map_estimate(geom, meas.lengths, prior, sigma_l,
                            sc.est_prior_sigma)
        if est.converged:
            p_s = est.pose
            prev_est = p_s
            est_logged = p_s
        else:
            est_logged = np.full(6, np.nan)
            p_s = prev_est
            if mode is ControlMode.HYBRID_POSITION_FORCE:
                aborted = True
                abort_reason = f"pose estimate diverged at t={t:.2f}"
                n_logged = k
                break

        flags = safety_monitor(w_meas, sc.file, patient_speed)
        stroke_any = bool(np.any(meas.stroke_exceeded))

        # -- workflow (outer rate) --------------------------------------------
        if sc.fsm_enabled and k % divider == 0:
            event = DentistEvent.NONE
            if not connected and t >= sc.connect_time \
                    and fsm.phase is Phase.IDLE:
                event = DentistEvent.PTM_CONNECTED
            elif sc.apex_target is not None and depth >= sc.apex_target \
                    and fsm.phase is Phase.CLEANING_SHAPING:
                event = DentistEvent.APEX_REACHED
            near_limit = bool(np.any(
                np.abs(string_lengths(geom, q)
                       - string_lengths(geom, np.zeros(6)))
                > POT_STROKE - 1.0))
            # apical force: outward reaction on a pressed file is +z_F
            inputs = FsmInputs(time=t, f_z=w_meas.force[2],
                               tau_z=abs(w_meas.torque[2]),
                               insertion_depth=depth,
                               dentist_event=event,
                               ptm_near_limit=near_limit,
                               rapid_motion_detected=flags.rapid_motion)
            fsm, out = fsm_step(fsm, inputs, params.outer_period)
            if event is DentistEvent.PTM_CONNECTED:
                connected = True
            mode = out.control_mode
            xi_d = out.desired_wrench.copy()
            spindle_rpm = out.spindle_rpm
            spindle_dir = out.spindle_direction
            emergency_code = EMERGENCY_CODES[out.emergency]
            if out.record_initial_pose:
                p_d = p_s.copy()
        if sc.fsm_enabled:
            phase_code = PHASE_CODES[fsm.phase]
            schedule_idx = fsm.force_schedule_index

        # -- control -----------------------------------------------------------
        werr = compose_wrench_error(xi_d, w_meas, sc.file, params.k_f)
        # the admittance consumes torques about the tool point in SI
        # units: re-reference the sensed lateral torques from the clamp
        # to the tip (a tip contact then carries no lever torque) and
        # convert the plant's mN.m to N.m
        werr[3] += sc.file.length * w_meas.force[1]
        werr[4] -= sc.file.length * w_meas.force[0]
        werr[3:] *= 1e-3
        if sc.fsm_enabled and fsm.frozen:
            v = np.zeros(6)
        else:
            v = hybrid_step(k, mode, params, p_d, p_s, werr, ctrl)
        v_cmd_prev = v

        # -- log ----------------------------------------------------------------
        log["time"][k] = t
        log["pose"][k] = q
        log["error"][k] = _pose_diff(p_d, q)
        log["estimate"][k] = est_logged
        log["wrench"][k] = w_meas.as_vector()
        log["wrench_true"][k] = w_true.as_vector()
        log["command"][k] = v
        log["depth"][k] = depth
        log["frontier"][k] = frontier
        log["phase"][k] = phase_code
        log["schedule"][k] = schedule_idx
        log["spindle"][k] = spindle_dir * spindle_rpm
        log["emergency"][k] = emergency_code
        log["stroke"][k] = stroke_any
        log["fracture"][k] = flags.fracture_risk

        # -- integrate ------------------------------------------------------------
        q_last = q.copy()
        q = q + v * T
        q[3:] = wrap_angle(q[3:])

    sl = slice(0, n_logged)
    metadata = {"seed": sc.seed, "config_hash": sc.config_hash(),
                "name": sc.name, "duration": sc.duration,
                "mode": sc.mode.value, "inner_period": T}
    return EpisodeLog(
        time=log["time"][sl], pose=log["pose"][sl], error=log["error"][sl],
        estimate=log["estimate"][sl], wrench=log["wrench"][sl],
        wrench_true=log["wrench_true"][sl], command=log["command"][sl],
        depth=log["depth"][sl], frontier=log["frontier"][sl],
        phase=log["phase"][sl], schedule=log["schedule"][sl],
        spindle=log["spindle"][sl], emergency=log["emergency"][sl],
        stroke=log["stroke"][sl], fracture=log["fracture"][sl],
        metadata=metadata, aborted=aborted, abort_reason=abort_reason)
