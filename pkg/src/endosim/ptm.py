"""String-based patient tracking: kinematics, pose estimation, analyses.

Six strings run from anchors on the patient's teeth brace (frame {A}) to
potentiometer bases on the robot-side adapter (frame {B}). Measuring the
six lengths determines the relative pose.

Anchor coordinates are tabulated in the brace-local frame; the default
geometry expresses them in {B} at the clinical mounting attitude (see
PtmGeometry.proposed), so the zero pose is the operating pose with the
file tip at the center of the required cylindrical workspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import rot_z, rpy_matrix, rpy_matrix_derivs, wrap_angle

# brace-local anchor coordinates (mm)
TABLE_ANCHORS = np.array([
    [-1.51, -9.55, -10.36],
    [-0.17, -3.64, -5.76],
    [1.24, -16.37, -6.91],
    [-1.51, 8.10, -8.47],
    [-0.06, 12.38, -4.20],
    [-0.41, 4.25, -4.70],
])

# string potentiometer bases on the adapter (mm, frame {B})
TABLE_BASES = np.array([
    [29.73, 34.78, 12.41],
    [29.73, 35.22, 45.59],
    [29.73, 44.78, 31.41],
    [29.73, -35.22, 12.41],
    [29.73, -45.22, 31.41],
    [29.73, -34.78, 45.59],
])

# brace-to-adapter mounting: the brace faces the handpiece, so its local
# frame is yawed 180 deg relative to {B}; the offset places the tooth at
# the center of the required cylinder
MOUNT_YAW_DEG = 180.0
MOUNT_OFFSET = np.array([5.0, 0.0, 11.5])

# required cylindrical workspace of the file tip (mm)
CYLINDER_DIAMETER = 13.0
CYLINDER_HEIGHT = 28.0

POT_STROKE = 19.0        # +/- mm of string travel about initialization
POT_RESOLUTION = 0.2     # mm


@dataclass
class PtmGeometry:
    """Six string anchors and six bases, both expressed in {B} (mm)."""

    anchors: np.ndarray
    bases: np.ndarray

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, float).reshape(6, 3)
        self.bases = np.asarray(self.bases, float).reshape(6, 3)
        if not (np.all(np.isfinite(self.anchors))
                and np.all(np.isfinite(self.bases))):
            raise ValueError("geometry entries must be finite")

    @classmethod
    def table1(cls):
        """Anchors and bases exactly as tabulated (anchors brace-local)."""
        return cls(TABLE_ANCHORS.copy(), TABLE_BASES.copy())

    @classmethod
    def proposed(cls):
        """Default geometry: anchors mounted into {B} at the operating pose."""
        mounted = TABLE_ANCHORS @ rot_z(MOUNT_YAW_DEG).T + MOUNT_OFFSET
        return cls(mounted, TABLE_BASES.copy())

    def file_axis(self):
        """Unit vector along the handpiece, from tooth toward the adapter."""
        d = self.bases.mean(axis=0) - self.anchors.mean(axis=0)
        return d / np.linalg.norm(d)


@dataclass
class PtmConfigVariant:
    """A geometry tagged with its anchor-clustering topology."""

    tag: str
    geometry: PtmGeometry

    _TAGS = ("proposed", "type_321", "type_222")

    def __post_init__(self):
        if self.tag not in self._TAGS:
            raise ValueError(f"unknown variant tag {self.tag!r}")

    @classmethod
    def proposed(cls):
        return cls("proposed", PtmGeometry.proposed())

    @classmethod
    def type_321(cls):
        """Anchors merged to 3 points with multiplicities 3, 2, 1."""
        g = PtmGeometry.proposed()
        a = g.anchors.copy()
        a[[0, 1, 2]] = a[[0, 1, 2]].mean(axis=0)
        a[[3, 4]] = a[[3, 4]].mean(axis=0)
        return cls("type_321", PtmGeometry(a, g.bases))

    @classmethod
    def type_222(cls):
        """Anchors merged to 3 points with multiplicities 2, 2, 2."""
        g = PtmGeometry.proposed()
        a = g.anchors.copy()
        a[[0, 2]] = a[[0, 2]].mean(axis=0)
        a[[1, 5]] = a[[1, 5]].mean(axis=0)
        a[[3, 4]] = a[[3, 4]].mean(axis=0)
        return cls("type_222", PtmGeometry(a, g.bases))

    @classmethod
    def by_tag(cls, tag):
        return {"proposed": cls.proposed,
                "type_321": cls.type_321,
                "type_222": cls.type_222}[tag]()


def string_lengths(geom: PtmGeometry, pose):
    """l_i = || R(pose) a_i + t(pose) - b_i ||, one value per string (mm)."""
    p = np.asarray(pose, float).reshape(6)
    R = rpy_matrix(p[3], p[4], p[5])
    world = geom.anchors @ R.T + p[:3]
    return np.linalg.norm(world - geom.bases, axis=1)


def _residual_jacobian(geom: PtmGeometry, p, l_meas):
    """Length residual r = l(p) - l_meas and its analytic 6x6 Jacobian."""
    R, (D1, D2, D3) = rpy_matrix_derivs(p[3], p[4], p[5])
    diff = geom.anchors @ R.T + p[:3] - geom.bases
    L = np.linalg.norm(diff, axis=1)
    U = diff / L[:, None]
    J = np.empty((6, 6))
    J[:, :3] = U
    J[:, 3] = np.einsum('ij,ij->i', U, geom.anchors @ D1.T)
    J[:, 4] = np.einsum('ij,ij->i', U, geom.anchors @ D2.T)
    J[:, 5] = np.einsum('ij,ij->i', U, geom.anchors @ D3.T)
    return L - np.asarray(l_meas, float), J


def ptm_jacobian(geom: PtmGeometry, pose, step=1e-6):
    """String-length sensitivity by central differences (mm per mm/deg)."""
    p = np.asarray(pose, float).reshape(6)
    J = np.empty((6, 6))
    for j in range(6):
        dp = np.zeros(6)
        dp[j] = step
        J[:, j] = (string_lengths(geom, p + dp)
                   - string_lengths(geom, p - dp)) / (2.0 * step)
    return J


@dataclass
class PoseEstimate:
    pose: np.ndarray
    converged: bool
    iterations: int
    residual: float


# estimate validity region about the initialization pose: candidates
# beyond this are secondary solution branches, never the tracked pose
VALID_TRANSLATION = 20.0   # mm
VALID_ANGLE = 20.0         # deg

# a start counts as warm when its initial length residual is below this;
# consecutive tracking samples are two orders of magnitude closer
_WARM_RESIDUAL = 1.0       # mm
# a warm solution is accepted only if it stayed near the start (the string
# equations admit nearby aliases that a warm start must never jump to)
_WARM_RADIUS_MM = 2.0
_WARM_RADIUS_DEG = 2.0


def _newton_local(geom, l_meas, p0, tol, max_iter):
    """Undamped Newton with step halving, for warm starts only.

    The full step converges quadratically to the root of the start's own
    basin; halving (up to 8) guards the occasional overshoot. Unlike the
    damped solver this cannot drift across a basin boundary to an alias,
    which is what keeps 100 Hz tracking on the true branch near folds of
    the length map. Returns (p, residual, iters, ok).
    """
    p = np.asarray(p0, float).copy()
    r, J = _residual_jacobian(geom, p, l_meas)
    n0 = np.linalg.norm(r)
    for k in range(max_iter):
        if n0 <= tol:
            p, n0 = _polish(geom, l_meas, p, n0)
            return p, n0, k, True
        try:
            dp = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return p, n0, k, False
        alpha = 1.0
        for _ in range(8):
            r2, J2 = _residual_jacobian(geom, p + alpha * dp, l_meas)
            n2 = np.linalg.norm(r2)
            if n2 < n0:
                break
            alpha *= 0.5
        else:
            return p, n0, k, False
        p, r, J, n0 = p + alpha * dp, r2, J2, n2
    return p, n0, max_iter, n0 <= tol


def _solve_damped(geom, l_meas, p0, tol, max_iter):
    """Damped Newton on the length residual (Levenberg regularization).

    The undamped step solves J dp = -r exactly (the classic iteration);
    the damping keeps steps short where J is nearly singular. Converges
    either to an exact root (residual <= tol, then polished to machine
    precision) or to a local least-squares minimum of ||l(p) - l_meas||
    when the measured lengths are not exactly reachable (noisy case).
    Returns (p, residual, iters, converged).
    """
    p = np.asarray(p0, float).copy()
    r, J = _residual_jacobian(geom, p, l_meas)
    n0 = np.linalg.norm(r)
    lam = 1e-3
    for k in range(max_iter):
        g = J.T @ r
        if n0 <= tol or np.linalg.norm(g) <= 1e-12:
            p, n0 = _polish(geom, l_meas, p, n0)
            return p, n0, k, True
        dp = np.linalg.solve(J.T @ J + lam * np.eye(6), -g)
        if np.linalg.norm(dp) <= 1e-12:
            p, n0 = _polish(geom, l_meas, p, n0)
            return p, n0, k, True
        r2, J2 = _residual_jacobian(geom, p + dp, l_meas)
        n2 = np.linalg.norm(r2)
        if n2 < n0:
            p, r, J, n0 = p + dp, r2, J2, n2
            lam = max(lam * 0.3, 1e-12)
        else:
            lam = min(lam * 3.0, 1e8)
    return p, n0, max_iter, False


def _polish(geom, l_meas, p, n0):
    """Up to two undamped Newton steps at an exact root.

    The Jacobian's weakest direction lets a residual at tol hide a pose
    offset of tol / sigma_min; quadratic convergence removes it. Steps
    are kept only while they shrink the residual.
    """
    best_p, best_n = p, n0
    for _ in range(2):
        r, J = _residual_jacobian(geom, best_p, l_meas)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) > 1.0:
            break
        cand = best_p + step
        n2 = np.linalg.norm(string_lengths(geom, cand) - l_meas)
        if n2 >= best_n:
            break
        best_p, best_n = cand, n2
    return best_p, best_n


def _within_validity(pose, t_max, ang_max):
    return (np.linalg.norm(pose[:3]) <= t_max
            and np.max(np.abs(pose[3:])) <= ang_max)


def pose_estimate(geom: PtmGeometry, l_meas, p0, tol=1e-10, max_iter=100,
                  t_max=VALID_TRANSLATION, ang_max=VALID_ANGLE) -> PoseEstimate:
    """Estimate the 6-DoF pose from six measured string lengths.

    Warm starts (initial residual below 1 mm, i.e. tracking the previous
    sample) are solved locally and accepted when the solution stays near
    the start; this is the 100 Hz tracking path. Cold starts solve from
    both the initial guess and the initialization pose, keeping the
    lowest-residual candidate inside the validity region; candidates
    outside it are secondary solution branches of the string equations,
    never the tracked pose. With noisy lengths the measured vector may
    not be exactly reachable; the least-squares minimizer is then the
    estimate. Non-convergence is reported in the result, never raised.

    The string equations admit exact aliases (distinct poses with equal
    lengths) away from the initialization pose; resolving them requires
    the warm-start prior, exactly as on the physical device.
    """
    p0 = np.asarray(p0, float).reshape(6)
    l_meas = np.asarray(l_meas, float).reshape(6)
    r0 = np.linalg.norm(string_lengths(geom, p0) - l_meas)

    warm_iters = 0
    if r0 <= _WARM_RESIDUAL:
        p, res, it, ok = _newton_local(geom, l_meas, p0, tol, max_iter)
        warm_iters = it
        p = np.r_[p[:3], wrap_angle(p[3:])]
        near = (np.linalg.norm(p[:3] - p0[:3]) <= _WARM_RADIUS_MM
                and np.max(np.abs(wrap_angle(p[3:] - p0[3:]))) <= _WARM_RADIUS_DEG)
        if ok and near and _within_validity(p, t_max, ang_max):
            return PoseEstimate(p, True, it, res)

    candidates = []
    total_iters = warm_iters
    for start in (p0, np.zeros(6)):
        p, res, it, ok = _solve_damped(geom, l_meas, start, tol, max_iter)
        total_iters += it
        p = np.r_[p[:3], wrap_angle(p[3:])]
        candidates.append((ok and _within_validity(p, t_max, ang_max), res, p))
    valid = [c for c in candidates if c[0]]
    if valid:
        roots = [c for c in valid if c[1] <= 1e-8]
        if len(roots) >= 2:
            # several exact roots: the lengths cannot distinguish them,
            # so the prior breaks the tie
            def dist(c):
                return (np.linalg.norm(c[2][:3] - p0[:3])
                        + np.linalg.norm(wrap_angle(c[2][3:] - p0[3:])))
            _, res, p = min(roots, key=dist)
        else:
            _, res, p = min(valid, key=lambda c: c[1])
        return PoseEstimate(p, True, total_iters, res)
    _, res, p = min(candidates, key=lambda c: c[1])
    return PoseEstimate(p, False, total_iters, res)


@dataclass
class McResult:
    max_error: float
    mean_error: float
    failures: int
    errors: np.ndarray    # per converged trial, mm


def monte_carlo_sensitivity(variant: PtmConfigVariant, eps_max, n,
                            seed=0) -> McResult:
    """Pose-error statistics under uniform string-length disturbance.

    Truth pose at the initialization pose; initial guess 20 mm away; each
    trial perturbs every length by iid uniform(-eps_max, +eps_max) and
    records the translational estimation error. Trials where the
    estimator does not converge are counted separately, not folded into
    the statistics. Per-trial RNG substreams keep the result independent
    of evaluation order.
    """
    if eps_max < 0:
        raise ValueError("eps_max must be nonnegative")
    if n < 1:
        raise ValueError("n must be at least 1")
    geom = variant.geometry
    l_true = string_lengths(geom, np.zeros(6))
    p0 = np.array([0.0, -20.0, 0.0, 0.0, 0.0, 0.0])
    errors = np.empty(n)
    count = 0
    failures = 0
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        e = rng.uniform(-eps_max, eps_max, 6)
        est = pose_estimate(geom, l_true + e, p0)
        if est.converged:
            errors[count] = np.linalg.norm(est.pose[:3])
            count += 1
        else:
            failures += 1
    errors = errors[:count]
    if count == 0:
        return McResult(np.nan, np.nan, failures, errors)
    return McResult(float(errors.max()), float(errors.mean()),
                    failures, errors)


@dataclass
class WorkspaceResult:
    valid: np.ndarray          # boolean occupancy grid
    axes: tuple                # the three 1-D coordinate arrays (mm)
    resolution: float
    cylinder_contained: bool
    cylinder_cells: int
    cylinder_valid_cells: int


def _cylinder_mask(points, axis, radius, half_height):
    """Boolean mask of points inside the axis-through-origin cylinder."""
    s = points @ axis
    radial = points - np.outer(s, axis)
    return (np.abs(s) <= half_height) & (np.linalg.norm(radial, axis=1) <= radius)


def workspace_analysis(geom: PtmGeometry, cube_width=40.0, resolution=0.5,
                       stroke_limit=POT_STROKE, dexterity_range=5.0,
                       orientation_steps=5) -> WorkspaceResult:
    """Stroke-feasible, full-dexterity occupancy over a centered cube.

    A grid point is valid when every string stays within +/-stroke_limit
    of its initialization length for every (roll, pitch) on the
    +/-dexterity_range grid. Also reports whether the required cylinder
    (axis along the file direction through the origin) is fully contained.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    l0 = string_lengths(geom, np.zeros(6))
    half = cube_width / 2.0
    n_axis = int(round(cube_width / resolution)) + 1
    coords = np.linspace(-half, half, n_axis)
    X, Y, Z = np.meshgrid(coords, coords, coords, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    angles = np.linspace(-dexterity_range, dexterity_range, orientation_steps)
    valid = np.ones(len(pts), dtype=bool)
    for roll in angles:
        for pitch in angles:
            R = rpy_matrix(roll, pitch, 0.0)
            rotated = geom.anchors @ R.T          # (6,3)
            for i in range(6):
                d = pts + (rotated[i] - geom.bases[i])
                li = np.linalg.norm(d, axis=1)
                valid &= np.abs(li - l0[i]) <= stroke_limit
            if not valid.any():
                break

    axis = geom.file_axis()
    in_cyl = _cylinder_mask(pts, axis, CYLINDER_DIAMETER / 2.0,
                            CYLINDER_HEIGHT / 2.0)
    cyl_cells = int(in_cyl.sum())
    cyl_valid = int((valid & in_cyl).sum())
    return WorkspaceResult(
        valid=valid.reshape(n_axis, n_axis, n_axis),
        axes=(coords, coords, coords),
        resolution=resolution,
        cylinder_contained=(cyl_valid == cyl_cells),
        cylinder_cells=cyl_cells,
        cylinder_valid_cells=cyl_valid,
    )


def segment_distance(s1, s2):
    """Minimum distance between two closed 3-D segments ((2,3) arrays)."""
    (p1, p2), (q1, q2) = np.asarray(s1, float), np.asarray(s2, float)
    return float(_segment_distance_batch(
        p1[None], p2[None], q1[None], q2[None])[0])


def _segment_distance_batch(P1, P2, Q1, Q2):
    """Vectorized closed-segment distance; all inputs (n, 3)."""
    d1 = P2 - P1
    d2 = Q2 - Q1
    r = P1 - Q1
    a = np.einsum('ij,ij->i', d1, d1)
    e = np.einsum('ij,ij->i', d2, d2)
    f = np.einsum('ij,ij->i', d2, r)
    c = np.einsum('ij,ij->i', d1, r)
    b = np.einsum('ij,ij->i', d1, d2)
    den = a * e - b * b
    a_safe = np.where(a > 0, a, 1.0)
    e_safe = np.where(e > 0, e, 1.0)
    den_safe = np.where(den > 1e-12, den, 1.0)
    s = np.where(den > 1e-12, np.clip((b * f - c * e) / den_safe, 0.0, 1.0), 0.0)
    t = (b * s + f) / e_safe
    s = np.where(t < 0, np.clip(-c / a_safe, 0.0, 1.0), s)
    s = np.where(t > 1, np.clip((b - c) / a_safe, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    # degenerate (point) segments fall out of the clamps with s or t = 0
    closest1 = P1 + s[:, None] * d1
    closest2 = Q1 + t[:, None] * d2
    return np.linalg.norm(closest1 - closest2, axis=1)


# hexagonal prism bounding the handpiece body: side edges parallel to
# the file axis; sized so the narrowest pass on the default trajectory
# is string 4 against edge h5 at the roll extreme, at ~0.4 mm
PRISM_CIRCUMRADIUS = 12.0   # mm
PRISM_PHASE_DEG = 53.5      # rotation of the hexagon about the file axis
PRISM_AXIAL_RANGE = (10.0, 34.0)   # mm along the axis from the tooth origin


def hexagonal_prism(geom: PtmGeometry, circumradius=PRISM_CIRCUMRADIUS,
                    phase_deg=PRISM_PHASE_DEG, axial_range=PRISM_AXIAL_RANGE):
    """Six side edges of the handpiece bounding prism, in {B}.

    Returns (6, 2, 3): edge i from axial_range[0] to axial_range[1] along
    the file axis. Edges are labeled so h1..h3 lie on the +y side (near
    strings 1..3) and h4..h6 on the -y side, h_i mirroring h_{i+3}.
    """
    u = geom.file_axis()
    # transverse frame: e1 in the x-z plane, e2 toward +y
    e2 = np.array([0.0, 1.0, 0.0])
    e2 = e2 - (e2 @ u) * u
    e2 /= np.linalg.norm(e2)
    e1 = np.cross(e2, u)
    corners = []
    for k in range(6):
        ang = np.radians(phase_deg + 60.0 * k)
        corners.append(circumradius * (np.cos(ang) * e1 + np.sin(ang) * e2))
    corners = np.array(corners)
    # label: +y corners sorted by descending x -> h1..h3; -y mirrored -> h4..h6
    pos = [k for k in range(6) if corners[k, 1] >= 0]
    neg = [k for k in range(6) if corners[k, 1] < 0]
    pos = sorted(pos, key=lambda k: -corners[k, 0])
    neg = sorted(neg, key=lambda k: -corners[k, 0])
    idx = pos + neg
    edges = np.empty((6, 2, 3))
    for out_i, k in enumerate(idx):
        edges[out_i, 0] = corners[k] + axial_range[0] * u
        edges[out_i, 1] = corners[k] + axial_range[1] * u
    return edges


# the 24 assessed interference pairs: same-side string-string pairs plus
# same-side string-edge pairs; cross-side pairs never approach each other
STRING_SIDES = ((0, 1, 2), (3, 4, 5))


def assessed_pairs():
    """(kind, i, j) tuples: ('ss', si, sj) and ('sh', si, hj), 24 total."""
    pairs = []
    for side in STRING_SIDES:
        for ii, i in enumerate(side):
            for j in side[ii + 1:]:
                pairs.append(("ss", i, j))
        for i in side:
            for j in side:
                pairs.append(("sh", i, j))
    return pairs


@dataclass
class InterferenceResult:
    min_string_string: float
    min_string_prism: float
    pair_table: dict               # (kind, i, j) -> min distance over trajectory
    critical_pair: tuple           # (kind, i, j) achieving min_string_prism
    all_string_string: np.ndarray  # (15,) minima over all string pairs


def interference_analysis(geom: PtmGeometry, trajectory,
                          prism=None) -> InterferenceResult:
    """Minimum separations along a pose trajectory.

    trajectory: (n, 6) pose samples. Computes the 24 assessed pairs plus
    all 15 string-string pairs (the cross-side ones are reported in
    all_string_string but excluded from the assessed table).
    """
    traj = np.atleast_2d(np.asarray(trajectory, float))
    if traj.size == 0:
        raise ValueError("trajectory must be nonempty")
    if prism is None:
        prism = hexagonal_prism(geom)
    n = len(traj)
    # anchor world positions per sample: (n, 6, 3)
    world = np.empty((n, 6, 3))
    for k, p in enumerate(traj):
        R = rpy_matrix(p[3], p[4], p[5])
        world[k] = geom.anchors @ R.T + p[:3]
    bases = np.broadcast_to(geom.bases, (n, 6, 3))

    pair_table = {}
    for kind, i, j in assessed_pairs():
        if kind == "ss":
            d = _segment_distance_batch(world[:, i], bases[:, i],
                                        world[:, j], bases[:, j])
        else:
            e0 = np.broadcast_to(prism[j, 0], (n, 3))
            e1 = np.broadcast_to(prism[j, 1], (n, 3))
            d = _segment_distance_batch(world[:, i], bases[:, i], e0, e1)
        pair_table[(kind, i, j)] = float(d.min())

    all_ss = np.empty(15)
    m = 0
    for i in range(6):
        for j in range(i + 1, 6):
            d = _segment_distance_batch(world[:, i], bases[:, i],
                                        world[:, j], bases[:, j])
            all_ss[m] = d.min()
            m += 1
    ss_vals = [v for (kind, _, _), v in pair_table.items() if kind == "ss"]
    sh_items = [(k, v) for k, v in pair_table.items() if k[0] == "sh"]
    crit = min(sh_items, key=lambda kv: kv[1])
    return InterferenceResult(
        min_string_string=float(min(ss_vals)),
        min_string_prism=float(crit[1]),
        pair_table=pair_table,
        critical_pair=crit[0],
        all_string_string=all_ss,
    )


def random_trajectory(duration=500.0, dt=0.01, seed=0,
                      translation_span=2.0, rotation_span=10.0,
                      speed_cap=2.5, angular_rate_cap=5.0,
                      translation_std=0.2, rotation_std=(2.2, 0.6, 0.6),
                      rotation_mean=(-3.0, 0.0, 0.0)):
    """Smooth random pose trajectory about the operating pose.

    Each axis is a noise-driven spring-damper, so the pose wanders like
    a resting patient head: a small tremble with slow drift. Roll runs
    the widest and is centered slightly negative (the head-tilt side),
    so its extremes approach the rotation cap from the negative side.
    The caps are hard limits: speed <= speed_cap (mm/s), |roll, pitch,
    yaw| <= rotation_span (deg), |translations| <= translation_span
    (mm). Returns (n, 6) samples at dt spacing, starting at zero.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration / dt)) + 1
    std = np.r_[[translation_std] * 3, rotation_std]
    mean = np.r_[0.0, 0.0, 0.0, rotation_mean]
    # spring-damper per axis: x'' = -k (x - mean) - c x' + g xi, tuned
    # for a slow wander (period ~8 s, zeta ~0.7); g sets the amplitude
    k_spring = (2.0 * np.pi / 8.0) ** 2
    c_damp = 2.0 * 0.7 * np.sqrt(k_spring)
    gain = std * np.sqrt(2.0 * c_damp * k_spring)
    poses = np.zeros((n, 6))
    vel = np.zeros(6)
    sqdt = np.sqrt(dt)
    for k in range(1, n):
        acc = (-k_spring * (poses[k - 1] - mean) - c_damp * vel
               + gain * rng.standard_normal(6) / sqdt)
        vel = vel + acc * dt
        tn = np.linalg.norm(vel[:3])
        if tn > speed_cap:
            vel[:3] *= speed_cap / tn
        vel[3:] = np.clip(vel[3:], -angular_rate_cap, angular_rate_cap)
        p = poses[k - 1] + vel * dt
        for idx, lim in zip(range(6), [translation_span] * 3
                            + [rotation_span] * 3):
            if abs(p[idx]) > lim:
                p[idx] = np.sign(p[idx]) * lim
                vel[idx] = 0.0
        poses[k] = p
    return poses
