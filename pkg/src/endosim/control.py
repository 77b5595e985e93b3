"""Two-rate hybrid position/force controller.

The inner loop is per-axis PD position control at 100 Hz; the outer loop
is per-axis admittance force control at 20 Hz whose output, a pose
correction p_adm, is held between outer ticks (zero-order hold). The
pure-admittance mode bypasses the PD and differences p_adm into a
velocity command directly.

Axis order everywhere: (x, y, z, roll, pitch, yaw) with linear axes in
mm / N and rotary axes in deg / mN.m.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .flexfile import ACTIVATION_THRESHOLD, FileModel, flexibility_wrench
from .sensing import Wrench6


class ControlMode(Enum):
    HYBRID_POSITION_FORCE = "hybrid"
    ADMITTANCE_ONLY = "admittance_only"


@dataclass
class ControllerParams:
    """Per-axis gains plus the two loop periods.

    Defaults are the tuned values for the x/y/z/roll/pitch/yaw axes:
    lateral axes get flexibility compensation (k_f = 0.8), the apical
    axis a stiffer force gain (k_a = 1.6), and the yaw axis no force
    control at all (k_a = 0) since the file spins about it.
    """

    k_p: np.ndarray = field(default_factory=lambda: np.array(
        [5.0, 5.0, 5.0, 1.5, 1.5, 1.5]))
    k_d: np.ndarray = field(default_factory=lambda: np.array(
        [0.0015, 0.0015, 0.0015, 0.0005, 0.0005, 0.0005]))
    m_a: np.ndarray = field(default_factory=lambda: np.array(
        [0.4, 0.4, 0.4, 0.001157, 0.001633, 0.001208]))
    b_a: np.ndarray = field(default_factory=lambda: np.array(
        [40.0, 40.0, 40.0, 0.1157, 0.1633, 0.1208]))
    k_a: np.ndarray = field(default_factory=lambda: np.array(
        [0.8, 0.8, 1.6, 1.6, 1.6, 0.0]))
    k_f: np.ndarray = field(default_factory=lambda: np.array(
        [0.8, 0.8, 0.0, 0.0, 0.0, 0.0]))
    inner_period: float = 0.01          # s, 100 Hz
    outer_period: float = 0.05          # s, 20 Hz
    tustin_exact: bool = False          # T^2 numerator variant
    windup_limit: np.ndarray = field(default_factory=lambda: np.array(
        [50.0, 50.0, 50.0, 30.0, 30.0, 30.0]))

    def __post_init__(self):
        for name in ("k_p", "k_d", "m_a", "b_a", "k_a", "k_f", "windup_limit"):
            setattr(self, name, np.asarray(getattr(self, name), float).reshape(6))
        ratio = self.outer_period / self.inner_period
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("outer period must be an integer multiple of inner")
        active = self.k_a != 0
        if np.any(self.m_a[active] <= 0) or np.any(self.b_a[active] <= 0):
            raise ValueError("force-controlled axes need m_a > 0 and b_a > 0")

    @property
    def divider(self) -> int:
        return int(round(self.outer_period / self.inner_period))


def tuned_params() -> ControllerParams:
    """The default parameter set (the values in ControllerParams)."""
    return ControllerParams()


@dataclass
class AdmittanceState:
    """Last two inputs and outputs of each axis's difference equation."""

    u1: np.ndarray = field(default_factory=lambda: np.zeros(6))
    u2: np.ndarray = field(default_factory=lambda: np.zeros(6))
    y1: np.ndarray = field(default_factory=lambda: np.zeros(6))
    y2: np.ndarray = field(default_factory=lambda: np.zeros(6))
    clamp_events: int = 0

    def reset(self):
        self.u1[:] = 0.0
        self.u2[:] = 0.0
        self.y1[:] = 0.0
        self.y2[:] = 0.0


def pd_step(params: ControllerParams, p_err, prev_err, dt) -> np.ndarray:
    """Per-axis PD velocity command k_p e + k_d (e - e_prev)/dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = np.asarray(p_err, float).reshape(6)
    ep = np.asarray(prev_err, float).reshape(6)
    return params.k_p * e + params.k_d * (e - ep) / dt


def admittance_step(state: AdmittanceState, params: ControllerParams,
                    wrench_err) -> np.ndarray:
    """One outer-rate update of the force-guided path correction.

    Implements, per axis, the discrete transfer function

        p_adm(z)        k_a T (z + 1)^2
        -------- = --------------------------------
        xi(z)      4 m_a (z - 1)^2 + 2 b_a T (z^2 - 1)

    as a direct difference equation (the tustin_exact flag replaces the
    numerator T with T^2, the exact Tustin discretization of the
    continuous mass-damper). The denominator carries a pole at z = 1,
    so a constant force error produces a ramp of slope k_a xi / b_a.
    Axes with k_a = 0 output identically zero. Output is clamped to the
    anti-windup limits, with the internal history pinned at the clamp so
    the correction resumes immediately when the error reverses.
    """
    u = np.asarray(wrench_err, float).reshape(6)
    T = params.outer_period
    num_gain = params.k_a * (T * T if params.tustin_exact else T)
    a0 = 4.0 * params.m_a + 2.0 * params.b_a * T
    a1 = -8.0 * params.m_a
    a2 = 4.0 * params.m_a - 2.0 * params.b_a * T
    y = np.where(
        params.k_a != 0.0,
        (num_gain * (u + 2.0 * state.u1 + state.u2)
         - a1 * state.y1 - a2 * state.y2) / np.where(a0 != 0, a0, 1.0),
        0.0)
    clamped = np.clip(y, -params.windup_limit, params.windup_limit)
    if np.any(clamped != y):
        state.clamp_events += int(np.sum(clamped != y))
    state.u2 = state.u1.copy()
    state.u1 = u.copy()
    state.y2 = state.y1.copy()
    state.y1 = clamped.copy()
    return clamped


def compose_wrench_error(xi_d, wrench_f: Wrench6, file: FileModel, k_f,
                         threshold=ACTIVATION_THRESHOLD) -> np.ndarray:
    """Force-control error xi_d - (xi_s + xi_flx) as a 6-vector.

    xi_d: desired wrench 6-vector (N, mN.m); wrench_f: measured wrench
    in the file frame; the flexibility wrench enlarges the measured
    lateral components, producing a larger path adjustment.
    """
    xi_d = np.asarray(xi_d, float).reshape(6)
    flx = flexibility_wrench(wrench_f, file, 1.0, threshold)
    xi_com = wrench_f.as_vector().copy()
    xi_com[:3] += np.asarray(k_f, float).reshape(6)[:3] * flx.force
    return xi_d - xi_com


@dataclass
class HybridState:
    """Everything the two-rate loop carries between inner ticks."""

    admittance: AdmittanceState = field(default_factory=AdmittanceState)
    p_adm: np.ndarray = field(default_factory=lambda: np.zeros(6))
    p_adm_prev: np.ndarray = field(default_factory=lambda: np.zeros(6))
    prev_err: np.ndarray = field(default_factory=lambda: np.zeros(6))
    held_velocity: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def reset(self):
        self.admittance.reset()
        self.p_adm[:] = 0.0
        self.p_adm_prev[:] = 0.0
        self.prev_err[:] = 0.0
        self.held_velocity[:] = 0.0


def hybrid_step(tick: int, mode: ControlMode, params: ControllerParams,
                p_d, p_s, wrench_err, state: HybridState) -> np.ndarray:
    """One inner-rate (100 Hz) step of the two-rate controller.

    tick counts inner periods; every params.divider-th tick the outer
    admittance loop updates p_adm from wrench_err (the caller composes
    xi_d - xi_com at the outer rate), which is then held. In hybrid
    mode the PD runs every tick on p_d - p_adm - p_s; in admittance-only
    mode the PD is bypassed and the velocity is the held, negated first
    difference of p_adm over the outer period (same sign convention as
    the hybrid law, so the tool yields away from an applied force).
    """
    p_d = np.asarray(p_d, float).reshape(6)
    p_s = np.asarray(p_s, float).reshape(6)
    outer_tick = tick % params.divider == 0
    if outer_tick:
        state.p_adm_prev = state.p_adm.copy()
        state.p_adm = admittance_step(state.admittance, params, wrench_err)
        # sign matches the hybrid law, where a growing p_adm shifts the
        # position target negative; the bypassed velocity must do the same
        # so that a pushed tool yields away from the push
        state.held_velocity = (state.p_adm_prev - state.p_adm) / params.outer_period

    if mode is ControlMode.ADMITTANCE_ONLY:
        return state.held_velocity.copy()

    p_err = p_d - state.p_adm - p_s
    v = pd_step(params, p_err, state.prev_err, params.inner_period)
    state.prev_err = p_err
    return v
