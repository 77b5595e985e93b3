"""Cleaning-and-shaping workflow automaton.

Five states drive an autonomous root-canal treatment: Idle (follow the
patient compliantly), Insertion (advance the file until contact),
CleaningShaping (spindle forward, stepped force schedule), Reverse
(unscrew briefly after an over-torque), and Disengage (pull out). Two
overrides cut across all states: an HRC fallback that abandons the
treatment and returns to compliant following, and a motion freeze that
is absorbing until manually reset.

Units: forces N, torques mN.m, depths mm, times s.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .control import ControlMode
from .flexfile import FileModel
from .sensing import Wrench6

FORCE_SCHEDULE = (0.4, 0.6, 0.8, 1.0)        # N, stepped apical force
CONTACT_FORCE = 0.4                          # N, Insertion -> CleaningShaping
OVER_TORQUE = 8.0                            # mN.m, CleaningShaping -> Reverse
SCHEDULE_HOLD = 15.0                         # s continuously below torque limit
REVERSE_DURATION = 1.0                       # s
DISENGAGE_FORCE = -0.8                       # N, pulls the file out
SPINDLE_FORWARD_RPM = 150.0
SPINDLE_REVERSE_RPM = 250.0
MAX_APICAL_FORCE = 3.9                       # N, fracture risk
MAX_AXIAL_TORQUE = 12.0                      # mN.m, fracture risk
MAX_PATIENT_SPEED = 2.5                      # mm/s, freeze trigger


class Phase(Enum):
    IDLE = "Idle"
    INSERTION = "Insertion"
    CLEANING_SHAPING = "CleaningShaping"
    REVERSE = "Reverse"
    DISENGAGE = "Disengage"


class Emergency(Enum):
    NONE = "none"
    HRC_FALLBACK = "hrc_fallback"
    FREEZE = "freeze"


class DentistEvent(Enum):
    NONE = "none"
    PTM_CONNECTED = "ptm_connected"
    APEX_REACHED = "apex_reached"
    FLUSH_REQUESTED = "flush_requested"


@dataclass(frozen=True)
class FsmState:
    phase: Phase = Phase.IDLE
    entry_time: float = 0.0
    force_schedule_index: int = 0
    below_threshold_timer: float = 0.0
    prev_treatment_depth: float = np.inf     # mm; first file: force governs
    frozen: bool = False

    @property
    def desired_force(self) -> float:
        return FORCE_SCHEDULE[self.force_schedule_index]


@dataclass(frozen=True)
class FsmInputs:
    time: float = 0.0
    f_z: float = 0.0                 # N, flexibility-compensated apical force
    tau_z: float = 0.0               # mN.m, axial torque magnitude
    insertion_depth: float = 0.0     # mm
    dentist_event: DentistEvent = DentistEvent.NONE
    ptm_near_limit: bool = False
    rapid_motion_detected: bool = False


@dataclass(frozen=True)
class FsmOutputs:
    control_mode: ControlMode
    desired_wrench: np.ndarray       # 6-vector, z-force slot populated
    spindle_rpm: float
    spindle_direction: int           # +1 forward, -1 reverse, 0 off
    record_initial_pose: bool = False
    emergency: Emergency = Emergency.NONE


def _outputs_for(phase: Phase, z_force: float, record=False,
                 emergency=Emergency.NONE) -> FsmOutputs:
    wrench = np.zeros(6)
    wrench[2] = z_force
    if phase is Phase.CLEANING_SHAPING:
        rpm, direction = SPINDLE_FORWARD_RPM, 1
    elif phase is Phase.REVERSE:
        rpm, direction = SPINDLE_REVERSE_RPM, -1
    else:
        rpm, direction = 0.0, 0
    mode = ControlMode.ADMITTANCE_ONLY if phase is Phase.IDLE \
        else ControlMode.HYBRID_POSITION_FORCE
    if emergency is not Emergency.NONE:
        rpm, direction = 0.0, 0
        mode = ControlMode.ADMITTANCE_ONLY
        wrench = np.zeros(6)
    return FsmOutputs(mode, wrench, rpm, direction, record, emergency)


def fsm_step(state: FsmState, inputs: FsmInputs, dt: float):
    """Advance the automaton one tick; returns (state', outputs).

    Deterministic: exactly one successor per (state, inputs). The
    freeze override is absorbing (manual_reset clears it); the HRC
    fallback returns to Idle with the schedule cleared.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")

    if state.frozen:
        return state, _outputs_for(state.phase, 0.0, emergency=Emergency.FREEZE)
    if inputs.rapid_motion_detected:
        frozen = replace(state, frozen=True)
        return frozen, _outputs_for(state.phase, 0.0, emergency=Emergency.FREEZE)
    if inputs.ptm_near_limit:
        fallback = FsmState(Phase.IDLE, inputs.time,
                            prev_treatment_depth=state.prev_treatment_depth)
        return fallback, _outputs_for(Phase.IDLE, 0.0,
                                      emergency=Emergency.HRC_FALLBACK)

    phase = state.phase

    if phase is Phase.IDLE:
        if inputs.dentist_event is DentistEvent.PTM_CONNECTED:
            nxt = replace(state, phase=Phase.INSERTION, entry_time=inputs.time)
            return nxt, _outputs_for(Phase.INSERTION, CONTACT_FORCE, record=True)
        return state, _outputs_for(Phase.IDLE, 0.0)

    if phase is Phase.INSERTION:
        if inputs.f_z >= CONTACT_FORCE \
                or inputs.insertion_depth >= state.prev_treatment_depth:
            nxt = replace(state, phase=Phase.CLEANING_SHAPING,
                          entry_time=inputs.time, force_schedule_index=0,
                          below_threshold_timer=0.0)
            return nxt, _outputs_for(Phase.CLEANING_SHAPING, FORCE_SCHEDULE[0])
        return state, _outputs_for(Phase.INSERTION, CONTACT_FORCE)

    if phase is Phase.CLEANING_SHAPING:
        if inputs.dentist_event in (DentistEvent.APEX_REACHED,
                                    DentistEvent.FLUSH_REQUESTED):
            nxt = replace(state, phase=Phase.DISENGAGE, entry_time=inputs.time,
                          force_schedule_index=0, below_threshold_timer=0.0)
            return nxt, _outputs_for(Phase.DISENGAGE, DISENGAGE_FORCE)
        if inputs.tau_z > OVER_TORQUE:
            nxt = replace(state, phase=Phase.REVERSE, entry_time=inputs.time,
                          below_threshold_timer=0.0)
            return nxt, _outputs_for(Phase.REVERSE, 0.0)
        timer = state.below_threshold_timer + dt
        index = state.force_schedule_index
        if timer >= SCHEDULE_HOLD and index < len(FORCE_SCHEDULE) - 1:
            index += 1
            timer = 0.0
        nxt = replace(state, force_schedule_index=index,
                      below_threshold_timer=timer)
        return nxt, _outputs_for(Phase.CLEANING_SHAPING, FORCE_SCHEDULE[index])

    if phase is Phase.REVERSE:
        if inputs.time - state.entry_time >= REVERSE_DURATION:
            if inputs.tau_z > OVER_TORQUE:
                # still jammed after unscrewing: abandon to compliant mode
                fallback = FsmState(Phase.IDLE, inputs.time,
                                    prev_treatment_depth=state.prev_treatment_depth)
                return fallback, _outputs_for(Phase.IDLE, 0.0,
                                              emergency=Emergency.HRC_FALLBACK)
            nxt = replace(state, phase=Phase.CLEANING_SHAPING,
                          entry_time=inputs.time, below_threshold_timer=0.0)
            return nxt, _outputs_for(Phase.CLEANING_SHAPING, state.desired_force)
        return state, _outputs_for(Phase.REVERSE, 0.0)

    if phase is Phase.DISENGAGE:
        if inputs.insertion_depth <= 0.0:
            nxt = replace(state, phase=Phase.IDLE, entry_time=inputs.time,
                          force_schedule_index=0, below_threshold_timer=0.0)
            return nxt, _outputs_for(Phase.IDLE, 0.0)
        return state, _outputs_for(Phase.DISENGAGE, DISENGAGE_FORCE)

    raise AssertionError(f"unreachable phase {phase}")


def manual_reset(state: FsmState) -> FsmState:
    """Clear the freeze latch; the automaton resumes in Idle."""
    return FsmState(Phase.IDLE, state.entry_time,
                    prev_treatment_depth=state.prev_treatment_depth)


@dataclass(frozen=True)
class SafetyFlags:
    fracture_risk: bool = False
    rapid_motion: bool = False

    @property
    def any(self) -> bool:
        return self.fracture_risk or self.rapid_motion


def safety_monitor(wrench_f: Wrench6, file: FileModel,
                   patient_speed: float) -> SafetyFlags:
    """Hard safety thresholds checked every tick.

    Fracture risk when the apical force or axial torque exceeds the
    file limits; rapid motion when the estimated patient speed exceeds
    the tracking envelope.
    """
    fracture = (abs(wrench_f.force[2]) > file.max_apical_force
                or abs(wrench_f.torque[2]) > file.max_axial_torque)
    rapid = patient_speed > MAX_PATIENT_SPEED
    return SafetyFlags(fracture_risk=fracture, rapid_motion=rapid)
