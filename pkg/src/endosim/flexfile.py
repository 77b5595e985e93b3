"""Endodontic file flexibility model.

A NiTi rotary file bends under lateral contact: the sensed radial force
and torque give an effective leverage length, an Euler-Bernoulli
cantilever formula gives the tip deflection, and a virtual spring turns
the deflection into a compensation wrench for the admittance loop.

Units: force N, torque mN.m, length mm, E in N/mm^2. The quotient
tau/f (mN.m over N) is a length in mm directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sensing import Wrench6

ACTIVATION_THRESHOLD = 0.03   # N; radial forces below this are sensor floor


@dataclass
class FileModel:
    """Uniform-diameter cantilever model of a rotary file."""

    length: float = 21.0               # mm
    youngs_modulus: float = 80000.0    # N/mm^2 (80 GPa NiTi)
    effective_diameter: float = 0.6    # mm, half the max flute diameter
    max_apical_force: float = 3.9      # N
    max_axial_torque: float = 12.0     # mN.m

    def __post_init__(self):
        if self.length <= 0 or self.youngs_modulus <= 0 \
                or self.effective_diameter <= 0:
            raise ValueError("file dimensions and modulus must be positive")

    @property
    def second_moment(self) -> float:
        """Area moment of the circular cross-section, mm^4."""
        return np.pi * self.effective_diameter ** 4 / 64.0

    @property
    def bending_stiffness(self) -> float:
        """EI in N.mm^2."""
        return self.youngs_modulus * self.second_moment


def protaper_sx_f3() -> FileModel:
    """ProTaper SX-F3 preset: 21 mm working length, defaults otherwise."""
    return FileModel(length=21.0)


def leverage_length(f_radial, tau_radial, file: FileModel,
                    threshold=ACTIVATION_THRESHOLD) -> float:
    """Effective leverage length l_a = tau/f, clamped to [0, length].

    Below the activation threshold the sensed force is noise floor and
    the quotient is meaningless, so 0 is returned.
    """
    f = abs(float(f_radial))
    if f < threshold:
        return 0.0
    la = abs(float(tau_radial)) / f
    return float(np.clip(la, 0.0, file.length))


def tip_deflection(f_radial, l_a, file: FileModel) -> float:
    """Cantilever tip deflection under a point load l_a out from the clamp.

    delta = f l_a^2 (3l - l_a) / (6 E I); at l_a = l this is the end-load
    case f l^3 / (3 E I). Sign follows the force.
    """
    l_a = float(l_a)
    if not 0.0 <= l_a <= file.length + 1e-12:
        raise ValueError("leverage length outside [0, file length]")
    return float(f_radial) * l_a ** 2 * (3.0 * file.length - l_a) \
        / (6.0 * file.bending_stiffness)


def flexibility_wrench(wrench_f: Wrench6, file: FileModel, k_f,
                       threshold=ACTIVATION_THRESHOLD) -> Wrench6:
    """Virtual-spring compensation wrench from a file-frame wrench.

    Bending about y deflects the tip along x and vice versa, so delta_x
    comes from (f_x, tau_y) and delta_y from (f_y, tau_x), each axis
    treated independently. The virtual force shares the sign of the
    measured lateral force, enlarging the admittance path adjustment.
    Output force is [k_f delta_x, k_f delta_y, 0]; torque is zero.
    """
    if wrench_f.frame != "F":
        raise ValueError("flexibility compensation expects a file-frame wrench")
    fx, fy = wrench_f.force[0], wrench_f.force[1]
    tau_x, tau_y = wrench_f.torque[0], wrench_f.torque[1]
    out = np.zeros(3)
    for axis, (f, tau) in enumerate(((fx, tau_y), (fy, tau_x))):
        la = leverage_length(f, tau, file, threshold)
        if la > 0.0:
            out[axis] = k_f * abs(tip_deflection(f, la, file)) * np.sign(f)
    return Wrench6(out, np.zeros(3), frame="F")
