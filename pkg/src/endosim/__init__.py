"""endosim: simulation and numerics for a string-tracked endodontic robot.

Modules:
  geometry  frame algebra (poses, transforms, rotation distance)
  robot     serial 6-DoF arm: DH kinematics, Jacobian, TCP calibration
  ptm       string-based patient tracking: pose estimation and analyses
  sensing   force/torque pipeline: gravity compensation, frame transfer
  flexfile  endodontic-file flexibility model
  control   two-rate hybrid position/force controller
  workflow  five-state cleaning-and-shaping automaton
  simenv    simulated patient, root-canal plant, episode loop
  cli       batch experiment runner (CSV + figures)
"""

__version__ = "0.1.0"
