"""Batch experiment runner: turns the library's analyses into artifacts.

Every run resolves its configuration (built-in defaults, then an optional
scenario file, then --set overrides), writes the resolved form to
manifest.json, executes, and leaves results.csv plus rendered figures in
the output directory. results.csv carries no wall-clock data, so a rerun
with the same configuration and seed is byte-identical; timestamps live
only in the manifest. Rows are flushed as they are produced, so a failed
run leaves its partial results behind.

Exit codes: 0 success, 2 configuration error (malformed scenario,
unknown keys, bad flag values; no results.csv is created), 3 numerical
failure (aborted episode, non-finite result; partial rows kept).

Commands:
  mc-sensitivity  pose-error statistics under string-length disturbance
  workspace       stroke-feasible full-dexterity occupancy grid
  interference    string/prism minimum separations on a random trajectory
  align           3 schemes x 3 speeds tracking comparison (9 episodes)
  episode         one scenario file end to end, full log + report figures
  sweep-ka        admittance-gain sweep, 5 repetitions per value
  sweep-kf        flexibility-gain sweep plus the oscillation pair
  calib-demo      TCP + gravity identification on synthetic ground truth
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from types import SimpleNamespace

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import yaml

from . import __version__
from .control import ControlMode, tuned_params
from .geometry import RigidTransform, rot_z, rpy_matrix
from .ptm import (PtmConfigVariant, interference_analysis,
                  monte_carlo_sensitivity, random_trajectory,
                  workspace_analysis)
from .robot import tcp_calibrate
from .sensing import (GravityParams, Wrench6, identify_gravity_params)
from .simenv import (CanalModel, PatientTrajectory, Scenario,
                     simulate_episode)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

CSV_VERSION = "1"
SCHEMES = ("admittance", "admittance_flex", "hybrid")


class ConfigError(Exception):
    """Anything wrong with flags or scenario files (exit 2)."""


class NumericalError(Exception):
    """Experiment produced an aborted episode or non-finite result (exit 3)."""


# ---------------------------------------------------------------------------
# experiment recipes
#
# These encode the simulated counterparts of the alignment and tuning
# experiments: a straight canal seated part way so the file genuinely
# rides the walls, a constant apical press so every scheme has to hold
# the seat, and a patient sweeping a slanted circle while nodding.


def comparison_scenario(scheme, speed, seed=0, duration=40.0) -> Scenario:
    """One cell of the 3-scheme x 3-speed alignment comparison."""
    mode, params = scheme_controller(scheme)
    return Scenario(
        name=f"align-{scheme}-{speed}", seed=seed, duration=duration,
        mode=mode, params=params,
        canal=CanalModel.straight(), canal_z=6.0,
        desired_wrench=np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
        trajectories=(PatientTrajectory("slanted_circle", speed=speed),
                      PatientTrajectory("sinusoid_angles")),
    )


def scheme_controller(scheme):
    """(mode, params) for a named control scheme."""
    params = tuned_params()
    if scheme == "admittance":
        return ControlMode.ADMITTANCE_ONLY, dataclasses.replace(
            params, k_f=np.zeros(6))
    if scheme == "admittance_flex":
        return ControlMode.ADMITTANCE_ONLY, params
    if scheme == "hybrid":
        return ControlMode.HYBRID_POSITION_FORCE, params
    raise ConfigError(f"unknown scheme {scheme!r}")


def sweep_scenario(params, seed, duration=15.0) -> Scenario:
    """Gain-sweep cell: force-guided scheme seated 9 mm, patient moving."""
    return Scenario(
        name="sweep", seed=seed, duration=duration,
        mode=ControlMode.ADMITTANCE_ONLY, params=params,
        canal=CanalModel.straight(), canal_z=9.0,
        desired_wrench=np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
        trajectories=(PatientTrajectory("slanted_circle", speed=1.5),
                      PatientTrajectory("sinusoid_angles")),
    )


def oscillation_scenario(k_f, seed, duration=15.0) -> Scenario:
    """Deep-seat oscillation cell: spindle running, load-synchronous wobble.

    Runs the force-guided scheme at half gain so both the compensated and
    the uncompensated arm sit below the contact-loop stability boundary at
    the 12 mm seat; cutting is disabled so the seat depth stays put.
    """
    base = tuned_params()
    params = dataclasses.replace(
        base, k_a=0.5 * base.k_a, k_f=np.array([k_f, k_f, 0, 0, 0, 0.0]))
    straight = CanalModel.straight()
    return Scenario(
        name=f"oscillation-kf{k_f}", seed=seed, duration=duration,
        mode=ControlMode.ADMITTANCE_ONLY, params=params,
        canal=CanalModel(straight.g, straight.h, cut_rate=0.0),
        canal_z=12.0,
        desired_wrench=np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
        trajectories=(PatientTrajectory("slanted_circle", speed=1.5),
                      PatientTrajectory("sinusoid_angles")),
        spindle_rpm=150.0, spindle_direction=1, wobble_gain=0.3,
    )


def compare_controllers(speeds=(1.5, 2.0, 2.5), duration=40.0, seed=0,
                        base=None, t_start=5.0):
    """Run the 9-episode alignment comparison; returns one dict per cell.

    Per cell: per-axis RMS tracking errors (mm, deg) and mean absolute
    wrench components (N, mN.m) over t >= t_start, plus the abort flag.
    base, when given, is a Scenario whose plant/trajectories replace the
    built-in recipe (speed is swapped into its slanted_circle entries).
    """
    rows = []
    for scheme in SCHEMES:
        for speed in speeds:
            sc = _comparison_cell(scheme, speed, seed, duration, base)
            log = simulate_episode(sc)
            rms = log.rms_error(range(6), t_start=t_start)
            mw = log.mean_abs_wrench(range(6), t_start=t_start)
            rows.append({
                "scheme": scheme, "speed_mm_s": speed, "seed": seed,
                "rms_x_mm": rms[0], "rms_y_mm": rms[1], "rms_z_mm": rms[2],
                "rms_roll_deg": rms[3], "rms_pitch_deg": rms[4],
                "rms_yaw_deg": rms[5],
                "mean_f_x_n": mw[0], "mean_f_y_n": mw[1], "mean_f_z_n": mw[2],
                "mean_tau_x_mnm": mw[3], "mean_tau_y_mnm": mw[4],
                "mean_tau_z_mnm": mw[5],
                "aborted": int(log.aborted),
            })
    return rows


def _comparison_cell(scheme, speed, seed, duration, base):
    if base is None:
        return comparison_scenario(scheme, speed, seed=seed,
                                   duration=duration)
    mode, params = scheme_controller(scheme)
    trajectories = tuple(
        dataclasses.replace(tr, speed=speed)
        if tr.kind == "slanted_circle" else tr
        for tr in base.trajectories)
    return dataclasses.replace(
        base, name=f"align-{scheme}-{speed}", seed=seed, duration=duration,
        mode=mode, params=params, trajectories=trajectories)


# ---------------------------------------------------------------------------
# artifact plumbing


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


class ResultsWriter:
    """results.csv with a fixed header; every row hits the disk at once."""

    def __init__(self, out_dir: Path, header):
        self.path = out_dir / "results.csv"
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(header)
        self._fh.flush()
        self.rows = 0

    def row(self, values):
        self._w.writerow([_fmt(v) for v in values])
        self._fh.flush()
        self.rows += 1

    def close(self):
        self._fh.close()


def _write_manifest(out_dir: Path, command, config, status, error=None,
                    artifacts=(), extra=None):
    doc = {
        "command": command,
        "version": __version__,
        "csv_version": CSV_VERSION,
        "config": config,
        "status": status,
        "artifacts": sorted(str(a) for a in artifacts),
        "timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if error is not None:
        doc["error"] = error
    if extra:
        doc.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _savefig(fig, out_dir: Path, name):
    path = out_dir / name
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return path


def _apply_override(data, dotted, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"override path {dotted!r}: no key {k!r}")
        node = node[k]
    if not isinstance(node, dict):
        raise ConfigError(f"override path {dotted!r} does not land in a table")
    node[keys[-1]] = value


def _resolve_scenario(args, default: Scenario) -> Scenario:
    """defaults -> optional scenario file -> --set overrides -> Scenario."""
    data = default.to_dict()
    if getattr(args, "scenario", None):
        path = Path(args.scenario)
        if not path.is_file():
            raise ConfigError(f"scenario file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text())
        except yaml.YAMLError as e:
            raise ConfigError(f"scenario parse error: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError("scenario file must hold a key-value table")
        data = loaded
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"--set {key}: unparseable value: {e}")
        _apply_override(data, key, value)
    try:
        return Scenario.from_dict(data)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid scenario: {e}")


# column picks for the optional gnuplot convenience script, keyed by
# command: (x title, y titles, log axes). Header names, not indices,
# so the script survives column reordering.
_GNUPLOT_HINTS = {
    "mc-sensitivity": ("eps_max_mm", ["mean_error_mm", "max_error_mm"], ""),
    "interference": (None, ["min_distance_mm"], ""),
    "align": ("speed_mm_s", ["rms_x_mm", "rms_y_mm", "rms_z_mm"], "y"),
    "episode": ("t", ["err_x", "err_y", "err_z"], ""),
    "sweep-ka": ("k_a", ["rms_trans_mm"], "y"),
    "sweep-kf": ("k_f", ["rms_trans_mm"], "y"),
    "calib-demo": ("sigma", ["error"], "xy"),
}


def write_gnuplot_script(out_dir: Path, command) -> Path | None:
    """Companion plot.gp rendering results.csv with external tooling."""
    hint = _GNUPLOT_HINTS.get(command)
    if hint is None:
        return None
    xcol, ycols, log = hint
    with open(out_dir / "results.csv") as fh:
        for line in fh:
            if not line.startswith("#"):
                header = next(csv.reader([line]))
                break
        else:
            return None
    idx = {name: k + 1 for k, name in enumerate(header)}
    if any(c not in idx for c in ycols) or (xcol and xcol not in idx):
        return None
    lines = [
        "# gnuplot script for results.csv (generated alongside it)",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set grid",
    ]
    if "x" in log:
        lines.append("set logscale x")
    if "y" in log:
        lines.append("set logscale y")
    xs = idx[xcol] if xcol else 0
    plots = ", ".join(
        f"'results.csv' using {xs}:{idx[c]} with linespoints title '{c}'"
        for c in ycols)
    lines.append(f"plot {plots}")
    path = out_dir / "plot.gp"
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_values(spec, name):
    """'a:b' or 'a:b:n' linspace, or a comma list, as a float array."""
    try:
        if ":" in spec:
            parts = spec.split(":")
            if len(parts) == 2:
                lo, hi, n = float(parts[0]), float(parts[1]), 5
            elif len(parts) == 3:
                lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
            else:
                raise ValueError("too many ':' fields")
            if n < 1:
                raise ValueError("need at least one value")
            return np.linspace(lo, hi, n)
        return np.array([float(v) for v in spec.split(",") if v != ""])
    except ValueError as e:
        raise ConfigError(f"--{name}: {e}")


# ---------------------------------------------------------------------------
# commands


def cmd_mc_sensitivity(args, out_dir):
    variants = ([args.variant] if args.variant != "all"
                else ["proposed", "type_321", "type_222"])
    eps_values = (_parse_values(args.eps_grid, "eps-grid")
                  if args.eps_grid else np.array([args.eps]))
    if np.any(eps_values < 0):
        raise ConfigError("eps values must be nonnegative")
    writer = ResultsWriter(out_dir, [
        "variant", "eps_max_mm", "n", "seed",
        "mean_error_mm", "max_error_mm", "failures"])
    curves = {v: [] for v in variants}
    for tag in variants:
        variant = PtmConfigVariant.by_tag(tag)
        for eps in eps_values:
            res = monte_carlo_sensitivity(variant, float(eps), args.n,
                                          seed=args.seed)
            if not np.isfinite(res.mean_error):
                raise NumericalError(
                    f"no converged trials for {tag} at eps {eps}")
            writer.row([tag, eps, args.n, args.seed,
                        res.mean_error, res.max_error, res.failures])
            curves[tag].append((float(eps), res.mean_error, res.max_error))

    fig, ax = plt.subplots(figsize=(6, 4))
    for tag in variants:
        pts = np.array(curves[tag])
        ax.plot(pts[:, 0], pts[:, 2], "o-", label=f"{tag} max")
        ax.plot(pts[:, 0], pts[:, 1], "s--", label=f"{tag} mean")
    ax.set_xlabel("string disturbance eps_max (mm)")
    ax.set_ylabel("tip position error (mm)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    figs = [_savefig(fig, out_dir, "fig_sensitivity.png")]
    writer.close()
    return writer, figs, {}


def cmd_workspace(args, out_dir):
    if args.resolution <= 0:
        raise ConfigError("--resolution must be positive")
    geom = PtmConfigVariant.by_tag("proposed").geometry
    res = workspace_analysis(geom, resolution=args.resolution)
    writer = ResultsWriter(out_dir, [
        "resolution_mm", "cube_width_mm", "cylinder_contained",
        "cylinder_cells", "cylinder_valid_cells", "valid_fraction"])
    nx = res.valid.shape[0]
    cube = float(res.axes[0][-1] - res.axes[0][0])
    writer.row([res.resolution, cube, res.cylinder_contained,
                res.cylinder_cells, res.cylinder_valid_cells,
                res.valid.mean()])

    fig, axes = plt.subplots(1, 3, figsize=(11, 3.6))
    mid = nx // 2
    planes = [("y", "z", res.valid[mid, :, :]),
              ("x", "z", res.valid[:, mid, :]),
              ("x", "y", res.valid[:, :, mid])]
    extent = [res.axes[0][0], res.axes[0][-1]] * 2
    for k, (ax, (h, v, sl)) in enumerate(zip(axes, planes)):
        ax.imshow(sl.T, origin="lower", extent=extent, cmap="Greens",
                  vmin=0, vmax=1.4)
        ax.set_xlabel(f"{h} (mm)")
        ax.set_ylabel(f"{v} (mm)")
        ax.set_title(f"mid-{'xyz'[k]} slice", fontsize=9)
    figs = [_savefig(fig, out_dir, "fig_workspace.png")]
    writer.close()
    return writer, figs, {"cylinder_contained": bool(res.cylinder_contained)}


def cmd_interference(args, out_dir):
    if args.duration <= 0:
        raise ConfigError("--duration must be positive")
    geom = PtmConfigVariant.by_tag("proposed").geometry
    traj = random_trajectory(duration=args.duration, seed=args.seed)
    res = interference_analysis(geom, traj)
    writer = ResultsWriter(out_dir, ["kind", "i", "j", "min_distance_mm"])
    items = sorted(res.pair_table.items())
    for (kind, i, j), dist in items:
        writer.row([kind, i, j, dist])

    fig, ax = plt.subplots(figsize=(7, 4.2))
    labels = [f"s{i + 1}-{'s' if k == 'ss' else 'h'}{j + 1}"
              for (k, i, j), _ in items]
    values = [d for _, d in items]
    colors = ["tab:blue" if k == "ss" else "tab:orange"
              for (k, _, _), _ in items]
    ax.bar(range(len(values)), values, color=colors)
    ax.axhline(5.0, color="tab:blue", ls="--", lw=1, label="string-string floor")
    ax.axhline(0.2, color="tab:orange", ls="--", lw=1, label="string-prism floor")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("min distance (mm)")
    ax.legend(fontsize=8)
    figs = [_savefig(fig, out_dir, "fig_clearances.png")]
    writer.close()
    return writer, figs, {
        "min_string_string_mm": res.min_string_string,
        "min_string_prism_mm": res.min_string_prism,
        "critical_pair": list(res.critical_pair),
    }


_ALIGN_HEADER = [
    "scheme", "speed_mm_s", "seed",
    "rms_x_mm", "rms_y_mm", "rms_z_mm",
    "rms_roll_deg", "rms_pitch_deg", "rms_yaw_deg",
    "mean_f_x_n", "mean_f_y_n", "mean_f_z_n",
    "mean_tau_x_mnm", "mean_tau_y_mnm", "mean_tau_z_mnm", "aborted"]


def cmd_align(args, out_dir):
    speeds = _parse_values(args.speeds, "speeds")
    if args.duration <= 0:
        raise ConfigError("--duration must be positive")
    base = None
    if args.scenario or args.set:
        base = _resolve_scenario(args, comparison_scenario("hybrid", 2.0))
    rows = compare_controllers(tuple(float(s) for s in speeds),
                               duration=args.duration, seed=args.seed,
                               base=base)
    writer = ResultsWriter(out_dir, _ALIGN_HEADER)
    for r in rows:
        writer.row([r[k] for k in _ALIGN_HEADER])
    if any(r["aborted"] for r in rows):
        raise NumericalError("one or more comparison episodes aborted")

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    for scheme in SCHEMES:
        sel = [r for r in rows if r["scheme"] == scheme]
        v = [r["speed_mm_s"] for r in sel]
        tr = [np.hypot(np.hypot(r["rms_x_mm"], r["rms_y_mm"]), r["rms_z_mm"])
              for r in sel]
        ro = [np.sqrt(r["rms_roll_deg"] ** 2 + r["rms_pitch_deg"] ** 2
                      + r["rms_yaw_deg"] ** 2) for r in sel]
        axes[0].plot(v, tr, "o-", label=scheme)
        axes[1].plot(v, ro, "o-", label=scheme)
    axes[0].set_ylabel("translation RMS (mm)")
    axes[1].set_ylabel("rotation RMS (deg)")
    for ax in axes:
        ax.set_xlabel("patient speed (mm/s)")
        ax.set_yscale("log")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    figs = [_savefig(fig, out_dir, "fig_errors.png")]

    fig, ax = plt.subplots(figsize=(5, 3.8))
    for scheme in SCHEMES:
        sel = [r for r in rows if r["scheme"] == scheme]
        v = [r["speed_mm_s"] for r in sel]
        fl = [0.5 * (r["mean_f_x_n"] + r["mean_f_y_n"]) for r in sel]
        ax.plot(v, fl, "o-", label=scheme)
    ax.set_xlabel("patient speed (mm/s)")
    ax.set_ylabel("mean lateral force (N)")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    figs.append(_savefig(fig, out_dir, "fig_forces.png"))
    writer.close()
    extra = {} if base is None else {"scenario": base.to_dict()}
    return writer, figs, extra


def cmd_episode(args, out_dir):
    if not args.scenario:
        raise ConfigError("episode requires --scenario")
    sc = _resolve_scenario(args, comparison_scenario("hybrid", 2.0))
    log = simulate_episode(sc)
    log.to_csv(out_dir / "results.csv")

    t = log.time
    fig, axes = plt.subplots(2, 1, figsize=(8, 5.6), sharex=True)
    for i, lab in enumerate(["x", "y", "z"]):
        axes[0].plot(t, log.error[:, i], lw=0.7, label=lab)
    for i, lab in enumerate(["roll", "pitch", "yaw"]):
        axes[1].plot(t, log.error[:, 3 + i], lw=0.7, label=lab)
    axes[0].set_ylabel("position error (mm)")
    axes[1].set_ylabel("angle error (deg)")
    axes[1].set_xlabel("time (s)")
    for ax in axes:
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8, ncol=3)
    figs = [_savefig(fig, out_dir, "fig_tracking.png")]

    fig, axes = plt.subplots(2, 1, figsize=(8, 5.6), sharex=True)
    for i, lab in enumerate(["f_x", "f_y", "f_z"]):
        axes[0].plot(t, log.wrench[:, i], lw=0.7, label=lab)
    for i, lab in enumerate(["tau_x", "tau_y", "tau_z"]):
        axes[1].plot(t, log.wrench[:, 3 + i], lw=0.7, label=lab)
    axes[0].set_ylabel("force (N)")
    axes[1].set_ylabel("torque (mN.m)")
    axes[1].set_xlabel("time (s)")
    for ax in axes:
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8, ncol=3)
    figs.append(_savefig(fig, out_dir, "fig_wrench.png"))

    fig, axes = plt.subplots(2, 1, figsize=(8, 4.6), sharex=True)
    axes[0].plot(t, log.depth, label="insertion depth")
    axes[0].plot(t, log.frontier, "--", label="cut frontier")
    axes[0].set_ylabel("depth (mm)")
    axes[0].legend(fontsize=8)
    axes[1].step(t, log.phase, where="post", label="phase")
    axes[1].step(t, log.schedule, where="post", label="schedule index")
    axes[1].step(t, log.spindle / 100.0, where="post", lw=0.7,
                 label="spindle (x100 rpm)")
    axes[1].set_ylabel("workflow")
    axes[1].set_xlabel("time (s)")
    axes[1].legend(fontsize=8)
    for ax in axes:
        ax.grid(alpha=0.3)
    figs.append(_savefig(fig, out_dir, "fig_phases.png"))

    if log.aborted:
        raise NumericalError(f"episode aborted: {log.abort_reason}")
    writer = SimpleNamespace(path=out_dir / "results.csv", rows=len(log.time))
    extra = {"scenario": sc.to_dict(),
             "config_hash": log.metadata.get("config_hash"),
             "final_depth_mm": float(log.depth[-1])}
    return writer, figs, extra


def _sweep_point(job):
    """Worker for gain sweeps: one episode, small metric dict back."""
    sc, value = job
    log = simulate_episode(sc)
    rms = log.rms_error([0, 1, 2], t_start=2.0)
    p2p = float(np.hypot(log.peak_to_peak_error(0, t_start=2.0),
                         log.peak_to_peak_error(1, t_start=2.0)))
    return {"value": value, "seed": sc.seed, "rms": rms,
            "trans": float(np.linalg.norm(rms)), "p2p": p2p,
            "aborted": log.aborted}


def _run_pool(jobs, workers):
    if workers <= 1:
        return [_sweep_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_point, jobs))


def _sweep_figure(out_dir, results, values, xlabel):
    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    means, stds = [], []
    for v in values:
        pts = [r["trans"] for r in results if r["value"] == v]
        means.append(np.mean(pts))
        stds.append(np.std(pts))
    ax.errorbar(values, means, yerr=stds, fmt="o-", capsize=3)
    k = int(np.argmin(means))
    ax.plot(values[k], means[k], "r*", ms=14, label=f"min at {values[k]:g}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("translation RMS (mm)")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _savefig(fig, out_dir, "fig_sweep.png")


def cmd_sweep_ka(args, out_dir):
    values = _parse_values(args.values, "values")
    if args.reps < 1:
        raise ConfigError("--reps must be at least 1")
    base = tuned_params()
    jobs = []
    for ka in values:
        if ka < 0:
            raise ConfigError("k_a values must be nonnegative")
        params = dataclasses.replace(
            base, k_a=np.where(base.k_a != 0, ka, 0.0))
        for rep in range(args.reps):
            jobs.append((sweep_scenario(params, args.seed + rep,
                                        duration=args.duration), float(ka)))
    results = _run_pool(jobs, args.workers)
    writer = ResultsWriter(out_dir, [
        "k_a", "seed", "rms_x_mm", "rms_y_mm", "rms_z_mm", "rms_trans_mm"])
    for r in results:
        writer.row([r["value"], r["seed"], r["rms"][0], r["rms"][1],
                    r["rms"][2], r["trans"]])
    figs = [_sweep_figure(out_dir, results, values, "admittance gain k_a")]
    writer.close()
    if any(r["aborted"] for r in results):
        raise NumericalError("one or more sweep episodes aborted")
    return writer, figs, {}


def cmd_sweep_kf(args, out_dir):
    values = _parse_values(args.values, "values")
    if args.reps < 1:
        raise ConfigError("--reps must be at least 1")
    if np.any(values < 0):
        raise ConfigError("k_f values must be nonnegative")
    base = tuned_params()
    jobs = []
    for kf in values:
        params = dataclasses.replace(
            base, k_f=np.array([kf, kf, 0.0, 0.0, 0.0, 0.0]))
        for rep in range(args.reps):
            jobs.append((sweep_scenario(params, args.seed + rep,
                                        duration=args.duration), float(kf)))
    pair_jobs = []
    for kf in (0.0, 0.8):
        for rep in range(args.reps):
            pair_jobs.append((oscillation_scenario(kf, args.seed + rep,
                                                   duration=args.duration),
                              float(kf)))
    results = _run_pool(jobs, args.workers)
    pair = _run_pool(pair_jobs, args.workers)
    writer = ResultsWriter(out_dir, [
        "experiment", "k_f", "seed", "rms_x_mm", "rms_y_mm", "rms_z_mm",
        "rms_trans_mm", "p2p_lateral_mm"])
    for r in results:
        writer.row(["error_sweep", r["value"], r["seed"], r["rms"][0],
                    r["rms"][1], r["rms"][2], r["trans"], r["p2p"]])
    for r in pair:
        writer.row(["oscillation_pair", r["value"], r["seed"], r["rms"][0],
                    r["rms"][1], r["rms"][2], r["trans"], r["p2p"]])
    figs = [_sweep_figure(out_dir, results, values, "flexibility gain k_f")]

    # oscillation pair: lateral error traces, compensated vs not
    fig, ax = plt.subplots(figsize=(7, 3.6))
    for kf, color in ((0.0, "tab:red"), (0.8, "tab:green")):
        log = simulate_episode(oscillation_scenario(kf, args.seed,
                                                    duration=args.duration))
        lat = np.hypot(log.error[:, 0], log.error[:, 1])
        ax.plot(log.time, lat, color=color, lw=0.8,
                label=f"k_f = {kf:g}")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("lateral error (mm)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    figs.append(_savefig(fig, out_dir, "fig_oscillation.png"))
    writer.close()
    if any(r["aborted"] for r in results + pair):
        raise NumericalError("one or more sweep episodes aborted")
    return writer, figs, {}


def _tcp_truth_poses(rng, sigma):
    """Synthetic two-file pivot calibration set with ground truth."""
    z = np.array([0.12, -0.08, 0.99])
    z /= np.linalg.norm(z)
    x = np.array([1.0, 0.0, 0.0]) - z[0] * z
    x /= np.linalg.norm(x)
    R_RF = np.column_stack([x, np.cross(z, x), z])
    t_F = np.array([40.0, -25.0, 155.0])
    len1, len2 = 25.0, 21.0
    tips = [t_F + len1 * z, t_F + len2 * z]
    pivots = [np.array([380.0, 40.0, 120.0]), np.array([360.0, -30.0, 110.0])]
    pose_sets = []
    for tip, pivot in zip(tips, pivots):
        poses = []
        for k in range(4):
            R = rpy_matrix(*rng.uniform(-35.0, 35.0, 3))
            t = pivot - R @ tip + sigma * rng.standard_normal(3)
            poses.append(RigidTransform(R, t))
        pose_sets.append(poses)
    return pose_sets, t_F, z, len1


def _gravity_truth_samples(rng, sigma, n=12):
    truth = GravityParams(w_h=np.array([0.31, -0.22, -8.4]),
                          r_h=np.array([3.1, -12.0, 38.0]),
                          R_SR=rot_z(24.0))
    samples = []
    for k in range(n):
        R_RG = rpy_matrix(*rng.uniform(-80.0, 80.0, 3))
        f_g = truth.R_SR @ R_RG @ truth.w_h
        f = f_g + sigma * rng.standard_normal(3)
        tau = np.cross(truth.r_h, f_g) + sigma * rng.standard_normal(3)
        samples.append((R_RG, Wrench6(f, tau)))
    return samples, truth


def cmd_calib_demo(args, out_dir):
    sigmas = np.r_[0.0, np.geomspace(1e-4, 1e-1, args.sigma_steps)]
    writer = ResultsWriter(out_dir, ["problem", "sigma", "seed", "error"])
    curves = {"tcp": [], "gravity": []}
    for sigma in sigmas:
        tcp_errs, grav_errs = [], []
        for rep in range(args.reps):
            rng = np.random.default_rng(args.seed + 1000 * rep)
            pose_sets, t_F, z_true, len1 = _tcp_truth_poses(rng, sigma)
            cal = tcp_calibrate(pose_sets[0], pose_sets[1], len1)
            err = np.linalg.norm(cal.t_F - t_F)
            writer.row(["tcp", sigma, args.seed + 1000 * rep, err])
            tcp_errs.append(err)
            samples, truth = _gravity_truth_samples(rng, sigma)
            est = identify_gravity_params(samples)
            gerr = np.linalg.norm(est.w_h - truth.w_h)
            writer.row(["gravity", sigma, args.seed + 1000 * rep, gerr])
            grav_errs.append(gerr)
        curves["tcp"].append(np.mean(tcp_errs))
        curves["gravity"].append(np.mean(grav_errs))

    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    pos = sigmas > 0
    ax.loglog(sigmas[pos], np.array(curves["tcp"])[pos], "o-",
              label="tool origin error (mm)")
    ax.loglog(sigmas[pos], np.array(curves["gravity"])[pos], "s-",
              label="weight vector error (N)")
    ref = sigmas[pos]
    ax.loglog(ref, ref * (curves["tcp"][-1] / ref[-1]), "k:",
              lw=1, label="slope 1")
    ax.set_xlabel("measurement noise sigma")
    ax.set_ylabel("identification error")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    figs = [_savefig(fig, out_dir, "fig_convergence.png")]
    writer.close()
    noiseless = {"tcp_error_mm": curves["tcp"][0],
                 "gravity_error_n": curves["gravity"][0]}
    return writer, figs, noiseless


# ---------------------------------------------------------------------------
# argument surface


def build_parser():
    p = argparse.ArgumentParser(
        prog="endosim",
        description="batch experiment runner (CSV + figures per run)")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default=None,
                        help="output directory (default $ENDOSIM_OUT or "
                             "endosim-out, plus /<command>)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--scenario", default=None,
                        help="scenario file (YAML key-value tables)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a scenario entry (dotted keys)")
        sp.add_argument("--gnuplot-script", action="store_true",
                        help="also emit plot.gp for external plotting")

    sp = sub.add_parser("mc-sensitivity",
                        help="pose error under string disturbance")
    common(sp)
    sp.add_argument("--variant", default="proposed",
                    choices=["proposed", "type_321", "type_222", "all"])
    sp.add_argument("--eps", type=float, default=0.2,
                    help="uniform disturbance bound (mm)")
    sp.add_argument("--eps-grid", default=None,
                    help="sweep eps instead: 'lo:hi[:n]' or comma list")
    sp.add_argument("--n", type=int, default=10000)
    sp.set_defaults(func=cmd_mc_sensitivity)

    sp = sub.add_parser("workspace", help="stroke-feasible occupancy grid")
    common(sp)
    sp.add_argument("--resolution", type=float, default=1.0,
                    help="grid spacing (mm)")
    sp.set_defaults(func=cmd_workspace)

    sp = sub.add_parser("interference",
                        help="string/prism separations on a random trajectory")
    common(sp)
    sp.add_argument("--duration", type=float, default=500.0,
                    help="trajectory length (s)")
    sp.set_defaults(func=cmd_interference)

    sp = sub.add_parser("align",
                        help="3 control schemes x 3 speeds comparison")
    common(sp)
    sp.add_argument("--speeds", default="1.5,2.0,2.5",
                    help="patient speeds (mm/s), comma list or lo:hi[:n]")
    sp.add_argument("--duration", type=float, default=40.0)
    sp.set_defaults(func=cmd_align)

    sp = sub.add_parser("episode", help="run one scenario end to end")
    common(sp)
    sp.set_defaults(func=cmd_episode)

    sp = sub.add_parser("sweep-ka", help="admittance gain sweep")
    common(sp)
    sp.add_argument("--values", default="0.64:1.6:5",
                    help="gain values: 'lo:hi[:n]' or comma list")
    sp.add_argument("--reps", type=int, default=5,
                    help="repetitions per value (seeds seed..seed+reps-1)")
    sp.add_argument("--duration", type=float, default=15.0)
    sp.add_argument("--workers", type=int, default=1,
                    help="episode worker processes")
    sp.set_defaults(func=cmd_sweep_ka)

    sp = sub.add_parser("sweep-kf",
                        help="flexibility gain sweep + oscillation pair")
    common(sp)
    sp.add_argument("--values", default="0:1.2:7",
                    help="gain values: 'lo:hi[:n]' or comma list")
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--duration", type=float, default=15.0)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep_kf)

    sp = sub.add_parser("calib-demo",
                        help="TCP + gravity identification convergence")
    common(sp)
    sp.add_argument("--sigma-steps", type=int, default=7,
                    help="noise grid points between 1e-4 and 1e-1")
    sp.add_argument("--reps", type=int, default=3)
    sp.set_defaults(func=cmd_calib_demo)
    return p


def _config_dict(args):
    skip = {"func", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out_root = os.environ.get("ENDOSIM_OUT", "endosim-out")
    out_dir = Path(args.out) if args.out else Path(out_root) / args.command
    config = _config_dict(args)
    started = time.time()

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"error: cannot create output directory: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        writer, figs, extra = args.func(args, out_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        _write_manifest(out_dir, args.command, config, "config-error",
                        error={"type": "config", "message": str(e),
                               "exit_code": EXIT_CONFIG})
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        _write_manifest(out_dir, args.command, config, "numerical-failure",
                        error={"type": "numerical", "message": str(e),
                               "exit_code": EXIT_NUMERIC})
        return EXIT_NUMERIC
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        _write_manifest(out_dir, args.command, config, "numerical-failure",
                        error={"type": "numerical", "message": repr(e),
                               "exit_code": EXIT_NUMERIC})
        return EXIT_NUMERIC

    artifacts = [writer.path.name] + [f.name for f in figs]
    if getattr(args, "gnuplot_script", False):
        gp = write_gnuplot_script(out_dir, args.command)
        if gp is not None:
            artifacts.append(gp.name)
    extra = dict(extra or {})
    extra["rows"] = writer.rows
    extra["wall_time_s"] = round(time.time() - started, 3)
    _write_manifest(out_dir, args.command, config, "ok",
                    artifacts=artifacts, extra=extra)
    print(f"{args.command}: {writer.rows} rows, "
          f"{len(figs)} figures -> {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
