"""File formats for runs: CSV with 17-significant-digit floats, JSON metadata.

All delimited output is comma-separated with a header row and LF line
endings; every reload names the offending file on parse errors.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .background import Background, make_background
from .elliptic import EllipticSolution
from .flow import SUMMARY_COLUMNS, FlowControls, FlowState, Trajectory
from .grid import build_grid


class ArtifactError(RuntimeError):
    pass


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def write_csv(path, header, columns) -> None:
    columns = [np.asarray(c, dtype=float) for c in columns]
    if len(columns) != len(header):
        raise ValueError("one column per header entry required")
    rows = len(columns[0]) if columns else 0
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            fh.write(",".join(format_float(c[i]) for c in columns) + "\n")


def read_csv(path):
    """Returns (header list, dict column name -> float array)."""
    try:
        with open(path, "r") as fh:
            lines = [line.rstrip("\n") for line in fh if line.strip()]
        header = lines[0].split(",")
        data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    except (OSError, ValueError, IndexError) as exc:
        raise ArtifactError(f"cannot parse CSV artifact {path}: {exc}") from exc
    if data.size and data.shape[1] != len(header):
        raise ArtifactError(f"cannot parse CSV artifact {path}: ragged rows")
    if data.size == 0:
        data = np.zeros((0, len(header)))
    return header, {name: data[:, i] for i, name in enumerate(header)}


def write_json(path, payload) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, "r") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot parse JSON artifact {path}: {exc}") from exc


def _checkpoint_name(index: int, t: float) -> str:
    k = math.log2(t) if t > 0 else None
    if k is not None and abs(k - round(k)) < 1e-9:
        return f"checkpoint_k{int(round(k)):02d}.csv"
    return "checkpoint_final.csv"


def save_trajectory(traj: Trajectory, dirpath) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    write_csv(dirpath / "summary.csv", list(SUMMARY_COLUMNS),
              [traj.summary[c] for c in SUMMARY_COLUMNS])
    files = []
    for i, state in enumerate(traj.checkpoints):
        name = _checkpoint_name(i, state.t)
        write_csv(dirpath / name, ["r", "u"], [traj.background.grid.nodes, state.u])
        files.append({"file": name, "t": state.t, "step_index": state.step_index})
    write_csv(dirpath / "initial.csv", ["r", "u"],
              [traj.background.grid.nodes, traj.initial.u])
    controls = traj.controls
    write_json(dirpath / "meta.json", {
        "checkpoints": files,
        "aborted": traj.aborted,
        "controls": {
            "dt_warmup": controls.dt_warmup,
            "warmup_until": controls.warmup_until,
            "eta": controls.eta,
            "dt_min": controls.dt_min,
            "newton_tol": controls.newton_tol,
            "newton_max_iter": controls.newton_max_iter,
            "max_halvings": controls.max_halvings,
            "boundary_value": controls.boundary_value,
        },
        "steps_logged": int(traj.summary["t"].size),
    })


def load_trajectory(dirpath, background: Background) -> Trajectory:
    dirpath = Path(dirpath)
    meta = read_json(dirpath / "meta.json")
    header, summary = read_csv(dirpath / "summary.csv")
    if tuple(header) != SUMMARY_COLUMNS:
        raise ArtifactError(f"unexpected summary header in {dirpath/'summary.csv'}")
    checkpoints = []
    for entry in meta["checkpoints"]:
        _, cols = read_csv(dirpath / entry["file"])
        checkpoints.append(FlowState(entry["t"], cols["u"], entry["step_index"]))
    _, init_cols = read_csv(dirpath / "initial.csv")
    controls = FlowControls(**meta["controls"])
    return Trajectory(background=background, checkpoints=checkpoints, summary=summary,
                      controls=controls, initial=FlowState(0.0, init_cols["u"], 0),
                      aborted=meta["aborted"])


def save_solution(sol: EllipticSolution, grid_nodes, dirpath) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    write_csv(dirpath / f"{sol.equation_tag}.csv", ["r", "value"], [grid_nodes, sol.values])
    write_json(dirpath / f"{sol.equation_tag}.meta.json", {
        "residual_sup": sol.residual_sup,
        "decay_exponent": None if math.isnan(sol.decay_exponent) else sol.decay_exponent,
        "newton_iters": sol.newton_iters,
        "equation_tag": sol.equation_tag,
    })


def load_solution(dirpath, tag: str) -> EllipticSolution:
    dirpath = Path(dirpath)
    _, cols = read_csv(dirpath / f"{tag}.csv")
    meta = read_json(dirpath / f"{tag}.meta.json")
    decay = meta["decay_exponent"]
    return EllipticSolution(cols["value"], meta["residual_sup"],
                            math.nan if decay is None else decay,
                            meta["newton_iters"], meta["equation_tag"])


def background_from_config(config: dict) -> Background:
    g = config["grid"]
    grid = build_grid(g["dimension"], g["nodes"], g["r_max"], g["grading"])
    b = config["background"]
    return make_background(grid, b["kind"], b.get("params", {}))
