"""On-disk formats: trajectory and training-log CSVs, gain and report JSON.

Floats are written with ``repr`` so files round-trip exactly and two identical
runs produce identical bytes.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..sgdmax import StructuredGain, TrainLog
from .simulation import Trajectory

TRAIN_LOG_COLUMNS = ("iter", "r0", "rc", "lambda", "grad_norm", "spectral_radius", "elapsed_s")
_STATE_NAMES = ("df", "dPG", "dPtie", "z")


def _fmt(v) -> str:
    return repr(float(v))


def trajectory_header(n_areas: int, n_inputs: int | None = None, n_dist: int | None = None) -> list[str]:
    header = ["t"]
    for i in range(1, n_areas + 1):
        header += [f"{name}_{i}" for name in _STATE_NAMES]
    header += [f"u_{i}" for i in range(1, (n_inputs or n_areas) + 1)]
    header += [f"w_{i}" for i in range(1, (n_dist or n_areas) + 1)]
    return header


def write_trajectory_csv(path, traj: Trajectory) -> None:
    n_areas = traj.x.shape[1] // len(_STATE_NAMES)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(trajectory_header(n_areas, traj.u.shape[1], traj.w.shape[1]))
        for k in range(len(traj)):
            row = [traj.t[k], *traj.x[k], *traj.u[k], *traj.w[k]]
            writer.writerow([_fmt(v) for v in row])


def read_trajectory_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def write_train_log_csv(path, train_log: TrainLog) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAIN_LOG_COLUMNS)
        for rec in train_log.records:
            writer.writerow(
                [rec.iteration]
                + [_fmt(v) for v in (rec.r0, rec.rc, rec.lam, rec.grad_norm, rec.spectral_radius, rec.elapsed_s)]
            )


def read_train_log_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    return {col: np.array([float(r[col]) for r in rows]) for col in TRAIN_LOG_COLUMNS}


def _dump(path, obj) -> None:
    # allow_nan keeps inf/nan readable by Python; callers map them to null where it matters
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def write_gain_json(path, K: StructuredGain) -> None:
    _dump(path, K.to_json())


def read_gain_json(path) -> StructuredGain:
    with open(path) as fh:
        return StructuredGain.from_json(json.load(fh))


def write_snapshots_json(path, train_log: TrainLog) -> None:
    _dump(path, {"snapshots": [{"iter": j, "K": K.to_json()} for j, K in train_log.snapshots]})


def read_snapshots_json(path) -> list[tuple[int, StructuredGain]]:
    with open(path) as fh:
        obj = json.load(fh)
    return [(item["iter"], StructuredGain.from_json(item["K"])) for item in obj["snapshots"]]


def write_json(path, obj) -> None:
    _dump(path, obj)


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
