"""CSV emission for metric tables and figure data.

All numbers are written with ``repr(float)`` so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dataset import Trajectory

SAE_POD_HEADER = ("variable", "MSE_SAE", "MSE_POD")
SPNN_UC_HEADER = ("variable", "MSE_SPNN", "MSE_UC")
DEFAULT_TRACE_NODES = (20, 40, 60, 80)


def _fmt(v) -> str:
    return repr(float(v))


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0], *[_fmt(v) for v in row[1:]]])


def read_table(path) -> dict[str, dict[str, float]]:
    """Read a metric table into ``{variable: {column: value}}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    return {r[0]: {h: float(x) for h, x in zip(header[1:], r[1:])} for r in rows[1:]}


def joint_table(left: dict, right: dict) -> list[tuple]:
    """Rows ``(variable, left[var], right[var])`` in ``left``'s order."""
    missing = set(left) ^ set(right)
    if missing:
        raise ValueError(f"tables disagree on variables: {sorted(missing)}")
    return [(k, left[k], right[k]) for k in left]


def write_sae_pod(path, sae_mse: dict, pod_mse: dict) -> None:
    write_rows(path, SAE_POD_HEADER, joint_table(sae_mse, pod_mse))


def write_spnn_uc(path, spnn_mse: dict, uc_mse: dict) -> None:
    write_rows(path, SPNN_UC_HEADER, joint_table(spnn_mse, uc_mse))


def write_metrics(path, mse: dict, column: str) -> None:
    write_rows(path, ("variable", column), [(k, v) for k, v in mse.items()])


def wins(mine: dict, other: dict) -> int:
    """Number of variables where ``mine`` has strictly lower error."""
    return sum(mine[k] < other[k] for k in mine)


def write_latent(path, times, codes) -> None:
    codes = np.atleast_2d(codes)
    header = ("t", *[f"x{i + 1}" for i in range(codes.shape[1])])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, row in zip(times, codes):
            w.writerow([_fmt(t), *[_fmt(v) for v in row]])


def write_thermo(path, times, dEdt, dSdt) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "dEdt", "dSdt"))
        for row in zip(times, dEdt, dSdt):
            w.writerow([_fmt(v) for v in row])


def write_traces(out_dir, traj: Trajectory, predictions: dict[str, np.ndarray],
                 nodes=DEFAULT_TRACE_NODES, prefix: str = "traces") -> list[Path]:
    """One CSV per scalar variable with ground truth and predicted time series at ``nodes``.

    ``predictions`` maps a label (e.g. ``"SPNN"``) to a decoded snapshot matrix
    aligned with ``traj``. Nodes beyond the mesh are skipped.
    """
    out_dir = Path(out_dir)
    nodes = [n for n in nodes if 0 <= n < traj.n_nodes]
    n_rows = min([traj.n_snapshots, *[p.shape[0] for p in predictions.values()]])
    written = []
    for var, cols in traj.variable_columns().items():
        header = ["t"]
        series = [traj.times[:n_rows]]
        for n in nodes:
            header.append(f"GT_{n}")
            series.append(traj.snapshots[:n_rows, cols[n]])
            for label, pred in predictions.items():
                header.append(f"{label}_{n}")
                series.append(pred[:n_rows, cols[n]])
        path = out_dir / f"{prefix}_{var}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in zip(*series):
                w.writerow([_fmt(v) for v in row])
        written.append(path)
    return written
