"""End-to-end stages shared by the command line and the acceptance suite.

Every stage reads its inputs from, and writes its outputs to, one run
directory. File names are fixed so downstream stages can find upstream
artifacts.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import report
from .baseline import train_uc
from .config import couette_params, save_config
from .couette import generate
from .dataset import SplitIndex, Trajectory, ingest_external, load_trajectory, save_trajectory, split
from .pod import PODReducer, pod_for, test_pod
from .rollout import rollout
from .sae import BlockSparseAutoencoder, load_sae, test_sae, train_sae
from .spnn import load_integrator, train_spnn
from .synthetic import block_dynamics

logger = logging.getLogger(__name__)

TRAJECTORY = "trajectory.traj"
SAE_MODEL = "sae.model"
POD_MODEL = "pod.model"
SPNN_MODEL = "spnn.model"
UC_MODEL = "uc.model"
CONFIG = "config.json"
SAE_METRICS = "sae_metrics.csv"
POD_METRICS = "pod_metrics.csv"
ROLLOUT_SPNN = "rollout_spnn.csv"
ROLLOUT_UC = "rollout_uc.csv"
ROLLOUT_METRICS = "rollout_metrics.csv"
TABLE_SAE_POD = "table_sae_pod.csv"
TABLE_SPNN_UC = "table_spnn_uc.csv"


class MissingArtifactError(FileNotFoundError):
    pass


def _need(out: Path, name: str, producer: str) -> Path:
    path = out / name
    if not path.exists():
        raise MissingArtifactError(f"{path} not found; run `{producer}` with --out {out} first")
    return path


def _write_history(path, history: dict[str, np.ndarray]) -> None:
    names = list(history)
    n = max(len(h) for h in history.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", *names])
        for i in range(n):
            w.writerow([i, *[repr(float(history[k][i])) if i < len(history[k]) else "" for k in names]])


def build_trajectory(cfg: dict) -> Trajectory:
    data = cfg["data"]
    gen = data["generator"]
    if gen == "couette":
        return generate(couette_params(cfg))
    if gen == "blocks":
        kw = {k: v for k, v in data.items() if k != "generator"}
        return block_dynamics(**kw)
    return ingest_external(data["path"], data.get("layout"), data.get("n_nodes"),
                           data.get("dt", 1.0), data.get("normalize"))


def snapshot_split(traj: Trajectory, cfg: dict) -> SplitIndex:
    s = cfg["split"]
    return split(traj.n_snapshots, s["fraction"], s["seed"])


def transition_split(traj: Trajectory, cfg: dict) -> SplitIndex:
    s = cfg["split"]
    return split(traj.n_snapshots - 1, s["fraction"], s["seed"])


def learned_pod_size(sae, cfg: dict):
    """POD size: configured ``pod.d``, else the autoencoder's active dimension (per block if blocked)."""
    d = cfg["pod"].get("d")
    if isinstance(sae, BlockSparseAutoencoder):
        return dict(d) if isinstance(d, dict) else dict(sae.block_active_)
    return int(d) if d is not None else sae.n_active_


# --- stages -----------------------------------------------------------------

def gen_data(cfg: dict, out: Path) -> Trajectory:
    out.mkdir(parents=True, exist_ok=True)
    traj = build_trajectory(cfg)
    save_trajectory(out / TRAJECTORY, traj)
    save_config(cfg, out / CONFIG)
    logger.info("trajectory: N_T=%d D=%d", traj.n_snapshots, traj.D)
    return traj


def stage_train_sae(cfg: dict, out: Path):
    traj = load_trajectory(_need(out, TRAJECTORY, "gen-data"))
    sp = snapshot_split(traj, cfg)
    model, history = train_sae(traj, sp, cfg["sae"])
    model.save(out / SAE_MODEL, extra={"split_seed": sp.seed})
    _write_history(out / "sae_history.csv", history)
    save_config(cfg, out / CONFIG)
    logger.info("active latent dimension d=%d", model.n_active_)
    return model


def stage_eval_sae(cfg: dict, out: Path) -> dict:
    traj = load_trajectory(_need(out, TRAJECTORY, "gen-data"))
    sae = load_sae(_need(out, SAE_MODEL, "train-sae"))
    mse = test_sae(sae, traj, snapshot_split(traj, cfg))
    report.write_metrics(out / SAE_METRICS, mse, "MSE_SAE")
    save_config(cfg, out / CONFIG)
    return mse


def stage_pod(cfg: dict, out: Path) -> dict:
    traj = load_trajectory(_need(out, TRAJECTORY, "gen-data"))
    sae = load_sae(_need(out, SAE_MODEL, "train-sae"))
    sp = snapshot_split(traj, cfg)
    d = learned_pod_size(sae, cfg)
    model = pod_for(traj, sp, d, per_block=isinstance(d, dict))
    model.save(out / POD_MODEL, extra={"d": d})
    mse = test_pod(model, traj, sp)
    report.write_metrics(out / POD_METRICS, mse, "MSE_POD")
    save_config(cfg, out / CONFIG)
    return mse


def _train_integrator(cfg: dict, out: Path, section: str, trainer, filename: str):
    traj = load_trajectory(_need(out, TRAJECTORY, "gen-data"))
    sae = load_sae(_need(out, SAE_MODEL, "train-sae"))
    model, history = trainer(sae, traj, transition_split(traj, cfg), cfg[section])
    model.save(out / filename)
    _write_history(out / f"{section}_history.csv", {section: history})
    save_config(cfg, out / CONFIG)
    return model


def stage_train_spnn(cfg: dict, out: Path):
    return _train_integrator(cfg, out, "spnn", train_spnn, SPNN_MODEL)


def stage_train_uc(cfg: dict, out: Path):
    return _train_integrator(cfg, out, "uc", train_uc, UC_MODEL)


def stage_rollout(cfg: dict, out: Path) -> dict:
    """Roll out the trained integrators from the first snapshot over the full horizon."""
    traj = load_trajectory(_need(out, TRAJECTORY, "gen-data"))
    sae = load_sae(_need(out, SAE_MODEL, "train-sae"))
    spnn = load_integrator(_need(out, SPNN_MODEL, "train-spnn"))
    reports = {"SPNN": rollout(sae, spnn, traj.snapshots[0], traj.n_snapshots, truth=traj)}
    reports["SPNN"].to_csv(out / ROLLOUT_SPNN)
    if (out / UC_MODEL).exists():
        uc = load_integrator(out / UC_MODEL)
        reports["UC"] = rollout(sae, uc, traj.snapshots[0], traj.n_snapshots, truth=traj)
        reports["UC"].to_csv(out / ROLLOUT_UC)
    for label, rep in reports.items():
        decoded = replace(traj, snapshots=rep.decoded, metadata={"decoded_by": label})
        save_trajectory(out / f"decoded_{label.lower()}.traj", decoded)
    if "UC" in reports:
        report.write_spnn_uc(out / ROLLOUT_METRICS, reports["SPNN"].mse, reports["UC"].mse)
    else:
        report.write_metrics(out / ROLLOUT_METRICS, reports["SPNN"].mse, "MSE_SPNN")
    save_config(cfg, out / CONFIG)
    return reports


def stage_report(cfg: dict, out: Path) -> list[Path]:
    """Join the metric tables and emit figure data from existing artifacts."""
    written = []
    traj = load_trajectory(_need(out, TRAJECTORY, "gen-data"))
    sae = load_sae(_need(out, SAE_MODEL, "train-sae"))
    sae_mse = report.read_table(_need(out, SAE_METRICS, "eval-sae"))
    pod_mse = report.read_table(_need(out, POD_METRICS, "pod"))
    report.write_sae_pod(out / TABLE_SAE_POD,
                         {k: v["MSE_SAE"] for k, v in sae_mse.items()},
                         {k: v["MSE_POD"] for k, v in pod_mse.items()})
    written.append(out / TABLE_SAE_POD)

    report.write_latent(out / "fig_latent_sae.csv", traj.times, sae.transform(traj.snapshots))
    written.append(out / "fig_latent_sae.csv")

    roll = report.read_table(_need(out, ROLLOUT_METRICS, "rollout"))
    if all("MSE_UC" in v for v in roll.values()):
        report.write_spnn_uc(out / TABLE_SPNN_UC, {k: v["MSE_SPNN"] for k, v in roll.items()},
                             {k: v["MSE_UC"] for k, v in roll.items()})
        written.append(out / TABLE_SPNN_UC)

    with open(_need(out, ROLLOUT_SPNN, "rollout"), newline="") as fh:
        path_rows = list(csv.reader(fh))
    header, body = path_rows[0], np.array(path_rows[1:], dtype=np.float64)
    d = sum(h.startswith("x") for h in header)
    report.write_latent(out / "fig_latent_spnn.csv", body[:, 0], body[:, 1:1 + d])
    report.write_thermo(out / "fig_thermo.csv", body[:, 0], body[:, header.index("dEdt")],
                        body[:, header.index("dSdt")])
    written += [out / "fig_latent_spnn.csv", out / "fig_thermo.csv"]

    preds = {}
    for label in ("spnn", "uc"):
        p = out / f"decoded_{label}.traj"
        if p.exists():
            preds[label.upper()] = load_trajectory(p).snapshots
    written += report.write_traces(out, traj, preds, prefix="fig_traces")
    save_config(cfg, out / CONFIG)
    return written


def pod_reducer(out: Path) -> PODReducer:
    return PODReducer.load(_need(out, POD_MODEL, "pod"))
