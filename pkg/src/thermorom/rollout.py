"""Full-horizon rollouts in latent space and their thermodynamic audit."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import Trajectory
from .sae import per_variable_mse
from .spnn import StructurePreservingIntegrator, thermo_audit


@dataclass
class RolloutReport:
    """Latent and decoded paths of one rollout.

    The thermodynamic columns are evaluated at every visited latent state and
    are ``None`` for integrators without GENERIC structure.
    """

    times: np.ndarray
    latent: np.ndarray
    decoded: np.ndarray
    dEdt: np.ndarray | None = None
    dSdt: np.ndarray | None = None
    r_L: np.ndarray | None = None
    r_M: np.ndarray | None = None
    mse: dict | None = None

    @property
    def n_steps(self) -> int:
        return self.latent.shape[0] - 1

    def rows(self):
        d = self.latent.shape[1]
        header = ["t", *[f"x{i + 1}" for i in range(d)]]
        thermo = self.dEdt is not None
        if thermo:
            header += ["dEdt", "dSdt", "rL", "rM"]
        out = [header]
        for n in range(self.latent.shape[0]):
            row = [self.times[n], *self.latent[n]]
            if thermo:
                row += [self.dEdt[n], self.dSdt[n], self.r_L[n], self.r_M[n]]
            out.append([repr(float(v)) for v in row])
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.rows())


def rollout(sae, integrator, z0, n_snapshots: int, truth: Trajectory | None = None,
            dt: float | None = None) -> RolloutReport:
    """Encode ``z0``, integrate ``n_snapshots - 1`` steps on the integrator's own
    predictions, and decode every visited state.

    With ``truth`` the report carries per-variable MSE against its snapshots,
    averaged over the whole horizon.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    x0 = sae.transform(z0[None, :])[0]
    latent = integrator.rollout(x0, n_snapshots - 1)
    decoded = sae.inverse_transform(latent)
    step = dt if dt is not None else getattr(integrator, "dt", 1.0)
    report = RolloutReport(times=step * np.arange(n_snapshots), latent=latent, decoded=decoded)
    if isinstance(integrator, StructurePreservingIntegrator):
        audit = thermo_audit(integrator.generic(latent))
        report.dEdt, report.dSdt = audit.dEdt, audit.dSdt
        report.r_L, report.r_M = audit.r_L, audit.r_M
    if truth is not None:
        if truth.n_snapshots < n_snapshots:
            raise ValueError(
                f"ground truth has {truth.n_snapshots} snapshots, rollout needs {n_snapshots}"
            )
        report.mse = per_variable_mse(truth.snapshots[:n_snapshots], decoded, truth)
    return report
