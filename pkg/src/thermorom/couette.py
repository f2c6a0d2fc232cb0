"""Start-up Couette flow of an Oldroyd-B fluid by the micro-macro method.

Each node carries an ensemble of Hookean dumbbells whose end-to-end vectors
follow the Ito SDE

    dr_x = (gamma_dot * r_y - r_x / (2 We)) dt + dV / sqrt(We)
    dr_y = -r_y / (2 We) dt + dW / sqrt(We)

integrated by Euler-Maruyama. The ensemble mean of ``r_x r_y`` gives the shear
stress that drives the 1-D momentum equation

    dv/dt = (1 - eps)/Re * d2v/dy2 + 1/Re * dtau/dy

solved with explicit central differences. Nodes sit at ``y_i = i H / N`` for
``i = 0..N``; node 0 is the fixed wall, node N the moving lid. The lid node
is simulated but left out of the recorded state.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Block, Trajectory

MICRO_STEPS_PER_MACRO = 4
CFL_LIMIT = 0.5


class CFLWarning(RuntimeWarning):
    """Explicit diffusion step exceeds the stability limit."""


@dataclass(frozen=True)
class CouetteParams:
    N: int = 100
    H: float = 1.0
    K: int = 10_000
    We: float = 1.0
    Re: float = 0.1
    eps: float = 0.9
    V: float = 1.0
    T: float = 1.0
    dt: float = 0.0067
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.N < 2:
            problems.append(f"N must be >= 2 (got {self.N})")
        if self.K < 1:
            problems.append(f"K must be >= 1 (got {self.K})")
        if not self.We > 0:
            problems.append(f"We must be > 0 (got {self.We})")
        if not self.Re > 0:
            problems.append(f"Re must be > 0 (got {self.Re})")
        if not self.dt > 0:
            problems.append(f"dt must be > 0 (got {self.dt})")
        if not self.T >= self.dt:
            problems.append(f"T must be >= dt (got T={self.T}, dt={self.dt})")
        if not self.H > 0:
            problems.append(f"H must be > 0 (got {self.H})")
        if problems:
            raise ValueError("invalid Couette parameters: " + "; ".join(problems))

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def n_snapshots(self) -> int:
        # initial state plus one snapshot per macro step
        return self.n_steps + 1

    @property
    def dy(self) -> float:
        return self.H / self.N


def node_streams(seed: int, n_nodes: int) -> list[np.random.Generator]:
    """Independent, reproducible random streams, one per node."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_nodes)]


def equilibrium_ensemble(n_nodes: int, K: int, streams) -> np.ndarray:
    """Dumbbells drawn from the equilibrium law ``r ~ Normal(0, I)``, shape (nodes, 2, K)."""
    r = np.empty((n_nodes, 2, K))
    for i, g in enumerate(streams):
        r[i] = g.standard_normal((2, K))
    return r


def dumbbell_step(r: np.ndarray, shear_rates, We: float, dt: float, streams) -> np.ndarray:
    """Euler-Maruyama step of every dumbbell ensemble.

    Parameters
    ----------
    r : ndarray, shape (n_nodes, 2, K)
        End-to-end components ``r[:, 0] = r_x``, ``r[:, 1] = r_y``.
    shear_rates : array_like, shape (n_nodes,)
    We : float
        Weissenberg number; ``np.inf`` freezes the ensemble.
    dt : float
        Micro time step.
    streams : sequence of numpy Generators, one per node.
    """
    shear = np.asarray(shear_rates, dtype=np.float64)
    if shear.shape != (r.shape[0],):
        raise ValueError(f"need {r.shape[0]} shear rates, got shape {shear.shape}")
    inv_we = 0.0 if np.isinf(We) else 1.0 / We
    noise_amp = math.sqrt(dt * inv_we)
    out = np.empty_like(r)
    for i, g in enumerate(streams):
        xi = g.standard_normal((2, r.shape[2]))
        rx, ry = r[i, 0], r[i, 1]
        out[i, 0] = rx + (shear[i] * ry - 0.5 * inv_we * rx) * dt + noise_amp * xi[0]
        out[i, 1] = ry - 0.5 * inv_we * ry * dt + noise_amp * xi[1]
    return out


def shear_stress(r: np.ndarray, We: float, eps: float) -> np.ndarray:
    """Per-node polymer shear stress ``(eps/We) <r_x r_y>`` from the empirical mean."""
    if np.isinf(We):
        return np.zeros(r.shape[0])
    return (eps / We) * np.einsum("ik,ik->i", r[:, 0], r[:, 1]) / r.shape[2]


def internal_energy(r: np.ndarray, We: float, eps: float) -> np.ndarray:
    """Elastic dumbbell energy relative to equilibrium, ``eps/(2We) (<|r|^2> - 2)``."""
    if np.isinf(We):
        return np.zeros(r.shape[0])
    msq = np.einsum("ijk,ijk->i", r, r) / r.shape[2]
    return (eps / (2.0 * We)) * (msq - 2.0)


def shear_rate(v: np.ndarray, dy: float) -> np.ndarray:
    """du/dy on every node: central inside, one-sided at wall and lid."""
    g = np.empty_like(v)
    g[1:-1] = (v[2:] - v[:-2]) / (2.0 * dy)
    g[0] = (v[1] - v[0]) / dy
    g[-1] = (v[-1] - v[-2]) / dy
    return g


def diffusion_number(Re: float, eps: float, dy: float, dt: float) -> float:
    return (1.0 - eps) * dt / (Re * dy * dy)


def macro_momentum_step(v, tau, Re: float, eps: float, dy: float, dt: float) -> np.ndarray:
    """Explicit update of the velocity on nodes ``0..N``; both end values stay pinned."""
    v = np.asarray(v, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if v.shape != tau.shape or v.ndim != 1 or v.size < 3:
        raise ValueError(f"v and tau must be equal-length 1-D arrays (got {v.shape}, {tau.shape})")
    r = diffusion_number(Re, eps, dy, dt)
    if r > CFL_LIMIT:
        warnings.warn(
            f"diffusion number {r:.3f} exceeds {CFL_LIMIT}; explicit step is unstable",
            CFLWarning, stacklevel=2,
        )
    out = v.copy()
    out[1:-1] += dt * (
        (1.0 - eps) / Re * (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (dy * dy)
        + (tau[2:] - tau[:-2]) / (2.0 * dy * Re)
    )
    return out


def assemble_state(q, v, e, tau) -> np.ndarray:
    """Full-order state ``(q | v | e | tau)``, each block node-major."""
    parts = [np.asarray(a, dtype=np.float64).ravel() for a in (q, v, e, tau)]
    n = parts[0].size
    for name, p in zip("qvet", parts):
        if p.size != n:
            raise ValueError(f"block {name!r} has length {p.size}, expected {n}")
    return np.concatenate(parts)


COUETTE_BLOCKS = (Block("q", 1), Block("v", 1), Block("e", 1), Block("tau", 1))


def generate(params: CouetteParams = CouetteParams(), progress=None) -> Trajectory:
    """Run the coupled micro-macro simulation and record every macro step."""
    params.validate()
    N, dt = params.N, params.dt
    n_nodes = N + 1
    dy = params.dy
    micro_dt = dt / MICRO_STEPS_PER_MACRO
    n_sub = max(1, math.ceil(diffusion_number(params.Re, params.eps, dy, micro_dt) / CFL_LIMIT))
    sub_dt = micro_dt / n_sub

    streams = node_streams(params.seed, n_nodes)
    r = equilibrium_ensemble(n_nodes, params.K, streams)
    v = np.zeros(n_nodes)
    v[-1] = params.V
    q = np.zeros(n_nodes)

    def snapshot():
        tau = shear_stress(r, params.We, params.eps)
        e = internal_energy(r, params.We, params.eps)
        return assemble_state(q[:N], v[:N], e[:N], tau[:N])

    snaps = [snapshot()]
    for step in range(params.n_steps):
        for _ in range(MICRO_STEPS_PER_MACRO):
            r = dumbbell_step(r, shear_rate(v, dy), params.We, micro_dt, streams)
            tau = shear_stress(r, params.We, params.eps)
            for _ in range(n_sub):
                q += sub_dt * v
                v = macro_momentum_step(v, tau, params.Re, params.eps, dy, sub_dt)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"velocity diverged at macro step {step + 1}")
        snaps.append(snapshot())
        if progress is not None:
            progress(step + 1, params.n_steps)

    return Trajectory(
        snapshots=np.array(snaps),
        dt=dt,
        blocks=COUETTE_BLOCKS,
        n_nodes=N,
        seed=params.seed,
        metadata={"generator": "couette", "params": asdict(params)},
    )
