"""Synthetic multi-block trajectories with a known number of modes per block.

Used to exercise the per-block reduction path at desk scale: every block is
a mean field plus ``modes[block]`` smooth spatial fields, each modulated by
a damped oscillation in time.
"""

from __future__ import annotations

import numpy as np

from .dataset import Trajectory, normalize, parse_layout


def block_dynamics(n_nodes: int = 50, n_snapshots: int = 200, dt: float = 0.0025,
                   layout: str = "q:3,v:3,sigma:6", modes: dict | None = None,
                   noise: float = 0.0, seed: int = 0) -> Trajectory:
    """Per-block z-scored snapshots of a low-rank damped system.

    ``modes`` maps block name to the number of independent temporal signals
    in that block (default 2). ``noise`` adds i.i.d. Gaussian noise of that
    standard deviation before scaling.
    """
    blocks = parse_layout(layout)
    modes = dict(modes or {})
    unknown = set(modes) - {b.name for b in blocks}
    if unknown:
        raise ValueError(f"modes given for unknown blocks {sorted(unknown)}")
    if n_nodes < 1 or n_snapshots < 2:
        raise ValueError("need at least one node and two snapshots")
    rng = np.random.default_rng(seed)
    t = dt * np.arange(n_snapshots)
    horizon = t[-1] if t[-1] > 0 else 1.0
    s = np.linspace(0.0, 1.0, n_nodes)

    parts = []
    for b in blocks:
        m = int(modes.get(b.name, 2))
        if m < 1:
            raise ValueError(f"block {b.name!r} needs at least one mode")
        rate = rng.uniform(0.5, 2.0, m) / horizon
        freq = 2 * np.pi * rng.uniform(0.25, 1.0, m) / horizon
        phase = rng.uniform(0, 2 * np.pi, m)
        signals = np.exp(-np.outer(t, rate)) * np.cos(np.outer(t, freq) + phase)
        signals *= 1.0 / (1.0 + np.arange(m))

        shift = rng.uniform(0, 2 * np.pi, (m, b.width))
        fields = np.sin(np.pi * (np.arange(m)[:, None, None] + 1) * s[None, :, None] + shift[:, None, :])
        mean_field = rng.normal(size=(n_nodes, b.width))
        blk = mean_field[None] + np.einsum("tk,knc->tnc", signals, fields)
        parts.append(blk.reshape(n_snapshots, n_nodes * b.width))

    z = np.hstack(parts)
    if noise > 0:
        z = z + rng.normal(scale=noise, size=z.shape)
    raw = Trajectory(z, dt, blocks, n_nodes, seed,
                     metadata={"generator": "blocks", "modes": {b.name: int(modes.get(b.name, 2))
                                                                for b in blocks}})
    return normalize(raw)[0]
