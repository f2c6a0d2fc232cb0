"""Trajectories of full-order snapshots, their file format, splits and scaling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .io import FormatError, read_container, read_header, write_container

TRAJECTORY_KIND = "trajectory"


@dataclass(frozen=True)
class Block:
    """A named physical variable with ``width`` components per node."""

    name: str
    width: int = 1


def parse_layout(text: str) -> tuple[Block, ...]:
    """Parse ``"q:3,v:3,sigma:6"`` into blocks; a bare name means width 1."""
    blocks = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, width = item.partition(":")
        try:
            w = int(width) if width else 1
        except ValueError:
            raise ValueError(f"bad block width in layout item {item!r}") from None
        if w < 1:
            raise ValueError(f"block {name!r} must have positive width")
        blocks.append(Block(name.strip(), w))
    if not blocks:
        raise ValueError(f"empty layout {text!r}")
    return tuple(blocks)


def format_layout(blocks) -> str:
    return ",".join(f"{b.name}:{b.width}" for b in blocks)


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered snapshots ``z_n`` (rows) with their block layout.

    Blocks are stored one after another; inside a block the layout is
    node-major, i.e. column ``offset + node * width + component``.
    ``normalization`` maps block name to ``(shift, scale)`` when the stored
    snapshots are scaled, ``raw = scaled * scale + shift``.
    """

    snapshots: np.ndarray
    dt: float
    blocks: tuple[Block, ...]
    n_nodes: int
    seed: int | None = None
    normalization: dict | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        z = np.asarray(self.snapshots, dtype=np.float64)
        if z.ndim != 2:
            raise ValueError(f"snapshots must be 2-D, got shape {z.shape}")
        object.__setattr__(self, "snapshots", z)
        object.__setattr__(self, "blocks", tuple(self.blocks))
        expected = self.n_nodes * sum(b.width for b in self.blocks)
        if z.shape[1] != expected:
            raise ValueError(
                f"snapshot width {z.shape[1]} does not match layout "
                f"{format_layout(self.blocks)} x {self.n_nodes} nodes = {expected}"
            )

    @property
    def n_snapshots(self) -> int:
        return self.snapshots.shape[0]

    @property
    def D(self) -> int:
        return self.snapshots.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_snapshots)

    def block_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for b in self.blocks:
            stop = start + b.width * self.n_nodes
            out[b.name] = slice(start, stop)
            start = stop
        return out

    def variable_columns(self) -> dict[str, np.ndarray]:
        """Column indices of every scalar variable (one per block component)."""
        out = {}
        for b in self.blocks:
            sl = self.block_slices()[b.name]
            for c in range(b.width):
                name = b.name if b.width == 1 else f"{b.name}{c + 1}"
                out[name] = np.arange(sl.start + c, sl.stop, b.width)
        return out

    def block(self, name: str) -> np.ndarray:
        return self.snapshots[:, self.block_slices()[name]]

    def sub_trajectory(self, name: str) -> "Trajectory":
        """Single-block trajectory holding only block ``name``."""
        b = next(b for b in self.blocks if b.name == name)
        norm = None
        if self.normalization is not None and name in self.normalization:
            norm = {name: self.normalization[name]}
        return Trajectory(self.block(name), self.dt, (b,), self.n_nodes, self.seed, norm,
                          dict(self.metadata))


@dataclass(frozen=True)
class SplitIndex:
    train: np.ndarray
    test: np.ndarray
    seed: int | None = None


def split(n_items: int, fraction: float = 0.8, seed: int | None = 0) -> SplitIndex:
    """Uniform random train/test partition with ``round(fraction * n_items)`` train items."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if n_items < 2:
        raise ValueError(f"need at least 2 items to split, got {n_items}")
    n_train = int(round(fraction * n_items))
    if n_train < 1 or n_train > n_items - 1:
        raise ValueError(
            f"split of {n_items} items at fraction {fraction} leaves an empty partition"
        )
    perm = np.random.default_rng(seed).permutation(n_items)
    return SplitIndex(np.sort(perm[:n_train]), np.sort(perm[n_train:]), seed)


def normalize(traj: Trajectory) -> tuple[Trajectory, dict]:
    """Per-block z-score over all snapshots.

    Returns the scaled trajectory and the ``{block: (shift, scale)}`` applied
    by this call. Constant blocks get scale 1. The trajectory's stored
    normalization is composed with any earlier one, so :func:`denormalize`
    always recovers the raw data.
    """
    z = traj.snapshots.copy()
    stats = {}
    composed = {}
    for name, sl in traj.block_slices().items():
        blk = z[:, sl]
        shift = float(blk.mean())
        scale = float(blk.std())
        if not scale > 0:
            scale = 1.0
        z[:, sl] = (blk - shift) / scale
        stats[name] = (shift, scale)
        s0, c0 = (traj.normalization or {}).get(name, (0.0, 1.0))
        composed[name] = (s0 + c0 * shift, c0 * scale)
    return replace(traj, snapshots=z, normalization=composed), stats


def denormalize_array(z, traj: Trajectory) -> np.ndarray:
    """Map snapshots in ``traj``'s scaled coordinates back to raw units."""
    z = np.array(z, dtype=np.float64, copy=True)
    if traj.normalization is None:
        return z
    for name, sl in traj.block_slices().items():
        shift, scale = traj.normalization.get(name, (0.0, 1.0))
        z[..., sl] = z[..., sl] * scale + shift
    return z


def denormalize(traj: Trajectory) -> Trajectory:
    return replace(traj, snapshots=denormalize_array(traj.snapshots, traj), normalization=None)


def _header(traj: Trajectory) -> dict:
    return {
        "kind": TRAJECTORY_KIND,
        "dt": traj.dt,
        "layout": format_layout(traj.blocks),
        "n_nodes": traj.n_nodes,
        "N_T": traj.n_snapshots,
        "D": traj.D,
        "seed": traj.seed,
        "normalization": (
            None if traj.normalization is None
            else {k: list(v) for k, v in traj.normalization.items()}
        ),
        "metadata": traj.metadata,
    }


def save_trajectory(path, traj: Trajectory) -> None:
    write_container(path, _header(traj), [("snapshots", traj.snapshots)])


def _from_header(head: dict, snapshots) -> Trajectory:
    norm = head.get("normalization")
    return Trajectory(
        snapshots=snapshots,
        dt=float(head["dt"]),
        blocks=parse_layout(head["layout"]),
        n_nodes=int(head["n_nodes"]),
        seed=head.get("seed"),
        normalization=None if norm is None else {k: tuple(v) for k, v in norm.items()},
        metadata=head.get("metadata", {}),
    )


def inspect_trajectory(path) -> dict:
    """Validate a trajectory file's header against its declared layout without reading the payload."""
    head, _ = read_header(path)
    if head.get("kind") != TRAJECTORY_KIND:
        raise FormatError(f"{path}: container does not hold a trajectory")
    blocks = parse_layout(head["layout"])
    D = int(head["n_nodes"]) * sum(b.width for b in blocks)
    if D != int(head["D"]):
        raise FormatError(f"{path}: header D={head['D']} but layout implies {D}")
    shape = head["arrays"][0]["shape"]
    if shape != [int(head["N_T"]), D]:
        raise FormatError(f"{path}: snapshot array shape {shape} != [{head['N_T']}, {D}]")
    return head


def load_trajectory(path) -> Trajectory:
    head = inspect_trajectory(path)
    _, arrays = read_container(path)
    return _from_header(head, arrays["snapshots"])


def _read_csv(path, D: int) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh)):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != D:
                raise ValueError(f"{path}: row {r} has {len(row)} columns, layout needs {D}")
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                c = next(c for c, x in enumerate(row) if not _is_float(x))
                raise ValueError(f"{path}: row {r}, column {c}: not a number ({row[c]!r})") from None
    if not rows:
        raise ValueError(f"{path}: no snapshot rows")
    return np.array(rows)


def _is_float(x: str) -> bool:
    try:
        float(x)
    except ValueError:
        return False
    return True


def ingest_external(path, layout=None, n_nodes: int | None = None, dt: float = 1.0,
                    normalize_data: bool | None = None) -> Trajectory:
    """Load an externally produced trajectory.

    Accepts either a trajectory container file or a CSV with one snapshot per
    row. For CSV input ``layout`` (e.g. ``"q:3,v:3,sigma:6"``) and ``n_nodes``
    are required. CSV data is z-score normalized per block by default;
    container files keep whatever scaling they were saved with.
    """
    with open(path, "rb") as fh:
        first = fh.read(1)
    if first == b"{":
        traj = load_trajectory(path)
        if normalize_data is None:
            normalize_data = False
        if layout is not None:
            blocks = parse_layout(layout) if isinstance(layout, str) else tuple(layout)
            if blocks != traj.blocks:
                raise ValueError(
                    f"{path}: file layout {format_layout(traj.blocks)} != declared "
                    f"{format_layout(blocks)}"
                )
        if n_nodes is not None and n_nodes != traj.n_nodes:
            raise ValueError(f"{path}: file has {traj.n_nodes} nodes, declared {n_nodes}")
    else:
        if layout is None or n_nodes is None:
            raise ValueError("CSV ingestion needs both a layout and a node count")
        blocks = parse_layout(layout) if isinstance(layout, str) else tuple(layout)
        D = n_nodes * sum(b.width for b in blocks)
        traj = Trajectory(_read_csv(path, D), float(dt), blocks, int(n_nodes),
                          metadata={"source": str(path)})
        if normalize_data is None:
            normalize_data = True
    if normalize_data and traj.normalization is None:
        traj, _ = normalize(traj)
    return traj
