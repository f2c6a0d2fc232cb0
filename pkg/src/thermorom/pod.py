"""Proper orthogonal decomposition: the linear reduced-basis baseline."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_snapshots
from .dataset import SplitIndex, Trajectory
from .io import read_container, write_container
from .linalg import svd_thin
from .sae import per_variable_mse


@dataclass(frozen=True)
class PodBasis:
    mean: np.ndarray  # (D,)
    modes: np.ndarray  # (D, d), orthonormal columns
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return self.modes.shape[1]


def pod_fit(snapshots, d: int, rtol: float = 1e-12) -> PodBasis:
    """Top-``d`` left singular vectors of the mean-centred snapshot matrix.

    Directions with singular value below ``rtol * s_max`` are dropped with a
    warning, so the basis may hold fewer than ``d`` modes. The returned
    singular values are always the leading ``d``, dropped ones included.
    """
    Z = check_snapshots(snapshots)
    if not 1 <= d <= min(Z.shape):
        raise ValueError(f"d must lie in [1, {min(Z.shape)}], got {d}")
    mean = Z.mean(axis=0)
    U, s, _ = svd_thin((Z - mean).T)
    keep = min(d, int(np.sum(s > rtol * s[0]))) if s[0] > 0 else 0
    if keep < d:
        warnings.warn(f"snapshot matrix has numerical rank {keep} < {d}; basis truncated",
                      RuntimeWarning, stacklevel=2)
    return PodBasis(mean, U[:, :keep].copy(), s[:d].copy())


def pod_project(basis: PodBasis, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != basis.mean.size:
        raise ValueError(f"state has {z.shape[-1]} entries, basis expects {basis.mean.size}")
    return (z - basis.mean) @ basis.modes


def pod_reconstruct(basis: PodBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.rank:
        raise ValueError(f"code has {x.shape[-1]} entries, basis has {basis.rank} modes")
    return basis.mean + x @ basis.modes.T


class PODReducer(TransformerMixin, BaseEstimator):
    """sklearn-style wrapper around :func:`pod_fit`.

    ``n_components`` may be an int, or a sequence of per-block counts used
    together with ``blocks`` (a sequence of column slices / index arrays), in
    which case each block gets its own basis and codes are concatenated.
    """

    def __init__(self, n_components=4, blocks=None):
        self.n_components = n_components
        self.blocks = blocks

    def fit(self, X, y=None):
        X = check_snapshots(X, ensure_min_samples=2)
        self.n_features_in_ = X.shape[1]
        if self.blocks is None:
            self.columns_ = [np.arange(X.shape[1])]
            counts = [int(self.n_components)]
        else:
            self.columns_ = [np.arange(X.shape[1])[c] if isinstance(c, slice) else np.asarray(c)
                             for c in self.blocks]
            counts = [int(c) for c in self.n_components]
            if len(counts) != len(self.columns_):
                raise ValueError("need one component count per block")
        self.bases_ = [pod_fit(X[:, cols], k) for cols, k in zip(self.columns_, counts)]
        return self

    @property
    def basis_(self) -> PodBasis:
        check_is_fitted(self, "bases_")
        if len(self.bases_) != 1:
            raise AttributeError("multi-block reducer has one basis per block, see bases_")
        return self.bases_[0]

    def transform(self, X):
        check_is_fitted(self, "bases_")
        X = check_snapshots(X, self.n_features_in_)
        return np.hstack([pod_project(b, X[:, c]) for b, c in zip(self.bases_, self.columns_)])

    def inverse_transform(self, codes):
        check_is_fitted(self, "bases_")
        codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
        out = np.zeros((codes.shape[0], self.n_features_in_))
        start = 0
        for b, cols in zip(self.bases_, self.columns_):
            out[:, cols] = pod_reconstruct(b, codes[:, start:start + b.rank])
            start += b.rank
        return out

    def reconstruct(self, X):
        return self.inverse_transform(self.transform(X))

    def save(self, path, extra=None):
        check_is_fitted(self, "bases_")
        head = {"kind": "pod", "extra": extra or {}, "n_features_in": self.n_features_in_,
                "columns": [[int(i) for i in c] for c in self.columns_]}
        arrays = []
        for i, b in enumerate(self.bases_):
            arrays += [(f"{i}.mean", b.mean), (f"{i}.modes", b.modes),
                       (f"{i}.singular_values", b.singular_values)]
        write_container(path, head, arrays)

    @classmethod
    def load(cls, path) -> "PODReducer":
        head, arrays = read_container(path)
        if head.get("kind") != "pod":
            raise ValueError(f"{path}: not a POD basis file")
        cols = [np.array(c, dtype=np.intp) for c in head["columns"]]
        bases = [PodBasis(arrays[f"{i}.mean"], arrays[f"{i}.modes"], arrays[f"{i}.singular_values"])
                 for i in range(len(cols))]
        model = cls(n_components=[b.rank for b in bases] if len(bases) > 1 else bases[0].rank,
                    blocks=None if len(bases) == 1 else cols)
        model.columns_, model.bases_ = cols, bases
        model.n_features_in_ = int(head["n_features_in"])
        return model


def pod_for(traj: Trajectory, split: SplitIndex, d, per_block: bool = False) -> PODReducer:
    """Fit POD on the train snapshots; ``d`` is an int or, with ``per_block``, a dict per block."""
    Z = traj.snapshots[split.train]
    if not per_block:
        return PODReducer(int(d)).fit(Z)
    slices = traj.block_slices()
    names = [b.name for b in traj.blocks]
    return PODReducer([int(d[n]) for n in names], [slices[n] for n in names]).fit(Z)


def test_pod(model: PODReducer, traj: Trajectory, split: SplitIndex) -> dict[str, float]:
    """Per-variable reconstruction MSE on the test snapshots."""
    Z = traj.snapshots[split.test]
    return per_variable_mse(Z, model.reconstruct(Z), traj)


test_pod.__test__ = False
