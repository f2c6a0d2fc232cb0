"""Structure-preserving latent integrator (GENERIC / metriplectic form).

A network maps a latent state ``x`` to the raw vector
``(L-params | M-params | DE | DS)`` of width ``d (d + 2)``. The Poisson
operator ``L`` is assembled skew-symmetric from its strict lower triangle and
the friction operator ``M = G G^T`` from a lower-triangular ``G`` whose
diagonal is taken in absolute value, so ``M`` is symmetric positive
semi-definite by construction. One step of the scheme is

    x_next = x + dt * (L @ DE + M @ DS)

and training penalises the degeneracy residuals ``L @ DS`` and ``M @ DE``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_snapshots, check_vector
from .dataset import SplitIndex, Trajectory
from .io import read_container, write_container
from .nn import (DivergenceError, MlpParams, hidden_activations, l2_penalty, mlp_forward,
                 mlp_from_arrays, mlp_init, mlp_named_arrays, mlp_tape, train_loop)

logger = logging.getLogger(__name__)


def n_skew(d: int) -> int:
    return d * (d - 1) // 2


def n_sym(d: int) -> int:
    return d * (d + 1) // 2


def output_width(d: int) -> int:
    """Raw network output width ``d(d-1)/2 + d(d+1)/2 + 2d = d(d+2)``."""
    return n_skew(d) + n_sym(d) + 2 * d


@lru_cache(maxsize=None)
def _skew_index(d: int):
    # strict lower triangle, row-major; each entry also lands negated above the diagonal
    pairs = [(i, j) for i in range(d) for j in range(i)]
    k = np.arange(len(pairs))
    rows = np.array([i for i, _ in pairs] + [j for _, j in pairs], dtype=np.intp)
    cols = np.array([j for _, j in pairs] + [i for i, _ in pairs], dtype=np.intp)
    src = np.concatenate([k, k])
    signs = np.concatenate([np.ones(len(pairs)), -np.ones(len(pairs))])
    return rows, cols, src, signs


@lru_cache(maxsize=None)
def _chol_index(d: int):
    # lower triangle including the diagonal, row-major
    pairs = [(i, j) for i in range(d) for j in range(i + 1)]
    rows = np.array([i for i, _ in pairs], dtype=np.intp)
    cols = np.array([j for _, j in pairs], dtype=np.intp)
    diag = np.array([k for k, (i, j) in enumerate(pairs) if i == j], dtype=np.intp)
    return rows, cols, diag


def _check_len(params, n, what):
    params = np.asarray(params, dtype=np.float64)
    if params.shape[-1] != n:
        raise ValueError(f"{what} needs {n} parameters, got {params.shape[-1]}")
    return params


def assemble_L(params, d: int | None = None) -> np.ndarray:
    """Skew-symmetric ``(..., d, d)`` matrix from its strict lower triangle."""
    params = np.asarray(params, dtype=np.float64)
    if d is None:
        d = int(round((1 + np.sqrt(1 + 8 * params.shape[-1])) / 2))
    params = _check_len(params, n_skew(d), "L")
    rows, cols, src, signs = _skew_index(d)
    L = np.zeros(params.shape[:-1] + (d, d))
    L[..., rows, cols] = params[..., src] * signs
    return L


def cholesky_factor(params, d: int | None = None) -> np.ndarray:
    """Lower-triangular factor with the diagonal replaced by its absolute value."""
    params = np.asarray(params, dtype=np.float64)
    if d is None:
        d = int(round((np.sqrt(1 + 8 * params.shape[-1]) - 1) / 2))
    params = _check_len(params, n_sym(d), "M")
    rows, cols, diag = _chol_index(d)
    vals = params.copy()
    vals[..., diag] = np.abs(vals[..., diag])
    G = np.zeros(params.shape[:-1] + (d, d))
    G[..., rows, cols] = vals
    return G


def assemble_M(params, d: int | None = None) -> np.ndarray:
    """Symmetric positive semi-definite ``G G^T``."""
    G = cholesky_factor(params, d)
    return G @ np.swapaxes(G, -1, -2)


@dataclass
class GenericOutputs:
    """GENERIC ingredients at one state (or a batch, with a leading axis)."""

    L: np.ndarray
    M: np.ndarray
    DE: np.ndarray
    DS: np.ndarray


def split_raw(raw, d: int):
    """Split raw network output into ``(L-params, M-params, DE, DS)``."""
    a, b = n_skew(d), n_skew(d) + n_sym(d)
    return raw[..., :a], raw[..., a:b], raw[..., b:b + d], raw[..., b + d:b + 2 * d]


def generic_from_raw(raw, d: int) -> GenericOutputs:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != output_width(d):
        raise ValueError(f"raw output has width {raw.shape[-1]}, expected {output_width(d)}")
    lp, mp, de, ds = split_raw(raw, d)
    return GenericOutputs(assemble_L(lp, d), assemble_M(mp, d), de.copy(), ds.copy())


def _mv(A, v):
    return np.einsum("...ij,...j->...i", A, v)


def integrate_step(x, out: GenericOutputs, dt: float) -> np.ndarray:
    """Forward-Euler GENERIC step ``x + dt (L DE + M DS)``."""
    return np.asarray(x, dtype=np.float64) + dt * (_mv(out.L, out.DE) + _mv(out.M, out.DS))


@dataclass
class ThermoAudit:
    dEdt: np.ndarray
    dSdt: np.ndarray
    r_L: np.ndarray
    r_M: np.ndarray


def thermo_audit(out: GenericOutputs) -> ThermoAudit:
    """Energy and entropy rates along the GENERIC vector field, plus degeneracy residuals."""
    rate = _mv(out.L, out.DE) + _mv(out.M, out.DS)
    return ThermoAudit(
        dEdt=np.einsum("...i,...i->...", out.DE, rate),
        dSdt=np.einsum("...i,...i->...", out.DS, rate),
        r_L=np.linalg.norm(_mv(out.L, out.DS), axis=-1),
        r_M=np.linalg.norm(_mv(out.M, out.DE), axis=-1),
    )


@dataclass
class SpnnLoss:
    total: float
    data: float
    degeneracy: float
    l2: float


def spnn_objective(net: MlpParams, X, Y, dt: float, lambda_d: float, lambda_r: float):
    """Loss ``mean(lambda_d |Y - x_next|^2 + |L DS|^2 + |M DE|^2) + lambda_r sum W^2``.

    Returns ``(SpnnLoss, grads)`` with grads ordered as ``net.arrays()``.
    """
    d = X.shape[1]
    n = X.shape[0]
    tape = ad.Tape()
    Xc = tape.const(X)
    raw, weights = mlp_tape(tape, net, Xc)
    a, b = n_skew(d), n_skew(d) + n_sym(d)
    rows, cols, src, signs = _skew_index(d)
    L = ad.scatter_matrix(ad.gather(raw, src), rows, cols, signs, d)
    crow, ccol, diag = _chol_index(d)
    m_idx = np.arange(a, b)
    off = np.setdiff1d(np.arange(n_sym(d)), diag)
    # |.| on the diagonal entries only, then lay out G
    g_diag = ad.absolute(ad.gather(raw, m_idx[diag]))
    G_d = ad.scatter_matrix(g_diag, crow[diag], ccol[diag], np.ones(diag.size), d)
    if off.size:
        G_o = ad.scatter_matrix(ad.gather(raw, m_idx[off]), crow[off], ccol[off],
                                np.ones(off.size), d)
        G = ad.add(G_d, G_o)
    else:
        G = G_d
    DE = ad.gather(raw, np.arange(b, b + d))
    DS = ad.gather(raw, np.arange(b + d, b + 2 * d))
    L_DE = ad.bmv(L, DE)
    M_DS = ad.bmv(G, ad.bmv(G, DS, transpose_a=True))
    x_next = ad.add(Xc, ad.scale(ad.add(L_DE, M_DS), dt))
    data = ad.scale(ad.squared_norm(ad.sub(tape.const(Y), x_next)), 1.0 / n)
    M_DE = ad.bmv(G, ad.bmv(G, DE, transpose_a=True))
    degen = ad.scale(ad.add(ad.squared_norm(ad.bmv(L, DS)), ad.squared_norm(M_DE)), 1.0 / n)
    l2 = ad.squared_norm(weights[0])
    for W in weights[1:]:
        l2 = ad.add(l2, ad.squared_norm(W))
    total = ad.add(ad.add(ad.scale(data, lambda_d), degen), ad.scale(l2, lambda_r))
    grads = tape.backward(total)
    return SpnnLoss(float(total.value), float(data.value), float(degen.value),
                    float(l2.value)), grads


class _LatentIntegrator(RegressorMixin, BaseEstimator):
    """Shared fitting and rollout machinery for one-step latent integrators."""

    def _init_net(self, d):
        raise NotImplementedError

    def _objective(self, net, X, Y):
        raise NotImplementedError

    def fit(self, X, Y):
        """Learn the one-step map from states ``X`` to successors ``Y``."""
        X = check_snapshots(X, name="X")
        Y = check_snapshots(Y, X.shape[1], name="Y")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        net = self._init_net(X.shape[1])

        def objective(arrays):
            loss, grads = self._objective(net.with_arrays(arrays), X, Y)
            return loss.total, grads

        arrays, history = train_loop(net.arrays(), objective, self.lr, self.epochs,
                                     self.tol, self.patience, log_every=5000, logger=logger)
        self.net_ = net.with_arrays(arrays)
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def n_params(self) -> int:
        check_is_fitted(self, "net_")
        return self.net_.n_params

    def rollout(self, x0, n_steps: int) -> np.ndarray:
        """Autoregressive path ``x_0 .. x_{n_steps}`` fed by its own predictions."""
        check_is_fitted(self, "net_")
        x = check_vector(x0, self.n_features_in_, "x0")
        path = [x]
        for step in range(n_steps):
            x = self.predict(x[None, :])[0]
            if not np.all(np.isfinite(x)):
                raise DivergenceError(step + 1, "rollout state", unit="step")
            path.append(x)
        return np.array(path)

    def _save(self, path, kind, extra):
        head = {
            "kind": kind,
            "params": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in self.get_params().items()},
            "layer_sizes": self.net_.sizes,
            "activations": self.net_.activations,
            "n_features_in": self.n_features_in_,
            "final_loss": float(self.history_[-1]) if len(self.history_) else None,
            "epochs_run": int(len(self.history_)),
            "extra": extra or {},
        }
        write_container(path, head, mlp_named_arrays(self.net_))

    @classmethod
    def _load(cls, head, arrays):
        params = dict(head["params"])
        params["hidden"] = tuple(params["hidden"])
        model = cls(**params)
        model.net_ = mlp_from_arrays(arrays, head["layer_sizes"], head["activations"])
        model.n_features_in_ = int(head["n_features_in"])
        model.history_ = np.array([])
        return model


class StructurePreservingIntegrator(_LatentIntegrator):
    """Learned GENERIC integrator on a ``d``-dimensional latent space.

    Parameters
    ----------
    dt : float
        Time step of the training transitions.
    hidden : tuple of int
        Hidden widths (ReLU); the output layer is linear of width ``d(d+2)``.
    lr : float
        Adam learning rate.
    lambda_d : float
        Weight of the data term relative to the degeneracy term.
    lambda_r : float
        L2 weight decay on the network weights.
    epochs, tol, patience, random_state
        As for :class:`~thermorom.sae.SparseAutoencoder`.
    """

    def __init__(self, dt=0.0067, hidden=(24,) * 5, lr=1e-5, lambda_d=1e3, lambda_r=1e-5,
                 epochs=100_000, tol=None, patience=1000, random_state=0):
        self.dt = dt
        self.hidden = hidden
        self.lr = lr
        self.lambda_d = lambda_d
        self.lambda_r = lambda_r
        self.epochs = epochs
        self.tol = tol
        self.patience = patience
        self.random_state = random_state

    def _init_net(self, d):
        sizes = [d, *[int(h) for h in self.hidden], output_width(d)]
        return mlp_init(sizes, hidden_activations(len(sizes) - 1), self.random_state)

    def _objective(self, net, X, Y):
        return spnn_objective(net, X, Y, self.dt, self.lambda_d, self.lambda_r)

    def generic(self, X) -> GenericOutputs:
        """GENERIC operators and gradients at each row of ``X``."""
        check_is_fitted(self, "net_")
        X = check_snapshots(X, self.n_features_in_)
        return generic_from_raw(mlp_forward(self.net_, X), self.n_features_in_)

    def predict(self, X) -> np.ndarray:
        X = check_snapshots(X, getattr(self, "n_features_in_", None))
        return integrate_step(X, self.generic(X), self.dt)

    def loss(self, X, Y) -> SpnnLoss:
        check_is_fitted(self, "net_")
        return spnn_loss(self, X, Y)

    def save(self, path, extra=None):
        self._save(path, "spnn", extra)


def spnn_eval(model: StructurePreservingIntegrator, x) -> GenericOutputs:
    """GENERIC outputs at a single latent state."""
    check_is_fitted(model, "net_")
    x = check_vector(x, model.n_features_in_)
    return generic_from_raw(mlp_forward(model.net_, x), model.n_features_in_)


def spnn_loss(model: StructurePreservingIntegrator, X, Y) -> SpnnLoss:
    """Numeric loss breakdown over a batch of transitions ``X -> Y``."""
    X = check_snapshots(X, model.n_features_in_)
    Y = check_snapshots(Y, model.n_features_in_)
    out = generic_from_raw(mlp_forward(model.net_, X), X.shape[1])
    pred = integrate_step(X, out, model.dt)
    n = X.shape[0]
    data = float(np.sum((Y - pred) ** 2) / n)
    degen = float((np.sum(_mv(out.L, out.DS) ** 2) + np.sum(_mv(out.M, out.DE) ** 2)) / n)
    l2 = l2_penalty(model.net_)
    return SpnnLoss(model.lambda_d * data + degen + model.lambda_r * l2, data, degen, l2)


def transition_pairs(codes, indices):
    """``(codes[n], codes[n + 1])`` for each transition index ``n``."""
    idx = np.asarray(indices, dtype=np.intp)
    return codes[idx], codes[idx + 1]


def train_spnn(sae, traj: Trajectory, split: SplitIndex, config: dict | None = None):
    """Teacher-forced training on encoded train transitions.

    ``split`` indexes transitions ``n -> n+1`` (``0 <= n < N_T - 1``).
    Returns ``(model, history)``.
    """
    config = dict(config or {})
    config.setdefault("dt", traj.dt)
    codes = sae.transform(traj.snapshots)
    X, Y = transition_pairs(codes, split.train)
    model = StructurePreservingIntegrator(**config).fit(X, Y)
    return model, model.history_


def load_integrator(path):
    from .baseline import UnconstrainedIntegrator

    head, arrays = read_container(path)
    kind = head.get("kind")
    if kind == "spnn":
        return StructurePreservingIntegrator._load(head, arrays)
    if kind == "uc":
        return UnconstrainedIntegrator._load(head, arrays)
    raise ValueError(f"{path}: not an integrator checkpoint")
