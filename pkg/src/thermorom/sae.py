"""Sparse autoencoder that discovers the latent dimensionality of snapshot data.

The bottleneck carries an L1 penalty; coordinates the data does not need are
driven to (near) zero and are pruned by :func:`detect_active`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_snapshots
from .dataset import SplitIndex, Trajectory
from .io import read_container, write_container
from .nn import (MlpParams, hidden_activations, mlp_forward, mlp_from_arrays, mlp_init,
                 mlp_named_arrays, mlp_tape, train_loop)

logger = logging.getLogger(__name__)

ACTIVITY_THRESHOLD = 0.01


class InactiveCodeError(RuntimeError):
    """Every latent coordinate was judged inactive."""


@dataclass
class SaeLoss:
    total: float
    reconstruction: float
    sparsity: float


def sae_objective(encoder: MlpParams, decoder: MlpParams, Z, lambda_r: float):
    """Batch-mean ``||z - p(q(z))||^2 + lambda_r * |q(z)|_1`` and its gradients.

    Returns ``(SaeLoss, grads)`` with grads ordered as
    ``encoder.arrays() + decoder.arrays()``.
    """
    tape = ad.Tape()
    Zc = tape.const(Z)
    code, _ = mlp_tape(tape, encoder, Zc, "enc.")
    recon, _ = mlp_tape(tape, decoder, code, "dec.")
    n = Z.shape[0]
    rec = ad.scale(ad.squared_norm(ad.sub(Zc, recon)), 1.0 / n)
    reg = ad.scale(ad.l1_norm(code), 1.0 / n)
    total = ad.add(rec, ad.scale(reg, lambda_r))
    grads = tape.backward(total)
    return SaeLoss(float(total.value), float(rec.value), float(reg.value)), grads


def sae_loss(model: "SparseAutoencoder", Z) -> SaeLoss:
    """Loss breakdown of a fitted model on a batch of snapshots."""
    check_is_fitted(model)
    Z = check_snapshots(Z, model.n_features_in_)
    code = mlp_forward(model.encoder_, Z)
    rec = np.sum((Z - mlp_forward(model.decoder_, code)) ** 2) / Z.shape[0]
    reg = np.sum(np.abs(code)) / Z.shape[0]
    return SaeLoss(rec + model.lambda_r * reg, rec, reg)


def detect_active(codes, threshold: float = ACTIVITY_THRESHOLD) -> np.ndarray:
    """Latent ``i`` is active iff ``max_n |x_ni| >= threshold * max_{n,j} |x_nj|``."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    amp = np.max(np.abs(codes), axis=0)
    top = amp.max() if amp.size else 0.0
    if not top > 0:
        raise InactiveCodeError("all latent variables vanished; lower lambda_r")
    return amp >= threshold * top


class SparseAutoencoder(TransformerMixin, BaseEstimator):
    """Fully connected autoencoder with an L1-penalised bottleneck.

    Parameters
    ----------
    n_bottleneck : int
        Width of the code layer before pruning.
    hidden : tuple of int
        Hidden layer widths of the encoder; the decoder mirrors them.
    lr : float
        Adam learning rate.
    lambda_r : float
        Weight of the L1 sparsity term.
    epochs : int
        Maximum number of full-batch epochs.
    tol, patience : float, int
        Early stop once the best training loss improves by less than ``tol``
        over ``patience`` epochs. ``tol=None`` disables it.
    activity_threshold : float
        Relative amplitude below which a latent is pruned.
    random_state : int
        Seeds the Kaiming initialization.

    Attributes
    ----------
    encoder_, decoder_ : MlpParams
    active_mask_ : ndarray of bool, shape (n_bottleneck,)
    n_active_ : int
        The learned latent dimension ``d``.
    history_ : ndarray
        Training loss per epoch.
    """

    def __init__(self, n_bottleneck=10, hidden=(160, 160), lr=1e-4, lambda_r=1e-4,
                 epochs=50_000, tol=1e-9, patience=1000,
                 activity_threshold=ACTIVITY_THRESHOLD, random_state=0):
        self.n_bottleneck = n_bottleneck
        self.hidden = hidden
        self.lr = lr
        self.lambda_r = lambda_r
        self.epochs = epochs
        self.tol = tol
        self.patience = patience
        self.activity_threshold = activity_threshold
        self.random_state = random_state

    def _init_networks(self, n_features):
        hidden = [int(h) for h in self.hidden]
        enc_seed, dec_seed = np.random.SeedSequence(self.random_state).spawn(2)
        enc_sizes = [n_features, *hidden, self.n_bottleneck]
        dec_sizes = [self.n_bottleneck, *hidden[::-1], n_features]
        enc = mlp_init(enc_sizes, hidden_activations(len(enc_sizes) - 1), enc_seed)
        dec = mlp_init(dec_sizes, hidden_activations(len(dec_sizes) - 1), dec_seed)
        return enc, dec

    def fit(self, X, y=None):
        X = check_snapshots(X)
        if self.n_bottleneck < 1:
            raise ValueError("n_bottleneck must be >= 1")
        enc, dec = self._init_networks(X.shape[1])
        n_enc = 2 * len(enc.layers)

        def objective(arrays):
            loss, grads = sae_objective(enc.with_arrays(arrays[:n_enc]),
                                        dec.with_arrays(arrays[n_enc:]), X, self.lambda_r)
            return loss.total, grads

        arrays, history = train_loop(enc.arrays() + dec.arrays(), objective, self.lr,
                                     self.epochs, self.tol, self.patience,
                                     log_every=1000, logger=logger)
        self.encoder_ = enc.with_arrays(arrays[:n_enc])
        self.decoder_ = dec.with_arrays(arrays[n_enc:])
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        self.set_active_from(X)
        return self

    def set_active_from(self, X):
        """(Re)compute the active latent mask from the codes of ``X``."""
        self.active_mask_ = detect_active(self.encode(X), self.activity_threshold)
        self.n_active_ = int(self.active_mask_.sum())
        return self

    def encode(self, X) -> np.ndarray:
        """Full bottleneck codes, shape (n, n_bottleneck)."""
        check_is_fitted(self, "encoder_")
        X = check_snapshots(X, self.n_features_in_)
        return mlp_forward(self.encoder_, X)

    def decode(self, codes) -> np.ndarray:
        """Decode full (n_bottleneck) or pruned (n_active_) codes; pruned slots are zero."""
        check_is_fitted(self, "decoder_")
        codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
        if codes.shape[1] == self.n_bottleneck:
            full = codes
        elif hasattr(self, "active_mask_") and codes.shape[1] == self.n_active_:
            full = np.zeros((codes.shape[0], self.n_bottleneck))
            full[:, self.active_mask_] = codes
        else:
            raise ValueError(
                f"codes have {codes.shape[1]} columns; expected {self.n_bottleneck} "
                f"or {getattr(self, 'n_active_', '?')}"
            )
        return mlp_forward(self.decoder_, full)

    def transform(self, X) -> np.ndarray:
        """Active latent coordinates, shape (n, n_active_)."""
        check_is_fitted(self, "active_mask_")
        return self.encode(X)[:, self.active_mask_]

    def inverse_transform(self, X) -> np.ndarray:
        return self.decode(X)

    def reconstruct(self, X, prune: bool = False) -> np.ndarray:
        codes = self.encode(X)
        if prune:
            codes = codes * self.active_mask_
        return mlp_forward(self.decoder_, codes)

    @property
    def n_params(self) -> int:
        return self.encoder_.n_params + self.decoder_.n_params

    # persistence ---------------------------------------------------------
    def _header(self, prefix=""):
        return {
            "kind": "sae",
            "params": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in self.get_params().items()},
            "encoder": {"layer_sizes": self.encoder_.sizes,
                        "activations": self.encoder_.activations},
            "decoder": {"layer_sizes": self.decoder_.sizes,
                        "activations": self.decoder_.activations},
            "active_mask": [bool(a) for a in self.active_mask_],
            "n_features_in": self.n_features_in_,
            "final_loss": float(self.history_[-1]) if len(self.history_) else None,
            "epochs_run": int(len(self.history_)),
        }

    def _arrays(self, prefix=""):
        return (mlp_named_arrays(self.encoder_, prefix + "enc.")
                + mlp_named_arrays(self.decoder_, prefix + "dec."))

    @classmethod
    def _from_parts(cls, header, arrays, prefix=""):
        params = dict(header["params"])
        params["hidden"] = tuple(params["hidden"])
        model = cls(**params)
        model.encoder_ = mlp_from_arrays(arrays, header["encoder"]["layer_sizes"],
                                         header["encoder"]["activations"], prefix + "enc.")
        model.decoder_ = mlp_from_arrays(arrays, header["decoder"]["layer_sizes"],
                                         header["decoder"]["activations"], prefix + "dec.")
        model.active_mask_ = np.array(header["active_mask"], dtype=bool)
        model.n_active_ = int(model.active_mask_.sum())
        model.n_features_in_ = int(header["n_features_in"])
        model.history_ = np.array([])
        return model

    def save(self, path, extra: dict | None = None):
        head = self._header()
        head["extra"] = extra or {}
        write_container(path, head, self._arrays())


class BlockSparseAutoencoder(TransformerMixin, BaseEstimator):
    """Independent sparse autoencoders on disjoint column blocks.

    Parameters
    ----------
    estimators : list of (name, columns, SparseAutoencoder)
        ``columns`` is a slice or index array into the snapshot vector. The
        combined code concatenates the active codes of the blocks in order.
    """

    def __init__(self, estimators):
        self.estimators = estimators

    def _columns(self, cols, n):
        return np.arange(n)[cols] if isinstance(cols, slice) else np.asarray(cols)

    def fit(self, X, y=None):
        X = check_snapshots(X)
        self.n_features_in_ = X.shape[1]
        self.estimators_ = []
        for name, cols, est in self.estimators:
            idx = self._columns(cols, X.shape[1])
            fitted = clone(est).fit(X[:, idx])
            self.estimators_.append((name, idx, fitted))
        return self

    @property
    def n_active_(self) -> int:
        return sum(e.n_active_ for _, _, e in self.estimators_)

    @property
    def block_active_(self) -> dict:
        return {name: e.n_active_ for name, _, e in self.estimators_}

    @property
    def n_params(self) -> int:
        return sum(e.n_params for _, _, e in self.estimators_)

    def set_active_from(self, X):
        X = check_snapshots(X, self.n_features_in_)
        for _, idx, est in self.estimators_:
            est.set_active_from(X[:, idx])
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        X = check_snapshots(X, self.n_features_in_)
        return np.hstack([est.transform(X[:, idx]) for _, idx, est in self.estimators_])

    def inverse_transform(self, codes) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
        if codes.shape[1] != self.n_active_:
            raise ValueError(f"codes have {codes.shape[1]} columns, expected {self.n_active_}")
        out = np.zeros((codes.shape[0], self.n_features_in_))
        start = 0
        for _, idx, est in self.estimators_:
            out[:, idx] = est.decode(codes[:, start:start + est.n_active_])
            start += est.n_active_
        return out

    def reconstruct(self, X, prune: bool = False) -> np.ndarray:
        X = check_snapshots(X, self.n_features_in_)
        out = np.zeros_like(X)
        for _, idx, est in self.estimators_:
            out[:, idx] = est.reconstruct(X[:, idx], prune=prune)
        return out

    def save(self, path, extra: dict | None = None):
        head = {"kind": "block_sae", "extra": extra or {}, "n_features_in": self.n_features_in_,
                "blocks": []}
        arrays = []
        for name, idx, est in self.estimators_:
            h = est._header()
            h["name"] = name
            h["columns"] = [int(i) for i in idx]
            head["blocks"].append(h)
            arrays += est._arrays(prefix=f"{name}.")
        write_container(path, head, arrays)


def load_sae(path):
    """Load a :class:`SparseAutoencoder` or :class:`BlockSparseAutoencoder` checkpoint."""
    head, arrays = read_container(path)
    if head.get("kind") == "sae":
        return SparseAutoencoder._from_parts(head, arrays)
    if head.get("kind") == "block_sae":
        fitted = []
        for h in head["blocks"]:
            est = SparseAutoencoder._from_parts(h, arrays, prefix=f"{h['name']}.")
            fitted.append((h["name"], np.array(h["columns"]), est))
        model = BlockSparseAutoencoder([(n, c, e) for n, c, e in fitted])
        model.estimators_ = fitted
        model.n_features_in_ = int(head["n_features_in"])
        return model
    raise ValueError(f"{path}: not an autoencoder checkpoint")


def train_sae(traj: Trajectory, split: SplitIndex, config: dict | None = None):
    """Fit a sparse autoencoder on the train snapshots of ``traj``.

    ``config`` holds :class:`SparseAutoencoder` parameters; a ``"blocks"``
    entry mapping block names to per-block parameter dicts trains one
    independent autoencoder per block instead. Returns ``(model, history)``
    where history is a dict of per-model loss arrays.
    """
    config = dict(config or {})
    blocks = config.pop("blocks", None)
    Z = traj.snapshots[split.train]
    if blocks is None:
        model = SparseAutoencoder(**config).fit(Z)
        model.set_active_from(traj.snapshots)
        return model, {"sae": model.history_}
    slices = traj.block_slices()
    missing = set(blocks) - set(slices)
    if missing:
        raise ValueError(f"config names unknown blocks {sorted(missing)}")
    estimators = []
    for b in traj.blocks:
        params = {**config, **blocks.get(b.name, {})}
        estimators.append((b.name, slices[b.name], SparseAutoencoder(**params)))
    model = BlockSparseAutoencoder(estimators).fit(Z)
    model.set_active_from(traj.snapshots)
    return model, {name: est.history_ for name, _, est in model.estimators_}


def per_variable_mse(truth, pred, traj: Trajectory) -> dict[str, float]:
    """Mean over snapshots and nodes of the squared error, per scalar variable."""
    err = (np.asarray(truth) - np.asarray(pred)) ** 2
    return {name: float(err[:, cols].mean()) for name, cols in traj.variable_columns().items()}


def test_sae(model, traj: Trajectory, split: SplitIndex, prune: bool = True) -> dict[str, float]:
    """Per-variable reconstruction MSE on the test snapshots.

    With ``prune`` the inactive latents are zeroed before decoding, i.e. the
    error of the ``d``-dimensional reduced model.
    """
    Z = traj.snapshots[split.test]
    return per_variable_mse(Z, model.reconstruct(Z, prune=prune), traj)


test_sae.__test__ = False  # not a pytest test
