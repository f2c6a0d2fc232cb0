"""Unconstrained latent integrator: a plain MLP mapping ``x_n`` to ``x_{n+1}``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_snapshots
from .dataset import SplitIndex, Trajectory
from .nn import MlpParams, hidden_activations, l2_penalty, mlp_forward, mlp_init, mlp_tape
from .spnn import _LatentIntegrator, transition_pairs


@dataclass
class UcLoss:
    total: float
    data: float
    l2: float


def uc_objective(net: MlpParams, X, Y, lambda_r: float, residual: bool = False):
    """Batch-mean ``|Y - f(X)|^2 + lambda_r sum W^2`` and its gradients."""
    tape = ad.Tape()
    Xc = tape.const(X)
    out, weights = mlp_tape(tape, net, Xc)
    if residual:
        out = ad.add(Xc, out)
    data = ad.scale(ad.squared_norm(ad.sub(tape.const(Y), out)), 1.0 / X.shape[0])
    l2 = ad.squared_norm(weights[0])
    for W in weights[1:]:
        l2 = ad.add(l2, ad.squared_norm(W))
    total = ad.add(data, ad.scale(l2, lambda_r))
    grads = tape.backward(total)
    return UcLoss(float(total.value), float(data.value), float(l2.value)), grads


class UnconstrainedIntegrator(_LatentIntegrator):
    """Black-box next-state predictor with no thermodynamic structure.

    ``residual=True`` predicts ``x + f(x)`` instead of ``f(x)``.
    """

    def __init__(self, dt=0.0067, hidden=(25,) * 5, lr=1e-5, lambda_r=1e-5,
                 epochs=100_000, tol=None, patience=1000, residual=False, random_state=0):
        self.dt = dt
        self.hidden = hidden
        self.lr = lr
        self.lambda_r = lambda_r
        self.epochs = epochs
        self.tol = tol
        self.patience = patience
        self.residual = residual
        self.random_state = random_state

    def _init_net(self, d):
        sizes = [d, *[int(h) for h in self.hidden], d]
        return mlp_init(sizes, hidden_activations(len(sizes) - 1), self.random_state)

    def _objective(self, net, X, Y):
        return uc_objective(net, X, Y, self.lambda_r, self.residual)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = check_snapshots(X, self.n_features_in_)
        out = mlp_forward(self.net_, X)
        return X + out if self.residual else out

    def loss(self, X, Y) -> UcLoss:
        check_is_fitted(self, "net_")
        X = check_snapshots(X, self.n_features_in_)
        Y = check_snapshots(Y, self.n_features_in_)
        data = float(np.sum((Y - self.predict(X)) ** 2) / X.shape[0])
        l2 = l2_penalty(self.net_)
        return UcLoss(data + self.lambda_r * l2, data, l2)

    def save(self, path, extra=None):
        self._save(path, "uc", extra)


def uc_step(model: UnconstrainedIntegrator, x) -> np.ndarray:
    return model.predict(np.asarray(x, dtype=np.float64)[None, :])[0]


def train_uc(sae, traj: Trajectory, split: SplitIndex, config: dict | None = None):
    config = dict(config or {})
    config.setdefault("dt", traj.dt)
    codes = sae.transform(traj.snapshots)
    X, Y = transition_pairs(codes, split.train)
    model = UnconstrainedIntegrator(**config).fit(X, Y)
    return model, model.history_
