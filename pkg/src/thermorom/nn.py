"""Fully connected networks: Kaiming init, forward passes, Adam, L2 penalty."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .io import read_container, write_container

ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)
    activation: str


@dataclass(frozen=True)
class MlpParams:
    """Ordered stack of affine layers, each followed by its activation."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[0],):
                raise ValueError(f"layer {i}: bias shape {layer.bias.shape} does not match weight")
            if i and layer.weight.shape[1] != self.layers[i - 1].weight.shape[0]:
                raise ValueError(
                    f"layer {i}: input size {layer.weight.shape[1]} does not chain with "
                    f"previous output {self.layers[i - 1].weight.shape[0]}"
                )

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].weight.shape[1]] + [l.weight.shape[0] for l in self.layers]

    @property
    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def arrays(self) -> list[np.ndarray]:
        """Parameters as ``[W0, b0, W1, b1, ...]``."""
        out = []
        for l in self.layers:
            out.extend((l.weight, l.bias))
        return out

    def with_arrays(self, arrays) -> "MlpParams":
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.layers):
            raise ValueError("wrong number of parameter arrays")
        return MlpParams(tuple(
            Layer(np.asarray(arrays[2 * i], dtype=float), np.asarray(arrays[2 * i + 1], dtype=float),
                  l.activation)
            for i, l in enumerate(self.layers)
        ))


def hidden_activations(n_layers: int) -> list[str]:
    """ReLU on every hidden layer, identity on the output layer."""
    return ["relu"] * (n_layers - 1) + ["linear"]


def mlp_init(layer_sizes, activations=None, seed=0) -> MlpParams:
    """Kaiming-normal weights (variance 2/fan_in) and zero biases."""
    layer_sizes = [int(s) for s in layer_sizes]
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output size")
    if min(layer_sizes) < 1:
        raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
    n_layers = len(layer_sizes) - 1
    if activations is None:
        activations = hidden_activations(n_layers)
    if len(activations) != n_layers:
        raise ValueError(f"{n_layers} layers but {len(activations)} activations")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(layer_sizes[:-1], layer_sizes[1:], activations):
        w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(tuple(layers))


def _act(x, name):
    return np.maximum(x, 0.0) if name == "relu" else x


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network on one vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n_inputs:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.n_inputs}")
    for l in params.layers:
        x = _act(x @ l.weight.T + l.bias, l.activation)
    return x


def mlp_tape(tape: ad.Tape, params: MlpParams, x, prefix: str = ""):
    """Record a batched forward pass on ``tape``.

    Registers each weight and bias as a tape parameter (in ``arrays()`` order)
    and returns ``(output, weight_vars)``.
    """
    h = x if isinstance(x, ad.Var) else tape.const(np.atleast_2d(x))
    weights = []
    for i, l in enumerate(params.layers):
        W = tape.param(l.weight, f"{prefix}W{i}")
        b = tape.param(l.bias, f"{prefix}b{i}")
        weights.append(W)
        h = ad.linear(h, W, b)
        if l.activation == "relu":
            h = ad.relu(h)
    return h, weights


def l2_penalty(params: MlpParams) -> float:
    """Sum of squared weights over all layers; biases are excluded."""
    return float(sum(np.sum(l.weight * l.weight) for l in params.layers))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(arrays, grads, state: AdamState):
    """One bias-corrected Adam update.

    ``arrays`` and ``grads`` are matching lists of ndarrays. Returns the new
    arrays; ``state`` is advanced in place and also returned.
    """
    arrays = list(arrays)
    grads = list(grads)
    if len(arrays) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    for i, (p, g) in enumerate(zip(arrays, grads)):
        if p.shape != g.shape:
            raise ValueError(f"array {i}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in layer {i // 2} ({'weight' if i % 2 == 0 else 'bias'})"
            )
    if not state.m:
        state.m = [np.zeros_like(p) for p in arrays]
        state.v = [np.zeros_like(p) for p in arrays]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(arrays, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
    return out, state


def mlp_header(params: MlpParams) -> dict:
    return {"layer_sizes": params.sizes, "activations": params.activations}


def mlp_named_arrays(params: MlpParams, prefix: str = ""):
    """``(name, array)`` pairs, weight then bias, layer by layer."""
    out = []
    for i, l in enumerate(params.layers):
        out.append((f"{prefix}W{i}", l.weight))
        out.append((f"{prefix}b{i}", l.bias))
    return out


def mlp_from_arrays(arrays: dict, sizes, activations, prefix: str = "") -> MlpParams:
    layers = []
    for i, act in enumerate(activations):
        W = arrays[f"{prefix}W{i}"]
        b = arrays[f"{prefix}b{i}"]
        if W.shape != (sizes[i + 1], sizes[i]):
            raise ValueError(f"{prefix}W{i}: stored shape {W.shape} != declared {(sizes[i + 1], sizes[i])}")
        layers.append(Layer(W, b, act))
    return MlpParams(tuple(layers))


def save_mlp(path, params: MlpParams, hyperparameters: dict | None = None, seed: int | None = None):
    header = mlp_header(params)
    header["hyperparameters"] = hyperparameters or {}
    header["seed"] = seed
    write_container(path, header, mlp_named_arrays(params))


def load_mlp(path) -> tuple[MlpParams, dict]:
    header, arrays = read_container(path)
    params = mlp_from_arrays(arrays, header["layer_sizes"], header["activations"])
    return params, header


class DivergenceError(FloatingPointError):
    """Training or a rollout produced non-finite values."""

    def __init__(self, epoch: int, what: str = "loss", unit: str = "epoch"):
        super().__init__(f"{what} became non-finite at {unit} {epoch}")
        self.epoch = epoch


def train_loop(arrays, objective, lr: float, epochs: int, tol: float | None = None,
               patience: int = 1000, log_every: int = 0, logger=None):
    """Full-batch Adam descent.

    ``objective(arrays)`` returns ``(loss, grads)``. Training stops after
    ``epochs`` steps, or earlier once the best loss has improved by less than
    ``tol`` over the last ``patience`` epochs. Returns the final arrays and
    the per-epoch loss history (loss evaluated before each step).
    """
    state = AdamState(lr=lr)
    history = []
    best_at = [np.inf]
    arrays = list(arrays)
    for epoch in range(epochs):
        with np.errstate(over="ignore", invalid="ignore"):  # reported below instead
            loss, grads = objective(arrays)
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        history.append(float(loss))
        try:
            arrays, state = adam_step(arrays, grads, state)
        except FloatingPointError:
            raise DivergenceError(epoch, "gradient") from None
        if logger is not None and log_every and epoch % log_every == 0:
            logger.info("epoch %d loss %.6e", epoch, loss)
        if tol is not None:
            best_at.append(min(best_at[-1], loss))
            if epoch >= patience and best_at[-1 - patience] - best_at[-1] < tol:
                break
    return arrays, np.array(history)
