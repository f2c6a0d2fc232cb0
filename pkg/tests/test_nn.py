import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermorom.nn import (
    AdamState,
    DivergenceError,
    Layer,
    MlpParams,
    adam_step,
    l2_penalty,
    load_mlp,
    mlp_forward,
    mlp_init,
    save_mlp,
    train_loop,
)


def net(*layers):
    return MlpParams(tuple(Layer(np.array(W, float), np.array(b, float), a) for W, b, a in layers))


def test_kaiming_variance():
    params = mlp_init([400, 160, 160, 10], seed=7)
    for layer in params.layers:
        fan_in = layer.weight.shape[1]
        var = layer.weight.var()
        assert abs(var / (2.0 / fan_in) - 1.0) < 0.2
        assert layer.weight.size >= 1600


def test_biases_start_at_zero():
    params = mlp_init([4, 4], seed=123)
    np.testing.assert_array_equal(params.layers[0].bias, np.zeros(4))


def test_init_is_deterministic():
    a, b = mlp_init([5, 3, 2], seed=9), mlp_init([5, 3, 2], seed=9)
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)


def test_zero_size_layer_rejected():
    with pytest.raises(ValueError):
        mlp_init([3, 0, 2])


def test_default_activations_hidden_relu_output_linear():
    assert mlp_init([3, 4, 4, 2]).activations == ["relu", "relu", "linear"]


def test_forward_identity_linear():
    np.testing.assert_array_equal(mlp_forward(net((np.eye(2), [0, 0], "linear")), [1, 2]), [1, 2])


def test_forward_identity_relu():
    np.testing.assert_array_equal(mlp_forward(net((np.eye(2), [0, 0], "relu")), [-1, 2]), [0, 2])


def test_forward_two_layers():
    p = net(([[1, 1]], [0], "relu"), ([[2]], [1], "linear"))
    np.testing.assert_array_equal(mlp_forward(p, [1, 2]), [7])


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        mlp_forward(mlp_init([3, 2]), np.ones(4))


def test_layers_must_chain():
    with pytest.raises(ValueError, match="chain"):
        net((np.eye(2), [0, 0], "linear"), (np.eye(3), [0, 0, 0], "linear"))


def test_all_linear_network_is_composed_affine_map():
    rng = np.random.default_rng(0)
    p = mlp_init([4, 6, 5, 3], ["linear"] * 3, seed=1)
    p = p.with_arrays([a + rng.normal(size=a.shape) * (a.ndim == 1) for a in p.arrays()])
    W = np.eye(4)
    b = np.zeros(4)
    for l in p.layers:
        W, b = l.weight @ W, l.weight @ b + l.bias
    x = rng.normal(size=(7, 4))
    np.testing.assert_allclose(mlp_forward(p, x), x @ W.T + b, atol=1e-12)


def test_adam_zero_gradient_is_noop():
    p = [np.array([1.0, -2.0])]
    out, _ = adam_step(p, [np.zeros(2)], AdamState(lr=0.1))
    np.testing.assert_array_equal(out[0], p[0])


def test_adam_first_step():
    out, state = adam_step([np.array(0.0)], [np.array(1.0)], AdamState(lr=0.1))
    assert out[0] == pytest.approx(-0.1, abs=1e-8)
    assert state.step == 1


def test_adam_is_deterministic():
    rng = np.random.default_rng(5)
    grads = [[rng.normal(size=3)] for _ in range(4)]

    def run():
        p, st = [np.zeros(3)], AdamState(lr=0.01)
        for g in grads:
            p, st = adam_step(p, g, st)
        return p[0]

    np.testing.assert_array_equal(run(), run())


def test_adam_nan_gradient_names_layer():
    with pytest.raises(FloatingPointError, match="layer 1"):
        adam_step([np.zeros(2), np.zeros(1), np.zeros(3)],
                  [np.zeros(2), np.zeros(1), np.array([0.0, np.nan, 0.0])], AdamState())


def test_adam_invariant_under_layer_relabeling():
    rng = np.random.default_rng(1)
    p = [rng.normal(size=(2, 3)), rng.normal(size=4)]
    g = [rng.normal(size=(2, 3)), rng.normal(size=4)]
    a, _ = adam_step(p, g, AdamState(lr=0.05))
    b, _ = adam_step(p[::-1], g[::-1], AdamState(lr=0.05))
    np.testing.assert_array_equal(a[0], b[1])
    np.testing.assert_array_equal(a[1], b[0])


def test_l2_zero_weights():
    assert l2_penalty(net((np.zeros((2, 2)), [5, 5], "linear"))) == 0.0


def test_l2_known_value():
    assert l2_penalty(net(([[1, 2], [3, 0]], [0, 0], "linear"))) == 14.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_l2_matches_brute_force_and_ignores_biases(seed):
    p = mlp_init([3, 5, 2], seed=seed)
    brute = sum(w ** 2 for l in p.layers for w in l.weight.ravel())
    assert l2_penalty(p) == pytest.approx(brute, rel=1e-12)
    shifted = p.with_arrays([a + 1.0 if a.ndim == 1 else a for a in p.arrays()])
    assert l2_penalty(shifted) == l2_penalty(p)


def test_checkpoint_roundtrip(tmp_path):
    p = mlp_init([3, 4, 2], seed=2)
    save_mlp(tmp_path / "m.bin", p, {"lr": 1e-4}, seed=2)
    q, header = load_mlp(tmp_path / "m.bin")
    assert header["layer_sizes"] == [3, 4, 2] and header["seed"] == 2
    for a, b in zip(p.arrays(), q.arrays()):
        np.testing.assert_array_equal(a, b)


def test_train_loop_minimizes_quadratic():
    target = np.array([1.0, -2.0])

    def objective(arrays):
        r = arrays[0] - target
        return float(r @ r), [2 * r]

    arrays, hist = train_loop([np.zeros(2)], objective, lr=0.05, epochs=2000)
    np.testing.assert_allclose(arrays[0], target, atol=1e-3)
    assert hist[-1] < hist[0]


def test_train_loop_early_stop():
    def objective(arrays):
        return 1.0, [np.zeros(1)]

    _, hist = train_loop([np.zeros(1)], objective, lr=0.1, epochs=10_000, tol=1e-9, patience=10)
    assert len(hist) == 11


def test_train_loop_reports_divergence_epoch():
    def objective(arrays):
        return (np.nan if arrays[0][0] < -0.25 else 1.0), [np.ones(1)]

    with pytest.raises(DivergenceError) as info:
        train_loop([np.zeros(1)], objective, lr=0.1, epochs=100)
    assert info.value.epoch == 3
