import math

import numpy as np
import pytest

from switchrl.nn import (
    AdamState,
    ConfigurationError,
    MlpGrads,
    MlpParams,
    NumericsError,
    adam_init,
    adam_step,
    load_params,
    mlp_backward,
    mlp_forward,
    mlp_init,
    save_params,
    soft_update,
)


def forward_oracle(params, x):
    """Straight-line reimplementation of the forward pass in pure python."""
    h = [float(v) for v in x]
    for w, b, tag in zip(params.weights, params.biases, params.activations):
        z = []
        for i in range(w.shape[0]):
            acc = float(b[i])
            for j in range(w.shape[1]):
                acc += float(w[i, j]) * h[j]
            z.append(acc)
        if tag == "tanh":
            h = [math.tanh(v) for v in z]
        elif tag == "relu":
            h = [max(v, 0.0) for v in z]
        else:
            h = z
    return np.array(h)


def scalar_objective(params, x, upstream):
    return float(np.sum(upstream * mlp_forward(params, x)))


def fd_grads(params, x, upstream, eps=1e-4):
    """Central finite differences of sum(upstream * forward) over all parameters."""
    d_weights, d_biases = [], []
    for k in range(params.n_layers):
        dw = np.zeros_like(params.weights[k])
        for idx in np.ndindex(*params.weights[k].shape):
            p = params.copy()
            p.weights[k][idx] += eps
            hi = scalar_objective(p, x, upstream)
            p.weights[k][idx] -= 2 * eps
            lo = scalar_objective(p, x, upstream)
            dw[idx] = (hi - lo) / (2 * eps)
        d_weights.append(dw)
        db = np.zeros_like(params.biases[k])
        for i in range(params.biases[k].shape[0]):
            p = params.copy()
            p.biases[k][i] += eps
            hi = scalar_objective(p, x, upstream)
            p.biases[k][i] -= 2 * eps
            lo = scalar_objective(p, x, upstream)
            db[i] = (hi - lo) / (2 * eps)
        d_biases.append(db)
    return d_weights, d_biases


def max_rel_err(a, b, floor=1e-4):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def test_forward_identity_layer():
    params = MlpParams([np.eye(3)], [np.zeros(3)], ("identity",))
    x = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(mlp_forward(params, x), x)


def test_forward_zero_weight_returns_bias():
    b = np.array([1.5, -0.5])
    params = MlpParams([np.zeros((2, 4))], [b], ("identity",))
    for _ in range(3):
        x = np.random.default_rng(0).normal(size=4)
        assert np.array_equal(mlp_forward(params, x), b)


def test_forward_matches_straight_line_oracle():
    rng = np.random.default_rng(42)
    params = mlp_init([5, 7, 3], rng, hidden_activation="tanh", output_activation="tanh")
    x = rng.normal(size=5)
    got = mlp_forward(params, x)
    want = forward_oracle(params, x)
    assert np.max(np.abs(got - want)) < 1e-12


def test_forward_batch_matches_rowwise():
    rng = np.random.default_rng(7)
    params = mlp_init([4, 8, 2], rng)
    xs = rng.normal(size=(6, 4))
    batched = mlp_forward(params, xs)
    for i in range(6):
        assert np.allclose(batched[i], mlp_forward(params, xs[i]), atol=1e-14)


def test_forward_dim_mismatch_raises():
    params = mlp_init([4, 3], np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        mlp_forward(params, np.zeros(5))


def test_backward_linear_layer_closed_form():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    params = MlpParams([w.copy()], [b.copy()], ("identity",))
    x = rng.normal(size=4)
    g = rng.normal(size=3)
    grads, dx = mlp_backward(params, x, g)
    assert np.allclose(grads.weights[0], np.outer(g, x), atol=1e-14)
    assert np.allclose(grads.biases[0], g, atol=1e-14)
    assert np.allclose(dx, w.T @ g, atol=1e-14)


def test_backward_zero_upstream_is_zero():
    rng = np.random.default_rng(5)
    params = mlp_init([4, 6, 2], rng)
    grads, dx = mlp_backward(params, rng.normal(size=4), np.zeros(2))
    for arr in grads.weights + grads.biases + [dx]:
        assert np.all(arr == 0.0)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    params = mlp_init([5, 9, 3], rng, hidden_activation="tanh")
    x = rng.normal(size=5)
    upstream = rng.normal(size=3)
    grads, _ = mlp_backward(params, x, upstream)
    fd_w, fd_b = fd_grads(params, x, upstream)
    for k in range(params.n_layers):
        assert max_rel_err(grads.weights[k], fd_w[k]) < 1e-4
        assert max_rel_err(grads.biases[k], fd_b[k]) < 1e-4


def test_backward_relu_finite_differences():
    rng = np.random.default_rng(23)
    params = mlp_init([4, 8, 2], rng, hidden_activation="relu")
    x = rng.normal(size=4)
    upstream = rng.normal(size=2)
    grads, _ = mlp_backward(params, x, upstream)
    fd_w, fd_b = fd_grads(params, x, upstream)
    for k in range(params.n_layers):
        assert max_rel_err(grads.weights[k], fd_w[k]) < 1e-4


def test_backward_batch_sums_over_rows():
    rng = np.random.default_rng(13)
    params = mlp_init([3, 5, 2], rng, hidden_activation="tanh")
    xs = rng.normal(size=(4, 3))
    ups = rng.normal(size=(4, 2))
    batched, dxs = mlp_backward(params, xs, ups)
    acc_w = [np.zeros_like(w) for w in params.weights]
    acc_b = [np.zeros_like(b) for b in params.biases]
    for i in range(4):
        g, dx = mlp_backward(params, xs[i], ups[i])
        for k in range(params.n_layers):
            acc_w[k] += g.weights[k]
            acc_b[k] += g.biases[k]
        assert np.allclose(dxs[i], dx, atol=1e-12)
    for k in range(params.n_layers):
        assert np.allclose(batched.weights[k], acc_w[k], atol=1e-12)
        assert np.allclose(batched.biases[k], acc_b[k], atol=1e-12)


def test_adam_zero_gradient_keeps_params():
    rng = np.random.default_rng(2)
    params = mlp_init([3, 4, 2], rng)
    state = adam_init(params)
    zero = MlpGrads(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )
    new_params, new_state = adam_step(state, params, zero)
    for a, b in zip(new_params.weights, params.weights):
        assert np.array_equal(a, b)
    assert new_state.step == 1


def test_adam_first_step_hand_value():
    # scalar parameter, g = 1: bias correction gives m_hat = v_hat = 1,
    # so the first step moves by -lr / (1 + eps)
    params = MlpParams([np.array([[1.0]])], [np.array([0.0])], ("identity",))
    state = adam_init(params, lr=1e-3, eps=1e-8)
    grads = MlpGrads([np.array([[1.0]])], [np.array([0.0])])
    new_params, _ = adam_step(state, params, grads)
    delta = new_params.weights[0][0, 0] - 1.0
    assert abs(delta + 1e-3) < 1e-9


def test_adam_minimizes_quadratic():
    params = MlpParams([np.array([[1.0]])], [np.array([0.0])], ("identity",))
    state = adam_init(params, lr=0.1)
    for _ in range(100):
        theta = params.weights[0][0, 0]
        grads = MlpGrads([np.array([[2.0 * theta]])], [np.array([0.0])])
        params, state = adam_step(state, params, grads)
    assert abs(params.weights[0][0, 0]) < 0.1


def test_adam_rejects_non_finite_gradient():
    params = mlp_init([2, 2], np.random.default_rng(0))
    state = adam_init(params)
    bad = MlpGrads([np.full((2, 2), np.nan)], [np.zeros(2)])
    with pytest.raises(NumericsError):
        adam_step(state, params, bad)


def test_soft_update_endpoints_and_midpoint():
    rng = np.random.default_rng(9)
    target = mlp_init([3, 4], rng)
    source = mlp_init([3, 4], rng)
    assert np.array_equal(soft_update(target, source, 1.0).weights[0], source.weights[0])
    assert np.array_equal(soft_update(target, source, 0.0).weights[0], target.weights[0])
    zeros = MlpParams([np.zeros((4, 3))], [np.zeros(4)], ("identity",))
    twos = MlpParams([np.full((4, 3), 2.0)], [np.full(4, 2.0)], ("identity",))
    mid = soft_update(zeros, twos, 0.5)
    assert np.allclose(mid.weights[0], 1.0)
    assert np.allclose(mid.biases[0], 1.0)


def test_soft_update_composition_is_affine():
    rng = np.random.default_rng(17)
    target = mlp_init([4, 5, 2], rng)
    source = mlp_init([4, 5, 2], rng)
    tau1, tau2 = 0.3, 0.45
    stepped = soft_update(soft_update(target, source, tau1), source, tau2)
    combined = soft_update(target, source, 1.0 - (1.0 - tau1) * (1.0 - tau2))
    for a, b in zip(stepped.weights, combined.weights):
        assert np.allclose(a, b, atol=1e-14)


def test_soft_update_shape_mismatch_raises():
    rng = np.random.default_rng(1)
    with pytest.raises(ConfigurationError):
        soft_update(mlp_init([3, 4], rng), mlp_init([3, 5], rng), 0.5)


def test_forward_deterministic():
    rng = np.random.default_rng(31)
    params = mlp_init([6, 8, 3], rng)
    x = rng.normal(size=6)
    a = mlp_forward(params, x)
    b = mlp_forward(params, x)
    assert np.array_equal(a, b)


def test_checkpoint_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(19)
    params = mlp_init([5, 16, 16, 2], rng, output_activation="tanh")
    path = tmp_path / "net.bin"
    save_params(path, params)
    loaded = load_params(path, params.activations)
    for a, b in zip(loaded.weights, params.weights):
        assert np.array_equal(a, b)
    for a, b in zip(loaded.biases, params.biases):
        assert np.array_equal(a, b)
    assert loaded.activations == params.activations


def test_checkpoint_bad_magic_raises(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ConfigurationError):
        load_params(path, ("identity",))


def test_gradient_check_sweep():
    # analytic vs central finite differences over random small networks
    rng = np.random.default_rng(101)
    for trial in range(20):
        n_hidden = int(rng.integers(0, 3))
        sizes = [int(rng.integers(2, 8))]
        for _ in range(n_hidden):
            sizes.append(int(rng.integers(2, 33)))
        sizes.append(int(rng.integers(1, 5)))
        out_act = "tanh" if rng.uniform() < 0.5 else "identity"
        params = mlp_init(sizes, rng, hidden_activation="tanh", output_activation=out_act)
        x = rng.normal(size=sizes[0])
        upstream = rng.normal(size=sizes[-1])
        grads, _ = mlp_backward(params, x, upstream)
        fd_w, fd_b = fd_grads(params, x, upstream)
        for k in range(params.n_layers):
            assert max_rel_err(grads.weights[k], fd_w[k]) < 1e-4, f"trial {trial} layer {k}"
            assert max_rel_err(grads.biases[k], fd_b[k]) < 1e-4, f"trial {trial} layer {k}"
