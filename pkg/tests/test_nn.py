"""Dense layers, initialisation, Adam, checkpoint round trip."""

import numpy as np
import pytest

from gapcast.autodiff import NonFiniteError, Tensor, backward, gradcheck, tensor_sum
from gapcast.nn import (
    AdamState,
    Linear,
    Mlp,
    adam_step,
    clip_gradients,
    init_params,
    linear_init,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
)


def test_zero_weights_yield_bias_for_every_input():
    b = np.array([0.3, -0.7])
    net = Mlp([Linear(W=Tensor(np.zeros((3, 2))), b=Tensor(b))])
    for x in (np.zeros((1, 3)), np.ones((4, 3)), np.full((2, 3), -5.0)):
        out = mlp_forward(net, Tensor(x))
        np.testing.assert_allclose(out.data, np.broadcast_to(b, out.data.shape))


def test_single_identity_layer_is_identity():
    net = Mlp([Linear(W=Tensor(np.eye(3)), b=Tensor(np.zeros(3)))])
    x = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_allclose(mlp_forward(net, Tensor(x)).data, x)


def test_two_layer_forward_matches_hand_computation():
    net = init_params(7, [2, 3, 2])
    x = np.array([[1.0, 0.0]])
    got = mlp_forward(net, Tensor(x)).data
    W0, b0 = net.layers[0].W.data, net.layers[0].b.data
    W1, b1 = net.layers[1].W.data, net.layers[1].b.data
    expected = np.tanh(x @ W0 + b0) @ W1 + b1
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_forward_is_batch_equivariant():
    net = init_params(3, [4, 8, 2])
    rng = np.random.default_rng(1)
    X = rng.standard_normal((6, 4))
    batched = mlp_forward(net, Tensor(X)).data
    rows = [mlp_forward(net, Tensor(X[i : i + 1])).data[0] for i in range(6)]
    np.testing.assert_allclose(batched, np.stack(rows), rtol=1e-12)


def test_mlp_gradients_match_finite_differences():
    net = init_params(5, [3, 6, 2])
    x = np.random.default_rng(2).standard_normal((4, 3))
    tensors = list(net.params("net").values())
    gradcheck(
        lambda *_: tensor_sum(mlp_forward(net, Tensor(x))),
        tensors,
        step=1e-5,
        rtol=1e-4,
        atol=1e-6,
    )


def test_init_params_is_deterministic_and_seed_sensitive():
    a = init_params(0, [4, 8, 2])
    b = init_params(0, [4, 8, 2])
    c = init_params(1, [4, 8, 2])
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(la.W.data, lb.W.data)
        np.testing.assert_array_equal(la.b.data, lb.b.data)
    assert any(not np.array_equal(la.W.data, lc.W.data) for la, lc in zip(a.layers, c.layers))


def test_init_params_parameter_count():
    net = init_params(0, [4, 8, 2])
    n = sum(int(t.size) for t in net.params("net").values())
    assert n == 4 * 8 + 8 + 8 * 2 + 2 == 58


def test_init_params_rejects_bad_widths():
    with pytest.raises(ValueError):
        init_params(0, [4])
    with pytest.raises(ValueError):
        init_params(0, [4, 0, 2])


def test_linear_init_glorot_bound_and_zero_mode():
    layer = linear_init(np.random.default_rng(0), 10, 20)
    bound = np.sqrt(6.0 / 30.0)
    assert np.all(np.abs(layer.W.data) <= bound)
    np.testing.assert_array_equal(layer.b.data, np.zeros(20))
    zero = linear_init(np.random.default_rng(0), 10, 20, zero=True)
    np.testing.assert_array_equal(zero.W.data, np.zeros((10, 20)))


def test_adam_zero_gradient_keeps_params():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    state = AdamState(lr=0.1)
    adam_step(state, p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_matches_hand_unroll():
    p = {"w": Tensor(np.array([0.0]))}
    state = AdamState(lr=1e-3)
    adam_step(state, p, {"w": np.array([0.5])})
    # m-hat = g, v-hat = g^2, so the first update is -lr * g/(|g| + eps)
    assert p["w"].data[0] == pytest.approx(-9.99998e-4, abs=1e-8)


def test_adam_two_constant_steps():
    p = {"w": Tensor(np.array([0.0]))}
    state = AdamState(lr=1e-3)
    for _ in range(2):
        adam_step(state, p, {"w": np.array([1.0])})
    assert p["w"].data[0] == pytest.approx(-2e-3, abs=1e-6)
    assert state.step == 2


def test_adam_lr_zero_is_noop():
    rng = np.random.default_rng(3)
    p = {"w": Tensor(rng.standard_normal(4))}
    before = p["w"].data.copy()
    state = AdamState(lr=0.0)
    adam_step(state, p, {"w": rng.standard_normal(4)})
    np.testing.assert_array_equal(p["w"].data, before)


def test_adam_rejects_non_finite_gradient():
    p = {"w": Tensor(np.array([0.0]))}
    state = AdamState(lr=1e-3)
    with pytest.raises(NonFiniteError) as err:
        adam_step(state, p, {"w": np.array([np.nan])})
    assert "w" in str(err.value)


def test_clip_gradients_rescales_to_max_norm():
    clipped, total = clip_gradients({"a": np.array([3.0, 4.0])}, 1.0)
    assert total == pytest.approx(5.0)
    assert np.linalg.norm(clipped["a"]) == pytest.approx(1.0)


def test_clip_gradients_leaves_small_or_unbounded_alone():
    g1, _ = clip_gradients({"a": np.array([0.3, 0.4])}, 10.0)
    np.testing.assert_array_equal(g1["a"], [0.3, 0.4])
    g2, _ = clip_gradients({"a": np.array([30.0, 40.0])}, 0.0)
    np.testing.assert_array_equal(g2["a"], [30.0, 40.0])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    arrays = {"w": rng.standard_normal((3, 2)), "b": rng.standard_normal(2)}
    meta = {"epoch": 3, "note": "snapshot"}
    path = tmp_path / "ck.json"
    save_checkpoint(path, meta, arrays)
    meta2, arrays2 = load_checkpoint(path)
    assert meta2["epoch"] == 3 and meta2["note"] == "snapshot"
    for k in arrays:
        np.testing.assert_array_equal(arrays[k], arrays2[k])
