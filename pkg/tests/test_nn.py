import time

import numpy as np
import pytest

from gamerl.nn import (
    Adam,
    AdamState,
    ConvPolicyNet,
    ShapeError,
    adam_step,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    softmax_logprob_entropy,
)


def test_shapes():
    net = ConvPolicyNet(seed=0)
    shapes = {k: v.shape for k, v in net.params.items()}
    assert shapes["conv1.w"] == (16, 4, 3, 3)
    assert shapes["conv2.w"] == (32, 16, 3, 3)
    assert shapes["fc.w"] == (3200, 256)
    assert shapes["policy.w"] == (256, 4) and shapes["value.w"] == (256, 1)
    assert all(v.dtype == np.float32 for v in net.params.values())
    logits, value = net.forward(np.zeros((10, 10, 4)))
    assert logits.shape == (4,) and np.ndim(value) == 0


def test_zero_network_outputs_zero():
    net = ConvPolicyNet(seed=0).zero_()
    logits, value = net.forward(np.random.default_rng(0).normal(size=(3, 10, 10, 4)))
    assert not logits.any() and not value.any()


def test_policy_bias_passes_through():
    net = ConvPolicyNet(seed=0).zero_()
    net.params["policy.b"][:] = [0.5, -1.0, 2.0, 0.0]
    logits, _ = net.forward(np.zeros((10, 10, 4)))
    assert np.array_equal(logits, net.params["policy.b"])


def test_forward_deterministic():
    net = ConvPolicyNet(seed=3)
    x = np.random.default_rng(1).normal(size=(4, 10, 10, 4))
    a, b = net.forward(x), net.forward(x)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.array_equal(ConvPolicyNet(seed=3).params["fc.w"], net.params["fc.w"])


def test_bad_shape():
    with pytest.raises(ShapeError):
        ConvPolicyNet().forward(np.zeros((10, 10, 3)))


def test_gradient_check():
    t = time.perf_counter()
    assert gradient_check(probes_per_layer=15, seed=1) < 1e-3
    assert time.perf_counter() - t < 60


def test_unused_head_gets_zero_gradient():
    net = ConvPolicyNet(seed=0)
    net.forward(np.ones((2, 10, 10, 4)))
    grads = net.backward(np.ones((2, 4), np.float32))
    assert not grads["value.w"].any() and not grads["value.b"].any()


def test_relu_blocks_negative_preactivation():
    net = ConvPolicyNet(seed=0)
    net.params["fc.b"][:] = -1e6  # every hidden unit off
    net.forward(np.ones((1, 10, 10, 4)))
    grads = net.backward(np.ones((1, 4), np.float32), np.ones(1, np.float32))
    for name in ("fc.w", "fc.b", "conv2.w", "conv1.w"):
        assert not grads[name].any()


def test_softmax_examples():
    p, logp, ent = softmax_logprob_entropy(np.zeros(4))
    assert np.allclose(p, 0.25) and np.isclose(ent, np.log(4))
    p, logp, _ = softmax_logprob_entropy(np.array([0.3, 1.0, -2.0, 0.5]), mask=[2])
    assert p[2] == 0.0 and logp[2] == -np.inf and np.isclose(p.sum(), 1.0)
    p, _, _ = softmax_logprob_entropy(np.array([1000.0, 0.0, 0.0, 0.0]))
    assert np.all(np.isfinite(p)) and np.isclose(p[0], 1.0)
    with pytest.raises(ValueError):
        softmax_logprob_entropy(np.zeros(4), mask=np.ones(4, bool))


def test_softmax_fuzz():
    rng = np.random.default_rng(0)
    z = rng.normal(scale=20, size=(2000, 4))
    mask = rng.random((2000, 4)) < 0.4
    mask[mask.all(axis=1), 0] = False
    p, _, ent = softmax_logprob_entropy(z, mask)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p[mask] == 0.0)
    assert np.all(ent >= -1e-6)


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.arange(5, dtype=np.float32)}
    before = params["w"].copy()
    Adam(params).step({"w": np.zeros(5, np.float32)})
    assert np.array_equal(params["w"], before)


def test_adam_first_step_is_lr_sign():
    params = {"w": np.zeros(6)}
    g = np.array([3.0, -0.2, 1e-3, -40.0, 0.5, -7.0])
    state = AdamState()
    adam_step(params, {"w": g}, state)
    assert np.allclose(params["w"], -1e-3 * np.sign(g), atol=1e-6)
    assert state.t == 1


def test_adam_constant_gradient_unit_step():
    params = {"w": np.zeros(3)}
    opt = Adam(params)
    for _ in range(2000):
        prev = params["w"].copy()
        opt.step({"w": np.array([0.7, -2.0, 5.0])})
    step = np.abs(params["w"] - prev)
    assert np.allclose(step, 1e-3, rtol=0.01)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, AdamState())


def test_checkpoint_round_trip(tmp_path):
    net = ConvPolicyNet(seed=9, heads=(("best", 4), ("worst", 16)))
    path = tmp_path / "n.bin"
    net.save(path)
    raw = path.read_bytes()
    assert raw[:8] == b"GRLNET01"
    again = ConvPolicyNet.load(path)
    assert again.heads == net.heads
    for k in net.params:
        assert np.array_equal(again.params[k], net.params[k])
    params, meta = load_checkpoint(path)
    assert meta["hidden"] == 256


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"notacheckpoint")
    with pytest.raises(ValueError):
        load_checkpoint(p)
    save_checkpoint(p, {"a": np.ones(3, np.float32)})
    p.write_bytes(p.read_bytes() + b"\0")
    with pytest.raises(ValueError):
        load_checkpoint(p)
