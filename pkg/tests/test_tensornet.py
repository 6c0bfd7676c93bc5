import numpy as np
import pytest

from cclab import tensornet as tn


def small_specs():
    return [
        tn.ModelSpec((tn.flatten(), tn.dense(12, 1)), (12,)),
        tn.ModelSpec((tn.flatten(), tn.dense(10, 7), tn.relu(), tn.dense(7, 1)), (10,)),
        tn.ModelSpec(
            (tn.conv2d(1, 2, 3), tn.relu(), tn.conv2d(2, 3, 3), tn.relu(),
             tn.maxpool(2), tn.flatten(), tn.dense(12, 4), tn.relu(), tn.dense(4, 1)),
            (1, 8, 8),
        ),
        tn.ModelSpec(
            (tn.conv2d(2, 3, 2, 2), tn.relu(), tn.flatten(), tn.dense(27, 1)),
            (2, 6, 6),
        ),
    ]


def test_m0_init_shapes_and_scale():
    spec = tn.m0_spec(64 * 64)
    state = tn.init_model(spec, 0)
    assert state.params[1]["w"].shape == (4096, 1)
    assert state.params[1]["b"].shape == (1,)
    assert not state.params[1]["b"].any()
    assert np.abs(state.params[1]["w"]).mean() < 0.05  # init near zero


def test_init_deterministic():
    spec = tn.m1_spec(50)
    a = tn.init_model(spec, 9)
    b = tn.init_model(spec, 9)
    for pa, pb in zip(a.params, b.params):
        for key in pa:
            assert np.array_equal(pa[key], pb[key])


def test_m0_all_ones_counts_pixels():
    spec, state = tn.pixel_count_construction("m0", 256)
    rng = np.random.default_rng(3)
    x = (rng.random((100, 256)) < 0.3).astype(np.float64)
    pred = tn.predict(spec, state, x)
    assert np.array_equal(pred, x.sum(axis=1))


def test_m1_construction_exact_counts():
    n = 4096  # power of four makes 1/sqrt(n) dyadic, so the identity is exact
    spec, state = tn.pixel_count_construction("m1", n)
    assert float(state.params[1]["w"][0, 0]) == 0.015625
    rng = np.random.default_rng(4)
    x = (rng.random((20, n)) < 0.25).astype(np.float64)
    pred = tn.predict(spec, state, x)
    assert np.max(np.abs(pred - x.sum(axis=1))) == 0.0


def test_zero_image_outputs_bias_chain():
    spec = tn.m0_spec(16)
    state = tn.init_model(spec, 0)
    state.params[1]["b"][:] = 3.5
    pred = tn.predict(spec, state, np.zeros((2, 16)))
    assert np.allclose(pred, 3.5)


def test_relu_output_nonnegative():
    spec = tn.ModelSpec((tn.flatten(), tn.dense(6, 8), tn.relu()), (6,))
    state = tn.init_model(spec, 5)
    out = tn.forward(spec, state, np.random.default_rng(0).standard_normal((40, 6)))
    assert (out >= 0).all()


def test_forward_shape_mismatch():
    spec = tn.m0_spec(16)
    state = tn.init_model(spec, 0)
    with pytest.raises(ValueError):
        tn.forward(spec, state, np.zeros((2, 17)))


def test_backprop_perfect_predictions():
    spec, state = tn.pixel_count_construction("m0", 32)
    x = (np.random.default_rng(1).random((8, 32)) < 0.5).astype(np.float64)
    grads, loss = tn.backprop(spec, state, x, x.sum(axis=1))
    assert loss == 0.0
    assert not grads[1]["w"].any() and not grads[1]["b"].any()


def test_m0_closed_form_gradient():
    spec = tn.m0_spec(6)
    state = tn.init_model(spec, 1)
    x = np.array([[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]])
    target = np.array([2.0])
    grads, _ = tn.backprop(spec, state, x, target)
    pred = tn.predict(spec, state, x)[0]
    assert np.allclose(grads[1]["w"].ravel(), 2 * (pred - 2.0) * x.ravel())
    assert np.allclose(grads[1]["b"], 2 * (pred - 2.0))


def test_grad_check_all_layer_types():
    for i, spec in enumerate(small_specs()):
        dev = tn.grad_check(spec, seed=100 + i)
        assert dev <= 1e-4, (i, dev)


def test_grad_check_detects_corruption():
    spec = tn.ModelSpec((tn.flatten(), tn.dense(5, 4), tn.relu(), tn.dense(4, 1)), (5,))
    rng = np.random.default_rng(6)
    state = tn.init_model(spec, 6)
    for p in state.params:
        for key in p:
            p[key] = p[key] + 0.1
    x = rng.standard_normal((4, 5))
    targets = rng.standard_normal(4)
    grads, _ = tn.backprop(spec, state, x, targets)
    grads[1]["w"] *= 2.0  # deliberate corruption
    eps = 1e-5
    worst = 0.0
    flat_p = state.params[1]["w"].reshape(-1)
    flat_g = grads[1]["w"].reshape(-1)
    for i in range(flat_p.size):
        orig = flat_p[i]
        flat_p[i] = orig + eps
        up = float(np.mean((tn.predict(spec, state, x) - targets) ** 2))
        flat_p[i] = orig - eps
        down = float(np.mean((tn.predict(spec, state, x) - targets) ** 2))
        flat_p[i] = orig
        numeric = (up - down) / (2 * eps)
        dev = abs(flat_g[i] - numeric) / max(abs(flat_g[i]), abs(numeric), 1e-8)
        worst = max(worst, dev)
    assert worst > 0.1  # a doubled gradient sits near 0.5 relative deviation


def test_train_zero_lr_keeps_state():
    spec = tn.m1_spec(10)
    state = tn.init_model(spec, 0)
    x = np.random.default_rng(0).random((30, 10))
    cfg = tn.TrainConfig(tn.OptimizerSpec("sgd", 0.0), 8, 4, seed=2)
    out, trace = tn.train(spec, state, x, x.sum(axis=1), cfg)
    for a, b in zip(state.params, out.params):
        for key in a:
            assert np.array_equal(a[key], b[key])
    assert len(trace.train_loss) == 4


def test_train_bitwise_deterministic():
    spec = tn.m1_spec(12)
    state = tn.init_model(spec, 1)
    x = np.random.default_rng(1).random((40, 12))
    y = x.sum(axis=1)
    cfg = tn.TrainConfig(tn.OptimizerSpec("adam", 1e-2), 8, 6, seed=3)
    a, _ = tn.train(spec, state, x, y, cfg)
    b, _ = tn.train(spec, state, x, y, cfg)
    for pa, pb in zip(a.params, b.params):
        for key in pa:
            assert np.array_equal(pa[key], pb[key])


def test_train_divergence_raises_with_epoch():
    spec = tn.m0_spec(8)
    state = tn.init_model(spec, 0)
    x = np.random.default_rng(2).random((20, 8)) * 10
    cfg = tn.TrainConfig(tn.OptimizerSpec("sgd", 1e9), 4, 10, seed=1)
    with pytest.raises(tn.TrainDivergence) as err:
        tn.train(spec, state, x, x.sum(axis=1) * 100, cfg)
    assert err.value.epoch >= 1


def test_train_threshold_recorded():
    spec, state = tn.pixel_count_construction("m0", 16)
    # start AT the solution: epoch 1 already under any positive threshold
    x = (np.random.default_rng(3).random((20, 16)) < 0.4).astype(np.float64)
    cfg = tn.TrainConfig(
        tn.OptimizerSpec("sgd", 0.0), 4, 3, seed=1, loss_threshold_record=0.5
    )
    _, trace = tn.train(spec, state, x, x.sum(axis=1), cfg)
    assert trace.epochs_to_threshold == 1


def test_train_validation_split():
    spec = tn.m0_spec(6)
    state = tn.init_model(spec, 0)
    x = np.random.default_rng(4).random((50, 6))
    cfg = tn.TrainConfig(tn.OptimizerSpec("adam", 1e-3), 10, 3, seed=5, val_fraction=0.2)
    _, trace = tn.train(spec, state, x, x.sum(axis=1), cfg)
    assert len(trace.val_loss) == 3
    cfg0 = tn.TrainConfig(tn.OptimizerSpec("adam", 1e-3), 10, 3, seed=5, val_fraction=0.0)
    _, trace0 = tn.train(spec, state, x, x.sum(axis=1), cfg0)
    assert trace0.val_loss == []


def test_weight_stats():
    spec, state = tn.pixel_count_construction("m0", 9)
    stats = tn.weight_stats(state)
    w = next(s for s in stats if s["param"] == "w")
    assert w["mean"] == 1.0 and w["std"] == 0.0 and w["min"] == w["max"] == 1.0
    assert 1.0 / np.sqrt(65536) == 0.00390625
    assert 1.0 / np.sqrt(4096) == 0.015625


def test_save_load_roundtrip(tmp_path):
    for i, spec in enumerate(small_specs()):
        state = tn.init_model(spec, 40 + i)
        path = tmp_path / f"model{i}.ccmdl"
        tn.save_model(path, spec, state)
        spec2, state2 = tn.load_model(path)
        assert spec2 == spec
        for pa, pb in zip(state.params, state2.params):
            for key in pa:
                assert np.array_equal(pa[key], pb[key])
        # byte-stable re-serialization
        path2 = tmp_path / f"model{i}b.ccmdl"
        tn.save_model(path2, spec2, state2)
        assert path.read_bytes() == path2.read_bytes()


def test_load_model_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMODEL" + b"\x00" * 16)
    with pytest.raises(ValueError):
        tn.load_model(path)
    spec = tn.m0_spec(4)
    tn.save_model(path, spec, tn.init_model(spec, 0))
    data = path.read_bytes()
    path.write_bytes(data + b"\x00")
    with pytest.raises(ValueError):
        tn.load_model(path)


def test_mc_spec_shapes():
    spec = tn.mc_spec(64, 64)
    assert spec.output_shape() == (1,)
    state = tn.init_model(spec, 0)
    out = tn.forward(spec, state, np.zeros((2, 1, 64, 64)))
    assert out.shape == (2, 1)


def test_preset_spec_dispatch():
    assert tn.preset_spec("m0", (64,)).layers[1].args == (64, 1)
    assert tn.preset_spec("m1", (64,)).layers[1].args == (64, 128)
    with pytest.raises(ValueError):
        tn.preset_spec("m2", (64,))
