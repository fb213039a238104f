import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holojpeg.arcnn import (
    DEFAULT_ARCHITECTURE,
    TRANSFORMS,
    CnnModel,
    ConvLayer,
    ModelFormatError,
    ModelRegistry,
    PatchSet,
    TrainConfig,
    TrainingDivergedError,
    augment,
    decode_model,
    encode_model,
    extract_patches,
    forward,
    init_model,
    load_model,
    loss_and_gradients,
    restore,
    save_model,
    to_gray,
    train,
    unaugment,
)

SMALL = ((3, 2), (3, 2), (1, 2), (3, 1))


def delta_model(architecture=DEFAULT_ARCHITECTURE):
    """Every layer passes channel 0 straight through."""
    layers, cin = [], 1
    for i, (k, cout) in enumerate(architecture):
        w = np.zeros((cout, cin, k, k))
        w[0, 0, k // 2, k // 2] = 1.0
        act = "identity" if i == len(architecture) - 1 else "relu"
        layers.append(ConvLayer(w, np.zeros(cout), act))
        cin = cout
    return CnnModel(layers)


def numeric_gradients(model, x, t, loss="mse", h=1e-5):
    out = []
    for p in model.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_and_gradients(model, x, t, loss)[0]
            p[idx] = old - h
            down = loss_and_gradients(model, x, t, loss)[0]
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(model, x, t, loss="mse"):
    _, grads = loss_and_gradients(model, x, t, loss)
    analytic = [g for pair in grads for g in pair]
    numeric = numeric_gradients(model, x, t, loss)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst


@pytest.mark.parametrize("loss", ["mse", "wrapped"])
def test_gradients_match_finite_differences(loss):
    rng = np.random.default_rng(0)
    model = init_model(rng, SMALL, std=0.5, last_std=0.5)
    for layer in model.layers:
        layer.bias[:] = rng.normal(0, 0.1, layer.bias.shape)
    x = rng.uniform(0, 1, (2, 6, 5))
    t = rng.uniform(0, 1, (2, 6, 5))
    assert max_relative_error(model, x, t, loss) < 1e-4


def test_gradients_through_large_kernel_path():
    # 5x5 kernels on 24 channels exceed the im2col budget and take the offset loop
    rng = np.random.default_rng(1)
    model = init_model(rng, ((3, 24), (5, 2), (1, 1)), std=0.3, last_std=0.3)
    x = rng.uniform(0, 1, (1, 6, 6))
    t = rng.uniform(0, 1, (1, 6, 6))
    _, grads = loss_and_gradients(model, x, t)
    p = model.layers[1].weights
    h = 1e-5
    for idx in [(0, 0, 0, 0), (1, 23, 4, 4), (0, 7, 2, 3)]:
        old = p[idx]
        p[idx] = old + h
        up = loss_and_gradients(model, x, t)[0]
        p[idx] = old - h
        down = loss_and_gradients(model, x, t)[0]
        p[idx] = old
        num = (up - down) / (2 * h)
        assert abs(grads[1][0][idx] - num) <= 1e-4 * max(abs(num), 1e-8)


def test_scalar_closed_form():
    w, b, x, t = 0.7, 0.2, 0.9, 0.4
    model = CnnModel([ConvLayer(np.full((1, 1, 1, 1), w), np.array([b]), "identity")])
    loss, grads = loss_and_gradients(model, np.array([[x]]), np.array([[t]]))
    r = w * x + b - t
    assert loss == pytest.approx(r * r, abs=1e-15)
    assert grads[0][0].item() == pytest.approx(2 * x * r, abs=1e-15)
    assert grads[0][1].item() == pytest.approx(2 * r, abs=1e-15)


def test_zero_loss_zero_gradient():
    model = delta_model(SMALL)
    x = np.random.default_rng(2).uniform(0, 1, (3, 7, 7))
    loss, grads = loss_and_gradients(model, x, x)
    assert loss == 0.0
    assert all(np.all(dw == 0) and np.all(db == 0) for dw, db in grads)


def test_forward_shapes_and_zero_model():
    model = init_model(0)
    assert forward(model, np.zeros((31, 31))).shape == (31, 31)
    zero = CnnModel([ConvLayer(np.zeros_like(l.weights), np.zeros_like(l.bias), l.activation) for l in model.layers])
    assert np.all(forward(zero, np.ones((2, 10, 12))) == 0)


def test_pass_through_is_identity():
    x = np.random.default_rng(3).uniform(0, 1, (2, 31, 31))
    assert np.array_equal(forward(delta_model(), x), x)


@pytest.mark.parametrize("shape", [(100, 77), (1024, 1024)])
def test_restore_identity(shape):
    img = np.random.default_rng(4).integers(0, 256, shape).astype(np.uint8)
    model = delta_model(SMALL)
    out = restore(model, img)
    assert out.shape == shape and np.array_equal(out, img)
    assert np.array_equal(restore(model, img, wrap=True), img)


def test_restore_default_architecture_identity():
    img = np.random.default_rng(5).integers(0, 256, (62, 40)).astype(np.uint8)
    assert np.array_equal(restore(delta_model(), img), img)


def test_restore_warns_on_distance_mismatch():
    model = delta_model(SMALL)
    model.distance = 0.3
    with pytest.warns(RuntimeWarning):
        restore(model, np.zeros((31, 31), np.uint8), distance=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        restore(model, np.zeros((31, 31), np.uint8), distance=0.3)


def test_to_gray_clamp_and_wrap():
    y = np.array([-1 / 255, 0.0, 0.5, 1.0, 256 / 255])
    assert to_gray(y).tolist() == [0, 0, 128, 255, 255]
    assert to_gray(y, wrap=True).tolist() == [255, 0, 128, 255, 0]


def test_translation_consistency():
    rng = np.random.default_rng(6)
    model = init_model(rng, SMALL, std=0.5, last_std=0.5)
    x = np.zeros((40, 40))
    x[10:30, 10:30] = rng.uniform(0, 1, (20, 20))
    shifted = np.roll(x, (1, 1), axis=(0, 1))
    a, b = forward(model, x), forward(model, shifted)
    assert np.allclose(b[12:30, 12:30], a[11:29, 11:29], atol=1e-13, rtol=0)


def test_patch_counts():
    a = np.zeros((31, 31), np.uint8)
    assert len(extract_patches(a, a, 5, augment_patches=False)) == 1
    assert len(extract_patches(a, a, 5)) == 8
    b = np.zeros((100, 70), np.uint8)
    assert len(extract_patches(b, b, 9, augment_patches=False)) == (69 // 9 + 1) * (39 // 9 + 1)
    with pytest.raises(ValueError):
        extract_patches(b, a, 9)
    with pytest.raises(ValueError):
        extract_patches(np.zeros((30, 40), np.uint8), np.zeros((30, 40), np.uint8), 9)


def test_patches_are_co_located_and_scaled():
    rng = np.random.default_rng(7)
    a = rng.integers(0, 256, (40, 40)).astype(np.uint8)
    b = rng.integers(0, 256, (40, 40)).astype(np.uint8)
    ps = extract_patches(a, b, 9)
    pair = ps[8 * 1 + 3]  # second origin (0, 9), fourth transform
    k, m = TRANSFORMS[3]
    assert np.array_equal(unaugment(pair.input * 255, k, m), a[0:31, 9:40])
    assert np.array_equal(unaugment(pair.target * 255, k, m), b[0:31, 9:40])
    x, t = ps.batch(np.arange(len(ps)))
    assert x.min() >= 0 and x.max() <= 1


@given(st.integers(0, 3), st.booleans())
def test_augmentation_inverse(k, m):
    p = np.arange(31 * 31).reshape(31, 31)
    assert np.array_equal(unaugment(augment(p, k, m), k, m), p)


def test_transforms_distinct():
    p = np.arange(31 * 31).reshape(31, 31)
    outs = {augment(p, k, m).tobytes() for k, m in TRANSFORMS}
    assert len(outs) == 8


def test_train_config_invariants():
    for bad in [dict(learning_rate=0), dict(learning_rate=-1), dict(batch_size=0), dict(optimizer="x"), dict(loss="x")]:
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def _toy_patches(n=10, seed=0):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[:31, :31]
    clean = np.stack([
        127 + 100 * np.sin(x / rng.uniform(2, 6) + rng.uniform(0, 6)) * np.cos(y / rng.uniform(2, 6))
        for _ in range(n)
    ]).astype(np.uint8)
    noisy = np.clip(clean + rng.integers(-12, 13, clean.shape), 0, 255).astype(np.uint8)
    return PatchSet(noisy, clean)


def test_training_reproducible(tmp_path):
    ps = _toy_patches()
    cfg = TrainConfig(iterations=5, batch_size=4, eval_every=2, seed=3)
    a = train(ps, cfg, model=init_model(1, SMALL), log_path=tmp_path / "log.csv")
    b = train(ps, cfg, model=init_model(1, SMALL))
    for p, q in zip(a.model.parameters(), b.model.parameters()):
        assert np.array_equal(p, q)
    assert a.losses == b.losses
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iter,loss" and len(lines) == 6
    assert lines[1].startswith("1,")


def test_training_does_not_mutate_initial_model():
    start = init_model(2, SMALL)
    before = [p.copy() for p in start.parameters()]
    train(_toy_patches(), TrainConfig(iterations=3, batch_size=2, eval_every=0), model=start)
    assert all(np.array_equal(p, q) for p, q in zip(before, start.parameters()))


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_divergence_detected():
    with pytest.raises(TrainingDivergedError):
        train(_toy_patches(), TrainConfig(learning_rate=1e6, iterations=50, batch_size=4, eval_every=0),
              model=init_model(0, SMALL, std=0.5, last_std=0.5))


def test_learning_rate_halves_on_plateau():
    cfg = TrainConfig(learning_rate=1e-12, iterations=40, batch_size=2, eval_every=5, patience=2)
    r = train(_toy_patches(), cfg, model=init_model(0, SMALL))
    assert r.learning_rates[0] == 1e-12
    assert r.learning_rates[-1] < r.learning_rates[0] / 4


def test_validation_trend_with_plateau_halving():
    cfg = TrainConfig(learning_rate=3e-3, optimizer="adam", iterations=300, batch_size=4, eval_every=20, patience=2)
    r = train(_toy_patches(), cfg, model=init_model(0, ((5, 8), (3, 4), (1, 4), (3, 1))))
    values = [v for _, v in r.validation]
    for i in range(1, len(values)):
        assert values[i] <= 1.05 * min(values[:i])
    assert values[-1] < values[0]


def test_empty_training_set():
    with pytest.raises(ValueError):
        train(PatchSet(np.zeros((0, 31, 31), np.uint8), np.zeros((0, 31, 31), np.uint8)), TrainConfig())


def test_model_round_trip(tmp_path):
    model = init_model(8, distance=0.3)
    path = tmp_path / "m.arcn"
    save_model(model, path)
    back = load_model(path)
    assert back.distance == 0.3
    for p, q in zip(model.parameters(), back.parameters()):
        assert np.array_equal(p, q)
    assert [l.activation for l in back.layers] == ["relu", "relu", "relu", "identity"]
    untagged = decode_model(encode_model(init_model(0, SMALL)))
    assert untagged.distance is None


def test_model_container_layout():
    data = encode_model(init_model(0, SMALL, distance=0.5))
    assert data[:4] == b"ARCN"
    assert int.from_bytes(data[4:8], "little") == 1
    assert int.from_bytes(data[16:20], "little") == 4


def test_model_format_errors():
    data = encode_model(init_model(0, SMALL, distance=0.5))
    with pytest.raises(ModelFormatError):
        decode_model(b"XXXX" + data[4:])
    with pytest.raises(ModelFormatError):
        decode_model(data[:-8])
    with pytest.raises(ModelFormatError):
        decode_model(data + b"\0" * 8)
    with pytest.raises(ModelFormatError):
        decode_model(data[:10])


def test_registry_slots():
    reg = ModelRegistry()
    reg.register(init_model(0, SMALL, distance=0.3))
    reg.register(init_model(1, SMALL, distance=0.5))
    assert len(reg) == 2 and 0.3 in reg and 0.5 in reg
    assert reg.get(0.3) is not reg.get(0.5)
    assert reg.get(0.1 + 0.2).distance == 0.3
    with pytest.raises(KeyError):
        reg.get(0.4)
    with pytest.raises(ValueError):
        reg.register(init_model(0, SMALL))


def test_float32_training_reproducible_and_returns_float64():
    ps = _toy_patches()
    cfg = TrainConfig(iterations=4, batch_size=3, eval_every=2, precision="float32", optimizer="adam")
    a = train(ps, cfg, model=init_model(1, SMALL))
    b = train(ps, cfg, model=init_model(1, SMALL))
    assert a.model.dtype == np.float64
    for p, q in zip(a.model.parameters(), b.model.parameters()):
        assert np.array_equal(p, q)
    with pytest.raises(ValueError):
        TrainConfig(precision="float16")


def test_float32_forward_close_to_float64():
    model = init_model(3, SMALL, std=0.3, last_std=0.3)
    x = np.random.default_rng(0).uniform(0, 1, (2, 12, 12))
    y64 = forward(model, x)
    y32 = forward(model.astype(np.float32), x)
    assert y32.dtype == np.float32
    assert np.max(np.abs(y64 - y32)) < 1e-5
