"""Four-layer artifact-reduction CNN in plain numpy.

Layers (same padding, so spatial size is preserved end to end)::

    9x9, 1 -> 64, ReLU     feature extraction
    7x7, 64 -> 32, ReLU    feature enhancement
    1x1, 32 -> 16, ReLU    non-linear mapping
    5x5, 16 -> 1           reconstruction

Activations are kept channels-last, ``(batch, height, width, channels)``.
Weights are stored ``(out, in, kh, kw)``.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .field import FormatError, as_gray8, round_half_away

PATCH = 31
DEFAULT_ARCHITECTURE = ((9, 64), (7, 32), (1, 16), (5, 1))
ACTIVATIONS = ("identity", "relu")
# phase step per unit of normalized gray value (g/255 -> g*2*pi/256)
PHASE_SCALE = 2 * math.pi * 255 / 256
# im2col is used when a layer's receptive field (kh*kw*cin) is at most this
IM2COL_MAX = 512


class ModelFormatError(FormatError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


def _real(a):
    a = np.asarray(a)
    return a if a.dtype in (np.float32, np.float64) else a.astype(np.float64)


@dataclass(eq=False)
class ConvLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = _real(self.weights)
        self.bias = _real(self.bias).astype(self.weights.dtype, copy=False)
        if self.weights.ndim != 4:
            raise ValueError(f"weights must be 4D (out, in, kh, kw), got shape {self.weights.shape}")
        cout, _, kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel size must be odd for same padding, got {kh}x{kw}")
        if self.bias.shape != (cout,):
            raise ValueError(f"bias shape {self.bias.shape} does not match {cout} output channels")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


@dataclass(eq=False)
class CnnModel:
    layers: list
    distance: float | None = None

    def __post_init__(self):
        self.layers = list(self.layers)
        if not self.layers:
            raise ValueError("model needs at least one layer")
        if self.layers[0].in_channels != 1 or self.layers[-1].out_channels != 1:
            raise ValueError("model must map one channel to one channel")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError(
                    f"layer channels do not chain: {a.out_channels} outputs feed {b.in_channels} inputs"
                )

    def parameters(self):
        for layer in self.layers:
            yield layer.weights
            yield layer.bias

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def copy(self) -> "CnnModel":
        return self.astype(self.dtype)

    def astype(self, dtype) -> "CnnModel":
        """Copy with every parameter converted to ``dtype``."""
        return CnnModel(
            [ConvLayer(l.weights.astype(dtype), l.bias.astype(dtype), l.activation) for l in self.layers],
            self.distance,
        )

    def __call__(self, x):
        return forward(self, x)


def init_model(
    rng=None,
    architecture=DEFAULT_ARCHITECTURE,
    std=0.01,
    last_std=0.001,
    distance=None,
) -> CnnModel:
    """Gaussian-initialized model; the last layer is linear, the rest ReLU."""
    rng = np.random.default_rng(rng)
    layers = []
    cin = 1
    for i, (k, cout) in enumerate(architecture):
        last = i == len(architecture) - 1
        w = rng.normal(0.0, last_std if last else std, size=(cout, cin, k, k))
        layers.append(ConvLayer(w, np.zeros(cout), "identity" if last else "relu"))
        cin = cout
    return CnnModel(layers, distance)


# -- convolution kernels ------------------------------------------------------


def _pad(x, kh, kw):
    ph, pw = kh // 2, kw // 2
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))


def _conv_forward(x, layer: ConvLayer):
    b, h, w, cin = x.shape
    cout, _, kh, kw = layer.weights.shape
    xp = _pad(x, kh, kw)
    if kh * kw * cin <= IM2COL_MAX:
        cols = sliding_window_view(xp, (kh, kw), axis=(1, 2)).reshape(b * h * w, cin * kh * kw)
        out = cols @ layer.weights.reshape(cout, -1).T
        cache = ("cols", cols)
    else:
        wk = np.ascontiguousarray(layer.weights.transpose(2, 3, 1, 0))
        out = np.zeros((b * h * w, cout), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                out += xp[:, i:i + h, j:j + w, :].reshape(b * h * w, cin) @ wk[i, j]
        cache = ("padded", xp)
    out += layer.bias
    return out.reshape(b, h, w, cout), cache


def _conv_backward(dout, x_shape, layer: ConvLayer, cache, need_input_grad=True):
    b, h, w, cin = x_shape
    cout, _, kh, kw = layer.weights.shape
    d2 = dout.reshape(b * h * w, cout)
    db = d2.sum(axis=0)
    kind, saved = cache
    dxp = np.zeros((b, h + kh - 1, w + kw - 1, cin), dtype=dout.dtype) if need_input_grad else None
    if kind == "cols":
        dw = (d2.T @ saved).reshape(cout, cin, kh, kw)
        if need_input_grad:
            dcols = (d2 @ layer.weights.reshape(cout, -1)).reshape(b, h, w, cin, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + h, j:j + w, :] += dcols[..., i, j]
    else:
        wk = np.ascontiguousarray(layer.weights.transpose(2, 3, 1, 0))
        dw = np.empty_like(layer.weights)
        for i in range(kh):
            for j in range(kw):
                xs = saved[:, i:i + h, j:j + w, :].reshape(b * h * w, cin)
                dw[:, :, i, j] = d2.T @ xs
                if need_input_grad:
                    dxp[:, i:i + h, j:j + w, :] += (d2 @ wk[i, j].T).reshape(b, h, w, cin)
    dx = None
    if need_input_grad:
        ph, pw = kh // 2, kw // 2
        dx = dxp[:, ph:ph + h, pw:pw + w, :]
    return dx, dw, db


def _as_batch(x, dtype=np.float64):
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 2:
        return x[None, :, :, None], True
    if x.ndim == 3:
        return x[:, :, :, None], False
    raise ValueError(f"expected (H, W) or (N, H, W) input, got shape {x.shape}")


def _forward_cached(model: CnnModel, x):
    caches = []
    for layer in model.layers:
        z, cache = _conv_forward(x, layer)
        caches.append((x.shape, cache, z))
        x = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return x, caches


def forward(model: CnnModel, x) -> np.ndarray:
    """Run the network on one ``(H, W)`` patch or a ``(N, H, W)`` stack."""
    xb, single = _as_batch(x, model.dtype)
    for layer in model.layers:
        z, _ = _conv_forward(xb, layer)
        xb = np.maximum(z, 0.0) if layer.activation == "relu" else z
    out = xb[..., 0]
    return out[0] if single else out


# -- losses -------------------------------------------------------------------


def _loss(kind, y, t):
    n = y.size
    d = y - t
    if kind == "mse":
        return float(np.mean(d * d)), 2.0 * d / n
    if kind == "wrapped":
        # squared error on the phase circle, scaled to agree with MSE for small errors
        s = PHASE_SCALE
        loss = float(np.mean(1.0 - np.cos(s * d))) * 2.0 / (s * s)
        return loss, (2.0 / s) * np.sin(s * d) / n
    raise ValueError(f"unknown loss {kind!r}")


def loss_and_gradients(model: CnnModel, inputs, targets, loss="mse"):
    """Mean loss over a batch and the gradient for every layer's (weights, bias)."""
    xb, _ = _as_batch(inputs, model.dtype)
    tb, _ = _as_batch(targets, model.dtype)
    if xb.shape[0] == 0:
        raise ValueError("empty batch")
    y, caches = _forward_cached(model, xb)
    value, dy = _loss(loss, y, tb)
    grads = [None] * len(model.layers)
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        x_shape, cache, z = caches[idx]
        if layer.activation == "relu":
            dy = dy * (z > 0)
        dx, dw, db = _conv_backward(dy, x_shape, layer, cache, need_input_grad=idx > 0)
        grads[idx] = (dw, db)
        dy = dx
    return value, grads


def evaluate_loss(model: CnnModel, inputs, targets, loss="mse", chunk=64) -> float:
    inputs = np.asarray(inputs, dtype=model.dtype)
    targets = np.asarray(targets, dtype=model.dtype)
    total = 0.0
    for i in range(0, len(inputs), chunk):
        y = forward(model, inputs[i:i + chunk])
        total += _loss(loss, y, targets[i:i + chunk])[0] * len(y)
    return total / len(inputs)


# -- patches ------------------------------------------------------------------


def augment(patch, rotation: int, mirror: bool):
    out = np.rot90(patch, rotation, axes=(-2, -1))
    return out[..., ::-1] if mirror else out


def unaugment(patch, rotation: int, mirror: bool):
    if mirror:
        patch = patch[..., ::-1]
    return np.rot90(patch, -rotation, axes=(-2, -1))


TRANSFORMS = tuple((k, m) for k in range(4) for m in (False, True))


@dataclass
class PatchPair:
    input: np.ndarray
    target: np.ndarray


@dataclass
class PatchSet:
    """Co-located compressed/clean patches, stored as uint8 and served as floats in [0, 1]."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.shape != self.targets.shape:
            raise ValueError("input and target patch stacks differ in shape")

    def __len__(self):
        return len(self.inputs)

    def __getitem__(self, i) -> PatchPair:
        return PatchPair(self.inputs[i] / 255.0, self.targets[i] / 255.0)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def batch(self, idx, dtype=np.float64):
        scale = np.asarray(1 / 255, dtype=dtype)
        return self.inputs[idx] * scale, self.targets[idx] * scale

    @classmethod
    def concat(cls, sets) -> "PatchSet":
        sets = list(sets)
        if not sets:
            raise ValueError("no patch sets to concatenate")
        return cls(np.concatenate([s.inputs for s in sets]), np.concatenate([s.targets for s in sets]))


def patch_origins(shape, stride, size=PATCH):
    h, w = shape
    return [(r, c) for r in range(0, h - size + 1, stride) for c in range(0, w - size + 1, stride)]


def extract_patches(compressed, clean, stride: int, augment_patches: bool = True, size=PATCH) -> PatchSet:
    """Cut co-located ``size`` x ``size`` pairs; augmentation adds all 8 rotations/mirrors."""
    compressed, clean = as_gray8(compressed), as_gray8(clean)
    if compressed.shape != clean.shape:
        raise ValueError(f"image shapes differ: {compressed.shape} vs {clean.shape}")
    if min(compressed.shape) < size:
        raise ValueError(f"images must be at least {size}x{size}")
    if stride < 1:
        raise ValueError("stride must be positive")
    origins = patch_origins(compressed.shape, stride, size)
    a = np.stack([compressed[r:r + size, c:c + size] for r, c in origins])
    b = np.stack([clean[r:r + size, c:c + size] for r, c in origins])
    if augment_patches:
        transforms = TRANSFORMS
        a = np.stack([augment(a, k, m) for k, m in transforms], axis=1).reshape(-1, size, size)
        b = np.stack([augment(b, k, m) for k, m in transforms], axis=1).reshape(-1, size, size)
    return PatchSet(np.ascontiguousarray(a), np.ascontiguousarray(b))


# -- training -----------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    last_layer_scale: float = 0.1
    momentum: float = 0.9
    batch_size: int = 64
    iterations: int = 2000
    seed: int = 0
    optimizer: str = "sgd"
    loss: str = "mse"
    eval_every: int = 100
    patience: int = 3
    validation_size: int = 256
    precision: str = "float64"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be at least 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ValueError("iteration budget must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("mse", "wrapped"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")


@dataclass
class TrainResult:
    model: CnnModel
    losses: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)


class _SGD:
    def __init__(self, params, rates, momentum):
        self.params, self.rates, self.momentum = params, rates, momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads, scale):
        for p, g, v, lr in zip(self.params, grads, self.velocity, self.rates):
            v *= self.momentum
            v -= (lr * scale) * g
            p += v


class _Adam:
    def __init__(self, params, rates, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.rates = params, rates
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, scale):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v, lr in zip(self.params, grads, self.m, self.v, self.rates):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (lr * scale) * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(
    pairs: PatchSet,
    cfg: TrainConfig,
    model: CnnModel | None = None,
    distance: float | None = None,
    validation: PatchSet | None = None,
    log_path=None,
) -> TrainResult:
    """Minibatch training; the learning rate halves whenever validation loss plateaus.

    Runs are bit-reproducible for a fixed ``cfg.seed``.
    """
    if len(pairs) < 1:
        raise ValueError("training needs at least one patch pair")
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(cfg.precision)
    if model is None:
        model = init_model(rng, distance=distance)
    model = model.astype(dtype)
    if distance is not None:
        model.distance = distance
    if validation is None:
        vidx = np.sort(rng.choice(len(pairs), size=min(cfg.validation_size, len(pairs)), replace=False))
        val_x, val_t = pairs.batch(vidx, dtype)
    else:
        val_x, val_t = validation.batch(np.arange(len(validation)), dtype)

    params, rates = [], []
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        lr = cfg.learning_rate * (cfg.last_layer_scale if i == last else 1.0)
        params += [layer.weights, layer.bias]
        rates += [lr, lr]
    opt = _SGD(params, rates, cfg.momentum) if cfg.optimizer == "sgd" else _Adam(params, rates)

    result = TrainResult(model)
    scale = 1.0
    best = evaluate_loss(model, val_x, val_t, cfg.loss)
    result.validation.append((0, best))
    stale = 0
    log = open(log_path, "w") if log_path else None
    try:
        if log:
            log.write("iter,loss\n")
        for it in range(1, cfg.iterations + 1):
            idx = rng.integers(0, len(pairs), size=cfg.batch_size)
            x, t = pairs.batch(idx, dtype)
            loss, grads = loss_and_gradients(model, x, t, cfg.loss)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"training loss became {loss} at iteration {it}")
            opt.step([g for pair in grads for g in pair], scale)
            result.losses.append(loss)
            result.learning_rates.append(cfg.learning_rate * scale)
            if log:
                log.write(f"{it},{loss!r}\n")
            if cfg.eval_every and it % cfg.eval_every == 0:
                v = evaluate_loss(model, val_x, val_t, cfg.loss)
                if not math.isfinite(v):
                    raise TrainingDivergedError(f"validation loss became {v} at iteration {it}")
                result.validation.append((it, v))
                if v < best * (1 - 1e-3):
                    best, stale = v, 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        scale *= 0.5
                        stale = 0
    finally:
        if log:
            log.close()
    result.model = model.astype(np.float64)
    return result


# -- restoration --------------------------------------------------------------


def to_gray(y, wrap=False) -> np.ndarray:
    """Network output in [0, 1] units to 8-bit samples, clamped or wrapped mod 256."""
    g = round_half_away(np.asarray(y) * 255.0)
    if wrap:
        return np.mod(g, 256).astype(np.uint8)
    return np.clip(g, 0, 255).astype(np.uint8)


def restore(model: CnnModel, hologram, distance=None, wrap=False, chunk=32) -> np.ndarray:
    """Restore a compressed phase-map image tile by tile (non-overlapping 31x31 tiles)."""
    img = as_gray8(hologram)
    if distance is not None and model.distance is not None and not math.isclose(distance, model.distance):
        warnings.warn(
            f"model was trained for distance {model.distance} m, applied at {distance} m",
            RuntimeWarning,
            stacklevel=2,
        )
    h, w = img.shape
    padded = np.pad(img, ((0, -h % PATCH), (0, -w % PATCH)), mode="edge")
    ph, pw = padded.shape
    ty, tx = ph // PATCH, pw // PATCH
    tiles = padded.reshape(ty, PATCH, tx, PATCH).swapaxes(1, 2).reshape(-1, PATCH, PATCH) / 255.0
    out = np.empty_like(tiles)
    for i in range(0, len(tiles), chunk):
        out[i:i + chunk] = forward(model, tiles[i:i + chunk])
    stitched = out.reshape(ty, tx, PATCH, PATCH).swapaxes(1, 2).reshape(ph, pw)
    return to_gray(stitched[:h, :w], wrap)


# -- model container ----------------------------------------------------------

MAGIC = b"ARCN"
VERSION = 1
_HEAD = struct.Struct("<4sIdI")
_LAYER = struct.Struct("<5I")


def encode_model(model: CnnModel) -> bytes:
    tag = math.nan if model.distance is None else float(model.distance)
    parts = [_HEAD.pack(MAGIC, VERSION, tag, len(model.layers))]
    for layer in model.layers:
        cout, cin, kh, kw = layer.weights.shape
        parts.append(_LAYER.pack(kh, kw, cin, cout, ACTIVATIONS.index(layer.activation)))
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_model(buf: bytes) -> CnnModel:
    if buf[:4] != MAGIC:
        raise ModelFormatError(f"expected magic {MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < _HEAD.size:
        raise ModelFormatError("model header truncated")
    _, version, tag, count = _HEAD.unpack_from(buf)
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    pos = _HEAD.size
    layers = []
    for i in range(count):
        if pos + _LAYER.size > len(buf):
            raise ModelFormatError(f"truncated header for layer {i}")
        kh, kw, cin, cout, act = _LAYER.unpack_from(buf, pos)
        pos += _LAYER.size
        if act >= len(ACTIVATIONS):
            raise ModelFormatError(f"unknown activation code {act} in layer {i}")
        nw = cout * cin * kh * kw
        need = 8 * (nw + cout)
        if pos + need > len(buf):
            raise ModelFormatError(f"truncated weights for layer {i}: need {need} bytes, have {len(buf) - pos}")
        w = np.frombuffer(buf, "<f8", nw, pos).astype(np.float64).reshape(cout, cin, kh, kw)
        b = np.frombuffer(buf, "<f8", cout, pos + 8 * nw).astype(np.float64)
        pos += need
        try:
            layers.append(ConvLayer(w, b, ACTIVATIONS[act]))
        except ValueError as exc:
            raise ModelFormatError(f"layer {i}: {exc}") from None
    if pos != len(buf):
        raise ModelFormatError(f"payload length mismatch: {len(buf) - pos} trailing bytes after declared layers")
    try:
        return CnnModel(layers, None if math.isnan(tag) else tag)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def save_model(model: CnnModel, path) -> None:
    Path(path).write_bytes(encode_model(model))


def load_model(path) -> CnnModel:
    return decode_model(Path(path).read_bytes())


class ModelRegistry:
    """Per-distance model slots; distances match to 1e-9 m."""

    def __init__(self):
        self._slots = {}

    @staticmethod
    def _key(distance):
        return round(float(distance), 9)

    def register(self, model: CnnModel) -> None:
        if model.distance is None:
            raise ValueError("model has no distance tag")
        self._slots[self._key(model.distance)] = model

    def load(self, path) -> CnnModel:
        model = load_model(path)
        self.register(model)
        return model

    def get(self, distance) -> CnnModel:
        try:
            return self._slots[self._key(distance)]
        except KeyError:
            raise KeyError(f"no model registered for distance {distance} m") from None

    def __contains__(self, distance):
        return self._key(distance) in self._slots

    def __len__(self):
        return len(self._slots)

    def distances(self):
        return sorted(self._slots)
