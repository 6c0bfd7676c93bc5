"""Minimal float64 neural-network engine.

Dense / Conv2D / MaxPool / ReLU / Flatten layers, MSE regression loss,
SGD and Adam, finite-difference gradient checking, and per-layer weight
statistics. Everything is deterministic: identical (spec, seed, data,
config) produce bit-identical parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

FLATTEN, DENSE, RELU, CONV2D, MAXPOOL = 1, 2, 3, 4, 5
_KIND_IDS = {"flatten": FLATTEN, "dense": DENSE, "relu": RELU, "conv2d": CONV2D, "maxpool": MAXPOOL}
_ID_KINDS = {v: k for k, v in _KIND_IDS.items()}


class TrainDivergence(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: tuple = ()


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dense(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec("dense", (n_in, n_out))


def relu() -> LayerSpec:
    return LayerSpec("relu")


def conv2d(c_in: int, c_out: int, k: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv2d", (c_in, c_out, k, stride))


def maxpool(k: int) -> LayerSpec:
    return LayerSpec("maxpool", (k,))


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer sequence plus the expected input shape (without batch)."""

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]

    def output_shape(self) -> tuple[int, ...]:
        shape = self.input_shape
        for layer in self.layers:
            shape = _out_shape(layer, shape)
        return shape


def _out_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "dense":
        n_in, n_out = layer.args
        if shape != (n_in,):
            raise ValueError(f"dense expects ({n_in},), got {shape}")
        return (n_out,)
    if layer.kind == "relu":
        return shape
    if layer.kind == "conv2d":
        c_in, c_out, k, stride = layer.args
        if len(shape) != 3 or shape[0] != c_in:
            raise ValueError(f"conv2d expects ({c_in}, h, w), got {shape}")
        _, h, w = shape
        oh = (h - k) // stride + 1
        ow = (w - k) // stride + 1
        if oh < 1 or ow < 1:
            raise ValueError("conv kernel larger than its input")
        return (c_out, oh, ow)
    if layer.kind == "maxpool":
        (k,) = layer.args
        if len(shape) != 3:
            raise ValueError(f"maxpool expects (c, h, w), got {shape}")
        c, h, w = shape
        if h % k or w % k:
            raise ValueError("maxpool requires divisible spatial dims")
        return (c, h // k, w // k)
    raise ValueError(f"unknown layer kind {layer.kind!r}")


# ---------------------------------------------------------------- presets

def m0_spec(n_inputs: int) -> ModelSpec:
    """Perceptron regressor: a single linear readout of the flattened image."""
    return ModelSpec((flatten(), dense(n_inputs, 1)), (n_inputs,))


def m1_spec(n_inputs: int, hidden: int = 128) -> ModelSpec:
    """One hidden ReLU layer (128 units) over the flattened input."""
    return ModelSpec(
        (flatten(), dense(n_inputs, hidden), relu(), dense(hidden, 1)),
        (n_inputs,),
    )


def mc_spec(height: int, width: int) -> ModelSpec:
    """Compact CNN regressor (two 3x3 conv blocks, 2x2 pool, 128-unit head)."""
    oh, ow = height - 4, width - 4
    if oh < 2 or ow < 2 or oh % 2 or ow % 2:
        raise ValueError("image dims must leave an even post-conv extent")
    flat = 64 * (oh // 2) * (ow // 2)
    return ModelSpec(
        (
            conv2d(1, 32, 3),
            relu(),
            conv2d(32, 64, 3),
            relu(),
            maxpool(2),
            flatten(),
            dense(flat, 128),
            relu(),
            dense(128, 1),
        ),
        (1, height, width),
    )


def preset_spec(name: str, input_shape: tuple[int, ...]) -> ModelSpec:
    if name == "m0":
        return m0_spec(int(np.prod(input_shape)))
    if name == "m1":
        return m1_spec(int(np.prod(input_shape)))
    if name == "mc":
        if len(input_shape) != 3:
            raise ValueError("mc needs a (1, h, w) input shape")
        return mc_spec(input_shape[1], input_shape[2])
    raise ValueError(f"unknown model preset {name!r}")


@dataclass
class ModelState:
    """Numeric parameters for a ModelSpec (one dict per layer; {} if none)."""

    params: list[dict[str, np.ndarray]]
    init_scheme: str = "glorot_uniform"
    seed: int = 0


def init_model(spec: ModelSpec, seed: int) -> ModelState:
    """Glorot-uniform weights (scale ~ 1/sqrt(fan)), zero biases."""
    rng = np.random.default_rng(seed)
    params: list[dict[str, np.ndarray]] = []
    shape = spec.input_shape
    for layer in spec.layers:
        shape = _out_shape(layer, shape)  # validates compatibility
        if layer.kind == "dense":
            n_in, n_out = layer.args
            limit = np.sqrt(6.0 / (n_in + n_out))
            params.append(
                {
                    "w": rng.uniform(-limit, limit, size=(n_in, n_out)),
                    "b": np.zeros(n_out),
                }
            )
        elif layer.kind == "conv2d":
            c_in, c_out, k, _ = layer.args
            limit = np.sqrt(6.0 / (c_in * k * k + c_out * k * k))
            params.append(
                {
                    "w": rng.uniform(-limit, limit, size=(c_out, c_in, k, k)),
                    "b": np.zeros(c_out),
                }
            )
        else:
            params.append({})
    return ModelState(params, "glorot_uniform", seed)


def pixel_count_construction(kind: str, n_inputs: int) -> tuple[ModelSpec, ModelState]:
    """Hand-set exact pixel-counting solutions, used as executable fixtures.

    m0: all weights 1, bias 0, so the output is the foreground sum. m1: an
    n-unit hidden layer with every weight 1/sqrt(n); each hidden unit carries
    k/sqrt(n) and the readout restores n * (1/sqrt(n))^2 * k = k.
    """
    if kind == "m0":
        spec = m0_spec(n_inputs)
        state = ModelState([{}, {"w": np.ones((n_inputs, 1)), "b": np.zeros(1)}])
        return spec, state
    if kind == "m1":
        z = 1.0 / np.sqrt(n_inputs)
        spec = ModelSpec(
            (flatten(), dense(n_inputs, n_inputs), relu(), dense(n_inputs, 1)),
            (n_inputs,),
        )
        state = ModelState(
            [
                {},
                {"w": np.full((n_inputs, n_inputs), z), "b": np.zeros(n_inputs)},
                {},
                {"w": np.full((n_inputs, 1), z), "b": np.zeros(1)},
            ]
        )
        return spec, state
    raise ValueError(f"unknown construction {kind!r}")


# ---------------------------------------------------------------- forward/backward

def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    b, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    cols = np.empty((b, oh, ow, c, k, k))
    for i in range(k):
        for j in range(k):
            patch = x[:, :, i : i + (oh - 1) * stride + 1 : stride,
                      j : j + (ow - 1) * stride + 1 : stride]
            cols[:, :, :, :, i, j] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(b, oh, ow, c * k * k)


def _layer_forward(layer: LayerSpec, p: dict, x: np.ndarray):
    """Return (output, cache-for-backward)."""
    if layer.kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if layer.kind == "dense":
        return x @ p["w"] + p["b"], x
    if layer.kind == "relu":
        return np.maximum(x, 0.0), x
    if layer.kind == "conv2d":
        c_in, c_out, k, stride = layer.args
        cols = _im2col(x, k, stride)
        b, oh, ow, _ = cols.shape
        wmat = p["w"].reshape(c_out, -1).T
        y = cols.reshape(-1, c_in * k * k) @ wmat + p["b"]
        return y.reshape(b, oh, ow, c_out).transpose(0, 3, 1, 2), (cols, x.shape)
    if layer.kind == "maxpool":
        (k,) = layer.args
        b, c, h, w = x.shape
        oh, ow = h // k, w // k
        windows = (
            x.reshape(b, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, k * k)
        )
        idx = windows.argmax(axis=-1)
        y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)
    raise ValueError(f"unknown layer kind {layer.kind!r}")


def _layer_backward(layer: LayerSpec, p: dict, cache, dy: np.ndarray):
    """Return (dx, param gradients)."""
    if layer.kind == "flatten":
        return dy.reshape(cache), {}
    if layer.kind == "dense":
        x = cache
        return dy @ p["w"].T, {"w": x.T @ dy, "b": dy.sum(axis=0)}
    if layer.kind == "relu":
        return dy * (cache > 0.0), {}
    if layer.kind == "conv2d":
        c_in, c_out, k, stride = layer.args
        cols, x_shape = cache
        b, oh, ow, ckk = cols.shape
        dyt = dy.transpose(0, 2, 3, 1).reshape(-1, c_out)
        dw = (cols.reshape(-1, ckk).T @ dyt).T.reshape(c_out, c_in, k, k)
        db = dyt.sum(axis=0)
        dcols = (dyt @ p["w"].reshape(c_out, -1)).reshape(b, oh, ow, c_in, k, k)
        dx = np.zeros(x_shape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + (oh - 1) * stride + 1 : stride,
                   j : j + (ow - 1) * stride + 1 : stride] += dcols[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        return dx, {"w": dw, "b": db}
    if layer.kind == "maxpool":
        (k,) = layer.args
        idx, x_shape = cache
        b, c, h, w = x_shape
        oh, ow = h // k, w // k
        dwin = np.zeros((b, c, oh, ow, k * k))
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = (
            dwin.reshape(b, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        )
        return dx, {}
    raise ValueError(f"unknown layer kind {layer.kind!r}")


def _check_input(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != spec.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} != expected {spec.input_shape}")
    return x


def forward(spec: ModelSpec, state: ModelState, x: np.ndarray) -> np.ndarray:
    """Batched forward pass; x is (batch, *input_shape), output (batch, out)."""
    x = _check_input(spec, x)
    for layer, p in zip(spec.layers, state.params):
        x, _ = _layer_forward(layer, p, x)
    if not np.isfinite(x).all():
        raise FloatingPointError("non-finite activation in forward pass")
    return x


def predict(spec: ModelSpec, state: ModelState, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Scalar-regression convenience: forward squeezed to (batch,), chunked so
    large integer/bool datasets are cast to float64 one slice at a time."""
    parts = [
        forward(spec, state, x[i : i + chunk]).reshape(-1)
        for i in range(0, len(x), chunk)
    ]
    return np.concatenate(parts) if parts else np.empty(0)


def backprop(
    spec: ModelSpec, state: ModelState, x: np.ndarray, targets: np.ndarray
) -> tuple[list[dict[str, np.ndarray]], float]:
    """Mean-squared-error gradients for one batch."""
    x = _check_input(spec, x)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if len(targets) != len(x) or len(x) == 0:
        raise ValueError("batch inputs and targets must be nonempty and aligned")
    caches = []
    out = x
    for layer, p in zip(spec.layers, state.params):
        out, cache = _layer_forward(layer, p, out)
        caches.append(cache)
    pred = out.reshape(-1)
    resid = pred - targets
    with np.errstate(over="ignore"):  # divergence surfaces as the error below
        loss = float(np.mean(resid**2))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    dy = (2.0 * resid / len(targets)).reshape(out.shape)
    grads: list[dict[str, np.ndarray]] = [{} for _ in spec.layers]
    for i in range(len(spec.layers) - 1, -1, -1):
        dy, g = _layer_backward(spec.layers[i], state.params[i], caches[i], dy)
        grads[i] = g
    return grads, loss


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class OptimizerSpec:
    kind: str  # "sgd" | "adam"
    lr: float
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lr": self.lr,
            "momentum": self.momentum,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }


@dataclass(frozen=True)
class TrainConfig:
    optimizer: OptimizerSpec
    batch_size: int
    epochs: int
    seed: int
    val_fraction: float = 0.2
    loss_threshold_record: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "optimizer": self.optimizer.to_dict(),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "val_fraction": self.val_fraction,
            "loss_threshold_record": self.loss_threshold_record,
            "loss": "mse",
        }


@dataclass
class TrainTrace:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epochs_to_threshold: int | None = None
    loss_threshold: float | None = None


class _Optimizer:
    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self.slot1: dict[tuple[int, str], np.ndarray] = {}
        self.slot2: dict[tuple[int, str], np.ndarray] = {}
        self.t = 0

    def step(self, params: list[dict], grads: list[dict]) -> None:
        o = self.spec
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            for key, grad in g.items():
                slot = (i, key)
                if o.kind == "sgd":
                    if o.momentum:
                        vel = self.slot1.get(slot)
                        vel = grad if vel is None else o.momentum * vel + grad
                        self.slot1[slot] = vel
                        p[key] = p[key] - o.lr * vel
                    else:
                        p[key] = p[key] - o.lr * grad
                elif o.kind == "adam":
                    m = self.slot1.get(slot, 0.0) * o.beta1 + (1 - o.beta1) * grad
                    v = self.slot2.get(slot, 0.0) * o.beta2 + (1 - o.beta2) * grad**2
                    self.slot1[slot] = m
                    self.slot2[slot] = v
                    mhat = m / (1 - o.beta1**self.t)
                    vhat = v / (1 - o.beta2**self.t)
                    p[key] = p[key] - o.lr * mhat / (np.sqrt(vhat) + o.eps)
                else:
                    raise ValueError(f"unknown optimizer {o.kind!r}")


def train(
    spec: ModelSpec,
    state: ModelState,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    epoch_hook=None,
) -> tuple[ModelState, TrainTrace]:
    """Train a copy of `state`; returns (final state, per-epoch trace).

    Deterministic: the validation split and every epoch shuffle come from
    config.seed. epoch_hook(state, epoch, train_loss) runs after each epoch.
    Inputs may be bool/int arrays; batches are cast to float64 on the fly.
    """
    if x.shape[1:] != spec.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} != expected {spec.input_shape}")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(x) == 0:
        raise ValueError("empty dataset")
    state = ModelState(
        [{k: v.copy() for k, v in p.items()} for p in state.params],
        state.init_scheme,
        state.seed,
    )
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(x))
    n_val = int(round(config.val_fraction * len(x)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation split leaves no training data")
    xt, yt = x[train_idx], y[train_idx]
    xv, yv = x[val_idx], y[val_idx]

    opt = _Optimizer(config.optimizer)
    trace = TrainTrace(loss_threshold=config.loss_threshold_record)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(xt))
        sq_sum = 0.0
        for start in range(0, len(xt), config.batch_size):
            idx = perm[start : start + config.batch_size]
            try:
                grads, loss = backprop(spec, state, xt[idx], yt[idx])
            except FloatingPointError:
                raise TrainDivergence(epoch) from None
            if not np.isfinite(loss):
                raise TrainDivergence(epoch)
            sq_sum += loss * len(idx)
            opt.step(state.params, grads)
        epoch_loss = sq_sum / len(xt)
        if not np.isfinite(epoch_loss):
            raise TrainDivergence(epoch)
        trace.train_loss.append(epoch_loss)
        if len(xv):
            vpred = predict(spec, state, xv)
            trace.val_loss.append(float(np.mean((vpred - yv) ** 2)))
        if (
            trace.epochs_to_threshold is None
            and config.loss_threshold_record is not None
            and epoch_loss <= config.loss_threshold_record
        ):
            trace.epochs_to_threshold = epoch
        if epoch_hook is not None:
            epoch_hook(state, epoch, epoch_loss)
    return state, trace


# ---------------------------------------------------------------- verification

def grad_check(spec: ModelSpec, seed: int, eps: float = 1e-5) -> float:
    """Max relative deviation between backprop and central finite differences.

    Deviation per parameter is |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8); the model must be small enough for O(P) re-evaluations.
    """
    rng = np.random.default_rng(seed)
    state = init_model(spec, seed)
    # perturb inits away from 0 so ReLU kinks are not sampled
    for p in state.params:
        for key in p:
            p[key] = p[key] + rng.uniform(0.05, 0.15, size=p[key].shape) * np.sign(
                rng.uniform(-1, 1, size=p[key].shape)
            )
    x = rng.standard_normal((4, *spec.input_shape))
    targets = rng.standard_normal(4)
    grads, _ = backprop(spec, state, x, targets)

    def loss_at() -> float:
        pred = forward(spec, state, x).reshape(-1)
        return float(np.mean((pred - targets) ** 2))

    worst = 0.0
    for p, g in zip(state.params, grads):
        for key in p:
            flat_p = p[key].reshape(-1)
            flat_g = g[key].reshape(-1)
            for i in range(flat_p.size):
                orig = flat_p[i]
                flat_p[i] = orig + eps
                up = loss_at()
                flat_p[i] = orig - eps
                down = loss_at()
                flat_p[i] = orig
                numeric = (up - down) / (2 * eps)
                analytic = flat_g[i]
                dev = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
                worst = max(worst, dev)
    return worst


def weight_stats(state: ModelState) -> list[dict]:
    """Exact mean/std/min/max of every parameter tensor."""
    stats = []
    for i, p in enumerate(state.params):
        for key in sorted(p):
            arr = p[key]
            stats.append(
                {
                    "layer": i,
                    "param": key,
                    "mean": float(arr.mean()),
                    "std": float(arr.std()),
                    "min": float(arr.min()),
                    "max": float(arr.max()),
                }
            )
    return stats


# ---------------------------------------------------------------- serialization

_MAGIC = b"CCMDL1"
_VERSION = 1
_INPUT_RECORD = 0


def save_model(path, spec: ModelSpec, state: ModelState) -> int:
    """Binary container; see load_model. Returns bytes written."""
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<H", _VERSION)
    out += _record(_INPUT_RECORD, spec.input_shape, None)
    for layer, p in zip(spec.layers, state.params):
        type_id = _KIND_IDS[layer.kind]
        if layer.kind == "dense":
            dims = layer.args  # (n_in, n_out)
            values = np.concatenate([p["w"].reshape(-1), p["b"].reshape(-1)])
        elif layer.kind == "conv2d":
            c_in, c_out, k, stride = layer.args
            dims = (c_out, c_in, k, k, stride)  # stride rides as a trailing dim
            values = np.concatenate([p["w"].reshape(-1), p["b"].reshape(-1)])
        elif layer.kind == "maxpool":
            dims = layer.args
            values = None
        else:
            dims = ()
            values = None
        out += _record(type_id, dims, values)
    data = bytes(out)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def _record(type_id: int, dims, values) -> bytes:
    rec = struct.pack("<BI", type_id, len(dims))
    rec += struct.pack(f"<{len(dims)}I", *dims) if dims else b""
    if values is not None:
        rec += values.astype("<f8").tobytes()
    return rec


def load_model(path) -> tuple[ModelSpec, ModelState]:
    """Exact round-trip of save_model."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != _MAGIC:
        raise ValueError("bad magic; not a model file")
    (version,) = struct.unpack_from("<H", data, 6)
    if version != _VERSION:
        raise ValueError(f"unsupported model version {version}")
    off = 8
    layers: list[LayerSpec] = []
    params: list[dict[str, np.ndarray]] = []
    input_shape = None
    while off < len(data):
        if off + 5 > len(data):
            raise ValueError("truncated record header in model file")
        type_id, ndims = struct.unpack_from("<BI", data, off)
        off += 5
        if off + 4 * ndims > len(data):
            raise ValueError("truncated record dims in model file")
        dims = struct.unpack_from(f"<{ndims}I", data, off)
        off += 4 * ndims
        if type_id == _INPUT_RECORD:
            input_shape = tuple(dims)
            continue
        kind = _ID_KINDS.get(type_id)
        if kind is None:
            raise ValueError(f"unknown layer type id {type_id}")
        if kind == "dense":
            n_in, n_out = dims
            count = n_in * n_out + n_out
            vals = np.frombuffer(data, "<f8", count, offset=off).copy()
            off += 8 * count
            layers.append(dense(n_in, n_out))
            params.append({"w": vals[: n_in * n_out].reshape(n_in, n_out), "b": vals[n_in * n_out :]})
        elif kind == "conv2d":
            c_out, c_in, k, _, stride = dims
            count = c_out * c_in * k * k + c_out
            vals = np.frombuffer(data, "<f8", count, offset=off).copy()
            off += 8 * count
            layers.append(conv2d(c_in, c_out, k, stride))
            params.append(
                {"w": vals[: c_out * c_in * k * k].reshape(c_out, c_in, k, k), "b": vals[c_out * c_in * k * k :]}
            )
        elif kind == "maxpool":
            layers.append(maxpool(dims[0]))
            params.append({})
        else:
            layers.append(LayerSpec(kind))
            params.append({})
    if input_shape is None:
        raise ValueError("model file missing input-shape record")
    if off != len(data):
        raise ValueError("trailing bytes in model file")
    return ModelSpec(tuple(layers), input_shape), ModelState(params)
