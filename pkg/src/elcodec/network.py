"""Luma restoration CNN built from conv quantization blocks.

Each convolution owns learnable weights ``W_L``.  The weights actually used
by the convolution are produced by scaling, rounding and an affine map::

    W_Q    = round(W_L * S_c)
    W_conv = gain * (W_Q / S_c) + offset

Rounding is straight-through during training.  The network predicts a
residual that is added back to its input.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ArchitectureMismatch, DimensionError, NumericError, ConfigError

log = logging.getLogger(__name__)

__all__ = [
    "LayerSpec",
    "NetworkConfig",
    "ModelParams",
    "QuantizedModel",
    "ModelCheckpoint",
    "TrainingConfig",
    "cqb_weights",
    "init_params",
    "zero_params",
    "forward",
    "loss_and_grads",
    "enhance_frame",
    "make_checkpoint",
    "train_online",
    "STANDARD_WEIGHTS",
    "STANDARD_BIASES",
]

STANDARD_WEIGHTS = 40224
STANDARD_BIASES = 337
_INT32_MIN, _INT32_MAX = -(2**31), 2**31 - 1


@dataclass(frozen=True)
class LayerSpec:
    kernel: int
    in_ch: int
    out_ch: int

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_ch, self.in_ch, self.kernel, self.kernel)

    @property
    def n_weights(self) -> int:
        return self.out_ch * self.in_ch * self.kernel * self.kernel


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple[LayerSpec, ...]
    activation: str = "relu"
    global_skip: bool = True
    scale: float = 10.0

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if not self.scale > 0:
            raise ConfigError("scale factor must be positive")
        if self.layers[0].in_ch != 1 or self.layers[-1].out_ch != 1:
            raise ConfigError("network maps one luma channel to one luma channel")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_ch != b.in_ch:
                raise ConfigError(f"layer chain breaks: {a.out_ch} outputs feed {b.in_ch} inputs")
        for spec in self.layers:
            if spec.kernel not in (1, 3):
                raise ConfigError(f"kernel {spec.kernel} not supported")

    @classmethod
    def standard(cls, scale: float = 10.0) -> "NetworkConfig":
        layers = (
            [LayerSpec(3, 1, 16)]
            + [LayerSpec(3, 16, 16)] * 17
            + [LayerSpec(1, 16, 16)] * 3
            + [LayerSpec(3, 16, 1)]
        )
        cfg = cls(tuple(layers), scale=scale)
        assert cfg.n_weights == STANDARD_WEIGHTS and cfg.n_biases == STANDARD_BIASES
        return cfg

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_weights(self) -> int:
        return sum(s.n_weights for s in self.layers)

    @property
    def n_biases(self) -> int:
        return sum(s.out_ch for s in self.layers)

    @property
    def n_affine(self) -> int:
        return 2 * self.n_layers

    @property
    def n_params(self) -> int:
        return self.n_weights + self.n_biases

    def to_dict(self) -> dict:
        return {
            "layers": [[s.kernel, s.in_ch, s.out_ch] for s in self.layers],
            "activation": self.activation,
            "global_skip": self.global_skip,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {"layers", "activation", "global_skip", "scale"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown network config keys: {sorted(extra)}")
        try:
            layers = tuple(LayerSpec(int(k), int(i), int(o)) for k, i, o in d["layers"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad layer table: {exc}") from exc
        return cls(
            layers,
            activation=d.get("activation", "relu"),
            global_skip=bool(d.get("global_skip", True)),
            scale=float(d.get("scale", 10.0)),
        )

    @classmethod
    def from_json(cls, path) -> "NetworkConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def cqb_weights(w_l, scale, gain=1.0, offset=0.0):
    """Quantize learnable weights; returns ``(W_Q int64, W_conv float64)``."""
    if not scale > 0:
        raise ValueError("scale factor must be positive")
    w_q = quantize_weights(w_l, scale)
    return w_q, dequantize(w_q, scale, gain, offset)


def quantize_weights(w_l, scale) -> np.ndarray:
    """W_Q = round(W_L * S_c) as int64, refusing values outside the int32 range."""
    r = T.ste_round(np.asarray(w_l, dtype=np.float64) * scale)
    if not np.all(np.isfinite(r)):
        raise NumericError("non-finite learnable weights")
    if r.size and (r.min() < _INT32_MIN or r.max() > _INT32_MAX):
        raise NumericError("quantized weights fall outside the signed 32-bit range")
    return r.astype(np.int64)


def dequantize(w_q, scale, gain=1.0, offset=0.0):
    return gain * (np.asarray(w_q, dtype=np.float64) / scale) + offset


@dataclass
class ModelParams:
    """Learnable state: W_L per layer, biases per layer, one (gain, offset) per layer."""

    config: NetworkConfig
    weights: list
    biases: list
    gain: np.ndarray
    offset: np.ndarray

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.gain.copy(),
            self.offset.copy(),
        )

    def as_dict(self) -> dict:
        d = {f"w{i}": w for i, w in enumerate(self.weights)}
        d.update({f"b{i}": b for i, b in enumerate(self.biases)})
        d["gain"] = self.gain
        d["offset"] = self.offset
        return d

    def quantized_weights(self) -> list:
        return [quantize_weights(w, self.config.scale) for w in self.weights]

    def quantize(self) -> "QuantizedModel":
        return QuantizedModel(
            self.config,
            self.quantized_weights(),
            [b.copy() for b in self.biases],
            self.gain.copy(),
            self.offset.copy(),
        )

    def conv_weights(self) -> list:
        return _conv_weights(self.config, self.quantized_weights(), self.gain, self.offset)


@dataclass
class QuantizedModel:
    """The transferable form of a model: integer W_Q plus raw biases and affine pairs."""

    config: NetworkConfig
    w_q: list
    biases: list
    gain: np.ndarray
    offset: np.ndarray

    def conv_weights(self) -> list:
        return _conv_weights(self.config, self.w_q, self.gain, self.offset)

    def flat_w_q(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.w_q]).astype(np.int64)

    def flat_biases(self) -> np.ndarray:
        return np.concatenate([np.ravel(b) for b in self.biases]).astype(np.float64)

    def to_params(self) -> ModelParams:
        """Learnable weights placed at the centre of each quantization bin."""
        s = self.config.scale
        return ModelParams(
            self.config,
            [np.asarray(w, dtype=np.float64) / s for w in self.w_q],
            [np.asarray(b, dtype=np.float64).copy() for b in self.biases],
            np.asarray(self.gain, dtype=np.float64).copy(),
            np.asarray(self.offset, dtype=np.float64).copy(),
        )

    def equals(self, other: "QuantizedModel") -> bool:
        if self.config.layers != other.config.layers:
            return False
        return (
            all(np.array_equal(a, b) for a, b in zip(self.w_q, other.w_q))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
            and np.array_equal(self.gain, other.gain)
            and np.array_equal(self.offset, other.offset)
        )


def _conv_weights(config, w_q, gain, offset):
    s = config.scale
    return [dequantize(w, s, gain[i], offset[i]) for i, w in enumerate(w_q)]


def init_params(config: NetworkConfig, rng: np.random.Generator) -> ModelParams:
    """He-normal learnable weights, zero biases, identity affine."""
    weights = []
    for spec in config.layers:
        std = np.sqrt(2.0 / (spec.in_ch * spec.kernel * spec.kernel))
        weights.append(rng.normal(0.0, std, size=spec.weight_shape))
    return ModelParams(
        config,
        weights,
        [np.zeros(spec.out_ch) for spec in config.layers],
        np.ones(config.n_layers),
        np.zeros(config.n_layers),
    )


def zero_params(config: NetworkConfig) -> ModelParams:
    return ModelParams(
        config,
        [np.zeros(spec.weight_shape) for spec in config.layers],
        [np.zeros(spec.out_ch) for spec in config.layers],
        np.ones(config.n_layers),
        np.zeros(config.n_layers),
    )


def _check_input(config: NetworkConfig, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    if x.ndim != 4 or x.shape[1] != 1:
        raise DimensionError(f"expected a single-channel batch (B, 1, H, W), got {x.shape}")
    return x


def _run(config, conv_w, biases, x, keep: bool):
    geom = T.Planar(x.shape[0], x.shape[2], x.shape[3])
    h = geom.pack(x)
    inputs, pre = [], []
    last = config.n_layers - 1
    for i, (w, b) in enumerate(zip(conv_w, biases)):
        if keep:
            inputs.append(h)
        z = T.conv_planar(geom, h, w, b, name=f"layer {i + 1}")
        if keep:
            pre.append(z)
        h = T.relu(z) if i < last else z
    out = geom.unpack(h)
    if config.global_skip:
        out = out + x
    return out, (geom, inputs, pre)


def forward(model, x) -> np.ndarray:
    """Enhance a (B, 1, H, W) batch or a single (H, W) plane in [0, 1].

    ``model`` is a :class:`ModelParams` or :class:`QuantizedModel`; either way
    the convolution uses the dequantized W_conv, never W_L directly.
    """
    squeeze = np.ndim(x) == 2
    x = _check_input(model.config, x)
    out, _ = _run(model.config, model.conv_weights(), model.biases, x, keep=False)
    return out[0, 0] if squeeze else out


def loss_and_grads(params: ModelParams, x, target):
    """MSE loss of the network output and gradients for every learnable tensor.

    The rounding step is straight-through: dL/dW_L = gain * dL/dW_conv.
    """
    cfg = params.config
    x = _check_input(cfg, x)
    target = _check_input(cfg, target)
    w_q = params.quantized_weights()
    conv_w = _conv_weights(cfg, w_q, params.gain, params.offset)
    out, (geom, inputs, pre) = _run(cfg, conv_w, params.biases, x, keep=True)
    loss, g_out = T.mse_loss(out, target)

    grads = {}
    g_gain = np.zeros(cfg.n_layers)
    g_offset = np.zeros(cfg.n_layers)
    g = geom.pack(g_out)
    last = cfg.n_layers - 1
    for i in range(last, -1, -1):
        if i < last:
            g = T.relu_backward(pre[i], g)
        g_in, g_wconv, g_b = T.conv_planar_backward(geom, inputs[i], conv_w[i], g, need_input_grad=i > 0)
        grads[f"b{i}"] = g_b
        # W_conv = gain * ste_round(W_L * s) / s + offset
        grads[f"w{i}"] = params.gain[i] * T.ste_round_backward(g_wconv)
        g_gain[i] = np.sum(g_wconv * (w_q[i] / cfg.scale))
        g_offset[i] = np.sum(g_wconv)
        g = g_in
    grads["gain"] = g_gain
    grads["offset"] = g_offset
    return loss, grads


def _halo(config: NetworkConfig) -> int:
    return sum(s.kernel // 2 for s in config.layers)


def enhance_frame(model, luma: np.ndarray, tile_rows: int = 96) -> np.ndarray:
    """Apply the network to an 8-bit luma plane and return an 8-bit plane.

    Large frames are processed in horizontal strips with a halo wide enough
    to cover the receptive field, so strips agree with a whole-frame pass.
    """
    luma = np.asarray(luma)
    if luma.ndim != 2:
        raise DimensionError(f"expected a 2-D luma plane, got shape {luma.shape}")
    x = luma.astype(np.float64) / 255.0
    h, w = x.shape
    halo = _halo(model.config)
    out = np.empty_like(x)
    for top in range(0, h, tile_rows):
        bot = min(h, top + tile_rows)
        a, b = max(0, top - halo), min(h, bot + halo)
        y = forward(model, x[a:b])
        out[top:bot] = y[top - a : top - a + (bot - top)]
    return np.clip(T.round_half_away(out * 255.0), 0, 255).astype(np.uint8)


# ---- checkpoints and online training ----


@dataclass
class ModelCheckpoint:
    epoch: int
    params: ModelParams
    training_mse: float = float("nan")
    id: str = ""
    compressed_bytes: int | None = None
    metrics: dict = field(default_factory=dict)

    def quantized(self) -> QuantizedModel:
        return self.params.quantize()


def content_id(params: ModelParams, epoch: int) -> str:
    h = hashlib.sha256()
    h.update(str(epoch).encode())
    for arr in params.weights + params.biases + [params.gain, params.offset]:
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def make_checkpoint(params: ModelParams, epoch: int, training_mse: float = float("nan")) -> ModelCheckpoint:
    p = params.copy()
    return ModelCheckpoint(epoch, p, training_mse, content_id(p, epoch))


@dataclass
class TrainingConfig:
    patch_size: int = 35
    learning_rate: float = 0.0002
    iters_per_epoch: int = 1000
    max_epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    size_cap_bytes: int = 13824
    probe_crops: int = 32

    def __post_init__(self):
        for name in ("patch_size", "batch_size", "size_cap_bytes", "probe_crops"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.iters_per_epoch < 0 or self.max_epochs < 0:
            raise ConfigError("iteration and epoch counts must be non-negative")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")

    @classmethod
    def desk(cls, **kw) -> "TrainingConfig":
        base = dict(iters_per_epoch=200, max_epochs=5, batch_size=8)
        base.update(kw)
        return cls(**base)

    @classmethod
    def full(cls, **kw) -> "TrainingConfig":
        base = dict(iters_per_epoch=1000, max_epochs=30, batch_size=64)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


def _stack_pairs(pairs, patch: int):
    degraded, original = [], []
    for d, o in pairs:
        d = np.asarray(d)
        o = np.asarray(o)
        if d.shape != o.shape or d.ndim != 2:
            raise DimensionError(f"frame pair shapes differ or are not 2-D: {d.shape} vs {o.shape}")
        if min(d.shape) < patch:
            raise DimensionError(f"frame {d.shape} smaller than the {patch}x{patch} patch")
        degraded.append(d.astype(np.float64) / 255.0)
        original.append(o.astype(np.float64) / 255.0)
    if not degraded:
        raise ValueError("at least one frame pair is required")
    return degraded, original


def _sample_crops(rng, degraded, original, count: int, patch: int):
    xs = np.empty((count, 1, patch, patch))
    ys = np.empty((count, 1, patch, patch))
    for k in range(count):
        f = int(rng.integers(len(degraded)))
        h, w = degraded[f].shape
        r = int(rng.integers(h - patch + 1))
        c = int(rng.integers(w - patch + 1))
        xs[k, 0] = degraded[f][r : r + patch, c : c + patch]
        ys[k, 0] = original[f][r : r + patch, c : c + patch]
    return xs, ys


def _probe_mse(params, xs, ys) -> float:
    return T.mse_loss(forward(params, xs), ys)[0]


def train_online(initial: ModelCheckpoint, pairs, cfg: TrainingConfig, codec=None) -> list:
    """Fine-tune from ``initial`` on (degraded, original) luma pairs.

    Returns one checkpoint per epoch, epoch 0 being the initial model.  Each
    checkpoint's ``training_mse`` is measured on a fixed set of probe crops
    drawn once up front, so values are comparable across epochs.  When
    ``codec`` is given, training stops at the first checkpoint whose EL
    payload exceeds ``cfg.size_cap_bytes``; that checkpoint is dropped.
    """
    degraded, original = _stack_pairs(pairs, cfg.patch_size)
    rng = np.random.default_rng(cfg.seed)
    probe_x, probe_y = _sample_crops(rng, degraded, original, cfg.probe_crops, cfg.patch_size)

    params = initial.params.copy()
    first = make_checkpoint(params, 0, _probe_mse(params, probe_x, probe_y))
    if codec is not None:
        first.compressed_bytes = codec.encoded_size(first)
    checkpoints = [first]
    if cfg.iters_per_epoch == 0 or cfg.max_epochs == 0:
        return checkpoints

    state = T.OptimizerState(lr=cfg.learning_rate)
    for epoch in range(1, cfg.max_epochs + 1):
        for _ in range(cfg.iters_per_epoch):
            xs, ys = _sample_crops(rng, degraded, original, cfg.batch_size, cfg.patch_size)
            try:
                loss, grads = loss_and_grads(params, xs, ys)
            except NumericError as exc:
                log.warning("%s in epoch %d; stopping with %d checkpoints", exc, epoch, len(checkpoints))
                return checkpoints
            if not np.isfinite(loss):
                log.warning("loss diverged in epoch %d; stopping with %d checkpoints", epoch, len(checkpoints))
                return checkpoints
            try:
                T.adam_step(params.as_dict(), grads, state)
            except NumericError as exc:
                log.warning("%s; stopping with %d checkpoints", exc, len(checkpoints))
                return checkpoints
        ck = make_checkpoint(params, epoch, _probe_mse(params, probe_x, probe_y))
        if codec is not None:
            ck.compressed_bytes = codec.encoded_size(ck)
            if ck.compressed_bytes > cfg.size_cap_bytes:
                log.info("epoch %d model is %d bytes, above the %d byte cap", epoch, ck.compressed_bytes, cfg.size_cap_bytes)
                break
        log.info("epoch %d: probe mse %.6g", epoch, ck.training_mse)
        checkpoints.append(ck)
    return checkpoints


def require_same_architecture(a: NetworkConfig, b: NetworkConfig) -> None:
    if a.layers != b.layers or a.scale != b.scale:
        raise ArchitectureMismatch("models do not share the same layer table and scale")


