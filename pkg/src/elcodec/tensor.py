"""Small deterministic reverse-mode kernels in float64.

Only what the restoration network needs: same-size 2-D convolution (3x3 or
1x1, stride 1, zero padding), ReLU, MSE, straight-through rounding and Adam.
Every op is a forward function plus an explicit backward function; there is
no general graph machinery.

Convolutions run on a *planar* layout: activations are stored as
``(channels, batch * Hp * Wp)`` where ``Hp = H + 2`` and ``Wp = W + 2``
include a one-pixel zero border.  A 3x3 tap then becomes a constant offset
in the flattened index, so im2col is nine contiguous slice copies followed by
a single matmul.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError

__all__ = [
    "Planar",
    "round_half_away",
    "ste_round",
    "ste_round_backward",
    "relu",
    "relu_backward",
    "mse_loss",
    "conv2d",
    "conv2d_backward",
    "conv_planar",
    "conv_planar_backward",
    "OptimizerState",
    "adam_step",
]


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def ste_round(x):
    """Forward half of the straight-through rounding node."""
    return round_half_away(x)


def ste_round_backward(grad_out):
    """Backward half: the rounding node is treated as the identity."""
    return np.asarray(grad_out, dtype=np.float64)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    return np.where(x > 0.0, grad_out, 0.0)


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    count = diff.size
    loss = float(np.sum(diff * diff) / count)
    return loss, 2.0 * diff / count


# ---- planar layout ----


class Planar:
    """Geometry of a zero-bordered planar batch.

    The flat buffer has ``margin`` spare columns on both sides so that every
    tap offset of a 3x3 kernel stays in bounds.
    """

    def __init__(self, batch: int, height: int, width: int):
        self.batch, self.height, self.width = batch, height, width
        self.hp, self.wp = height + 2, width + 2
        self.n = batch * self.hp * self.wp
        self.margin = self.wp + 1
        interior = np.zeros((batch, self.hp, self.wp), dtype=bool)
        interior[:, 1:-1, 1:-1] = True
        self.mask = interior.reshape(-1).astype(np.float64)
        self.offsets3 = [(dy - 1) * self.wp + (dx - 1) for dy in range(3) for dx in range(3)]

    def empty(self, channels: int) -> np.ndarray:
        return np.zeros((channels, self.n + 2 * self.margin))

    def core(self, buf: np.ndarray) -> np.ndarray:
        return buf[:, self.margin : self.margin + self.n]

    def pack(self, x: np.ndarray) -> np.ndarray:
        """(B, C, H, W) -> padded planar buffer."""
        b, c, h, w = x.shape
        buf = self.empty(c)
        view = self.core(buf).reshape(c, b, self.hp, self.wp)
        view[:, :, 1:-1, 1:-1] = x.transpose(1, 0, 2, 3)
        return buf

    def unpack(self, buf: np.ndarray) -> np.ndarray:
        c = buf.shape[0]
        view = self.core(buf).reshape(c, self.batch, self.hp, self.wp)
        return np.ascontiguousarray(view[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3))

    def im2col(self, buf: np.ndarray, k: int) -> np.ndarray:
        if k == 1:
            return self.core(buf)
        c = buf.shape[0]
        cols = np.empty((9, c, self.n))
        m = self.margin
        for t, off in enumerate(self.offsets3):
            cols[t] = buf[:, m + off : m + off + self.n]
        return cols.reshape(9 * c, self.n)


def _weight_matrix(weight: np.ndarray) -> np.ndarray:
    # (out, in, kh, kw) -> (out, kh*kw*in), matching the tap-major im2col rows
    o, i, kh, kw = weight.shape
    return weight.transpose(0, 2, 3, 1).reshape(o, kh * kw * i)


def _check_conv(x_channels: int, weight: np.ndarray, bias, name: str) -> None:
    if weight.ndim != 4:
        raise DimensionError(f"{name}: weight must be 4-D, got shape {weight.shape}")
    o, i, kh, kw = weight.shape
    if (kh, kw) not in ((3, 3), (1, 1)):
        raise DimensionError(f"{name}: kernel must be 3x3 or 1x1, got {kh}x{kw}")
    if x_channels != i:
        raise DimensionError(f"{name}: input has {x_channels} channels, layer expects {i}")
    if bias is not None and np.shape(bias) != (o,):
        raise DimensionError(f"{name}: bias shape {np.shape(bias)} does not match {o} outputs")


def conv_planar(geom: Planar, buf: np.ndarray, weight: np.ndarray, bias, name: str = "conv") -> np.ndarray:
    """Convolve a planar buffer; the border of the result is forced to zero."""
    _check_conv(buf.shape[0], weight, bias, name)
    k = weight.shape[2]
    cols = geom.im2col(buf, k)
    out = geom.empty(weight.shape[0])
    core = geom.core(out)
    np.matmul(_weight_matrix(weight), cols, out=core)
    if bias is not None:
        core += np.asarray(bias)[:, None]
    core *= geom.mask
    return out


def conv_planar_backward(geom: Planar, buf: np.ndarray, weight: np.ndarray, grad_out: np.ndarray, need_input_grad: bool = True):
    """Gradients of a planar convolution.

    ``grad_out`` must already be zero on the border.  Returns
    ``(grad_input_buffer_or_None, grad_weight, grad_bias)``.
    """
    o, i, kh, kw = weight.shape
    g = geom.core(grad_out)
    cols = geom.im2col(buf, kh)
    grad_w = (g @ cols.T).reshape(o, kh, kw, i).transpose(0, 3, 1, 2)
    grad_b = g.sum(axis=1)
    grad_in = None
    if need_input_grad:
        # the input gradient is a convolution with flipped, transposed kernels
        flipped = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        grad_in = conv_planar(geom, grad_out, flipped, None, name="transpose")
    return grad_in, np.ascontiguousarray(grad_w), grad_b


def conv2d(x, weight, bias=None, name: str = "conv"):
    """Same-size 2-D convolution (cross-correlation) of a (B, C, H, W) batch."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"{name}: input must be (batch, channels, height, width), got {x.shape}")
    _check_conv(x.shape[1], weight, bias, name)
    geom = Planar(x.shape[0], x.shape[2], x.shape[3])
    return geom.unpack(conv_planar(geom, geom.pack(x), weight, bias, name))


def conv2d_backward(x, weight, grad_out):
    """Returns ``(grad_x, grad_weight, grad_bias)`` for :func:`conv2d`."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    geom = Planar(x.shape[0], x.shape[2], x.shape[3])
    gin, gw, gb = conv_planar_backward(geom, geom.pack(x), weight, geom.pack(np.asarray(grad_out, dtype=np.float64)))
    return geom.unpack(gin), gw, gb


# ---- optimizer ----


@dataclass
class OptimizerState:
    lr: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: OptimizerState) -> dict:
    """One Adam update.  ``params`` is updated in place and returned."""
    if state.lr <= 0:
        raise ValueError("learning rate must be positive")
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericError(f"adam_step: {bad} non-finite gradient entries in {key!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for key, g in grads.items():
        p = params[key]
        if np.shape(p) != np.shape(g):
            raise DimensionError(f"adam_step: gradient for {key!r} has shape {np.shape(g)}, parameter {np.shape(p)}")
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p, dtype=np.float64)
            state.v[key] = np.zeros_like(p, dtype=np.float64)
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
