"""Enhancement-layer model stream.

A model is sent as the arithmetic-coded difference between its quantized
weights and those of the shared initial model, followed by the biases and the
per-layer affine pairs as raw float32.  Container layout (little-endian)::

    offset  size  field
    0       4     magic b"ELM1"
    4       1     version (1)
    5       1     flags: bit0 = model present, bit1 = reference model
    --- only when bit0 is set ---
    6       2     layer count L (u16)
    8       4     scale factor S_c (f32)
    12      4     number of coded weight symbols (u32)
    16      4     coded residue length R (u32)
    20      R     coded residue (arith stream incl. its CRC-32)
    20+R    4*B   biases, layer-major, f32
    ...     4*L   affine gains, one per layer, f32
    ...     4*L   affine offsets, one per layer, f32
    --- always ---
    end-4   4     CRC-32 of every preceding byte (u32)

Weights are flattened layer-major, each tensor in (out, in, kh, kw) row-major
order.  A *reference* stream (bit1) codes W_Q itself, i.e. the residue
against an all-zero model; it is the file format of the initial model.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arith import ac_decode, ac_encode
from .errors import ArchitectureMismatch, DecodeError
from .network import ModelCheckpoint, NetworkConfig, QuantizedModel, require_same_architecture

__all__ = [
    "ResidueTensor",
    "ELBitstream",
    "ModelCodec",
    "diff",
    "add",
    "empirical_entropy",
    "serialize_el",
    "serialize_no_el",
    "serialize_reference",
    "deserialize_el",
    "save_reference",
    "load_reference",
    "compression_ratio",
    "original_model_bits",
]

MAGIC = b"ELM1"
VERSION = 1
FLAG_PRESENT = 0x01
FLAG_REFERENCE = 0x02
_PREFIX = struct.Struct("<4sBB")
_MODEL_HEADER = struct.Struct("<HfII")
_CRC = struct.Struct("<I")
_INT32 = (-(1 << 31), (1 << 31) - 1)


@dataclass
class ResidueTensor:
    values: np.ndarray  # flat int64, one entry per weight

    @property
    def n(self) -> int:
        return int(self.values.size)

    def counts(self) -> dict:
        u, c = np.unique(self.values, return_counts=True)
        return dict(zip(u.tolist(), c.tolist()))

    def entropy(self) -> float:
        return empirical_entropy(self.values)


def _as_quantized(model) -> QuantizedModel:
    if isinstance(model, ModelCheckpoint):
        return model.quantized()
    if isinstance(model, QuantizedModel):
        return model
    raise TypeError(f"expected a ModelCheckpoint or QuantizedModel, got {type(model).__name__}")


def _check_pair(current: QuantizedModel, initial: QuantizedModel) -> None:
    require_same_architecture(current.config, initial.config)
    for a, b in zip(current.w_q, initial.w_q):
        if np.shape(a) != np.shape(b):
            raise ArchitectureMismatch(f"weight tensor shapes differ: {np.shape(a)} vs {np.shape(b)}")


def diff(current, initial) -> ResidueTensor:
    """Elementwise W_Q(current) - W_Q(initial), flattened layer-major."""
    current, initial = _as_quantized(current), _as_quantized(initial)
    _check_pair(current, initial)
    return ResidueTensor(current.flat_w_q() - initial.flat_w_q())


def add(initial, residue: ResidueTensor) -> list:
    """Inverse of :func:`diff`: the current model's per-layer W_Q tensors."""
    initial = _as_quantized(initial)
    flat = initial.flat_w_q()
    if residue.n != flat.size:
        raise ArchitectureMismatch(f"residue has {residue.n} entries, model has {flat.size} weights")
    return _unflatten(initial.config, flat + residue.values)


def _unflatten(config: NetworkConfig, flat: np.ndarray) -> list:
    out, pos = [], 0
    for spec in config.layers:
        out.append(flat[pos : pos + spec.n_weights].reshape(spec.weight_shape).astype(np.int64))
        pos += spec.n_weights
    return out


def empirical_entropy(symbols) -> float:
    """Shannon entropy (bits per symbol) of the empirical distribution."""
    s = np.asarray(symbols).ravel()
    if s.size == 0:
        raise ValueError("entropy of an empty sequence is undefined")
    _, counts = np.unique(s, return_counts=True)
    p = counts / s.size
    return float(max(0.0, -np.sum(p * np.log2(p))))


@dataclass
class ELBitstream:
    data: bytes
    present: bool
    reference: bool = False
    residue_bytes: int = 0
    bias_bytes: int = 0
    affine_bytes: int = 0

    @property
    def nbytes(self) -> int:
        return len(self.data)

    @property
    def r_model(self) -> int:
        return 8 * len(self.data)

    @property
    def r_biases(self) -> int:
        return 8 * self.bias_bytes

    @property
    def r_affine(self) -> int:
        return 8 * self.affine_bytes

    @property
    def r_res(self) -> int:
        # coded residue plus container framing, so the three terms add up exactly
        return self.r_model - self.r_biases - self.r_affine

    def accounting(self) -> dict:
        return {
            "r_model_bits": self.r_model,
            "r_res_bits": self.r_res,
            "r_biases_bits": self.r_biases,
            "r_affine_bits": self.r_affine,
            "coded_residue_bytes": self.residue_bytes,
            "bytes": self.nbytes,
        }


def _finish(body: bytes) -> bytes:
    return body + _CRC.pack(zlib.crc32(body))


def serialize_no_el() -> ELBitstream:
    return ELBitstream(_finish(_PREFIX.pack(MAGIC, VERSION, 0)), present=False)


def _pack_model(qm: QuantizedModel, coded_values: np.ndarray, flags: int) -> ELBitstream:
    cfg = qm.config
    if coded_values.size and (coded_values.min() < _INT32[0] or coded_values.max() > _INT32[1]):
        raise ValueError("weight residue outside the signed 32-bit range")
    coded = ac_encode(coded_values)
    biases = np.asarray(qm.flat_biases(), dtype="<f4").tobytes()
    affine = np.asarray(qm.gain, dtype="<f4").tobytes() + np.asarray(qm.offset, dtype="<f4").tobytes()
    body = (
        _PREFIX.pack(MAGIC, VERSION, flags)
        + _MODEL_HEADER.pack(cfg.n_layers, cfg.scale, coded_values.size, len(coded))
        + coded
        + biases
        + affine
    )
    return ELBitstream(
        _finish(body),
        present=True,
        reference=bool(flags & FLAG_REFERENCE),
        residue_bytes=len(coded),
        bias_bytes=len(biases),
        affine_bytes=len(affine),
    )


def serialize_el(checkpoint, initial) -> ELBitstream:
    """Code ``checkpoint`` against the shared ``initial`` model."""
    qm = _as_quantized(checkpoint)
    return _pack_model(qm, diff(qm, initial).values, FLAG_PRESENT)


def serialize_reference(model) -> ELBitstream:
    qm = _as_quantized(model)
    return _pack_model(qm, qm.flat_w_q(), FLAG_PRESENT | FLAG_REFERENCE)


def _parse(data: bytes):
    data = bytes(data)
    if len(data) < _PREFIX.size + _CRC.size:
        raise DecodeError("EL stream too short")
    magic, version, flags = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise DecodeError("bad magic: not an EL model stream")
    if version != VERSION:
        raise DecodeError(f"unsupported EL version {version}")
    (crc,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if zlib.crc32(data[: -_CRC.size]) != crc:
        raise DecodeError("EL stream checksum mismatch")
    return data, flags


def is_present(data: bytes) -> bool:
    """Whether a (valid) EL stream carries a model."""
    _, flags = _parse(data)
    return bool(flags & FLAG_PRESENT)


def deserialize_el(data: bytes, initial, config: NetworkConfig | None = None) -> QuantizedModel | None:
    """Rebuild the quantized model carried by an EL stream.

    Returns ``None`` for a stream whose presence flag is clear.  ``initial``
    may be ``None`` only for reference streams.
    """
    data, flags = _parse(data)
    if not flags & FLAG_PRESENT:
        if len(data) != _PREFIX.size + _CRC.size:
            raise DecodeError("length inconsistency in an empty EL stream")
        return None
    reference = bool(flags & FLAG_REFERENCE)
    if config is None:
        if initial is None:
            config = NetworkConfig.standard()
        else:
            config = _as_quantized(initial).config
    pos = _PREFIX.size
    if len(data) < pos + _MODEL_HEADER.size:
        raise DecodeError("EL stream truncated inside its header")
    n_layers, scale, n_symbols, res_len = _MODEL_HEADER.unpack_from(data, pos)
    pos += _MODEL_HEADER.size
    if n_layers != config.n_layers or n_symbols != config.n_weights or np.float32(config.scale) != np.float32(scale):
        raise ArchitectureMismatch(
            f"stream describes {n_layers} layers / {n_symbols} weights / scale {scale}, "
            f"config has {config.n_layers} / {config.n_weights} / {config.scale}"
        )
    expected = pos + res_len + 4 * config.n_biases + 8 * config.n_layers + _CRC.size
    if len(data) != expected:
        raise DecodeError(f"EL stream length {len(data)} does not match the declared layout ({expected})")
    coded = data[pos : pos + res_len]
    pos += res_len
    values = ac_decode(coded, n_symbols)
    biases_flat = np.frombuffer(data, dtype="<f4", count=config.n_biases, offset=pos).astype(np.float64)
    pos += 4 * config.n_biases
    gain = np.frombuffer(data, dtype="<f4", count=config.n_layers, offset=pos).astype(np.float64)
    pos += 4 * config.n_layers
    offset = np.frombuffer(data, dtype="<f4", count=config.n_layers, offset=pos).astype(np.float64)

    if reference:
        w_q = _unflatten(config, values)
    else:
        if initial is None:
            raise ValueError("a residue stream needs the initial model to decode")
        init = _as_quantized(initial)
        require_same_architecture(config, init.config)
        w_q = add(init, ResidueTensor(values))
    biases, p = [], 0
    for spec in config.layers:
        biases.append(biases_flat[p : p + spec.out_ch].copy())
        p += spec.out_ch
    return QuantizedModel(config, w_q, biases, gain, offset)


def save_reference(path, model) -> ELBitstream:
    stream = serialize_reference(model)
    Path(path).write_bytes(stream.data)
    return stream


def load_reference(path, config: NetworkConfig | None = None) -> QuantizedModel:
    data = Path(path).read_bytes()
    _, flags = _parse(data)
    if not flags & FLAG_REFERENCE:
        raise DecodeError(f"{path} is not a reference model file")
    return deserialize_el(data, None, config)


def original_model_bits(config: NetworkConfig) -> int:
    """Every transmitted parameter at 32 bits: weights, biases and affine pairs."""
    return 32 * (config.n_weights + config.n_biases + config.n_affine)


def compression_ratio(r_ori, r_model) -> float:
    if r_model == 0:
        raise ZeroDivisionError("compressed model size is zero")
    if r_ori <= 0 or r_model < 0:
        raise ValueError("bit counts must be positive")
    return r_ori / r_model


class ModelCodec:
    """Encoder/decoder pair bound to one shared initial model."""

    def __init__(self, initial):
        self.initial = _as_quantized(initial)

    def serialize(self, checkpoint) -> ELBitstream:
        return serialize_el(checkpoint, self.initial)

    def deserialize(self, data: bytes) -> QuantizedModel | None:
        return deserialize_el(data, self.initial, self.initial.config)

    def encoded_size(self, checkpoint) -> int:
        return self.serialize(checkpoint).nbytes

    def round_trip(self, checkpoint) -> QuantizedModel:
        """The model exactly as a decoder will see it."""
        return self.deserialize(self.serialize(checkpoint).data)
