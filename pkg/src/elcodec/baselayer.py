"""Base layer: a toy intra DCT codec plus ingestion of externally coded video.

The toy codec codes each 8x8 block independently: orthonormal DCT, uniform
quantization with step ``2 ** ((qp - 4) / 6)``, and the package's adaptive
arithmetic coder on the levels (DC as a raster-order difference, AC in
zig-zag order, four frequency-band contexts).  Its output is a real
bitstream, so ``R_i`` is an actual bit count.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn

from .arith import ac_decode, ac_encode
from .errors import DecodeError, MalformedRateLog, SizeMismatch, TruncatedFile
from .tensor import round_half_away

__all__ = [
    "qstep",
    "lambda_from_qp",
    "toy_encode",
    "toy_decode",
    "FrameGroup",
    "RateRecord",
    "read_rate_log",
    "write_rate_log",
    "read_yuv420",
    "write_yuv420",
    "ingest",
    "CTC_QPS",
]

CTC_QPS = (22, 27, 32, 37)
BL_MAGIC = b"TBL1"
_HEADER = struct.Struct("<4sHHB")


def _check_qp(qp) -> int:
    if not float(qp).is_integer() or not 0 <= qp <= 51:
        raise ValueError(f"qp must be an integer in [0, 51], got {qp}")
    return int(qp)


def qstep(qp: int) -> float:
    return 2.0 ** ((_check_qp(qp) - 4) / 6.0)


def lambda_from_qp(qp: int) -> float:
    """Lagrange multiplier for SSE distortion in 8-bit units and rate in bits."""
    return 0.85 * 2.0 ** ((_check_qp(qp) - 12) / 3.0)


def _zigzag_order(n: int = 8) -> np.ndarray:
    coords = sorted(
        ((r, c) for r in range(n) for c in range(n)),
        key=lambda rc: (rc[0] + rc[1], rc[1] if (rc[0] + rc[1]) % 2 == 0 else rc[0]),
    )
    return np.array([r * n + c for r, c in coords])


_ZIGZAG = _zigzag_order()
# context of each zig-zag position: 0 is DC, then three AC bands
_BAND = np.array([0] + [1] * 5 + [2] * 15 + [3] * 43)


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    by, bx = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(by * 8, bx * 8)


def _symbols(levels: np.ndarray):
    """Block levels (by, bx, 8, 8) -> coded symbol and context sequences."""
    by, bx = levels.shape[:2]
    zz = levels.reshape(by * bx, 64)[:, _ZIGZAG]
    dc = zz[:, 0].copy()
    dc[1:] -= zz[:-1, 0]
    zz[:, 0] = dc
    ctx = np.broadcast_to(_BAND, zz.shape)
    return zz.ravel(), ctx.ravel()


def _levels(symbols: np.ndarray, by: int, bx: int) -> np.ndarray:
    zz = symbols.reshape(by * bx, 64).copy()
    zz[:, 0] = np.cumsum(zz[:, 0])
    flat = np.empty_like(zz)
    flat[:, _ZIGZAG] = zz
    return flat.reshape(by, bx, 8, 8)


def _reconstruct(levels: np.ndarray, step: float, h: int, w: int) -> np.ndarray:
    coef = levels.astype(np.float64) * step
    pix = idctn(coef, axes=(2, 3), norm="ortho") + 128.0
    return np.clip(round_half_away(_unblocks(pix)), 0, 255).astype(np.uint8)[:h, :w]


def toy_encode(luma, qp: int, return_stream: bool = False):
    """Intra-code an 8-bit luma plane.

    Returns ``(reconstruction, bits)``; with ``return_stream`` the bitstream
    bytes are appended as a third element.
    """
    luma = np.asarray(luma)
    if luma.ndim != 2 or luma.size == 0:
        raise ValueError(f"expected a non-empty 2-D luma plane, got shape {luma.shape}")
    if luma.shape[0] > 0xFFFF or luma.shape[1] > 0xFFFF:
        raise ValueError("frame dimensions must fit in 16 bits")
    qp = _check_qp(qp)
    h, w = luma.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(luma.astype(np.float64), ((0, ph), (0, pw)), mode="edge")
    step = qstep(qp)
    coef = dctn(_blocks(padded) - 128.0, axes=(2, 3), norm="ortho")
    levels = round_half_away(coef / step).astype(np.int64)
    symbols, ctx = _symbols(levels)
    payload = ac_encode(symbols, ctx)
    stream = _HEADER.pack(BL_MAGIC, h, w, qp) + payload
    recon = _reconstruct(levels, step, h, w)
    bits = 8 * len(stream)
    return (recon, bits, stream) if return_stream else (recon, bits)


def toy_decode(stream: bytes) -> tuple[np.ndarray, int]:
    """Decode a toy base-layer frame; returns ``(reconstruction, qp)``."""
    if len(stream) < _HEADER.size:
        raise DecodeError("base-layer stream shorter than its header")
    magic, h, w, qp = _HEADER.unpack_from(stream)
    if magic != BL_MAGIC:
        raise DecodeError("not a toy base-layer stream")
    by, bx = -(-h // 8), -(-w // 8)
    n = by * bx * 64
    ctx = np.broadcast_to(_BAND, (by * bx, 64)).ravel()
    symbols = ac_decode(stream[_HEADER.size :], n, ctx)
    return _reconstruct(_levels(symbols, by, bx), qstep(qp), h, w), qp


# ---- frame groups and external material ----


@dataclass
class FrameGroup:
    """Aligned original / base-layer luma planes with per-frame rate and multiplier."""

    originals: list
    recons: list
    bits: list
    qps: list
    lambdas: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.originals)
        if n < 1:
            raise ValueError("a frame group needs at least one frame")
        if not (len(self.recons) == len(self.bits) == len(self.qps) == n):
            raise ValueError("per-frame fields have inconsistent lengths")
        if not self.lambdas:
            self.lambdas = [lambda_from_qp(q) for q in self.qps]
        if len(self.lambdas) != n:
            raise ValueError("lambda list length does not match frame count")
        shape = np.shape(self.originals[0])
        for o, r in zip(self.originals, self.recons):
            if np.shape(o) != shape or np.shape(r) != shape:
                raise SizeMismatch("all frames in a group must share one size")
        if any(b <= 0 for b in self.bits):
            raise ValueError("per-frame bit counts must be positive")
        if any(lam <= 0 for lam in self.lambdas):
            raise ValueError("Lagrange multipliers must be positive")

    @property
    def n(self) -> int:
        return len(self.originals)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(np.shape(self.originals[0]))

    def pairs(self):
        return list(zip(self.recons, self.originals))

    def split(self, size: int) -> list["FrameGroup"]:
        out = []
        for a in range(0, self.n, size):
            b = a + size
            out.append(FrameGroup(self.originals[a:b], self.recons[a:b], self.bits[a:b], self.qps[a:b], self.lambdas[a:b]))
        return out


def encode_group(frames, qp: int) -> tuple[FrameGroup, list]:
    """Run the toy codec over frames; returns the group and the per-frame streams."""
    recons, bits, streams = [], [], []
    for f in frames:
        r, b, s = toy_encode(f, qp, return_stream=True)
        recons.append(r)
        bits.append(b)
        streams.append(s)
    frames = [np.asarray(f, dtype=np.uint8) for f in frames]
    return FrameGroup(frames, recons, bits, [qp] * len(frames)), streams


@dataclass(frozen=True)
class RateRecord:
    index: int
    bits: int
    qp: int


RATE_LOG_COLUMNS = ("index", "bits", "qp")


def write_rate_log(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RATE_LOG_COLUMNS)
        for r in records:
            w.writerow([r.index, r.bits, r.qp])


def read_rate_log(path) -> list[RateRecord]:
    """Read a CSV rate log with header ``index,bits,qp``; indices must run 0..N-1."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise MalformedRateLog(f"cannot read rate log {path}: {exc}") from exc
    if not rows or tuple(c.strip() for c in rows[0]) != RATE_LOG_COLUMNS:
        raise MalformedRateLog(f"{path}: header must be {','.join(RATE_LOG_COLUMNS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise MalformedRateLog(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        try:
            idx, bits, qp = (int(c) for c in row)
        except ValueError as exc:
            raise MalformedRateLog(f"{path}:{lineno}: {exc}") from exc
        if idx != len(out):
            raise MalformedRateLog(f"{path}:{lineno}: index {idx}, expected {len(out)}")
        if bits <= 0 or not 0 <= qp <= 51:
            raise MalformedRateLog(f"{path}:{lineno}: bits must be positive and qp in [0, 51]")
        out.append(RateRecord(idx, bits, qp))
    if not out:
        raise MalformedRateLog(f"{path}: no frames listed")
    return out


def _frame_bytes(width: int, height: int) -> int:
    if width % 2 or height % 2:
        raise ValueError("4:2:0 frames need even width and height")
    return width * height * 3 // 2


def read_yuv420(path, width: int, height: int):
    """Read planar 8-bit 4:2:0; returns a list of (Y, U, V) tuples."""
    data = Path(path).read_bytes()
    fb = _frame_bytes(width, height)
    if len(data) % fb:
        raise TruncatedFile(f"{path}: {len(data)} bytes is not a whole number of {width}x{height} frames")
    frames = []
    ys, cs = width * height, (width // 2) * (height // 2)
    for k in range(len(data) // fb):
        buf = np.frombuffer(data, dtype=np.uint8, count=fb, offset=k * fb)
        y = buf[:ys].reshape(height, width)
        u = buf[ys : ys + cs].reshape(height // 2, width // 2)
        v = buf[ys + cs :].reshape(height // 2, width // 2)
        frames.append((y.copy(), u.copy(), v.copy()))
    return frames


def write_yuv420(path, frames) -> None:
    """Write (Y, U, V) tuples, or bare Y planes with neutral chroma."""
    with open(path, "wb") as fh:
        for f in frames:
            if isinstance(f, np.ndarray):
                y = f
                u = v = np.full((y.shape[0] // 2, y.shape[1] // 2), 128, dtype=np.uint8)
            else:
                y, u, v = f
            for plane in (y, u, v):
                fh.write(np.ascontiguousarray(plane, dtype=np.uint8).tobytes())


def ingest(original_yuv, recon_yuv, rate_log, width: int, height: int, qp: int | None = None) -> FrameGroup:
    """Build a FrameGroup from an external codec's output.

    Luma planes are taken verbatim.  ``qp`` overrides the per-frame QP column
    of the rate log when given.
    """
    records = read_rate_log(rate_log)
    orig = read_yuv420(original_yuv, width, height)
    recon = read_yuv420(recon_yuv, width, height)
    if len(orig) != len(recon):
        raise SizeMismatch(f"original has {len(orig)} frames, reconstruction has {len(recon)}")
    if len(records) != len(orig):
        raise SizeMismatch(f"rate log lists {len(records)} frames, video has {len(orig)}")
    qps = [r.qp if qp is None else _check_qp(qp) for r in records]
    return FrameGroup([f[0] for f in orig], [f[0] for f in recon], [r.bits for r in records], qps)
