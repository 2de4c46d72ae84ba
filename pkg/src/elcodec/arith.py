"""Adaptive multi-symbol arithmetic coder.

Symbols are signed integers in the int32 range.  Each coding context keeps
its own frequency table that starts out holding a single escape symbol.  The
first occurrence of a value is sent as an escape followed by the value
itself (Exp-Golomb on the zig-zagged value, coded with equiprobable bits);
after that the value is an ordinary table entry whose count starts at 1 and
grows by 1 per occurrence.  Nothing besides the coded bits needs to be sent.

The integer coder is the classic low/high/pending-bits construction with a
32-bit state.  Cumulative counts live in a Fenwick tree per context so that
large alphabets stay O(log K) per symbol.

Every stream ends with a CRC-32 of the symbol sequence so that a truncated or
corrupted stream raises :class:`DecodeError` instead of decoding to garbage.
"""

from __future__ import annotations

import zlib

import numpy as np
from numba import njit

from .errors import DecodeError

__all__ = ["ac_encode", "ac_decode", "CRC_BYTES"]

STATE_BITS = 32
_FULL = (1 << STATE_BITS) - 1
_TOP = 1 << (STATE_BITS - 1)
_SECOND = _TOP >> 1
# total frequency must stay below the minimum range (2^30 + 2)
MAX_SYMBOLS = 1 << 28
CRC_BYTES = 4
_INT32_MIN = -(1 << 31)
_INT32_MAX = (1 << 31) - 1


# ---- Fenwick tree helpers (1-based storage at base..base+cap) ----


@njit(cache=True)
def _fw_add(tree, base, cap, i, delta):
    i += 1
    while i <= cap:
        tree[base + i] += delta
        i += i & -i


@njit(cache=True)
def _fw_prefix(tree, base, i):
    # sum of entries [0, i)
    s = 0
    while i > 0:
        s += tree[base + i]
        i -= i & -i
    return s


@njit(cache=True)
def _fw_find(tree, base, cap, top, value):
    # largest index whose prefix sum is <= value
    pos = 0
    rem = value
    step = top
    while step > 0:
        nxt = pos + step
        if nxt <= cap and tree[base + nxt] <= rem:
            pos = nxt
            rem -= tree[base + nxt]
        step >>= 1
    return pos


# ---- encoder ----


@njit(cache=True)
def _put_bit(out, nbits, bit):
    if bit:
        out[nbits >> 3] |= np.uint8(0x80 >> (nbits & 7))
    return nbits + 1


@njit(cache=True)
def _enc_update(state, out, lo_c, hi_c, total):
    # state = [low, high, pending, nbits]
    low = state[0]
    high = state[1]
    rng = high - low + 1
    new_low = low + lo_c * rng // total
    new_high = low + hi_c * rng // total - 1
    low = new_low
    high = new_high
    nbits = state[3]
    pending = state[2]
    while ((low ^ high) & 0x80000000) == 0:
        bit = low >> 31
        nbits = _put_bit(out, nbits, bit)
        while pending > 0:
            nbits = _put_bit(out, nbits, bit ^ 1)
            pending -= 1
        low = (low << 1) & 0xFFFFFFFF
        high = ((high << 1) & 0xFFFFFFFF) | 1
    while (low & ~high & 0x40000000) != 0:
        pending += 1
        low = (low << 1) ^ 0x80000000
        high = ((high ^ 0x80000000) << 1) | 0x80000001
        low &= 0xFFFFFFFF
        high &= 0xFFFFFFFF
    state[0] = low
    state[1] = high
    state[2] = pending
    state[3] = nbits


@njit(cache=True)
def _enc_literal(state, out, value):
    # Exp-Golomb order 0 of the zig-zagged value, one bypass bit at a time
    if value >= 0:
        z = value << 1
    else:
        z = ((-value) << 1) - 1
    m = z + 1
    nb = 0
    t = m
    while t > 0:
        nb += 1
        t >>= 1
    for _ in range(nb - 1):
        _enc_update(state, out, 0, 1, 2)
    for k in range(nb - 1, -1, -1):
        b = (m >> k) & 1
        _enc_update(state, out, b, b + 1, 2)


@njit(cache=True)
def _encode_kernel(values, ranks, ctx, caps, bases, out):
    n_ctx = caps.shape[0]
    tree = np.zeros(bases[n_ctx - 1] + caps[n_ctx - 1] + 1, dtype=np.int64)
    seen = np.zeros(n_ctx, dtype=np.int64)
    totals = np.zeros(n_ctx, dtype=np.int64)
    for c in range(n_ctx):
        # slot 0 is the escape symbol, permanently at count 1
        _fw_add(tree, bases[c], caps[c], 0, 1)
        totals[c] = 1
    state = np.zeros(4, dtype=np.int64)
    state[1] = 0xFFFFFFFF
    for i in range(values.shape[0]):
        c = ctx[i]
        base = bases[c]
        cap = caps[c]
        r = ranks[i]
        if r == seen[c]:
            # new symbol: escape, literal, then register with count 1
            _enc_update(state, out, 0, 1, totals[c])
            _enc_literal(state, out, values[i])
            seen[c] += 1
            _fw_add(tree, base, cap, r + 1, 1)
            totals[c] += 1
        else:
            slot = r + 1
            lo = _fw_prefix(tree, base, slot)
            hi = _fw_prefix(tree, base, slot + 1)
            _enc_update(state, out, lo, hi, totals[c])
            _fw_add(tree, base, cap, slot, 1)
            totals[c] += 1
    # flush: one more bit disambiguates the final interval
    nbits = state[3]
    nbits = _put_bit(out, nbits, 1)
    return nbits


# ---- decoder ----


@njit(cache=True)
def _get_bit(data, pos):
    if pos < data.shape[0] * 8:
        return (data[pos >> 3] >> (7 - (pos & 7))) & 1
    return 0


@njit(cache=True)
def _dec_update(state, data, lo_c, hi_c, total):
    # state = [low, high, code, pos]
    low = state[0]
    high = state[1]
    code = state[2]
    pos = state[3]
    rng = high - low + 1
    new_low = low + lo_c * rng // total
    new_high = low + hi_c * rng // total - 1
    low = new_low
    high = new_high
    while ((low ^ high) & 0x80000000) == 0:
        code = ((code << 1) & 0xFFFFFFFF) | _get_bit(data, pos)
        pos += 1
        low = (low << 1) & 0xFFFFFFFF
        high = ((high << 1) & 0xFFFFFFFF) | 1
    while (low & ~high & 0x40000000) != 0:
        code = (code & 0x80000000) | ((code << 1) & 0x7FFFFFFF) | _get_bit(data, pos)
        pos += 1
        low = (low << 1) ^ 0x80000000
        high = ((high ^ 0x80000000) << 1) | 0x80000001
        low &= 0xFFFFFFFF
        high &= 0xFFFFFFFF
    state[0] = low
    state[1] = high
    state[2] = code
    state[3] = pos


@njit(cache=True)
def _dec_target(state, total):
    rng = state[1] - state[0] + 1
    offset = state[2] - state[0]
    return ((offset + 1) * total - 1) // rng


@njit(cache=True)
def _dec_literal(state, data):
    # returns (value, ok)
    nb = 1
    while True:
        t = _dec_target(state, 2)
        if t < 0 or t > 1:
            return 0, False
        _dec_update(state, data, t, t + 1, 2)
        if t == 1:
            break
        nb += 1
        if nb > 33:
            return 0, False
    m = 1
    for _ in range(nb - 1):
        t = _dec_target(state, 2)
        if t < 0 or t > 1:
            return 0, False
        _dec_update(state, data, t, t + 1, 2)
        m = (m << 1) | t
    z = m - 1
    if z & 1:
        v = -((z + 1) >> 1)
    else:
        v = z >> 1
    return v, True


@njit(cache=True)
def _decode_kernel(data, ctx, caps, bases, out):
    # returns number of bits read, or -1 on a malformed stream
    n_ctx = caps.shape[0]
    size = bases[n_ctx - 1] + caps[n_ctx - 1] + 1
    tree = np.zeros(size, dtype=np.int64)
    table = np.zeros(size, dtype=np.int64)
    seen = np.zeros(n_ctx, dtype=np.int64)
    totals = np.zeros(n_ctx, dtype=np.int64)
    tops = np.zeros(n_ctx, dtype=np.int64)
    for c in range(n_ctx):
        _fw_add(tree, bases[c], caps[c], 0, 1)
        totals[c] = 1
        t = 1
        while t * 2 <= caps[c]:
            t *= 2
        tops[c] = t
    state = np.zeros(4, dtype=np.int64)
    state[1] = 0xFFFFFFFF
    code = 0
    for k in range(32):
        code = (code << 1) | _get_bit(data, k)
    state[2] = code
    state[3] = 32
    for i in range(out.shape[0]):
        c = ctx[i]
        base = bases[c]
        cap = caps[c]
        total = totals[c]
        target = _dec_target(state, total)
        if target < 0 or target >= total:
            return -1
        slot = _fw_find(tree, base, cap, tops[c], target)
        if slot > seen[c]:
            return -1
        lo = _fw_prefix(tree, base, slot)
        hi = _fw_prefix(tree, base, slot + 1)
        _dec_update(state, data, lo, hi, total)
        if slot == 0:
            v, ok = _dec_literal(state, data)
            if not ok or seen[c] + 1 > cap - 1 or v < -2147483648 or v > 2147483647:
                return -1
            seen[c] += 1
            table[base + seen[c]] = v
            _fw_add(tree, base, cap, seen[c], 1)
            out[i] = v
        else:
            _fw_add(tree, base, cap, slot, 1)
            out[i] = table[base + slot]
        totals[c] += 1
        if state[3] > data.shape[0] * 8 + 64:
            return -1
    return state[3]


def _layout(ctx: np.ndarray, n_contexts: int):
    counts = np.bincount(ctx, minlength=n_contexts).astype(np.int64)
    caps = counts + 1
    bases = np.zeros(n_contexts, dtype=np.int64)
    if n_contexts > 1:
        bases[1:] = np.cumsum(caps[:-1] + 1)
    return caps, bases


def _prepare_contexts(n: int, contexts) -> tuple[np.ndarray, int]:
    if contexts is None:
        return np.zeros(n, dtype=np.int64), 1
    ctx = np.asarray(contexts, dtype=np.int64).ravel()
    if ctx.shape[0] != n:
        raise ValueError(f"contexts has length {ctx.shape[0]}, expected {n}")
    if n and ctx.min() < 0:
        raise ValueError("context ids must be non-negative")
    return ctx, (int(ctx.max()) + 1 if n else 1)


def _crc(symbols: np.ndarray) -> bytes:
    return zlib.crc32(symbols.astype("<i4").tobytes()).to_bytes(CRC_BYTES, "little")


def _first_occurrence_ranks(values: np.ndarray, ctx: np.ndarray, n_contexts: int) -> np.ndarray:
    """Rank of each value within its context, ordered by first appearance."""
    ranks = np.empty(values.shape[0], dtype=np.int64)
    for c in range(n_contexts):
        sel = np.flatnonzero(ctx == c)
        if sel.size == 0:
            continue
        uniq, first, inverse = np.unique(values[sel], return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        rank_of_sorted = np.empty_like(order)
        rank_of_sorted[order] = np.arange(order.size)
        ranks[sel] = rank_of_sorted[inverse]
    return ranks


def ac_encode(symbols, contexts=None) -> bytes:
    """Arithmetic-code a sequence of int32 symbols.

    ``contexts`` optionally assigns each symbol to an independent adaptive
    model; the decoder must be given the same context sequence.
    """
    values = np.asarray(symbols).ravel()
    if values.size and not np.issubdtype(values.dtype, np.integer):
        if not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
            raise ValueError("symbols must be integers")
    values = values.astype(np.int64)
    n = values.shape[0]
    if n > MAX_SYMBOLS:
        raise ValueError(f"at most {MAX_SYMBOLS} symbols per stream")
    if n and (values.min() < _INT32_MIN or values.max() > _INT32_MAX):
        raise ValueError("symbols must fit in the signed 32-bit range")
    ctx, n_contexts = _prepare_contexts(n, contexts)
    if n == 0:
        return _crc(values)
    caps, bases = _layout(ctx, n_contexts)
    ranks = _first_occurrence_ranks(values, ctx, n_contexts)
    out = np.zeros(n * 16 + 64, dtype=np.uint8)
    nbits = _encode_kernel(values, ranks, ctx, caps, bases, out)
    payload = out[: (nbits + 7) // 8].tobytes()
    return payload + _crc(values)


def ac_decode(data: bytes, count: int, contexts=None) -> np.ndarray:
    """Inverse of :func:`ac_encode`; returns an int64 array of ``count`` symbols."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if len(data) < CRC_BYTES:
        raise DecodeError("stream shorter than its checksum")
    payload = np.frombuffer(bytes(data[:-CRC_BYTES]), dtype=np.uint8)
    crc = bytes(data[-CRC_BYTES:])
    ctx, n_contexts = _prepare_contexts(count, contexts)
    out = np.zeros(count, dtype=np.int64)
    if count:
        if payload.size == 0:
            raise DecodeError("empty payload for a non-empty sequence")
        caps, bases = _layout(ctx, n_contexts)
        used = _decode_kernel(payload, ctx, caps, bases, out)
        if used < 0:
            raise DecodeError("malformed arithmetic-coded stream")
    elif payload.size:
        raise DecodeError("trailing bytes after an empty sequence")
    if _crc(out) != crc:
        raise DecodeError("checksum mismatch: stream is truncated or corrupt")
    return out
