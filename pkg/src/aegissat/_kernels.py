"""Hot inner loops: CRC-32 over configuration images, batched CNN
evaluation and batched firewall containment.

Each kernel has a numba ``@njit`` implementation and a numpy/stdlib
fallback with identical results. The numba path is used when numba is
importable and ``AEGIS_DISABLE_NUMBA`` is unset (or "0"). Both paths stay
importable so the benchmark and the equivalence tests can call them side
by side.
"""

from __future__ import annotations

import os
import zlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def _flag_disables_numba() -> bool:
    return os.environ.get("AEGIS_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _flag_disables_numba()

CRC32_POLY_REFLECTED = 0xEDB88320  # 0x04C11DB7 bit-reversed


def _make_crc_table() -> np.ndarray:
    table = np.zeros(256, dtype=np.uint32)
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ CRC32_POLY_REFLECTED if c & 1 else c >> 1
        table[i] = c
    return table


CRC32_TABLE = _make_crc_table()


# --- CRC-32 -----------------------------------------------------------------

@njit(cache=True)
def _crc32_loop(data, table, crc):
    for i in range(data.shape[0]):
        crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8)
    return crc


def crc32_numba(data: bytes) -> int:
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    crc = _crc32_loop(arr, CRC32_TABLE, np.uint32(0xFFFFFFFF))
    return int(crc) ^ 0xFFFFFFFF


def crc32_fallback(data: bytes) -> int:
    # zlib implements the same reflected 0x04C11DB7 variant in C.
    return zlib.crc32(bytes(data)) & 0xFFFFFFFF


# --- CNN: 3x3 valid conv -> shift/saturate -> ReLU -> 2x2 max-pool ----------

@njit(cache=True)
def _cnn_loop(inputs, kernel, shift):
    n = inputs.shape[0]
    out = np.zeros((n, 2, 2), dtype=np.int8)
    fmap = np.zeros((4, 4), dtype=np.int32)
    for b in range(n):
        for r in range(4):
            for c in range(4):
                acc = np.int32(0)
                for i in range(3):
                    for j in range(3):
                        acc += np.int32(inputs[b, r + i, c + j]) * np.int32(kernel[i, j])
                q = acc >> shift
                if q > 127:
                    q = 127
                elif q < -128:
                    q = -128
                if q < 0:
                    q = 0
                fmap[r, c] = q
        for pr in range(2):
            for pc in range(2):
                m = fmap[2 * pr, 2 * pc]
                m = max(m, fmap[2 * pr, 2 * pc + 1])
                m = max(m, fmap[2 * pr + 1, 2 * pc])
                m = max(m, fmap[2 * pr + 1, 2 * pc + 1])
                out[b, pr, pc] = m
    return out


def cnn_batch_numba(inputs: np.ndarray, kernel: np.ndarray, shift: int) -> np.ndarray:
    inputs = np.ascontiguousarray(inputs, dtype=np.int8)
    kernel = np.ascontiguousarray(kernel, dtype=np.int8)
    return _cnn_loop(inputs, kernel, np.int32(shift))


def cnn_batch_fallback(inputs: np.ndarray, kernel: np.ndarray, shift: int) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.int32)
    k = np.asarray(kernel, dtype=np.int32)
    windows = sliding_window_view(x, (3, 3), axis=(1, 2))  # (n, 4, 4, 3, 3)
    acc = np.einsum("nrcij,ij->nrc", windows, k)
    q = np.clip(acc >> shift, -128, 127)
    q = np.maximum(q, 0)
    pooled = q.reshape(-1, 2, 2, 2, 2).max(axis=(2, 4))
    return pooled.astype(np.int8)


# --- firewall containment ---------------------------------------------------

@njit(cache=True)
def _contain_loop(addrs, lengths, ops, bases, sizes, perms):
    n = addrs.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        a = addrs[k]
        ln = lengths[k]
        if ln == 0:
            continue
        for r in range(bases.shape[0]):
            if perms[r] & ops[k] == 0:
                continue
            b = bases[r]
            if a < b:
                continue
            off = a - b
            if off > sizes[r]:
                continue
            if ln <= sizes[r] - off:
                out[k] = True
                break
    return out


def contains_batch_numba(addrs, lengths, ops, bases, sizes, perms) -> np.ndarray:
    return _contain_loop(
        np.asarray(addrs, dtype=np.uint64),
        np.asarray(lengths, dtype=np.uint64),
        np.asarray(ops, dtype=np.uint8),
        np.asarray(bases, dtype=np.uint64),
        np.asarray(sizes, dtype=np.uint64),
        np.asarray(perms, dtype=np.uint8),
    )


def contains_batch_fallback(addrs, lengths, ops, bases, sizes, perms) -> np.ndarray:
    a = np.asarray(addrs, dtype=np.uint64)[:, None]
    ln = np.asarray(lengths, dtype=np.uint64)[:, None]
    op = np.asarray(ops, dtype=np.uint8)[:, None]
    b = np.asarray(bases, dtype=np.uint64)[None, :]
    s = np.asarray(sizes, dtype=np.uint64)[None, :]
    p = np.asarray(perms, dtype=np.uint8)[None, :]
    if b.shape[1] == 0:
        return np.zeros(a.shape[0], dtype=bool)
    ge = a >= b
    off = np.where(ge, a - b, np.uint64(0))
    in_start = ge & (off <= s)
    room = np.where(in_start, s - off, np.uint64(0))
    hit = in_start & (ln <= room) & (ln > 0) & ((p & op) != 0)
    return hit.any(axis=1)


# zlib's C loop beats the jitted table loop (benchmarks/bench_kernels.py),
# so it serves both backends; the jitted loop stays as a cross-check.
crc32 = crc32_fallback

if USE_NUMBA:
    cnn_batch = cnn_batch_numba
    contains_batch = contains_batch_numba
else:
    cnn_batch = cnn_batch_fallback
    contains_batch = contains_batch_fallback

BACKEND = "numba" if USE_NUMBA else "numpy"
