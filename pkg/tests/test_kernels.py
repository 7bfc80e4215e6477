"""Both kernel paths must agree bit for bit."""

import subprocess
import sys

import numpy as np
import pytest

from aegissat import _kernels

from .test_crypto import crc32_bitwise

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


@needs_numba
def test_crc_paths_agree(rng):
    for n in (0, 1, 7, 64, 4099):
        data = rng.bytes(n)
        assert _kernels.crc32_numba(data) == _kernels.crc32_fallback(data) == crc32_bitwise(data)


@needs_numba
def test_cnn_paths_agree(rng):
    x = rng.integers(-128, 128, size=(200, 6, 6)).astype(np.int8)
    for shift in (0, 3, 7, 12, 31):
        k = rng.integers(-128, 128, size=(3, 3)).astype(np.int8)
        a = _kernels.cnn_batch_numba(x, k, shift)
        b = _kernels.cnn_batch_fallback(x, k, shift)
        assert a.dtype == b.dtype
        np.testing.assert_array_equal(a, b)


@needs_numba
def test_contains_paths_agree(rng):
    bases = [0xA000_0000, 0xA010_0000]
    lens = [0x1_0000, 0x1000]
    perms = [3, 1]
    n = 5000
    addrs = rng.integers(0xA000_0000 - 0x100, 0xA010_2000, size=n, dtype=np.uint64)
    lengths = rng.integers(0, 0x2000, size=n, dtype=np.uint64)
    # Wrap-around candidates near the top of the address space.
    addrs[:50] = np.uint64(2**64 - 8)
    ops = rng.integers(1, 3, size=n).astype(np.uint8)
    a = _kernels.contains_batch_numba(addrs, lengths, ops, bases, lens, perms)
    b = _kernels.contains_batch_fallback(addrs, lengths, ops, bases, lens, perms)
    np.testing.assert_array_equal(a, b)
    assert not a[:50].any()


def test_env_flag_selects_fallback():
    code = "from aegissat import _kernels as k; print(k.USE_NUMBA, k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"AEGIS_DISABLE_NUMBA": "1", "PATH": ""},
                         capture_output=True, text=True, check=True).stdout.split()
    assert out[0] == "False"
