import numpy as np
import pytest

from aegissat.behavioral import (
    CnnParams,
    Direction,
    ShiftParams,
    cnn_forward,
    cnn_forward_batch,
    cnn_reference,
    decode_cnn_params,
    decode_shift_params,
    encode_cnn_params,
    encode_shift_params,
    shift_exec,
)


def brute_cnn(kernel, shift, image):
    """Independent restatement: floor-divide, clamp, rectify, pool."""
    conv = {}
    for r in range(4):
        for c in range(4):
            acc = 0
            for i in range(3):
                for j in range(3):
                    acc += int(image[r + i][c + j]) * int(kernel[i][j])
            q = acc // (2 ** shift)
            q = 127 if q > 127 else (-128 if q < -128 else q)
            conv[r, c] = q if q > 0 else 0
    return [[max(conv[2 * pr + a, 2 * pc + b] for a in range(2) for b in range(2)) for pc in range(2)]
            for pr in range(2)]


def brute_shift(value, direction, amount):
    if direction is Direction.LEFT:
        return (value * 2 ** amount) % 2 ** 32
    return value // 2 ** amount


def test_cnn_thousand_random_cases(rng):
    for _ in range(1000):
        k = rng.integers(-128, 128, size=(3, 3))
        x = rng.integers(-128, 128, size=(6, 6))
        s = int(rng.integers(0, 32))
        got = cnn_forward(CnnParams(k, s, x))
        assert got.shape == (2, 2)
        assert got.tolist() == brute_cnn(k, s, x)


def test_cnn_batch_and_reference_agree(rng):
    k = rng.integers(-128, 128, size=(3, 3))
    xs = rng.integers(-128, 128, size=(300, 6, 6))
    out = cnn_forward_batch(xs, k, 5)
    for x, o in zip(xs, out):
        assert o.tolist() == brute_cnn(k, 5, x) == cnn_reference(k, 5, x)


def test_cnn_edge_values():
    k = np.full((3, 3), -128)
    x = np.full((6, 6), -128)
    # 9 * 16384 = 147456 saturates at 127 for a zero shift.
    assert cnn_forward(CnnParams(k, 0, x)).tolist() == [[127, 127], [127, 127]]
    assert cnn_forward(CnnParams(-k - 1, 0, x)).tolist() == [[0, 0], [0, 0]]
    # Arithmetic shift rounds toward minus infinity before the ReLU.
    one = np.zeros((3, 3), dtype=int)
    one[0, 0] = 1
    img = np.zeros((6, 6), dtype=int)
    img[0, 0] = 3
    assert cnn_forward(CnnParams(one, 1, img)).tolist() == [[1, 0], [0, 0]]


@pytest.mark.parametrize("bad", [
    dict(kernel=np.zeros((2, 3)), quant_shift=0, input=np.zeros((6, 6))),
    dict(kernel=np.zeros((3, 3)), quant_shift=32, input=np.zeros((6, 6))),
    dict(kernel=np.full((3, 3), 128), quant_shift=0, input=np.zeros((6, 6))),
])
def test_cnn_rejects_bad_params(bad):
    with pytest.raises(ValueError):
        CnnParams(**bad)


def test_shift_thousand_random_cases(rng):
    for _ in range(1000):
        v = int(rng.integers(0, 2 ** 32))
        d = Direction(int(rng.integers(0, 2)))
        a = int(rng.integers(0, 32))
        assert shift_exec(ShiftParams(v, d, a)) == brute_shift(v, d, a)


def test_shift_examples():
    assert shift_exec(ShiftParams(0x8000_0001, Direction.LEFT, 1)) == 2
    assert shift_exec(ShiftParams(0xFFFF_FFFF, Direction.RIGHT, 31)) == 1
    with pytest.raises(ValueError):
        ShiftParams(2 ** 32, Direction.LEFT, 0)
    with pytest.raises(ValueError):
        ShiftParams(1, Direction.LEFT, 32)


def test_param_blobs_roundtrip(rng):
    k = rng.integers(-128, 128, size=(3, 3))
    dk, ds = decode_cnn_params(encode_cnn_params(k, 9))
    assert dk.tolist() == k.tolist() and ds == 9
    assert decode_shift_params(encode_shift_params(Direction.RIGHT, 17)) == (Direction.RIGHT, 17)
    with pytest.raises(ValueError):
        decode_cnn_params(b"\x00" * 9)
