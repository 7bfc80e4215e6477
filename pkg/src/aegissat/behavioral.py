"""Executable models of the two demonstration accelerators.

``cnn_forward`` runs the accelerated kernel path; ``cnn_reference`` is a
plain-loop transcription of the same pipeline used to produce golden BIST
vectors on the ground side.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels

MASK32 = 0xFFFFFFFF


class Direction(enum.IntEnum):
    LEFT = 0
    RIGHT = 1


@dataclass(frozen=True)
class CnnParams:
    kernel: np.ndarray  # (3, 3) int8
    quant_shift: int
    input: np.ndarray  # (6, 6) int8

    def __post_init__(self):
        k = np.asarray(self.kernel)
        x = np.asarray(self.input)
        if k.shape != (3, 3) or x.shape != (6, 6):
            raise ValueError("CNN expects a 3x3 kernel and a 6x6 input")
        for arr in (k, x):
            if arr.min(initial=0) < -128 or arr.max(initial=0) > 127:
                raise ValueError("CNN operands are signed 8-bit")
        if not 0 <= int(self.quant_shift) <= 31:
            raise ValueError("quant_shift must be in [0, 31]")


@dataclass(frozen=True)
class ShiftParams:
    value: int
    direction: Direction
    amount: int

    def __post_init__(self):
        if not 0 <= self.value <= MASK32:
            raise ValueError("value must be 32-bit unsigned")
        if not 0 <= self.amount <= 31:
            raise ValueError("amount must be in [0, 31]")


def cnn_forward(p: CnnParams) -> np.ndarray:
    """3x3 valid conv, arithmetic shift + int8 saturation, ReLU, 2x2 max-pool."""
    x = np.asarray(p.input, dtype=np.int8)[None]
    return _kernels.cnn_batch(x, np.asarray(p.kernel, dtype=np.int8), int(p.quant_shift))[0]


def cnn_forward_batch(inputs: np.ndarray, kernel: np.ndarray, quant_shift: int) -> np.ndarray:
    return _kernels.cnn_batch(np.asarray(inputs, dtype=np.int8), np.asarray(kernel, dtype=np.int8), int(quant_shift))


def cnn_reference(kernel, quant_shift: int, image) -> list[list[int]]:
    kernel = [[int(v) for v in row] for row in np.asarray(kernel).tolist()]
    image = [[int(v) for v in row] for row in np.asarray(image).tolist()]
    fmap = [[0] * 4 for _ in range(4)]
    for r in range(4):
        for c in range(4):
            acc = sum(image[r + i][c + j] * kernel[i][j] for i in range(3) for j in range(3))
            q = min(127, max(-128, acc >> quant_shift))
            fmap[r][c] = max(0, q)
    return [
        [max(fmap[2 * pr + a][2 * pc + b] for a in (0, 1) for b in (0, 1)) for pc in range(2)]
        for pr in range(2)
    ]


def shift_exec(p: ShiftParams) -> int:
    if p.direction == Direction.LEFT:
        return (p.value << p.amount) & MASK32
    return p.value >> p.amount


# Behaviour parameter blobs carried inside a SimBitstream.

def encode_cnn_params(kernel, quant_shift: int) -> bytes:
    k = np.asarray(kernel, dtype=np.int8).reshape(9)
    return k.tobytes() + bytes([quant_shift])


def decode_cnn_params(blob: bytes) -> tuple[np.ndarray, int]:
    if len(blob) != 10:
        raise ValueError("CnnV1 parameters are 10 bytes")
    return np.frombuffer(blob[:9], dtype=np.int8).reshape(3, 3).copy(), blob[9]


def encode_shift_params(direction: Direction, amount: int) -> bytes:
    return struct.pack("<BB", int(direction), amount)


def decode_shift_params(blob: bytes) -> tuple[Direction, int]:
    if len(blob) != 2:
        raise ValueError("ShiftV1 parameters are 2 bytes")
    d, amount = struct.unpack("<BB", blob)
    return Direction(d), amount
