"""
1-bit and identity compressors, plus the packed wire image of a 1-bit message.

The 1-bit compressor maps x to (‖x‖₁/d)·sign(x) with sign(0) = +1. Its packed
form is an 8-byte little-endian IEEE-754 scale followed by ⌈d/8⌉ bytes of
sign bits, LSB-first within each byte (bit j set iff x_j ≥ 0).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict

from core.errors import PackedFormatError
from core.types import ParamVector

SCALE_BITS = 64
_SCALE_FORMAT = "<d"


class CompressorKind(str, Enum):
    ONE_BIT = "one_bit"
    IDENTITY = "identity"


class CompressorSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: CompressorKind = CompressorKind.ONE_BIT
    sign_of_zero: Literal[1] = 1


ONE_BIT = CompressorSpec(kind=CompressorKind.ONE_BIT)
IDENTITY = CompressorSpec(kind=CompressorKind.IDENTITY)


def signs(x: ParamVector) -> ParamVector:
    return np.where(x >= 0.0, 1.0, -1.0)


def one_bit_scale(x: ParamVector) -> float:
    return float(np.abs(x).sum() / x.shape[0])


def compress(spec: CompressorSpec, x: ParamVector) -> ParamVector:
    if spec.kind is CompressorKind.IDENTITY:
        return x.copy()
    return one_bit_scale(x) * signs(x)


def compression_error_sq(x: ParamVector) -> float:
    """‖C[x] − x‖² for the 1-bit compressor, evaluated directly."""
    diff = compress(ONE_BIT, x) - x
    return float(np.dot(diff, diff))


def closed_form_error_sq(x: ParamVector) -> float:
    """‖x‖² − ‖x‖₁²/d, the closed form of the 1-bit compression error."""
    l1 = float(np.abs(x).sum())
    return float(np.dot(x, x)) - l1 * l1 / x.shape[0]


def omega_bound(d: int) -> float:
    """Worst-case relative error 1 − 1/d of the 1-bit compressor."""
    return 1.0 - 1.0 / d


# ---------------------------------------------------------------------------
# Packed wire image
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PackedOneBit:
    scale: float
    sign_bits: bytes
    d: int

    @property
    def payload_bits(self) -> int:
        return self.d + SCALE_BITS

    def to_bytes(self) -> bytes:
        return struct.pack(_SCALE_FORMAT, self.scale) + self.sign_bits

    @classmethod
    def from_bytes(cls, data: bytes, d: int) -> "PackedOneBit":
        expected = 8 + math.ceil(d / 8)
        if len(data) != expected:
            raise PackedFormatError(f"expected {expected} bytes for d={d}, got {len(data)}")
        (scale,) = struct.unpack(_SCALE_FORMAT, data[:8])
        return cls(scale=scale, sign_bits=bytes(data[8:]), d=d)


def pack(x: ParamVector) -> PackedOneBit:
    bits = (x >= 0.0).astype(np.uint8)
    packed = np.packbits(bits, bitorder="little")
    return PackedOneBit(scale=one_bit_scale(x), sign_bits=packed.tobytes(), d=x.shape[0])


def unpack(message: PackedOneBit) -> ParamVector:
    d = message.d
    if d < 1 or len(message.sign_bits) != math.ceil(d / 8):
        raise PackedFormatError(
            f"sign bitset holds {len(message.sign_bits)} bytes, expected {math.ceil(max(d, 0) / 8)}"
        )
    raw = np.frombuffer(message.sign_bits, dtype=np.uint8)
    unpacked = np.unpackbits(raw, bitorder="little")
    if np.any(unpacked[d:]):
        raise PackedFormatError("nonzero padding bits after the last coordinate")
    bits = unpacked[:d].astype(np.float64)
    return message.scale * (2.0 * bits - 1.0)


def transmit(spec: CompressorSpec, x: ParamVector) -> ParamVector:
    """Compress ``x`` and return what the receiving side decodes."""
    if spec.kind is CompressorKind.IDENTITY:
        return x.copy()
    return unpack(pack(x))
