"""Dense packing of 4- and 8-bit codes into byte buffers.

The canonical layout is little-nibble-first sequential packing: with
``bits=4``, code ``i`` occupies the low nibble of byte ``i // 2`` when ``i``
is even and the high nibble when ``i`` is odd, so ``[0x1, 0x2]`` packs into
the single byte ``0x21``. With ``bits=8`` each code is one byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IntegrityError

SUPPORTED_WIDTHS = (4, 8)


def packed_byte_len(code_count: int, bits_per_code: int) -> int:
    """Bytes needed for `code_count` codes of `bits_per_code` bits each."""
    if bits_per_code not in SUPPORTED_WIDTHS:
        raise DomainError(f"bits must be one of {SUPPORTED_WIDTHS}, got {bits_per_code}")
    return (code_count * bits_per_code + 7) // 8


@dataclass(frozen=True)
class PackedBuffer:
    """An immutable byte buffer of densely packed unsigned codes."""

    data: bytes
    bits_per_code: int
    code_count: int

    def __post_init__(self) -> None:
        if self.bits_per_code not in SUPPORTED_WIDTHS:
            raise DomainError(f"unsupported code width {self.bits_per_code}")
        if self.code_count < 0:
            raise IntegrityError("negative code_count")
        expected = packed_byte_len(self.code_count, self.bits_per_code)
        if len(self.data) != expected:
            raise IntegrityError(
                f"buffer holds {len(self.data)} bytes, expected {expected} "
                f"for {self.code_count} codes of {self.bits_per_code} bits"
            )


def pack(codes: np.ndarray, bits: int) -> PackedBuffer:
    """Pack unsigned integer `codes` at `bits` bits each (4 or 8)."""
    if bits not in SUPPORTED_WIDTHS:
        raise DomainError(f"bits must be one of {SUPPORTED_WIDTHS}, got {bits}")
    arr = np.asarray(codes)
    if arr.size and (arr.min() < 0 or arr.max() >= (1 << bits)):
        raise DomainError(f"codes out of range for {bits}-bit packing")
    arr = arr.astype(np.uint8).ravel()
    if bits == 8:
        data = arr.tobytes()
    else:
        if arr.size % 2:
            arr = np.append(arr, np.uint8(0))
        data = ((arr[1::2] << 4) | arr[0::2]).astype(np.uint8).tobytes()
    return PackedBuffer(data=data, bits_per_code=bits, code_count=int(np.asarray(codes).size))


def unpack(buf: PackedBuffer) -> np.ndarray:
    """Recover the code vector from a packed buffer. Exact inverse of pack."""
    raw = np.frombuffer(buf.data, dtype=np.uint8)
    if buf.bits_per_code == 8:
        return raw.copy()
    lo = raw & 0x0F
    hi = raw >> 4
    codes = np.empty(raw.size * 2, dtype=np.uint8)
    codes[0::2] = lo
    codes[1::2] = hi
    return codes[: buf.code_count]


def magic_dequant_identity(code: int) -> float:
    """Decode a 4-bit code through the FP16 exponent-bias trick.

    ORing the code into the mantissa of the FP16 pattern 0x6400 (which is
    1024.0) yields the FP16 value 1024 + code, so subtracting 1024.0 returns
    float(code) exactly. This is the arithmetic core of fused INT4
    dequantization kernels, checked here in software.
    """
    if not 0 <= int(code) <= 15:
        raise DomainError(f"code must be in 0..15, got {code}")
    pattern = np.uint16(0x6400 | int(code))
    return float(pattern.view(np.float16)) - 1024.0
