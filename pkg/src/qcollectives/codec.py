"""Group-wise quantization codecs for low-bit tensor transport.

Integer codecs follow the affine scheme

    asymmetric: scale = (max - min) / (2**bits - 1)
                zero  = ceil(-min / scale), clamped to the code range
                code  = clamp(round(x / scale) + zero, 0, 2**bits - 1)
    symmetric:  scale = absmax / (2**(bits-1) - 1)
                code  = clamp(round(x / scale), -2**(bits-1), 2**(bits-1) - 1)

computed independently per group of `group_size` consecutive elements (the
final group may be shorter). Dequantization is the affine inverse
(code - zero) * scale, or code * scale for symmetric codecs.

Minifloat codecs (e4m3, e5m2, e2m1) scale each group by absmax/format_max
and round the quotients to the format grid. The fp16 passthrough codec
stores IEEE half-precision bit patterns with no metadata.

Wire representation: scales travel as 16-bit floats and zeros as one byte
per group. Scales are snapped to the FP16 grid at quantization time (never
below scale_floor), so a tensor dequantizes identically before and after a
trip through the fabric.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import minifloat
from .bitpack import PackedBuffer, pack, packed_byte_len, unpack
from .errors import ConfigError, DomainError, IntegrityError

ROUNDING_MODES = ("nearest-even", "ceil")
FLOAT_FORMATS = ("e4m3", "e5m2", "e2m1", "fp16")

# smallest positive FP16 value; wire scales can never round below this
_FP16_TINY = float(np.nextafter(np.float16(0), np.float16(1)))
_FP16_MAX = 65504.0


@dataclass(frozen=True)
class CodecConfig:
    """Describes one quantization scheme.

    Exactly one of `bits` (2..8 integer codes) or `number_format`
    (e4m3/e5m2/e2m1 minifloats, or fp16 for the lossless passthrough)
    must be set.
    """

    bits: Optional[int] = None
    number_format: Optional[str] = None
    group_size: int = 128
    symmetric: bool = False
    rounding: str = "nearest-even"
    scale_floor: float = 1e-8

    def __post_init__(self) -> None:
        if (self.bits is None) == (self.number_format is None):
            raise ConfigError("set exactly one of bits or number_format")
        if self.bits is not None and not (2 <= int(self.bits) <= 8):
            raise ConfigError(f"bits must be in 2..8, got {self.bits}")
        if self.number_format is not None and self.number_format not in FLOAT_FORMATS:
            raise ConfigError(f"number_format must be one of {FLOAT_FORMATS}")
        if int(self.group_size) < 1:
            raise ConfigError("group_size must be >= 1")
        if self.rounding not in ROUNDING_MODES:
            raise ConfigError(f"rounding must be one of {ROUNDING_MODES}")
        if not (self.scale_floor > 0):
            raise ConfigError("scale_floor must be positive")

    # ---- classification helpers ----

    @property
    def is_passthrough(self) -> bool:
        return self.number_format == "fp16"

    @property
    def is_minifloat(self) -> bool:
        return self.number_format in ("e4m3", "e5m2", "e2m1")

    @property
    def is_int(self) -> bool:
        return self.bits is not None

    @property
    def code_bits(self) -> int:
        """Logical bits per element code."""
        if self.is_passthrough:
            return 16
        if self.is_minifloat:
            return minifloat.get_format(self.number_format).code_bits
        return int(self.bits)

    @property
    def storage_bits(self) -> int:
        """Packed width on the wire; sub-nibble codes ride in nibbles."""
        if self.is_passthrough:
            return 16
        return 4 if self.code_bits <= 4 else 8

    @property
    def metadata_bytes_per_group(self) -> int:
        """Wire bytes per group beyond the packed codes."""
        if self.is_passthrough:
            return 0
        if self.is_int and not self.symmetric:
            return 3  # fp16 scale + one-byte zero point
        return 2  # fp16 scale only

    @property
    def label(self) -> str:
        if self.is_passthrough:
            return "fp16"
        if self.is_minifloat:
            return self.number_format
        suffix = "sym" if self.symmetric else "asym"
        return f"int{self.bits}{suffix}"

    def group_count(self, element_count: int) -> int:
        if self.is_passthrough:
            return 0
        return -(-element_count // self.group_size)

    def wire_byte_len(self, element_count: int) -> int:
        """Serialized size in bytes of a tensor with `element_count` elements."""
        if self.is_passthrough:
            return 2 * element_count
        groups = self.group_count(element_count)
        return packed_byte_len(element_count, self.storage_bits) + groups * self.metadata_bytes_per_group

    # ---- JSON round-trip ----

    def to_json_dict(self) -> dict:
        out: dict = {"group_size": self.group_size, "symmetric": self.symmetric,
                     "rounding": self.rounding, "scale_floor": self.scale_floor}
        if self.bits is not None:
            out["bits"] = self.bits
        else:
            out["format"] = self.number_format
        return out

    @classmethod
    def from_json_dict(cls, d: dict) -> "CodecConfig":
        known = {"bits", "format", "group_size", "symmetric", "rounding", "scale_floor"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown codec keys: {sorted(extra)}")
        return cls(
            bits=d.get("bits"),
            number_format=d.get("format"),
            group_size=d.get("group_size", 128),
            symmetric=d.get("symmetric", False),
            rounding=d.get("rounding", "nearest-even"),
            scale_floor=d.get("scale_floor", 1e-8),
        )


PASSTHROUGH_FP16 = CodecConfig(number_format="fp16")


@dataclass
class QuantizedTensor:
    """Packed codes plus per-group scale/zero metadata."""

    codes: PackedBuffer
    scales: np.ndarray  # float32, one per group; empty for passthrough
    zeros: Optional[np.ndarray]  # uint8, one per group; None unless asymmetric int
    element_count: int
    config: CodecConfig

    def __post_init__(self) -> None:
        groups = self.config.group_count(self.element_count)
        if self.scales.shape != (groups,):
            raise IntegrityError(f"expected {groups} scales, got {self.scales.shape}")
        if self.config.is_int and not self.config.symmetric:
            if self.zeros is None or self.zeros.shape != (groups,):
                raise IntegrityError("asymmetric tensor requires one zero per group")
        elif self.zeros is not None:
            raise IntegrityError("zeros are only present for asymmetric integer codecs")

    @property
    def group_count(self) -> int:
        return self.config.group_count(self.element_count)

    @property
    def wire_bytes(self) -> int:
        return self.config.wire_byte_len(self.element_count)

    def to_bytes(self) -> bytes:
        """Serialize as codes || fp16 scales || zero bytes."""
        parts = [self.codes.data]
        if self.scales.size:
            parts.append(self.scales.astype(np.float16).tobytes())
        if self.zeros is not None:
            parts.append(self.zeros.astype(np.uint8).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, element_count: int, config: CodecConfig) -> "QuantizedTensor":
        expected = config.wire_byte_len(element_count)
        if len(data) != expected:
            raise IntegrityError(f"payload holds {len(data)} bytes, expected {expected}")
        if config.is_passthrough:
            buf = PackedBuffer(data=data, bits_per_code=8, code_count=len(data))
            return cls(buf, np.empty(0, dtype=np.float32), None, element_count, config)
        groups = config.group_count(element_count)
        code_len = packed_byte_len(element_count, config.storage_bits)
        codes = PackedBuffer(data=data[:code_len], bits_per_code=config.storage_bits,
                             code_count=element_count)
        scales = np.frombuffer(data[code_len:code_len + 2 * groups], dtype=np.float16)
        scales = scales.astype(np.float32)
        zeros = None
        if config.is_int and not config.symmetric:
            zeros = np.frombuffer(data[code_len + 2 * groups:], dtype=np.uint8).copy()
        return cls(codes, scales, zeros, element_count, config)


# ---------------------------------------------------------------------------
# group parameter computation


def _as_flat_f64(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise DomainError("input tensor is empty")
    if not np.all(np.isfinite(arr)):
        raise DomainError("input contains NaN or infinity")
    return arr


def _wire_scale(raw: np.ndarray, floor: float) -> np.ndarray:
    """Snap raw scales to the FP16 grid without dropping below `floor`.

    Rounds nearest-even, then bumps one FP16 ulp upward wherever rounding
    landed below the floor (including underflow to zero), and clamps values
    that overflow FP16 to the FP16 maximum.
    """
    raw = np.maximum(np.asarray(raw, dtype=np.float64), floor)
    s = raw.astype(np.float16)
    s = np.where(np.isfinite(s), s, np.float16(_FP16_MAX))
    low = s.astype(np.float64) < floor
    if np.any(low):
        s = np.where(low, np.nextafter(s, np.float16(np.inf)), s)
    return s.astype(np.float64)


def group_params_asym(group, bits: int, scale_floor: float = 1e-8) -> tuple[float, int]:
    """Raw affine parameters of one group: (scale, zero).

    scale = max((max - min) / (2**bits - 1), scale_floor)
    zero  = ceil(-min / scale) clamped to [0, 2**bits - 1]
    """
    if not (2 <= int(bits) <= 8):
        raise DomainError(f"bits must be in 2..8, got {bits}")
    g = _as_flat_f64(group)
    scale = max((g.max() - g.min()) / (2 ** bits - 1), scale_floor)
    zero = int(np.clip(np.ceil(-g.min() / scale), 0, 2 ** bits - 1))
    return float(scale), zero


def group_params_sym(group, bits: int, scale_floor: float = 1e-8) -> float:
    """Raw symmetric scale of one group: max(absmax / (2**(bits-1) - 1), floor)."""
    if not (2 <= int(bits) <= 8):
        raise DomainError(f"bits must be in 2..8, got {bits}")
    g = _as_flat_f64(group)
    return float(max(np.abs(g).max() / (2 ** (bits - 1) - 1), scale_floor))


# ---------------------------------------------------------------------------
# quantize / dequantize


def _group_reduce(x: np.ndarray, group_size: int, op) -> np.ndarray:
    starts = np.arange(0, x.size, group_size)
    return op.reduceat(x, starts)


def _per_element(per_group: np.ndarray, n: int, group_size: int) -> np.ndarray:
    counts = np.full(per_group.size, group_size, dtype=np.int64)
    counts[-1] = n - group_size * (per_group.size - 1)
    return np.repeat(per_group, counts)


def _roundfn(mode: str):
    return np.round if mode == "nearest-even" else np.ceil


def quantize(x, config: CodecConfig) -> QuantizedTensor:
    """Quantize a flat float tensor under `config`."""
    if config.is_passthrough:
        arr = _as_flat_f64(x)
        data = arr.astype(np.float16).tobytes()
        buf = PackedBuffer(data=data, bits_per_code=8, code_count=len(data))
        return QuantizedTensor(buf, np.empty(0, dtype=np.float32), None, arr.size, config)
    if config.is_minifloat:
        return quantize_fp(x, config.number_format, config.group_size,
                           scale_floor=config.scale_floor, _config=config)

    arr = _as_flat_f64(x)
    n = arr.size
    g = config.group_size
    bits = int(config.bits)
    rf = _roundfn(config.rounding)

    if config.symmetric:
        amax = _group_reduce(np.abs(arr), g, np.maximum)
        scales = _wire_scale(amax / (2 ** (bits - 1) - 1), config.scale_floor)
        se = _per_element(scales, n, g)
        lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
        c = np.clip(rf(arr / se), lo, hi).astype(np.int64)
        stored = (c & ((1 << bits) - 1)).astype(np.uint8)  # two's complement
        zeros = None
    else:
        mn = _group_reduce(arr, g, np.minimum)
        mx = _group_reduce(arr, g, np.maximum)
        scales = _wire_scale((mx - mn) / (2 ** bits - 1), config.scale_floor)
        z = np.clip(np.ceil(-mn / scales), 0, 2 ** bits - 1).astype(np.int64)
        se = _per_element(scales, n, g)
        ze = _per_element(z, n, g)
        c = np.clip(rf(arr / se) + ze, 0, 2 ** bits - 1).astype(np.int64)
        stored = c.astype(np.uint8)
        zeros = z.astype(np.uint8)

    buf = pack(stored, config.storage_bits)
    return QuantizedTensor(buf, scales.astype(np.float32), zeros, n, config)


def quantize_fp(x, number_format: str, group_size: int = 128, *,
                scale_floor: float = 1e-8, _config: Optional[CodecConfig] = None) -> QuantizedTensor:
    """Quantize to a group-scaled minifloat format (e4m3, e5m2, e2m1).

    Each group is scaled by absmax / format_max (floored at scale_floor) and
    the quotients are rounded to the format grid, saturating at the largest
    finite magnitude.
    """
    fmt = minifloat.get_format(number_format)
    config = _config or CodecConfig(number_format=fmt.name, group_size=group_size,
                                    scale_floor=scale_floor)
    arr = _as_flat_f64(x)
    n = arr.size
    amax = _group_reduce(np.abs(arr), config.group_size, np.maximum)
    scales = _wire_scale(amax / fmt.max_finite, config.scale_floor)
    se = _per_element(scales, n, config.group_size)
    grid_vals = minifloat.round_to_format(arr / se, fmt)
    stored = minifloat.encode(grid_vals, fmt)
    buf = pack(stored, config.storage_bits)
    return QuantizedTensor(buf, scales.astype(np.float32), None, n, config)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Invert quantize: returns a float32 vector of q.element_count elements."""
    config = q.config
    if config.is_passthrough:
        return np.frombuffer(q.codes.data, dtype=np.float16).astype(np.float32)

    scales = q.scales.astype(np.float64)
    if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
        raise IntegrityError("scales must be finite and positive")
    n = q.element_count
    se = _per_element(scales, n, config.group_size)
    codes = unpack(q.codes)

    if config.is_minifloat:
        fmt = minifloat.get_format(config.number_format)
        vals = minifloat.decode(codes, fmt).astype(np.float64)
        return (vals * se).astype(np.float32)

    bits = int(config.bits)
    if bits < config.storage_bits and codes.size and codes.max() >= (1 << bits):
        raise IntegrityError(f"code exceeds {bits}-bit range")
    c = codes.astype(np.int64)
    if config.symmetric:
        c = c - ((c >= (1 << (bits - 1))).astype(np.int64) << bits)  # two's complement
        return (c * se).astype(np.float32)
    if q.zeros is None:
        raise IntegrityError("asymmetric tensor is missing zero points")
    if np.any(q.zeros > (1 << bits) - 1):
        raise IntegrityError(f"zero point exceeds {bits}-bit range")
    ze = _per_element(q.zeros.astype(np.int64), n, config.group_size)
    return ((c - ze) * se).astype(np.float32)


def mse(a, b) -> float:
    """Mean squared elementwise difference."""
    av = _as_flat_f64(a)
    bv = _as_flat_f64(b)
    if av.size != bv.size:
        raise DomainError(f"length mismatch: {av.size} vs {bv.size}")
    return float(np.mean((av - bv) ** 2))


def codec_from_name(
    name: str,
    group_size: int = 128,
    rounding: str = "nearest-even",
    scale_floor: float = 1e-8,
) -> CodecConfig:
    """Build a config from a label like int4asym, int8sym, e4m3, or fp16.

    Bare intN means the asymmetric variant; fp16 ignores group_size.
    """
    key = name.strip().lower()
    if key in ("fp16", "passthrough"):
        return PASSTHROUGH_FP16
    if key in FLOAT_FORMATS:
        return CodecConfig(
            number_format=key, group_size=group_size,
            rounding=rounding, scale_floor=scale_floor,
        )
    m = re.fullmatch(r"int(\d+)(asym|sym)?", key)
    if m:
        return CodecConfig(
            bits=int(m.group(1)), group_size=group_size,
            symmetric=m.group(2) == "sym", rounding=rounding, scale_floor=scale_floor,
        )
    raise ConfigError(f"unknown codec name {name!r}")


def int6_flash_pair(group_size: int = 128, rounding: str = "nearest-even") -> tuple[CodecConfig, CodecConfig]:
    """The mixed 4/8-bit stage pair marketed as INT6: 4-bit codes feed the
    reduction, 8-bit codes feed the gather."""
    return (
        CodecConfig(bits=4, group_size=group_size, rounding=rounding),
        CodecConfig(bits=8, group_size=group_size, rounding=rounding),
    )
