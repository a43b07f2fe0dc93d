"""Software emulation of narrow floating-point formats (E4M3, E5M2, E2M1).

Each format is sign / exponent / mantissa with IEEE-style subnormals.
Conversion rounds to nearest with ties to the even mantissa and saturates at
the largest finite magnitude, so no infinity or NaN pattern is ever emitted.
E4M3 reserves its all-ones exponent + mantissa pattern for NaN and E5M2
reserves its all-ones exponent for infinities/NaNs, which is why their
maximum finite values are 448 and 57344 respectively. E2M1 has no reserved
patterns; its magnitudes are {0, 0.5, 1, 1.5, 2, 3, 4, 6}.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class MiniFloatFormat:
    name: str
    exp_bits: int
    mantissa_bits: int
    bias: int
    max_finite: float

    @property
    def code_bits(self) -> int:
        return 1 + self.exp_bits + self.mantissa_bits

    @property
    def min_normal(self) -> float:
        return 2.0 ** (1 - self.bias)

    @property
    def sub_quantum(self) -> float:
        # spacing of the subnormal range, also the smallest positive value
        return 2.0 ** (1 - self.bias - self.mantissa_bits)


E4M3 = MiniFloatFormat("e4m3", exp_bits=4, mantissa_bits=3, bias=7, max_finite=448.0)
E5M2 = MiniFloatFormat("e5m2", exp_bits=5, mantissa_bits=2, bias=15, max_finite=57344.0)
E2M1 = MiniFloatFormat("e2m1", exp_bits=2, mantissa_bits=1, bias=1, max_finite=6.0)

FORMATS = {f.name: f for f in (E4M3, E5M2, E2M1)}


def get_format(name: str) -> MiniFloatFormat:
    try:
        return FORMATS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown minifloat format {name!r}") from None


def round_to_format(x: np.ndarray, fmt: MiniFloatFormat) -> np.ndarray:
    """Round values to the nearest representable magnitude of `fmt`.

    Returns float64 values lying exactly on the format grid. Arithmetic runs
    in float64 where scaling by powers of two is exact, so the result is the
    true round-to-nearest-even with saturation at max_finite.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("minifloat rounding requires finite inputs")
    a = np.abs(x)
    _, e2 = np.frexp(a)
    # a = m * 2**e with m in [1, 2); frexp returns m in [0.5, 1)
    e = e2 - 1
    quantum = np.where(a < fmt.min_normal, fmt.sub_quantum, np.exp2(e - fmt.mantissa_bits))
    r = np.round(a / quantum) * quantum
    r = np.minimum(r, fmt.max_finite)
    return np.where(x < 0, -r, r)


def encode(values: np.ndarray, fmt: MiniFloatFormat) -> np.ndarray:
    """Map grid values (output of round_to_format) to their uint8 bit patterns."""
    v = np.asarray(values, dtype=np.float64)
    sign = (v < 0).astype(np.uint8)
    a = np.abs(v)
    is_sub = a < fmt.min_normal
    _, e2 = np.frexp(a)
    e = e2 - 1
    exp_code = np.where(is_sub, 0, e + fmt.bias).astype(np.int64)
    mant = np.where(
        is_sub,
        a / fmt.sub_quantum,
        (a * np.exp2(-e) - 1.0) * (1 << fmt.mantissa_bits),
    )
    mant_code = np.round(mant).astype(np.int64)
    if np.any(mant != mant_code) or np.any(exp_code >= (1 << fmt.exp_bits)) or np.any(exp_code < 0):
        raise DomainError(f"values are not on the {fmt.name} grid")
    code = (
        (sign.astype(np.int64) << (fmt.exp_bits + fmt.mantissa_bits))
        | (exp_code << fmt.mantissa_bits)
        | mant_code
    )
    return code.astype(np.uint8)


@lru_cache(maxsize=None)
def value_table(fmt_name: str) -> np.ndarray:
    """float32 value of every code pattern, indexed by code."""
    fmt = FORMATS[fmt_name]
    n = 1 << fmt.code_bits
    out = np.empty(n, dtype=np.float32)
    for code in range(n):
        sign = -1.0 if code >> (fmt.exp_bits + fmt.mantissa_bits) else 1.0
        exp_code = (code >> fmt.mantissa_bits) & ((1 << fmt.exp_bits) - 1)
        mant_code = code & ((1 << fmt.mantissa_bits) - 1)
        if exp_code == 0:
            mag = mant_code * fmt.sub_quantum
        else:
            mag = (1 + mant_code / (1 << fmt.mantissa_bits)) * 2.0 ** (exp_code - fmt.bias)
        out[code] = np.float32(sign * mag)
    return out


def decode(codes: np.ndarray, fmt: MiniFloatFormat) -> np.ndarray:
    """Map uint8 bit patterns back to float32 values."""
    codes = np.asarray(codes, dtype=np.uint8)
    return value_table(fmt.name)[codes]
