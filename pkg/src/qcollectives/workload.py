"""Synthetic activation tensors and the trend experiments built on them.

Transformer activations are roughly Gaussian per channel except for a small
set of outlier channels whose magnitude is tens of times larger; those
channels are what makes coarse-grained activation quantization hard. The
generator reproduces exactly that shape: i.i.d. Normal(0, base_std) scaled
up on a fixed seeded subset of hidden channels.

Outlier channels can be scattered uniformly over the hidden dimension (the
default, matching how they appear in real models) or packed into one
contiguous band. The banded variant concentrates the damage in a few
quantization groups and leaves the rest clean, which is the regime where a
Hadamard rotation stops paying off at fine granularity; the rotation
experiment is usually run with it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .codec import CodecConfig, PASSTHROUGH_FP16, codec_from_name, dequantize, mse, quantize
from .collectives import FlashConfig, all_reduce_exact, flash_all_reduce
from .errors import ConfigError
from .rotation import HadamardBlock, hadamard_apply, hadamard_inverse

PLACEMENTS = ("scattered", "banded")

DEFAULT_FORMATS = ("int8asym", "int8sym", "e4m3", "e5m2", "int4asym", "int4sym", "e2m1")


@dataclass(frozen=True)
class ActivationProfile:
    """Shape, outlier structure, and seed for one synthetic activation tensor."""

    hidden_dim: int = 4096
    tokens: int = 16
    base_std: float = 1.0
    outlier_channel_frac: float = 0.01
    outlier_scale: float = 30.0
    seed: int = 0
    placement: str = "scattered"

    def __post_init__(self) -> None:
        if self.hidden_dim < 1 or self.tokens < 1:
            raise ConfigError("hidden_dim and tokens must be >= 1")
        if not 0.0 <= self.outlier_channel_frac <= 1.0:
            raise ConfigError(
                f"outlier_channel_frac must be in [0, 1], got {self.outlier_channel_frac}"
            )
        if self.outlier_scale < 1.0:
            raise ConfigError(f"outlier_scale must be >= 1, got {self.outlier_scale}")
        if not (self.base_std > 0):
            raise ConfigError("base_std must be positive")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}")

    @property
    def element_count(self) -> int:
        return self.hidden_dim * self.tokens

    @property
    def outlier_count(self) -> int:
        return int(round(self.outlier_channel_frac * self.hidden_dim))

    def to_json_dict(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "tokens": self.tokens,
            "base_std": self.base_std,
            "outlier_channel_frac": self.outlier_channel_frac,
            "outlier_scale": self.outlier_scale,
            "seed": self.seed,
            "placement": self.placement,
        }

    @classmethod
    def from_json_dict(cls, raw: dict) -> "ActivationProfile":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown profile keys {sorted(unknown)}")
        return cls(**raw)


def outlier_channels(profile: ActivationProfile, rng: np.random.Generator) -> np.ndarray:
    k = profile.outlier_count
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if profile.placement == "banded":
        start = int(rng.integers(0, profile.hidden_dim - k + 1))
        return np.arange(start, start + k)
    return rng.choice(profile.hidden_dim, size=k, replace=False)


def gen_activations(
    profile: ActivationProfile,
    seed: Optional[Union[int, np.random.SeedSequence]] = None,
) -> np.ndarray:
    """Token-major (tokens, hidden_dim) float32 tensor, deterministic per seed."""
    rng = np.random.default_rng(profile.seed if seed is None else seed)
    channels = outlier_channels(profile, rng)
    x = rng.standard_normal((profile.tokens, profile.hidden_dim)) * profile.base_std
    if channels.size:
        x[:, channels] *= profile.outlier_scale
    return x.astype(np.float32)


def gen_rank_activations(profile: ActivationProfile, n_ranks: int) -> list[np.ndarray]:
    """Independent per-rank tensors spawned from the profile seed.

    Each rank draws its own outlier channels, mimicking sharded activations
    that do not share an outlier pattern.
    """
    if n_ranks < 1:
        raise ConfigError("n_ranks must be >= 1")
    children = np.random.SeedSequence(profile.seed).spawn(n_ranks)
    return [gen_activations(profile, seed=child) for child in children]


def _resolve_codec(
    bits_or_name: Union[int, str], group_size: int, symmetric: bool, rounding: str
) -> CodecConfig:
    if isinstance(bits_or_name, str):
        return codec_from_name(bits_or_name, group_size=group_size, rounding=rounding)
    if bits_or_name == 16:
        return PASSTHROUGH_FP16
    return CodecConfig(
        bits=int(bits_or_name), group_size=group_size,
        symmetric=symmetric, rounding=rounding,
    )


def roundtrip_mse(x: np.ndarray, codec: CodecConfig) -> float:
    q = quantize(np.asarray(x, dtype=np.float32).ravel(), codec)
    return mse(dequantize(q), x)


def sweep_group_sizes(
    profile: ActivationProfile,
    bits: Union[int, str],
    group_sizes: Sequence[int],
    symmetric: bool = False,
    rounding: str = "nearest-even",
) -> list[tuple[int, float]]:
    """Round-trip MSE per group size, coarsest first."""
    for g in group_sizes:
        if profile.hidden_dim % g != 0:
            raise ConfigError(f"group size {g} does not divide hidden_dim {profile.hidden_dim}")
    x = gen_activations(profile)
    rows = []
    for g in sorted(group_sizes, reverse=True):
        if bits == 16:
            rows.append((g, 0.0))
            continue
        codec = _resolve_codec(bits, g, symmetric, rounding)
        rows.append((g, roundtrip_mse(x, codec)))
    return rows


def format_comparison(
    profile: ActivationProfile,
    formats: Sequence[str] = DEFAULT_FORMATS,
    group_size: int = 128,
) -> list[tuple[str, float]]:
    """Round-trip MSE per codec name at a fixed granularity."""
    x = gen_activations(profile)
    return [
        (name, roundtrip_mse(x, codec_from_name(name, group_size=group_size)))
        for name in formats
    ]


def rs_vs_ag_experiment(
    profile: ActivationProfile,
    n_ranks: int,
    bits: Union[int, str] = 4,
    group_size: int = 128,
) -> tuple[float, float]:
    """MSE vs exact for flash with stage 2 lossless, then fully quantized.

    Separates the error contributed by the pre-reduction encode from the
    extra error added when the reduced tensor is re-encoded for the gather.
    """
    if n_ranks < 2:
        raise ConfigError("need n_ranks >= 2")
    tensors = gen_rank_activations(profile, n_ranks)
    exact = all_reduce_exact(tensors).outputs[0]
    stage1 = _resolve_codec(bits, group_size, False, "nearest-even")
    half = flash_all_reduce(
        tensors, FlashConfig(stage1_codec=stage1, stage2_codec=PASSTHROUGH_FP16)
    )
    if bits == 6 or bits == "int6":
        full_cfg = FlashConfig.int6(group_size=group_size)
    else:
        full_cfg = FlashConfig.uniform(stage1)
    full = flash_all_reduce(tensors, full_cfg)
    return mse(half.outputs[0], exact), mse(full.outputs[0], exact)


def rotation_experiment(
    profile: ActivationProfile,
    bits: Union[int, str],
    group_sizes: Sequence[int],
    sign_seed: Optional[int] = None,
) -> list[tuple[int, float, float]]:
    """(group_size, plain MSE, rotated MSE) rows, coarsest first.

    The rotation is a normalized Hadamard block spanning one token's hidden
    vector, applied before quantization and inverted after decode.
    """
    if profile.hidden_dim & (profile.hidden_dim - 1):
        raise ConfigError("rotation experiment needs a power-of-two hidden_dim")
    x = gen_activations(profile)
    flat = x.ravel()
    block = HadamardBlock(dimension=profile.hidden_dim, sign_seed=sign_seed)
    rotated = hadamard_apply(flat, block)
    rows = []
    for g in sorted(group_sizes, reverse=True):
        codec = _resolve_codec(bits, g, False, "nearest-even")
        plain = roundtrip_mse(flat, codec)
        dq = dequantize(quantize(rotated, codec))
        back = hadamard_inverse(dq, block)
        rows.append((g, plain, mse(back, flat)))
    return rows
