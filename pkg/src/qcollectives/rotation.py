"""Fast Walsh-Hadamard transform for outlier-spreading rotation.

The transform is matrix-free: log2(dim) butterfly passes over each block.
With normalize=True it is orthonormal and therefore its own inverse. An
optional seeded sign diagonal turns the plain transform into a randomized
one; with signs enabled the forward map is H(D x) and the inverse D(H x),
so use hadamard_inverse rather than applying forward twice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class HadamardBlock:
    dimension: int
    normalize: bool = True
    sign_seed: Optional[int] = None

    def __post_init__(self) -> None:
        d = int(self.dimension)
        if d < 1 or (d & (d - 1)) != 0:
            raise ConfigError(f"dimension must be a power of two >= 1, got {self.dimension}")

    def signs(self) -> Optional[np.ndarray]:
        if self.sign_seed is None:
            return None
        rng = np.random.default_rng(self.sign_seed)
        return rng.choice(np.array([-1.0, 1.0]), size=self.dimension)


def _fwht_blocks(blocks: np.ndarray) -> np.ndarray:
    """In-place-style butterfly over the last axis (length power of two)."""
    rows, dim = blocks.shape
    y = blocks
    h = 1
    while h < dim:
        y = y.reshape(rows, dim // (2 * h), 2, h)
        top = y[:, :, 0, :] + y[:, :, 1, :]
        bot = y[:, :, 0, :] - y[:, :, 1, :]
        y = np.stack([top, bot], axis=2).reshape(rows, dim)
        h *= 2
    return y


def _prepare(x, block: HadamardBlock) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size % block.dimension != 0:
        raise DomainError(
            f"length {arr.size} is not divisible by block dimension {block.dimension}"
        )
    return arr.reshape(-1, block.dimension)


def hadamard_apply(x, block: HadamardBlock) -> np.ndarray:
    """Transform each consecutive block of `dimension` elements."""
    blocks = _prepare(x, block).copy()
    signs = block.signs()
    if signs is not None:
        blocks *= signs
    y = _fwht_blocks(blocks)
    if block.normalize:
        y = y / np.sqrt(block.dimension)
    return y.ravel().astype(np.float32)


def hadamard_inverse(x, block: HadamardBlock) -> np.ndarray:
    """Exact inverse of hadamard_apply for the same block."""
    blocks = _prepare(x, block).copy()
    y = _fwht_blocks(blocks)
    # H H = dim * I, so the unnormalized inverse divides by dim;
    # the normalized transform only needs the same 1/sqrt(dim) factor again
    y = y / np.sqrt(block.dimension) if block.normalize else y / block.dimension
    signs = block.signs()
    if signs is not None:
        y *= signs
    return y.ravel().astype(np.float32)
