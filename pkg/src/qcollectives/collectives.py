"""Collective algorithms over the simulated fabric.

Three all-reduce variants share one accounting scheme:

- `all_reduce_exact`: two-step exchange of raw float32, the accuracy
  reference. Accumulation is sequential in ascending rank order so results
  are bitwise reproducible.
- `ring_all_reduce`: classic ring with N-1 reduce-scatter hops and N-1
  all-gather hops. With a quantizing codec every reduce hop re-encodes the
  partial sum, so each element passes through N quantize/dequantize rounds.
- `flash_all_reduce`: two-step quantized variant. Each element is encoded
  once before the exchange and once after the reduction, independent of N.

The tensor is padded to N equal rank segments. Chunking slices the same
piece out of every rank segment, and quantization groups are anchored to
segment offsets, so any valid chunk size produces bitwise-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .codec import CodecConfig, PASSTHROUGH_FP16, QuantizedTensor, dequantize, int6_flash_pair, quantize
from .errors import ConfigError, DomainError, ProtocolError
from .fabric import FabricTopology, RankContext, TrafficLedger, run_ranks
from .rotation import HadamardBlock, hadamard_apply, hadamard_inverse

DEFAULT_CHUNK_ELEMS = 64 * 1024

METHODS = ("exact", "ring", "flash")


@dataclass(frozen=True)
class FlashConfig:
    """Codecs and blocking for the two-step quantized all-reduce.

    stage1_codec compresses the segments exchanged before the reduction;
    stage2_codec compresses the reduced segment that is gathered back.
    chunk_size is in elements; None picks a size near DEFAULT_CHUNK_ELEMS
    that keeps quantization groups intact for any world size.
    """

    stage1_codec: CodecConfig
    stage2_codec: CodecConfig
    chunk_size: Optional[int] = None
    rotation: Optional[HadamardBlock] = None

    def __post_init__(self) -> None:
        if self.chunk_size is not None and self.chunk_size < 1:
            raise ConfigError(f"chunk_size must be positive, got {self.chunk_size}")

    @property
    def group_multiple(self) -> int:
        """LCM of the quantizing stages' group sizes (1 if both passthrough)."""
        mult = 1
        for codec in (self.stage1_codec, self.stage2_codec):
            if not codec.is_passthrough:
                mult = math.lcm(mult, codec.group_size)
        return mult

    def resolve_chunk_size(self, world_size: int) -> int:
        """Concrete chunk size for a given world: a multiple of N * group LCM."""
        unit = world_size * self.group_multiple
        if self.chunk_size is None:
            return max(1, math.ceil(DEFAULT_CHUNK_ELEMS / unit)) * unit
        if self.chunk_size % unit != 0:
            raise ConfigError(
                f"chunk_size {self.chunk_size} must be a multiple of "
                f"world_size*group lcm = {unit}"
            )
        return self.chunk_size

    def to_json_dict(self) -> dict:
        out = {
            "stage1": self.stage1_codec.to_json_dict(),
            "stage2": self.stage2_codec.to_json_dict(),
            "chunk_size": self.chunk_size,
        }
        if self.rotation is not None:
            out["rotation"] = {
                "dimension": self.rotation.dimension,
                "sign_seed": self.rotation.sign_seed,
            }
        return out

    @classmethod
    def uniform(cls, codec: CodecConfig, **kw) -> "FlashConfig":
        return cls(stage1_codec=codec, stage2_codec=codec, **kw)

    @classmethod
    def int6(cls, group_size: int = 128, rounding: str = "nearest-even", **kw) -> "FlashConfig":
        """Mixed-width preset: 4-bit exchange stage, 8-bit gather stage."""
        stage1, stage2 = int6_flash_pair(group_size=group_size, rounding=rounding)
        return cls(stage1_codec=stage1, stage2_codec=stage2, **kw)

    @classmethod
    def from_bits(cls, bits: int, group_size: int = 128, **kw) -> "FlashConfig":
        """Effective-bit-width shorthand used by the CLI: 16, 8, 6, or 4."""
        if bits == 16:
            return cls.uniform(PASSTHROUGH_FP16, **kw)
        if bits == 6:
            return cls.int6(group_size=group_size, **kw)
        if bits in (4, 8):
            return cls.uniform(CodecConfig(bits=bits, group_size=group_size), **kw)
        raise ConfigError(f"no preset for {bits} effective bits")


@dataclass
class CollectiveRun:
    """Outputs plus the counters every experiment and report reads."""

    method: str
    outputs: list[np.ndarray]
    ledger: TrafficLedger
    reduce_steps: int
    gather_steps: int
    qdq_passes: int
    reduce_elems_per_rank: int
    gather_elems_per_rank: int

    @property
    def wire_bytes_per_rank(self) -> int:
        return self.ledger.rank_bytes_sent(0)


def _as_rank_tensors(tensors: Sequence[np.ndarray]) -> tuple[list[np.ndarray], tuple, int]:
    if len(tensors) == 0:
        raise ProtocolError("need at least one rank tensor")
    flats = [np.asarray(t, dtype=np.float32).ravel() for t in tensors]
    length = flats[0].size
    for r, f in enumerate(flats):
        if f.size != length:
            raise ProtocolError(
                f"rank {r} tensor length {f.size} != rank 0 length {length}"
            )
    if length == 0:
        raise DomainError("rank tensors must be nonempty")
    return flats, np.asarray(tensors[0]).shape, length


def _pad_to_segments(flat: np.ndarray, world_size: int) -> np.ndarray:
    seg = math.ceil(flat.size / world_size)
    padded = np.zeros(world_size * seg, dtype=np.float32)
    padded[: flat.size] = flat
    return padded


def _piece_layout(seg: int, piece: int) -> Iterator[tuple[int, int]]:
    """(offset, length) pieces tiling one rank segment, in order."""
    off = 0
    while off < seg:
        yield off, min(piece, seg - off)
        off += piece


def _identity_run(method: str, tensors: Sequence[np.ndarray]) -> CollectiveRun:
    outputs = [np.array(t, dtype=np.float32, copy=True) for t in tensors]
    return CollectiveRun(
        method=method,
        outputs=outputs,
        ledger=TrafficLedger.zeros(len(tensors)),
        reduce_steps=0,
        gather_steps=0,
        qdq_passes=0,
        reduce_elems_per_rank=0,
        gather_elems_per_rank=0,
    )


def _restore(flat_out: np.ndarray, length: int, shape: tuple) -> np.ndarray:
    return flat_out[:length].reshape(shape)


# ---------------------------------------------------------------------------
# exact reference


def sequential_sum(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Float32 sum accumulated strictly in list order (rank 0 first)."""
    acc = np.array(parts[0], dtype=np.float32, copy=True)
    for part in parts[1:]:
        acc += np.asarray(part, dtype=np.float32)
    return acc


def all_reduce_exact(
    tensors: Sequence[np.ndarray],
    topology: Optional[FabricTopology] = None,
    timeout: float = 5.0,
) -> CollectiveRun:
    """Two-step all-reduce moving raw float32; the accuracy yardstick."""
    flats, shape, length = _as_rank_tensors(tensors)
    n = len(flats)
    if n == 1:
        return _identity_run("exact", tensors)
    topo = topology or FabricTopology(world_size=n)
    if topo.world_size != n:
        raise ConfigError(f"topology world_size {topo.world_size} != {n} rank tensors")
    padded = [_pad_to_segments(f, n) for f in flats]
    seg = padded[0].size // n

    def program(ctx: RankContext) -> np.ndarray:
        r = ctx.rank
        mine = padded[r]
        for j in range(n):
            if j != r:
                ctx.send(j, mine[j * seg : (j + 1) * seg].tobytes())
        parts: list[np.ndarray] = []
        for j in range(n):
            if j == r:
                parts.append(mine[r * seg : (r + 1) * seg])
            else:
                parts.append(np.frombuffer(ctx.recv(j), dtype=np.float32))
        reduced = sequential_sum(parts)
        blob = reduced.tobytes()
        out = np.empty(n * seg, dtype=np.float32)
        out[r * seg : (r + 1) * seg] = np.frombuffer(blob, dtype=np.float32)
        for j in range(n):
            if j != r:
                ctx.send(j, blob)
        for j in range(n):
            if j != r:
                out[j * seg : (j + 1) * seg] = np.frombuffer(ctx.recv(j), dtype=np.float32)
        return out

    outputs, ledger = run_ranks(topo, program, timeout=timeout)
    ledger.steps = 2
    return CollectiveRun(
        method="exact",
        outputs=[_restore(o, length, shape) for o in outputs],
        ledger=ledger,
        reduce_steps=1,
        gather_steps=1,
        qdq_passes=0,
        reduce_elems_per_rank=(n - 1) * seg,
        gather_elems_per_rank=(n - 1) * seg,
    )


# ---------------------------------------------------------------------------
# ring


def ring_all_reduce(
    tensors: Sequence[np.ndarray],
    codec: CodecConfig = PASSTHROUGH_FP16,
    topology: Optional[FabricTopology] = None,
    timeout: float = 5.0,
) -> CollectiveRun:
    """Ring all-reduce with per-hop encode/decode of every transmitted shard.

    Reduce-scatter re-encodes the running partial sum at each of the N-1
    hops. The gather phase encodes the finished shard once and forwards the
    identical payload around the ring, and the shard owner decodes that same
    payload for its own output, so all ranks finish bitwise identical.
    """
    flats, shape, length = _as_rank_tensors(tensors)
    n = len(flats)
    if n == 1:
        return _identity_run("ring", tensors)
    if length < n:
        raise DomainError(f"tensor length {length} shorter than world size {n}")
    topo = topology or FabricTopology(world_size=n)
    if topo.world_size != n:
        raise ConfigError(f"topology world_size {topo.world_size} != {n} rank tensors")
    padded = [_pad_to_segments(f, n) for f in flats]
    shard = padded[0].size // n

    def program(ctx: RankContext) -> np.ndarray:
        r = ctx.rank
        right = (r + 1) % n
        left = (r - 1) % n
        acc = padded[r].copy()

        def shard_view(idx: int) -> np.ndarray:
            return acc[idx * shard : (idx + 1) * shard]

        for s in range(n - 1):
            out_idx = (r - s) % n
            qt = quantize(shard_view(out_idx), codec)
            ctx.send(right, qt.to_bytes())
            in_idx = (r - s - 1) % n
            incoming = QuantizedTensor.from_bytes(ctx.recv(left), shard, codec)
            shard_view(in_idx)[:] += dequantize(incoming)

        owned = (r + 1) % n
        qt = quantize(shard_view(owned), codec)
        payload = qt.to_bytes()
        out = np.empty(n * shard, dtype=np.float32)
        out[owned * shard : (owned + 1) * shard] = dequantize(qt)
        for s in range(n - 1):
            ctx.send(right, payload)
            payload = ctx.recv(left)
            idx = (r - s) % n
            incoming = QuantizedTensor.from_bytes(payload, shard, codec)
            out[idx * shard : (idx + 1) * shard] = dequantize(incoming)
        return out

    outputs, ledger = run_ranks(topo, program, timeout=timeout)
    ledger.steps = 2 * (n - 1)
    return CollectiveRun(
        method="ring",
        outputs=[_restore(o, length, shape) for o in outputs],
        ledger=ledger,
        reduce_steps=n - 1,
        gather_steps=n - 1,
        qdq_passes=0 if codec.is_passthrough else n,
        reduce_elems_per_rank=(n - 1) * shard,
        gather_elems_per_rank=(n - 1) * shard,
    )


# ---------------------------------------------------------------------------
# flash


def flash_all_reduce(
    tensors: Sequence[np.ndarray],
    cfg: FlashConfig,
    topology: Optional[FabricTopology] = None,
    timeout: float = 5.0,
) -> CollectiveRun:
    """Two-step quantized all-reduce.

    Per chunk, every rank encodes one piece of all N rank segments with the
    stage-1 codec and sends piece j to rank j directly (its own piece skips
    the wire but still round-trips through the codec). Each rank decodes the
    N contributions, accumulates them in ascending rank order, re-encodes
    the result with the stage-2 codec, and sends that payload to every peer.
    All ranks, the producer included, decode the same stage-2 payload, so
    outputs agree bitwise across ranks and each element sees exactly one
    encode/decode per quantizing stage regardless of world size.
    """
    flats, shape, length = _as_rank_tensors(tensors)
    n = len(flats)
    if n == 1:
        return _identity_run("flash", tensors)
    topo = topology or FabricTopology(world_size=n)
    if topo.world_size != n:
        raise ConfigError(f"topology world_size {topo.world_size} != {n} rank tensors")
    chunk = cfg.resolve_chunk_size(n)
    piece = chunk // n
    stage1, stage2 = cfg.stage1_codec, cfg.stage2_codec

    padded = [_pad_to_segments(f, n) for f in flats]
    if cfg.rotation is not None:
        padded = [hadamard_apply(p, cfg.rotation) for p in padded]
    seg = padded[0].size // n
    pieces = list(_piece_layout(seg, piece))

    def program(ctx: RankContext) -> np.ndarray:
        r = ctx.rank
        mine = padded[r]
        out = np.empty(n * seg, dtype=np.float32)
        for off, plen in pieces:
            own_contrib: Optional[np.ndarray] = None
            for j in range(n):
                start = j * seg + off
                qt = quantize(mine[start : start + plen], stage1)
                if j == r:
                    own_contrib = dequantize(qt)
                else:
                    ctx.send(j, qt.to_bytes())
            parts: list[np.ndarray] = []
            for j in range(n):
                if j == r:
                    parts.append(own_contrib)
                else:
                    incoming = QuantizedTensor.from_bytes(ctx.recv(j), plen, stage1)
                    parts.append(dequantize(incoming))
            reduced = sequential_sum(parts)
            qt2 = quantize(reduced, stage2)
            payload = qt2.to_bytes()
            out[r * seg + off : r * seg + off + plen] = dequantize(qt2)
            for j in range(n):
                if j != r:
                    ctx.send(j, payload)
            for j in range(n):
                if j != r:
                    incoming = QuantizedTensor.from_bytes(ctx.recv(j), plen, stage2)
                    out[j * seg + off : j * seg + off + plen] = dequantize(incoming)
        return out

    outputs, ledger = run_ranks(topo, program, timeout=timeout)
    ledger.steps = 2
    if cfg.rotation is not None:
        outputs = [hadamard_inverse(o, cfg.rotation) for o in outputs]
    qdq = int(not stage1.is_passthrough) + int(not stage2.is_passthrough)
    return CollectiveRun(
        method="flash",
        outputs=[_restore(o, length, shape) for o in outputs],
        ledger=ledger,
        reduce_steps=1,
        gather_steps=1,
        qdq_passes=qdq,
        reduce_elems_per_rank=(n - 1) * seg,
        gather_elems_per_rank=(n - 1) * seg,
    )


# ---------------------------------------------------------------------------
# generic data movement


def all2all(
    segments: Sequence[Sequence[np.ndarray]],
    timeout: float = 5.0,
) -> list[list[np.ndarray]]:
    """Segment transpose: output[r][j] = input[j][r]. Self-segment stays local."""
    n = len(segments)
    if n == 0:
        raise ProtocolError("need at least one rank")
    per_rank = []
    for r, segs in enumerate(segments):
        if len(segs) != n:
            raise ProtocolError(f"rank {r} holds {len(segs)} segments, expected {n}")
        arrs = [np.asarray(s, dtype=np.float32).ravel() for s in segs]
        if len({a.size for a in arrs}) > 1:
            raise DomainError(f"rank {r} segments are not equal length")
        per_rank.append(arrs)
    if n == 1:
        return [[per_rank[0][0].copy()]]

    def program(ctx: RankContext) -> list[np.ndarray]:
        r = ctx.rank
        for j in range(n):
            if j != r:
                ctx.send(j, per_rank[r][j].tobytes())
        out: list[np.ndarray] = []
        for j in range(n):
            if j == r:
                out.append(per_rank[r][r].copy())
            else:
                out.append(np.frombuffer(ctx.recv(j), dtype=np.float32).copy())
        return out

    outputs, _ = run_ranks(FabricTopology(world_size=n), program, timeout=timeout)
    return outputs


def run_collective(
    method: str,
    tensors: Sequence[np.ndarray],
    *,
    codec: Optional[CodecConfig] = None,
    flash: Optional[FlashConfig] = None,
    topology: Optional[FabricTopology] = None,
    timeout: float = 5.0,
) -> CollectiveRun:
    """Dispatch by method name; the CLI and experiments funnel through here."""
    if method == "exact":
        return all_reduce_exact(tensors, topology=topology, timeout=timeout)
    if method == "ring":
        return ring_all_reduce(
            tensors, codec=codec or PASSTHROUGH_FP16, topology=topology, timeout=timeout
        )
    if method == "flash":
        if flash is None:
            raise ConfigError("flash method needs a FlashConfig")
        return flash_all_reduce(tensors, flash, topology=topology, timeout=timeout)
    raise ConfigError(f"unknown method {method!r}, expected one of {METHODS}")
