"""Group-quantized collective communication: codecs, simulator, cost model."""

from .bitpack import PackedBuffer, magic_dequant_identity, pack, packed_byte_len, unpack
from .codec import (
    CodecConfig,
    PASSTHROUGH_FP16,
    QuantizedTensor,
    codec_from_name,
    dequantize,
    group_params_asym,
    group_params_sym,
    int6_flash_pair,
    mse,
    quantize,
    quantize_fp,
)
from .collectives import (
    CollectiveRun,
    FlashConfig,
    all2all,
    all_reduce_exact,
    flash_all_reduce,
    ring_all_reduce,
    run_collective,
)
from .costmodel import (
    BUILTIN_PROFILES,
    CostReport,
    analytic_cost,
    get_profile,
    latency,
    load_profiles,
)
from .errors import (
    ConfigError,
    DomainError,
    IntegrityError,
    ProtocolError,
    QCollectivesError,
)
from .fabric import FabricTopology, RankContext, TrafficLedger, run_ranks
from .minifloat import E2M1, E4M3, E5M2, MiniFloatFormat, round_to_format
from .rotation import HadamardBlock, hadamard_apply, hadamard_inverse
from .workload import (
    ActivationProfile,
    format_comparison,
    gen_activations,
    gen_rank_activations,
    rotation_experiment,
    rs_vs_ag_experiment,
    sweep_group_sizes,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationProfile",
    "BUILTIN_PROFILES",
    "CodecConfig",
    "CollectiveRun",
    "ConfigError",
    "CostReport",
    "DomainError",
    "E2M1",
    "E4M3",
    "E5M2",
    "FabricTopology",
    "FlashConfig",
    "HadamardBlock",
    "IntegrityError",
    "MiniFloatFormat",
    "PASSTHROUGH_FP16",
    "PackedBuffer",
    "ProtocolError",
    "QCollectivesError",
    "QuantizedTensor",
    "RankContext",
    "TrafficLedger",
    "all2all",
    "all_reduce_exact",
    "analytic_cost",
    "codec_from_name",
    "dequantize",
    "flash_all_reduce",
    "format_comparison",
    "gen_activations",
    "gen_rank_activations",
    "get_profile",
    "group_params_asym",
    "group_params_sym",
    "int6_flash_pair",
    "latency",
    "load_profiles",
    "magic_dequant_identity",
    "mse",
    "pack",
    "packed_byte_len",
    "quantize",
    "quantize_fp",
    "ring_all_reduce",
    "rotation_experiment",
    "round_to_format",
    "rs_vs_ag_experiment",
    "run_collective",
    "run_ranks",
    "sweep_group_sizes",
    "unpack",
]
