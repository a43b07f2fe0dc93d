"""Command-line front end.

Four subcommands: `quantize` round-trips a tensor through one codec and
reports the damage; `simulate` runs a collective on the simulated fabric and
cross-checks the measured ledger against the analytic cost model; `cost`
prints the model's predictions across bit-widths; `sweep` runs the workload
experiments named in a JSON manifest.

Every run writes CSV results, a JSON mirror of each CSV, and a
run_manifest.json echoing the resolved configuration. Nothing in the
outputs depends on wall-clock time, so re-running a command reproduces
byte-identical files. Exit code 0 means every internal consistency check
passed; configuration and protocol errors exit 1 with a message on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .codec import (
    CodecConfig,
    PASSTHROUGH_FP16,
    codec_from_name,
    dequantize,
    mse,
    quantize,
)
from .collectives import FlashConfig, run_collective
from .costmodel import (
    BUILTIN_PROFILES,
    CostReport,
    analytic_cost,
    get_profile,
    load_profiles,
    reports_to_csv,
)
from .errors import ConfigError, QCollectivesError
from .rotation import HadamardBlock
from .workload import (
    DEFAULT_FORMATS,
    ActivationProfile,
    format_comparison,
    gen_activations,
    rotation_experiment,
    rs_vs_ag_experiment,
    sweep_group_sizes,
)

SWEEP_EXPERIMENTS = ("group-size", "int-vs-fp", "rs-vs-ag", "rotation")


# ---------------------------------------------------------------------------
# output plumbing


def _csv_text(header: list[str], rows: list[list]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return out.getvalue()


def _write(outdir: Path, name: str, text: str) -> str:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / name).write_text(text, encoding="utf-8")
    return name


def _write_json(outdir: Path, name: str, obj) -> str:
    return _write(outdir, name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(outdir: Path, subcommand: str, flags: dict, outputs: list[str]) -> None:
    _write_json(
        outdir,
        "run_manifest.json",
        {"subcommand": subcommand, "flags": flags, "outputs": sorted(outputs)},
    )


def _flags_dict(args: argparse.Namespace) -> dict:
    # the output directory is a destination, not configuration; keeping it out
    # of the echo makes identical configs emit identical bytes anywhere
    skip = {"func", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# shared flag groups


def _add_profile_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=int, default=4096, help="hidden dimension (channels)")
    p.add_argument("--tokens", type=int, default=16, help="token rows")
    p.add_argument("--outlier-frac", type=float, default=0.01)
    p.add_argument("--outlier-scale", type=float, default=30.0)
    p.add_argument("--std", type=float, default=1.0, help="base channel std")
    p.add_argument(
        "--placement", choices=("scattered", "banded"), default="scattered",
        help="outlier channel layout",
    )
    p.add_argument("--seed", type=int, default=0)


def _profile_from_args(args: argparse.Namespace) -> ActivationProfile:
    return ActivationProfile(
        hidden_dim=args.hidden,
        tokens=args.tokens,
        base_std=args.std,
        outlier_channel_frac=args.outlier_frac,
        outlier_scale=args.outlier_scale,
        seed=args.seed,
        placement=args.placement,
    )


def _codec_from_bits(bits: int, group: int, symmetric: bool, rounding: str) -> CodecConfig:
    if bits == 16:
        return PASSTHROUGH_FP16
    return CodecConfig(bits=bits, group_size=group, symmetric=symmetric, rounding=rounding)


# ---------------------------------------------------------------------------
# quantize


def cmd_quantize(args: argparse.Namespace) -> int:
    if args.format is not None:
        codec = codec_from_name(args.format, group_size=args.group, rounding=args.rounding)
    else:
        codec = _codec_from_bits(args.bits, args.group, args.symmetric, args.rounding)
    if args.input is not None:
        x = np.load(args.input).ravel()
    else:
        x = gen_activations(_profile_from_args(args)).ravel()
    # the baseline payload is half precision, so measure against fp16 data
    x = x.astype(np.float16).astype(np.float32)

    q = quantize(x, codec)
    back = dequantize(q)
    err = np.abs(back.astype(np.float64) - x.astype(np.float64))
    fp16_bytes = 2 * x.size
    report = {
        "codec": codec.label,
        "group_size": codec.group_size,
        "elements": int(x.size),
        "wire_bytes": int(q.wire_bytes),
        "fp16_bytes": int(fp16_bytes),
        "compression_ratio": q.wire_bytes / fp16_bytes,
        "mse": mse(back, x),
        "max_abs_error": float(err.max()),
    }
    outdir = Path(args.out)
    header = list(report.keys())
    outputs = [
        _write(outdir, "quantize_report.csv", _csv_text(header, [[report[k] for k in header]])),
        _write_json(outdir, "quantize_report.json", report),
    ]
    _write_manifest(outdir, "quantize", _flags_dict(args), outputs)
    print(
        f"{report['codec']}: ratio {report['compression_ratio']:.6g}, "
        f"mse {report['mse']:.6g}, max err {report['max_abs_error']:.6g}"
    )
    return 0


# ---------------------------------------------------------------------------
# simulate


def _flash_config(args: argparse.Namespace) -> FlashConfig:
    stage1 = _codec_from_bits(args.bits1, args.group, False, "nearest-even")
    stage2 = _codec_from_bits(args.bits2, args.group, False, "nearest-even")
    rotation = None
    if args.rotation:
        rotation = HadamardBlock(dimension=args.rotation)
    chunk = args.chunk if args.chunk else None
    return FlashConfig(
        stage1_codec=stage1, stage2_codec=stage2, chunk_size=chunk, rotation=rotation
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    n, m = args.ranks, args.elems
    if n < 1 or m < 1:
        raise ConfigError("--ranks and --elems must be >= 1")
    children = np.random.SeedSequence(args.seed).spawn(max(n, 1))
    tensors = [
        np.random.default_rng(child).integers(-15, 16, size=m).astype(np.float32)
        for child in children
    ]
    topo = get_profile(args.profile, n)

    codec = None
    flash = None
    if args.method == "ring":
        codec = _codec_from_bits(args.bits1, args.group, False, "nearest-even")
    elif args.method == "flash":
        flash = _flash_config(args)
    run = run_collective(args.method, tensors, codec=codec, flash=flash, topology=topo)
    report = analytic_cost(args.method, m, n, codec=codec, flash=flash, topology=topo)

    measured = {
        "wire_bytes_per_rank": run.wire_bytes_per_rank,
        "reduce_steps": run.reduce_steps,
        "gather_steps": run.gather_steps,
        "qdq_passes": run.qdq_passes,
    }
    analytic = {
        "wire_bytes_per_rank": report.wire_bytes_per_rank,
        "reduce_steps": report.reduce_steps,
        "gather_steps": report.gather_steps,
        "qdq_passes": report.qdq_passes,
    }
    diff = {k: measured[k] - analytic[k] for k in measured}
    per_rank = [run.ledger.rank_bytes_sent(r) for r in range(n)]
    outputs_consistent = all(
        np.array_equal(run.outputs[0], o) for o in run.outputs[1:]
    )
    ok = all(v == 0 for v in diff.values()) and outputs_consistent and len(set(per_rank)) == 1

    out0 = run.outputs[0]
    digest = hashlib.sha256(out0.tobytes()).hexdigest()
    outdir = Path(args.out)
    rows = [[k, measured[k], analytic[k], diff[k]] for k in measured]
    outputs = [
        _write(outdir, "simulate_report.csv",
               _csv_text(["metric", "measured", "analytic", "diff"], rows)),
        _write_json(outdir, "simulate_report.json", {
            "method": args.method,
            "ranks": n,
            "elements": m,
            "codec": report.codec,
            "measured": measured,
            "analytic": analytic,
            "diff": diff,
            "outputs_consistent": outputs_consistent,
            "output_sha256": digest,
            "predicted_seconds": report.predicted_seconds,
            "speedup_vs_baseline": report.speedup_vs_baseline,
        }),
        _write(outdir, "ledger.csv", run.ledger.to_csv()),
        _write_json(outdir, "ledger.json", run.ledger.to_json_dict()),
    ]
    np.save(outdir / "result.npy", out0)
    outputs.append("result.npy")
    _write_manifest(outdir, "simulate", _flags_dict(args), outputs)

    status = "OK" if ok else "MISMATCH"
    print(
        f"{args.method} N={n} M={m} [{report.codec}]: steps "
        f"{run.reduce_steps}/{run.gather_steps}, qdq {run.qdq_passes}, "
        f"{run.wire_bytes_per_rank} bytes/rank, ledger-vs-analytic {status}"
    )
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# cost


def cmd_cost(args: argparse.Namespace) -> int:
    if args.profile_file:
        load_profiles(args.profile_file)
    n = args.ranks
    if args.elems is not None:
        m = args.elems
    else:
        m = int(args.volume_mib * (1 << 20) / 2)  # fp16 tensor footprint
    if m < 1:
        raise ConfigError("tensor must hold at least one element")
    topo = get_profile(args.profile, n)
    bits_list = [int(b) for b in args.bits.split(",")]
    methods = ("ring", "flash") if args.method == "both" else (args.method,)
    reports: list[CostReport] = []
    for method in methods:
        for bits in bits_list:
            if method == "flash":
                reports.append(analytic_cost(
                    "flash", m, n,
                    flash=FlashConfig.from_bits(bits, group_size=args.group),
                    topology=topo,
                ))
            else:
                reports.append(analytic_cost(
                    "ring", m, n,
                    codec=_codec_from_bits(bits, args.group, False, "nearest-even"),
                    topology=topo,
                ))
    outdir = Path(args.out)
    outputs = [
        _write(outdir, "cost_table.csv", reports_to_csv(reports)),
        _write_json(outdir, "cost_table.json", [r.to_json_dict() for r in reports]),
    ]
    _write_manifest(outdir, "cost", _flags_dict(args), outputs)
    for r in reports:
        print(
            f"{r.method:5s} {r.codec:16s} {r.predicted_seconds * 1e3:9.4f} ms  "
            f"speedup {r.speedup_vs_baseline:.3f}"
        )
    return 0


# ---------------------------------------------------------------------------
# sweep


def _manifest_line(raw_text: str, token: str) -> int:
    for i, line in enumerate(raw_text.splitlines(), start=1):
        if token in line:
            return i
    return 1


def _manifest_error(path: str, raw_text: str, token: str, message: str) -> ConfigError:
    line = _manifest_line(raw_text, token)
    return ConfigError(f"{path}:{line}: {message}")


_SWEEP_KEYS = {
    "group-size": {"name", "profile", "bits", "group_sizes", "symmetric"},
    "int-vs-fp": {"name", "profile", "formats", "group_size"},
    "rs-vs-ag": {"name", "profile", "ranks", "bits", "group_size"},
    "rotation": {"name", "profile", "bits", "group_sizes", "sign_seed"},
}


def _run_experiment(exp: dict, profile: ActivationProfile) -> tuple[list[str], list[list]]:
    name = exp["name"]
    if name == "group-size":
        rows = sweep_group_sizes(
            profile, exp.get("bits", 4), exp["group_sizes"],
            symmetric=bool(exp.get("symmetric", False)),
        )
        return ["group_size", "mse"], [[g, m] for g, m in rows]
    if name == "int-vs-fp":
        rows = format_comparison(
            profile, exp.get("formats") or DEFAULT_FORMATS,
            group_size=int(exp.get("group_size", 128)),
        )
        return ["format", "mse"], [[f, m] for f, m in rows]
    if name == "rs-vs-ag":
        m1, m2 = rs_vs_ag_experiment(
            profile, int(exp.get("ranks", 4)), exp.get("bits", 4),
            group_size=int(exp.get("group_size", 128)),
        )
        return ["variant", "mse"], [["stage1_only", m1], ["both_stages", m2]]
    if name == "rotation":
        rows = rotation_experiment(
            profile, exp.get("bits", 4), exp["group_sizes"],
            sign_seed=exp.get("sign_seed"),
        )
        return ["group_size", "mse_plain", "mse_rotated"], [list(r) for r in rows]
    raise ConfigError(f"unknown experiment {name!r}")


def cmd_sweep(args: argparse.Namespace) -> int:
    path = args.manifest
    raw_text = Path(path).read_text(encoding="utf-8")
    try:
        manifest = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(manifest, dict) or "experiments" not in manifest:
        raise ConfigError(f"{path}:1: manifest must be an object with an 'experiments' list")
    experiments = manifest["experiments"]
    if not isinstance(experiments, list) or not experiments:
        raise _manifest_error(path, raw_text, '"experiments"',
                              "'experiments' must be a nonempty list")

    outdir = Path(args.out)
    outputs = []
    for i, exp in enumerate(experiments):
        where = f"experiments[{i}]"
        if not isinstance(exp, dict):
            raise _manifest_error(path, raw_text, '"experiments"', f"{where} must be an object")
        name = exp.get("name")
        if name not in SWEEP_EXPERIMENTS:
            raise _manifest_error(
                path, raw_text, json.dumps(name) if name else '"experiments"',
                f"{where}: experiment name must be one of {SWEEP_EXPERIMENTS}, got {name!r}",
            )
        unknown = set(exp) - _SWEEP_KEYS[name]
        if unknown:
            key = sorted(unknown)[0]
            raise _manifest_error(path, raw_text, f'"{key}"',
                                  f"{where} ({name}): unknown key {key!r}")
        try:
            profile = ActivationProfile.from_json_dict(exp.get("profile", {}))
            header, rows = _run_experiment(exp, profile)
        except QCollectivesError as exc:
            token = f'"{name}"'
            raise _manifest_error(path, raw_text, token, f"{where} ({name}): {exc}") from None
        stem = f"sweep_{i:02d}_{name.replace('-', '_')}"
        outputs.append(_write(outdir, f"{stem}.csv", _csv_text(header, rows)))
        outputs.append(_write_json(outdir, f"{stem}.json",
                                   {"experiment": name, "rows": [dict(zip(header, r)) for r in rows]}))
        print(f"{name}: {len(rows)} rows -> {stem}.csv")
    _write_manifest(outdir, "sweep", _flags_dict(args), outputs)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qcollectives",
        description="Quantized all-reduce simulator, codecs, and cost model.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    q = sub.add_parser("quantize", help="round-trip a tensor through one codec")
    q.add_argument("--bits", type=int, default=4, help="code bits; 16 = lossless fp16")
    q.add_argument("--format", default=None,
                   help="codec name (int4asym, int8sym, e4m3, ...); overrides --bits")
    q.add_argument("--group", type=int, default=128)
    q.add_argument("--symmetric", action="store_true")
    q.add_argument("--rounding", choices=("nearest-even", "ceil"), default="nearest-even")
    q.add_argument("--input", default=None, help=".npy tensor; default: generated profile")
    _add_profile_flags(q)
    q.add_argument("--out", default=".", help="output directory")
    q.set_defaults(func=cmd_quantize)

    s = sub.add_parser("simulate", help="run a collective on the simulated fabric")
    s.add_argument("--ranks", type=int, required=True)
    s.add_argument("--elems", type=int, required=True)
    s.add_argument("--method", choices=("ring", "flash", "exact"), required=True)
    s.add_argument("--bits1", type=int, default=16,
                   help="ring codec bits, or flash stage-1 bits")
    s.add_argument("--bits2", type=int, default=16, help="flash stage-2 bits")
    s.add_argument("--group", type=int, default=128)
    s.add_argument("--chunk", type=int, default=0, help="flash chunk elements; 0 = auto")
    s.add_argument("--rotation", type=int, default=0,
                   help="Hadamard block dimension; 0 = off")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--profile", default=None, help="topology profile name")
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("cost", help="analytic cost table across bit-widths")
    c.add_argument("--ranks", type=int, default=4)
    c.add_argument("--volume-mib", type=float, default=256.0,
                   help="fp16 tensor footprint in MiB")
    c.add_argument("--elems", type=int, default=None, help="element count; overrides volume")
    c.add_argument("--method", choices=("ring", "flash", "both"), default="both")
    c.add_argument("--bits", default="16,8,6,4", help="comma-separated bit widths")
    c.add_argument("--group", type=int, default=128)
    c.add_argument("--profile", default=None,
                   help=f"topology profile ({', '.join(sorted(BUILTIN_PROFILES))})")
    c.add_argument("--profile-file", default=None, help="JSON file with extra profiles")
    c.add_argument("--out", default=".", help="output directory")
    c.set_defaults(func=cmd_cost)

    w = sub.add_parser("sweep", help="run workload experiments from a JSON manifest")
    w.add_argument("manifest", help="manifest JSON path")
    w.add_argument("--out", default=".", help="output directory")
    w.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except QCollectivesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
