"""Analytic cost model: volumes, timing formula, profiles, ledger agreement."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from qcollectives.codec import CodecConfig, PASSTHROUGH_FP16, codec_from_name
from qcollectives.collectives import FlashConfig, run_collective
from qcollectives.costmodel import (
    BUILTIN_PROFILES,
    CSV_COLUMNS,
    PROFILE_ENV_VAR,
    analytic_cost,
    get_profile,
    latency,
    load_profiles,
    reports_to_csv,
)
from qcollectives.errors import ConfigError, DomainError
from qcollectives.fabric import FabricTopology

MIB = 1 << 20


class TestVolumes:
    def test_fp16_ring_reference_tensor(self):
        # 32 MiB fp16 tensor on 4 ranks: each rank wires 2*(M*3/4) elements
        m = 16 * MIB
        rep = analytic_cost("ring", m, 4)
        assert rep.total_volume_elems == 24 * MIB
        assert rep.wire_bytes_per_rank == 24 * MIB * 2
        assert (rep.reduce_steps, rep.gather_steps, rep.qdq_passes) == (3, 3, 0)

    def test_flash_counters_fixed(self):
        rep = analytic_cost("flash", 16 * MIB, 4, flash=FlashConfig.from_bits(4))
        assert (rep.reduce_steps, rep.gather_steps, rep.qdq_passes) == (1, 1, 2)
        assert rep.total_volume_elems == 24 * MIB

    def test_exact_wire_is_fp32(self):
        m, n = 4096, 4
        rep = analytic_cost("exact", m, n)
        assert rep.wire_bytes_per_rank == 2 * (n - 1) * (m // n) * 4

    def test_single_rank_moves_nothing(self):
        rep = analytic_cost("ring", 4096, 1)
        assert rep.wire_bytes_per_rank == 0
        assert rep.reduce_steps == rep.gather_steps == rep.qdq_passes == 0
        assert rep.predicted_seconds == 0.0
        assert rep.speedup_vs_baseline == 1.0

    def test_ragged_length_rounds_shard_up(self):
        rep = analytic_cost("ring", 1001, 4)
        assert rep.total_volume_elems == 2 * 3 * math.ceil(1001 / 4)

    def test_quantized_ring_wire_shrinks(self):
        m = 4 * MIB
        fp16 = analytic_cost("ring", m, 4)
        int4 = analytic_cost("ring", m, 4, codec=CodecConfig(bits=4, group_size=128))
        assert int4.wire_bytes_per_rank < fp16.wire_bytes_per_rank / 3


class TestTiming:
    def test_seconds_formula_decomposition(self):
        topo = FabricTopology(world_size=4, link_bandwidth=1e9, base_latency=1e-3,
                              qdq_cost=1e-4)
        m = 2 * MIB
        rep = analytic_cost("flash", m, 4, flash=FlashConfig.from_bits(4), topology=topo)
        wire_term = rep.wire_bytes_per_rank / 1e9
        qdq_term = 2 * 1e-4 * (2 * m / MIB)
        assert rep.predicted_seconds == pytest.approx(2 * 1e-3 + wire_term + qdq_term)

    def test_latency_matches_report_seconds(self):
        topo = get_profile("L40-like", 4)
        for method, flash in (("ring", None), ("flash", FlashConfig.from_bits(6))):
            rep = analytic_cost(method, 3 * MIB, 4, flash=flash, topology=topo)
            assert latency(rep, topo) == pytest.approx(rep.predicted_seconds, rel=1e-12)

    def test_doubling_bandwidth_halves_wire_term(self):
        slow = FabricTopology(world_size=4, link_bandwidth=1e9, base_latency=1e-3,
                              qdq_cost=0.0)
        fast = FabricTopology(world_size=4, link_bandwidth=2e9, base_latency=1e-3,
                              qdq_cost=0.0)
        rep = analytic_cost("ring", 8 * MIB, 4, topology=slow)
        base = 6 * 1e-3
        assert latency(rep, fast) - base == pytest.approx((rep.predicted_seconds - base) / 2)

    def test_speedup_ordering_matches_wire_savings(self):
        m = 32 * MIB  # 64 MiB fp16 tensor
        speed = {}
        for bits in (16, 8, 6, 4):
            rep = analytic_cost("flash", m, 4, flash=FlashConfig.from_bits(bits))
            speed[bits] = rep.speedup_vs_baseline
        assert speed[4] > speed[6] > speed[8] > speed[16]

    def test_fp16_ring_is_its_own_baseline(self):
        rep = analytic_cost("ring", MIB, 4)
        assert rep.speedup_vs_baseline == pytest.approx(1.0)


class TestLedgerAgreement:
    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_measured_equals_analytic(self, n):
        rng = np.random.default_rng(17 + n)
        cases = [
            ("ring", PASSTHROUGH_FP16, None),
            ("ring", CodecConfig(bits=4, group_size=32), None),
            ("flash", None, FlashConfig.from_bits(8, group_size=32)),
            ("flash", None, FlashConfig.int6(group_size=32)),
            ("exact", None, None),
        ]
        for m in (n * 32 * 4, 5000):
            xs = [rng.standard_normal(m).astype(np.float32) for _ in range(n)]
            for method, codec, flash in cases:
                run = run_collective(method, xs, codec=codec, flash=flash)
                rep = analytic_cost(method, m, n, codec=codec, flash=flash)
                assert run.wire_bytes_per_rank == rep.wire_bytes_per_rank
                assert run.reduce_steps == rep.reduce_steps
                assert run.gather_steps == rep.gather_steps
                assert run.qdq_passes == rep.qdq_passes

    def test_every_rank_sends_the_same_bytes(self):
        rng = np.random.default_rng(23)
        xs = [rng.standard_normal(4096).astype(np.float32) for _ in range(4)]
        run = run_collective("flash", xs, flash=FlashConfig.from_bits(4))
        sent = [run.ledger.rank_bytes_sent(r) for r in range(4)]
        assert len(set(sent)) == 1


class TestValidation:
    def test_bad_world_size(self):
        with pytest.raises(DomainError):
            analytic_cost("ring", 1024, 0)

    def test_bad_element_count(self):
        with pytest.raises(DomainError):
            analytic_cost("ring", 0, 4)

    def test_topology_mismatch(self):
        topo = FabricTopology(world_size=8)
        with pytest.raises(ConfigError):
            analytic_cost("ring", 1024, 4, topology=topo)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            analytic_cost("tree", 1024, 4)

    def test_flash_needs_config(self):
        with pytest.raises(ConfigError):
            analytic_cost("flash", 1024, 4)


class TestProfiles:
    def test_builtin_l40_like(self):
        topo = get_profile("L40-like", 4)
        assert topo.link_bandwidth == 64e9
        assert topo.base_latency == 10e-6
        assert topo.qdq_cost == 6.5e-7

    def test_env_var_selects_default(self, monkeypatch):
        monkeypatch.setenv(PROFILE_ENV_VAR, "slow-interconnect")
        topo = get_profile(None, 2)
        assert topo.link_bandwidth == BUILTIN_PROFILES["slow-interconnect"]["link_bandwidth"]

    def test_unset_env_falls_back(self, monkeypatch):
        monkeypatch.delenv(PROFILE_ENV_VAR, raising=False)
        assert get_profile(None, 2).link_bandwidth == 64e9

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            get_profile("warp-drive", 4)

    def test_load_profiles_merges(self, tmp_path):
        path = tmp_path / "profiles.json"
        path.write_text(json.dumps({"lab-net": {"link_bandwidth": 1e9}}))
        load_profiles(str(path))
        try:
            topo = get_profile("lab-net", 2)
            assert topo.link_bandwidth == 1e9
            assert topo.base_latency == 10e-6  # unspecified keys keep defaults
        finally:
            BUILTIN_PROFILES.pop("lab-net", None)

    def test_load_profiles_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "profiles.json"
        path.write_text(json.dumps({"bad": {"link_speed": 1e9}}))
        with pytest.raises(ConfigError):
            load_profiles(str(path))


class TestSerialization:
    def test_csv_columns(self):
        rep = analytic_cost("ring", 1024, 2, codec=codec_from_name("int8asym"))
        text = reports_to_csv([rep])
        header, row = text.strip().split("\n")
        assert header == ",".join(CSV_COLUMNS)
        cells = row.split(",")
        assert cells[0] == "ring"
        assert cells[1] == "int8asym"
        assert cells[2] == "2"

    def test_json_dict_round(self):
        rep = analytic_cost("flash", 2048, 2, flash=FlashConfig.from_bits(4, group_size=32))
        d = rep.to_json_dict()
        assert set(d) == set(CSV_COLUMNS)
        assert d["codec"] == "int4asym/int4asym"
