import json
import math

import numpy as np
import pytest

from gsbak.attack import AttackTrace, TraceEntry
from gsbak.harness import (ConfigError, ExperimentConfig, LedgerMismatch,
                           PRESETS, ResultRow, _audit, asr, median_l2,
                           preset_config, read_rows, row_seed, run_experiment,
                           select_target_set, splitmix64, summarize,
                           write_rows)
from gsbak.oracle import UNTARGETED, InsufficientClasses


class TestSplitmix:
    def test_canonical_vectors(self):
        # published outputs of the splitmix64 reference implementation
        assert splitmix64(0) == 0xE220A8397B1DCDAF
        assert splitmix64(1) == 0x910A2DEC89025CC1

    def test_row_seed_fits_in_63_bits_and_is_deterministic(self):
        for master in (0, 11, 2 ** 40):
            for idx in range(5):
                s = row_seed(master, idx)
                assert 0 <= s < 2 ** 63
                assert s == row_seed(master, idx)

    def test_row_seeds_do_not_collide_in_small_grids(self):
        seeds = [row_seed(101, i) for i in range(500)]
        assert len(set(seeds)) == 500


class TestSelectTargetSet:
    def test_best_and_worst_policies(self):
        p = [0.4, 0.3, 0.2, 0.1]
        assert select_target_set(p, {0}, 2, "best") == (1, 2)
        assert select_target_set(p, {0}, 2, "worst") == (2, 3)

    def test_random_policy_is_seed_deterministic(self):
        p = [0.1] * 10
        rng1 = np.random.Generator(np.random.PCG64(5))
        rng2 = np.random.Generator(np.random.PCG64(5))
        a = select_target_set(p, {0}, 3, "random", rng1)
        b = select_target_set(p, {0}, 3, "random", rng2)
        assert a == b
        assert len(a) == 3 and 0 not in a

    def test_random_without_rng_raises(self):
        with pytest.raises(ValueError):
            select_target_set([0.5, 0.5], {0}, 1, "random")

    def test_insufficient_classes(self):
        with pytest.raises(InsufficientClasses):
            select_target_set([0.4, 0.3, 0.3], {0}, 3, "best")

    def test_unknown_policy(self):
        with pytest.raises(ConfigError):
            select_target_set([0.5, 0.5], {0}, 1, "greedy")

    def test_result_is_sorted(self):
        p = [0.05, 0.1, 0.4, 0.2, 0.25]
        assert select_target_set(p, {2}, 3, "best") == (1, 3, 4)


def tiny_config(**overrides):
    base = dict(name="tiny", seed=5, flavor="linear", d=16, classes=6,
                mode="untargeted", k_values=(1,), budget=300,
                r_th=(1.0, 2.0), query_cuts=(100, 300), n_samples=2)
    base.update(overrides)
    return ExperimentConfig(**base)


class TestExperimentConfig:
    def test_valid_config_builds(self):
        cfg = tiny_config()
        assert cfg.attacks == ("gsbak", "sak")

    @pytest.mark.parametrize("overrides", [
        {"k_values": ()},
        {"k_values": (0,)},
        {"mode": "sideways"},
        {"mode": "targeted", "classes": 6, "k_values": (3,)},
        {"mode": "untargeted", "classes": 6, "k_values": (6,)},
        {"budget": 1},
        {"r_th": ()},
        {"r_th": (-1.0,)},
        {"r_th": (2.0, 1.0)},
        {"query_cuts": ()},
        {"query_cuts": (0,)},
        {"attacks": ("gsbak", "hopskip")},
        {"n_samples": 0},
    ])
    def test_validation_rejects(self, overrides):
        with pytest.raises(ConfigError):
            tiny_config(**overrides)

    def test_from_dict_coerces_lists(self):
        cfg = ExperimentConfig.from_dict({
            "name": "x", "seed": 1, "flavor": "linear", "d": 16, "classes": 6,
            "mode": "untargeted", "k_values": [1, 2], "budget": 100,
            "r_th": [0.5], "query_cuts": [100], "shape": None})
        assert cfg.k_values == (1, 2)
        assert cfg.r_th == (0.5,)

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"name": "x", "verbosity": 3})

    def test_load_roundtrip(self, tmp_path):
        payload = dict(name="x", seed=1, flavor="linear", d=16, classes=6,
                       mode="untargeted", k_values=[1], budget=100,
                       r_th=[0.5], query_cuts=[100])
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(payload))
        cfg = ExperimentConfig.load(path)
        assert cfg.name == "x"

    def test_load_errors_are_config_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.load(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(bad)
        arr = tmp_path / "arr.json"
        arr.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(arr)

    def test_checksum_tracks_content(self):
        a = tiny_config()
        b = tiny_config()
        c = tiny_config(seed=6)
        assert a.checksum() == b.checksum()
        assert a.checksum() != c.checksum()


def trace_with_milestones():
    entries = [
        TraceEntry(step=0, kind="benign", norm=0.0, queries=1, adversarial=False),
        TraceEntry(step=1, kind="init", norm=5.0, queries=40, adversarial=True),
        TraceEntry(step=1, kind="init", norm=5.5, queries=48, adversarial=True),
        TraceEntry(step=1, kind="boundary", norm=4.0, queries=54, adversarial=True),
        TraceEntry(step=2, kind="refine", norm=2.0, queries=150, adversarial=True),
    ]
    return AttackTrace(mode=UNTARGETED, k=1, budget=200, seed=1,
                       entries=entries, total_queries=150)


class TestResultRow:
    def test_milestones_keep_prefix_minima_only(self):
        s = ResultRow.milestones_from_trace(trace_with_milestones())
        # the 5.5 entry is worse than the 5.0 before it and is dropped
        assert s == "40:5|54:4|150:2"

    def test_milestone_pairs_roundtrip(self):
        row = ResultRow(attack="gsbak", mode=UNTARGETED, k=1, sample=0, seed=1,
                        budget=200, queries=150, success=True, failed=False,
                        final_norm=2.0, milestones="40:5|54:4|150:2")
        assert row.milestone_pairs() == [(40, 5.0), (54, 4.0), (150, 2.0)]
        assert row.first_success_query(4.0) == 54
        assert row.first_success_query(1.9) is None
        assert row.best_norm_within(54) == 4.0
        assert row.best_norm_within(39) == math.inf

    def test_threshold_tolerance_absorbs_float_dust(self):
        row = ResultRow(attack="gsbak", mode=UNTARGETED, k=1, sample=0, seed=1,
                        budget=200, queries=150, success=True, failed=False,
                        final_norm=1.0,
                        milestones=f"10:{1.0 + 1e-12:.17g}")
        assert row.first_success_query(1.0) == 10


class TestRowsCsv:
    def test_roundtrip_preserves_rows(self, tmp_path):
        rows = [
            ResultRow(attack="gsbak", mode=UNTARGETED, k=2, sample=0, seed=9,
                      budget=100, queries=88, success=True, failed=False,
                      final_norm=1.2345678901234567, milestones="10:3|88:1.5"),
            ResultRow(attack="sak", mode=UNTARGETED, k=2, sample=1, seed=10,
                      budget=100, queries=100, success=False, failed=False,
                      final_norm=math.inf, milestones="", eps_ball=0.75),
        ]
        path = tmp_path / "rows.csv"
        write_rows(rows, path, config_checksum="abc123")
        back = read_rows(path)
        assert back == rows
        first = path.read_text().splitlines()[0]
        assert first == "# config_sha256=abc123"


def make_row(attack="gsbak", eps_ball=None, milestones="50:0.5", k=1):
    return ResultRow(attack=attack, mode=UNTARGETED, k=k, sample=0, seed=0,
                     budget=1000, queries=900, success=bool(milestones),
                     failed=False,
                     final_norm=float(milestones.rsplit(":", 1)[-1])
                     if milestones else math.inf,
                     milestones=milestones, eps_ball=eps_ball)


class TestMetrics:
    def test_asr_counts_unconstrained_rows_at_every_radius(self):
        rows = [make_row(milestones="50:0.5"), make_row(milestones="700:0.9"),
                make_row(milestones="")]
        assert asr(rows, q=1000, r_th=1.0) == pytest.approx(2 / 3)
        assert asr(rows, q=100, r_th=1.0) == pytest.approx(1 / 3)
        assert asr(rows, q=1000, r_th=0.6) == pytest.approx(1 / 3)

    def test_asr_restricts_ball_rows_to_their_own_radius(self):
        rows = [make_row("sak", eps_ball=1.0, milestones="10:0.99"),
                make_row("sak", eps_ball=2.0, milestones="10:1.8")]
        assert asr(rows, q=100, r_th=1.0) == 1.0   # only the first is eligible
        assert asr(rows, q=100, r_th=2.0) == 1.0   # only the second
        assert math.isnan(asr(rows, q=100, r_th=0.5))

    def test_asr_empty_is_nan(self):
        assert math.isnan(asr([], q=10, r_th=1.0))

    def test_median_l2_uses_inf_for_misses(self):
        rows = [make_row(milestones="50:2.0"), make_row(milestones="")]
        assert math.isinf(median_l2(rows, q=40))
        assert math.isnan(median_l2([], q=10))
        rows = [make_row(milestones="50:2.0"), make_row(milestones="60:4.0"),
                make_row(milestones="70:6.0")]
        assert median_l2(rows, q=100) == 4.0

    def test_summarize_shapes_and_median_only_for_gsbak(self):
        rows = [make_row("gsbak"), make_row("sak", eps_ball=1.0)]
        summary = summarize(rows, query_cuts=(100,), r_ths=(1.0, 2.0))
        metrics = {(rec["metric"], rec["attack"]) for rec in summary}
        assert ("median_l2", "gsbak") in metrics
        assert ("median_l2", "sak") not in metrics
        asr_recs = [rec for rec in summary if rec["metric"] == "asr"]
        assert len(asr_recs) == 2 * 2  # two attacks x two radii at one cut


class TestAudit:
    def test_mismatched_calls_raise(self):
        trace = trace_with_milestones()
        with pytest.raises(LedgerMismatch):
            _audit(tiny_config(), trace.total_queries + 1, trace)

    def test_over_budget_raises(self):
        trace = trace_with_milestones()
        trace.total_queries = trace.budget + 5
        with pytest.raises(LedgerMismatch):
            _audit(tiny_config(audit=False), trace.total_queries, trace)

    def test_nonmonotone_trace_raises(self):
        trace = trace_with_milestones()
        trace.entries.append(TraceEntry(step=3, kind="refine", norm=3.0,
                                        queries=160, adversarial=True))
        with pytest.raises(LedgerMismatch):
            _audit(tiny_config(), trace.total_queries, trace)

    def test_clean_trace_passes(self):
        trace = trace_with_milestones()
        _audit(tiny_config(), trace.total_queries, trace)


class TestRunExperiment:
    def test_row_grid_shape_and_determinism(self):
        cfg = tiny_config()
        res1 = run_experiment(cfg)
        res2 = run_experiment(cfg)
        # per (k, sample): one unconstrained run + one ball run per radius
        expected = len(cfg.k_values) * cfg.n_samples * (1 + len(cfg.r_th))
        assert len(res1["rows"]) == expected
        assert res1["rows"] == res2["rows"]
        assert res1["summary"] == res2["summary"]

    def test_sak_rows_carry_their_ball_radius(self):
        cfg = tiny_config(attacks=("sak",))
        rows = run_experiment(cfg)["rows"]
        assert {r.eps_ball for r in rows} == set(cfg.r_th)
        assert all(r.attack == "sak" for r in rows)

    def test_output_files(self, tmp_path):
        cfg = tiny_config(save_traces=True)
        run_experiment(cfg, out_dir=tmp_path)
        rows = read_rows(tmp_path / "rows.csv")
        expected = len(cfg.k_values) * cfg.n_samples * (1 + len(cfg.r_th))
        assert len(rows) == expected
        header = (tmp_path / "rows.csv").read_text().splitlines()[0]
        assert header == f"# config_sha256={cfg.checksum()}"
        assert (tmp_path / "summary.csv").exists()
        payload = json.loads((tmp_path / "traces.json").read_text())
        assert payload["config_sha256"] == cfg.checksum()
        assert len(payload["traces"]) == expected

    def test_gsbak_only_grid(self):
        cfg = tiny_config(attacks=("gsbak",), n_samples=1)
        rows = run_experiment(cfg)["rows"]
        assert len(rows) == 1
        assert rows[0].attack == "gsbak"
        assert rows[0].eps_ball is None
        assert rows[0].queries <= cfg.budget

    def test_targeted_grid_runs(self):
        cfg = tiny_config(mode="targeted", classes=8, k_values=(2,),
                          n_samples=1, budget=600)
        rows = run_experiment(cfg)["rows"]
        assert all(r.mode == "targeted" for r in rows)


class TestPresets:
    def test_known_presets_build_valid_configs(self):
        for name in PRESETS:
            cfg = preset_config(name)
            assert cfg.name == name

    def test_unknown_preset_raises(self):
        with pytest.raises(ConfigError):
            preset_config("everything")

    def test_smoke_preset_is_small(self):
        cfg = preset_config("smoke")
        assert cfg.n_samples <= 5
        assert cfg.budget <= 5000
