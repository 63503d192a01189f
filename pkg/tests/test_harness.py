import json

import numpy as np
import pytest

from sgdlab.analysis import compute_epsilon
from sgdlab.harness import (
    ConfigError,
    ResultStore,
    StoreError,
    build_data_context,
    load_config,
    make_reports,
    parse_config,
    run_grid,
)
from tests.conftest import desk_config

SMALL_CONFIG = {
    "schema_version": 1,
    "data": {"kind": "synthetic", "n": 76, "d": 3, "separation": 2.0, "seed": 5},
    "split": {"test_fraction": 0.2, "seed": 1},
    "family": {"member_indices": [1, 2]},
    "grid": {"seeds": [1, 2, 3], "init_modes": ["vary"]},
    "model": {"kind": "mlp", "hidden_size": 3},
    "train": {
        "learning_rate": 0.3,
        "batch_size": 8,
        "total_steps": 30,
        "checkpoint_steps": [0, 15, 30],
        "eval_every": 15,
    },
}


def small_config(**overrides):
    cfg = json.loads(json.dumps(SMALL_CONFIG))
    cfg.update(overrides)
    return cfg


class TestConfigParsing:
    def test_round_trips_through_json_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(SMALL_CONFIG))
        cfg = load_config(path)
        assert cfg.seeds == (1, 2, 3)
        assert cfg.train.batch_size == 8

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(ConfigError, match="missing.json"):
            load_config(tmp_path / "missing.json")

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            parse_config(small_config(extra_knob=1))

    def test_unknown_nested_key(self):
        cfg = small_config()
        cfg["train"]["momentum"] = 0.9
        with pytest.raises(ConfigError, match="momentum"):
            parse_config(cfg)

    def test_schema_version_pinned(self):
        with pytest.raises(ConfigError, match="schema_version"):
            parse_config(small_config(schema_version=2))

    def test_duplicate_seeds_rejected(self):
        cfg = small_config()
        cfg["grid"]["seeds"] = [1, 1, 2]
        with pytest.raises(ConfigError, match="duplicate-free"):
            parse_config(cfg)

    def test_unknown_init_mode(self):
        cfg = small_config()
        cfg["grid"]["init_modes"] = ["warm"]
        with pytest.raises(ConfigError, match="init mode"):
            parse_config(cfg)

    def test_member_index_out_of_range(self):
        cfg = small_config()
        cfg["family"]["member_indices"] = [75]  # train part has 61 rows
        with pytest.raises(ConfigError, match="member_indices"):
            build_data_context(parse_config(cfg))

    def test_batch_size_larger_than_member(self):
        cfg = small_config()
        cfg["train"]["batch_size"] = 64
        with pytest.raises(ConfigError, match="batch_size"):
            build_data_context(parse_config(cfg))

    def test_delta_domain(self):
        with pytest.raises(ConfigError, match="delta"):
            parse_config(small_config(privacy={"delta": 2.0}))


class TestConfigDigest:
    def test_training_relevant_field_changes_digest(self):
        base = parse_config(small_config()).digest
        changed = small_config()
        changed["train"]["learning_rate"] = 0.31
        assert parse_config(changed).digest != base
        changed = small_config()
        changed["data"]["seed"] = 6
        assert parse_config(changed).digest != base
        changed = small_config(privacy={"delta": 0.5})
        assert parse_config(changed).digest != base

    def test_grid_extent_does_not_change_digest(self):
        base = parse_config(small_config()).digest
        wider = small_config()
        wider["grid"]["seeds"] = [1, 2, 3, 4, 5]
        wider["family"]["member_indices"] = [1, 2, 3]
        assert parse_config(wider).digest == base


class TestDataContext:
    def test_member_geometry(self):
        ctx = build_data_context(parse_config(small_config()))
        assert ctx.train_base.n == 61  # 76 - int(76 * 0.2)
        assert ctx.member_rows == 60
        assert ctx.test_set.n == 15
        assert ctx.delta == pytest.approx(1.0 / 60**2)
        assert ctx.train_base.norm_bound == 1.0

    def test_projection_pipeline(self):
        cfg = small_config(projection={"kind": "pca", "d_out": 2})
        ctx = build_data_context(parse_config(cfg))
        assert ctx.model_spec.input_dim == 2
        assert ctx.train_base.d == 2

    def test_mlp_has_no_lipschitz_constant(self):
        ctx = build_data_context(parse_config(small_config()))
        assert ctx.constants.lipschitz is None


class TestRunGrid:
    def test_counts_and_idempotence(self, tmp_path):
        cfg = parse_config(small_config())
        result = run_grid(cfg, tmp_path / "store")
        assert (result.total, result.new, result.skipped) == (6, 6, 0)
        again = run_grid(cfg, tmp_path / "store")
        assert (again.total, again.new, again.skipped) == (6, 0, 6)

    def test_records_reload_bit_identically(self, tmp_path):
        cfg = parse_config(small_config())
        run_grid(cfg, tmp_path / "store")
        store = ResultStore(tmp_path / "store")
        assert len(store) == 6
        from sgdlab.harness.grid import _run_one

        blob = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
        for key in store.keys():
            reloaded = store.load_record(key)
            member_index = int(key[0].rsplit("~i", 1)[1])
            fresh = _run_one(blob, cfg.digest, member_index, key[1], key[2])
            assert np.array_equal(reloaded.final_weights.values, fresh.final_weights.values)
            assert sorted(reloaded.checkpoints) == sorted(fresh.checkpoints)
            for step in fresh.checkpoints:
                assert np.array_equal(
                    reloaded.checkpoints[step].values, fresh.checkpoints[step].values
                )
            assert reloaded.metrics == fresh.metrics

    def test_resume_after_widening_grid(self, tmp_path):
        cfg = parse_config(small_config())
        run_grid(cfg, tmp_path / "store")
        wider = small_config()
        wider["grid"]["seeds"] = [1, 2, 3, 4]
        result = run_grid(parse_config(wider), tmp_path / "store")
        assert (result.total, result.new, result.skipped) == (8, 2, 6)

    def test_config_digest_mismatch_refused(self, tmp_path):
        run_grid(parse_config(small_config()), tmp_path / "store")
        changed = small_config()
        changed["train"]["learning_rate"] = 0.9
        with pytest.raises(StoreError, match="different config"):
            run_grid(parse_config(changed), tmp_path / "store")

    def test_parallel_jobs_match_serial(self, tmp_path):
        cfg = parse_config(small_config())
        run_grid(cfg, tmp_path / "serial", jobs=1)
        run_grid(cfg, tmp_path / "parallel", jobs=3)
        serial = (tmp_path / "serial" / "records.jsonl").read_bytes()
        parallel = (tmp_path / "parallel" / "records.jsonl").read_bytes()
        assert serial == parallel


class TestStore:
    def test_enumerates_each_key_exactly_once(self, tmp_path):
        cfg = parse_config(small_config())
        run_grid(cfg, tmp_path / "store")
        store = ResultStore(tmp_path / "store")
        keys = store.keys()
        assert len(keys) == len(set(keys)) == 6

    def test_missing_key(self, tmp_path):
        run_grid(parse_config(small_config()), tmp_path / "store")
        store = ResultStore(tmp_path / "store")
        with pytest.raises(StoreError, match="no record"):
            store.load_record(("nope", 0, "vary"))

    def test_corrupt_weight_file_detected(self, tmp_path):
        run_grid(parse_config(small_config()), tmp_path / "store")
        store = ResultStore(tmp_path / "store")
        key = store.keys()[0]
        rel = store._index[key]["final_weights"]
        blob = (store.root / rel).read_bytes()
        (store.root / rel).write_bytes(blob[:-3])
        with pytest.raises(StoreError, match="corrupt"):
            store.load_record(key)

    def test_not_a_store(self, tmp_path):
        with pytest.raises(StoreError, match="meta.json"):
            ResultStore(tmp_path)


@pytest.fixture(scope="module")
def reported_store(tmp_path_factory):
    root = tmp_path_factory.mktemp("reports") / "store"
    cfg = small_config()
    cfg["model"] = {"kind": "logreg"}
    cfg["grid"] = {"seeds": [1, 2, 3, 4], "init_modes": ["vary", "fixed"]}
    run_grid(parse_config(cfg), root)
    store = ResultStore(root)
    manifest = make_reports(store, epsilons=(1.0,), report_seed=0, significance_threshold=0.05)
    return store, manifest


class TestReports:
    def test_all_items_written(self, reported_store):
        _, manifest = reported_store
        for name in (
            "epsilon_summary",
            "delta_distributions",
            "pairwise_epsilon",
            "utility",
            "step_curves",
            "normality",
            "convergence",
        ):
            assert manifest["items"][name]["status"] == "written", manifest["items"][name]

    def test_epsilon_summary_is_self_consistent(self, reported_store):
        store, _ = reported_store
        summary = json.loads((store.root / "reports" / "epsilon_summary.json").read_text())
        recomputed = compute_epsilon(
            summary["empirical_sensitivity"], summary["sigma_i"], summary["delta"]
        )
        assert summary["epsilon_empirical"]["value"] == pytest.approx(recomputed.value, rel=1e-12)
        recomputed_theory = compute_epsilon(
            summary["theoretical_sensitivity"], summary["sigma_i"], summary["delta"]
        )
        assert summary["epsilon_theoretical"]["value"] == pytest.approx(
            recomputed_theory.value, rel=1e-12
        )

    def test_utility_percent_of_gap_matches_definition(self, reported_store):
        store, _ = reported_store
        summary = json.loads((store.root / "reports" / "utility_summary.json").read_text())
        for row in summary["rows"]:
            if row["percent_of_gap"] is not None:
                expected = (row["sgd_r_mean"] - row["sgd_d_mean"]) / (
                    row["noiseless_mean"] - row["sgd_d_mean"]
                )
                assert row["percent_of_gap"] == pytest.approx(expected, rel=1e-12)

    def test_histogram_csv_shape(self, reported_store):
        store, _ = reported_store
        lines = (store.root / "reports" / "delta_hist_V_vary.csv").read_text().splitlines()
        assert lines[0] == "bin_left,bin_right,count"
        assert len(lines) >= 2

    def test_empty_epsilon_list_skips_utility_with_notice(self, tmp_path):
        cfg = small_config()
        cfg["model"] = {"kind": "logreg"}
        run_grid(parse_config(cfg), tmp_path / "store")
        manifest = make_reports(ResultStore(tmp_path / "store"), epsilons=())
        assert manifest["items"]["utility"]["status"] == "skipped"
        assert "epsilon" in manifest["items"]["utility"]["reason"]

    def test_no_test_split_skips_utility(self, tmp_path):
        cfg = small_config()
        cfg["model"] = {"kind": "logreg"}
        del cfg["split"]
        run_grid(parse_config(cfg), tmp_path / "store")
        manifest = make_reports(ResultStore(tmp_path / "store"))
        assert manifest["items"]["utility"]["status"] == "skipped"
        assert "test split" in manifest["items"]["utility"]["reason"]

    def test_reports_independent_of_execution_history(self, tmp_path):
        # one store built in a single pass, one grown incrementally in a
        # different order: the stores may differ in line order, the reports may not
        cfg_full = small_config()
        cfg_full["model"] = {"kind": "logreg"}
        run_grid(parse_config(cfg_full), tmp_path / "oneshot")

        cfg_first = json.loads(json.dumps(cfg_full))
        cfg_first["grid"]["seeds"] = [3]
        run_grid(parse_config(cfg_first), tmp_path / "grown")
        cfg_rest = json.loads(json.dumps(cfg_full))
        run_grid(parse_config(cfg_rest), tmp_path / "grown")

        make_reports(ResultStore(tmp_path / "oneshot"), epsilons=(1.0,))
        make_reports(ResultStore(tmp_path / "grown"), epsilons=(1.0,))
        for name in ("epsilon_summary.json", "delta_summary.json", "utility_summary.json"):
            a = (tmp_path / "oneshot" / "reports" / name).read_bytes()
            b = (tmp_path / "grown" / "reports" / name).read_bytes()
            assert a == b, name


class TestDeskGridSmoke:
    def test_desk_grid_complete(self, desk_grid):
        assert len(desk_grid.records) == 400
        assert desk_grid.ctx.member_rows == 501

    def test_desk_config_matches_fixture(self, desk_grid):
        assert desk_grid.cfg.raw == desk_config()
