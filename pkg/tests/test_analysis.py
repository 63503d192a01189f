import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdlab.analysis import (
    sigma_diagnostics,
    KIND_S,
    KIND_S_PLUS_V,
    KIND_V_FIX,
    KIND_V_VARY,
    AnalysisError,
    compute_epsilon,
    delta_distributions,
    empirical_sensitivity,
    estimate_convergence,
    pairwise_epsilon,
    stability_vs_steps,
    theoretical_sensitivity,
    theoretical_sensitivity_at_step,
    variability_sigma,
    weight_distance,
)
from sgdlab.train import ExperimentRecord

FLAT = (("flat", (3,), 0),)


def vec(*values):
    from sgdlab.model import WeightVector

    return WeightVector(values=np.array(values, dtype=float), layout=(("flat", (len(values),), 0),))


def record(dataset_id, seed, mode="vary", weights=(0.0, 0.0, 0.0), checkpoints=None):
    w = vec(*weights)
    cps = {step: vec(*vals) for step, vals in (checkpoints or {}).items()}
    return ExperimentRecord(
        dataset_id=dataset_id,
        seed=seed,
        init_mode=mode,
        final_weights=w,
        checkpoints=cps,
        metrics={},
        config_digest="d",
    )


class TestWeightDistance:
    def test_identical_vectors(self):
        assert weight_distance(vec(1, 2, 3), vec(1, 2, 3)) == 0.0

    def test_three_four_five(self):
        assert weight_distance(vec(0.0, 3.0), vec(4.0, 0.0)) == pytest.approx(5.0)

    def test_layout_mismatch(self):
        with pytest.raises(AnalysisError):
            weight_distance(vec(1, 2), vec(1, 2, 3))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=9, max_size=9))
    def test_triangle_inequality(self, values):
        a, b, c = vec(*values[:3]), vec(*values[3:6]), vec(*values[6:])
        assert weight_distance(a, c) <= weight_distance(a, b) + weight_distance(b, c) + 1e-9


class TestTheoreticalSensitivity:
    # benchmark rows: (T, B, N, eta, published bound)
    ROWS = [
        (2000, 32, 9000, 0.5, 0.314),
        (1850, 32, 10397, 0.5, 0.252),
        (3400, 32, 29305, 0.5, 0.164),
        (8400, 50, 378783, 1.0, 0.063),
    ]

    @pytest.mark.parametrize("steps,batch,n,eta,expected", ROWS)
    def test_reproduces_published_bounds(self, steps, batch, n, eta, expected):
        k = steps * batch / n
        value = theoretical_sensitivity(k, math.sqrt(2.0), eta, batch)
        assert value == pytest.approx(expected, rel=0.01)

    def test_zero_passes(self):
        assert theoretical_sensitivity(0.0, math.sqrt(2.0), 0.5, 32) == 0.0

    def test_rejects_nonpositive_inputs(self):
        with pytest.raises(AnalysisError):
            theoretical_sensitivity(1.0, 0.0, 0.5, 32)


class TestEmpiricalSensitivity:
    def test_identical_weights_give_zero(self):
        records = [record("a", 1), record("b", 1)]
        assert empirical_sensitivity(records).empirical == 0.0

    def test_two_members_one_seed(self):
        records = [record("a", 1, weights=(0, 0, 0)), record("b", 1, weights=(3, 4, 0))]
        report = empirical_sensitivity(records)
        assert report.empirical == pytest.approx(5.0)
        assert len(report.pairwise) == 1

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(0)
        records = [
            record(ds, seed, weights=tuple(rng.standard_normal(3)))
            for ds in ("a", "b", "c")
            for seed in (1, 2, 3)
        ]
        report = empirical_sensitivity(records)
        best = 0.0
        for x in records:
            for y in records:
                if x.seed == y.seed and x.dataset_id < y.dataset_id:
                    best = max(
                        best,
                        float(np.linalg.norm(x.final_weights.values - y.final_weights.values)),
                    )
        assert report.empirical == pytest.approx(best, rel=1e-12)
        assert len(report.pairwise) == 9
        assert report.empirical == max(p.value for p in report.pairwise)

    def test_requires_a_matched_pair(self):
        with pytest.raises(AnalysisError):
            empirical_sensitivity([record("a", 1), record("b", 2)])

    def test_theoretical_attached_verbatim(self):
        records = [record("a", 1), record("b", 1)]
        assert empirical_sensitivity(records, theoretical=0.25).theoretical == 0.25


class TestVariabilitySigma:
    def test_identical_seeds_give_zero(self):
        records = [record("a", s, weights=(1, 2, 3)) for s in (1, 2, 3)]
        assert variability_sigma(records).sigma_i == 0.0

    def test_two_seeds_single_coordinate(self):
        from sgdlab.model import WeightVector

        layout = (("flat", (1,), 0),)
        records = [
            ExperimentRecord("a", 1, "vary", WeightVector(np.array([1.0]), layout), {}, {}, "d"),
            ExperimentRecord("a", 2, "vary", WeightVector(np.array([3.0]), layout), {}, {}, "d"),
        ]
        report = variability_sigma(records)
        assert report.sigma_by_dataset["a"] == pytest.approx(1.0)  # deviations +/-1

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(5)
        stacks = {ds: rng.standard_normal((5, 3)) for ds in ("a", "b")}
        records = [
            record(ds, seed, weights=tuple(stacks[ds][seed - 1]))
            for ds in stacks
            for seed in range(1, 6)
        ]
        report = variability_sigma(records)
        for ds, stack in stacks.items():
            mean = [sum(stack[:, j]) / 5 for j in range(3)]
            squares = [
                (stack[i, j] - mean[j]) ** 2 for i in range(5) for j in range(3)
            ]
            oracle = math.sqrt(sum(squares) / len(squares))
            assert report.sigma_by_dataset[ds] == pytest.approx(oracle, abs=1e-12)
        assert report.sigma_i == min(report.sigma_by_dataset.values())

    def test_single_seed_instance_rejected(self):
        with pytest.raises(AnalysisError, match="fewer than 2 seeds"):
            variability_sigma([record("a", 1), record("a", 2), record("b", 1)])

    def test_mixed_modes_rejected(self):
        with pytest.raises(AnalysisError, match="init mode"):
            variability_sigma([record("a", 1, "vary"), record("a", 2, "fixed")])

    def test_diagnostics_agree_on_symmetric_fixture(self):
        # two seeds mirrored around the mean: every estimator sees the same spread
        records = [
            record("a", 1, weights=(1.0, 1.0, 1.0)),
            record("a", 2, weights=(3.0, 3.0, 3.0)),
        ]
        diag = sigma_diagnostics(records)["a"]
        assert diag.pooled == pytest.approx(1.0)
        assert diag.per_weight_mean == pytest.approx(1.0)
        assert diag.norm_stddev == pytest.approx(math.sqrt(3.0))  # norms sqrt(3) and 3*sqrt(3) -> sd sqrt(3)
        assert diag.pooled == pytest.approx(variability_sigma(records).sigma_by_dataset["a"])


class TestComputeEpsilon:
    # (sensitivity, sigma, N for delta=1/N^2, published epsilon)
    ROWS = [
        (0.314, 0.083, 9000, 23.10),
        (0.164, 0.108, 29305, 9.77),
    ]

    @pytest.mark.parametrize("sens,sigma,n,expected", ROWS)
    def test_reproduces_published_epsilons(self, sens, sigma, n, expected):
        result = compute_epsilon(sens, sigma, 1.0 / n**2)
        assert result.value == pytest.approx(expected, rel=0.03)
        assert result.exceeds_gaussian_range  # all those values exceed 1

    def test_zero_sensitivity(self):
        result = compute_epsilon(0.0, 0.5, 1e-6)
        assert result.value == 0.0 and not result.exceeds_gaussian_range

    def test_zero_sigma_is_flagged_infinite(self):
        result = compute_epsilon(0.1, 0.0, 1e-6)
        assert result.infinite and math.isinf(result.value)

    def test_within_unit_range_not_flagged(self):
        result = compute_epsilon(0.01, 1.0, 1e-6)
        assert result.value < 1.0 and not result.exceeds_gaussian_range

    @settings(max_examples=40, deadline=None)
    @given(
        sens=st.floats(1e-6, 10.0),
        sigma=st.floats(1e-6, 10.0),
        scale=st.floats(1e-3, 1e3),
    )
    def test_homogeneous_in_joint_scaling(self, sens, sigma, scale):
        base = compute_epsilon(sens, sigma, 1e-8).value
        scaled = compute_epsilon(sens * scale, sigma * scale, 1e-8).value
        assert scaled == pytest.approx(base, rel=1e-9)


class TestPairwiseEpsilon:
    def test_single_pair_reduces_to_compute_epsilon(self):
        records = [
            record("a", 1, weights=(0.0, 0.0, 0.0)),
            record("a", 2, weights=(0.2, 0.0, 0.0)),
            record("b", 1, weights=(1.0, 0.0, 0.0)),
            record("b", 2, weights=(1.1, 0.0, 0.0)),
        ]
        pairs = pairwise_epsilon(records, delta=1e-6)
        assert len(pairs) == 1
        pair = pairs[0]
        local = variability_sigma(records)
        assert pair.local_sigma == pytest.approx(local.sigma_i)
        expected = compute_epsilon(pair.local_sensitivity, pair.local_sigma, 1e-6)
        assert pair.epsilon.value == pytest.approx(expected.value)

    def test_epsilon_linear_in_local_sensitivity(self):
        single = compute_epsilon(0.2, 0.5, 1e-6).value
        doubled = compute_epsilon(0.4, 0.5, 1e-6).value
        assert doubled == pytest.approx(2.0 * single, rel=1e-12)

    def test_matches_brute_force_per_pair(self):
        rng = np.random.default_rng(2)
        records = [
            record(ds, seed, weights=tuple(rng.standard_normal(3)))
            for ds in ("a", "b", "c")
            for seed in (1, 2, 3)
        ]
        pairs = {(p.dataset_a, p.dataset_b): p for p in pairwise_epsilon(records, delta=1e-8)}
        assert set(pairs) == {("a", "b"), ("a", "c"), ("b", "c")}
        for (id_a, id_b), pair in pairs.items():
            group_a = [r for r in records if r.dataset_id == id_a]
            group_b = [r for r in records if r.dataset_id == id_b]
            local_delta = max(
                float(np.linalg.norm(x.final_weights.values - y.final_weights.values))
                for x in group_a
                for y in group_b
                if x.seed == y.seed
            )
            local_sigma = variability_sigma(group_a + group_b).sigma_i
            assert pair.local_sensitivity == pytest.approx(local_delta)
            assert pair.local_sigma == pytest.approx(local_sigma)
            assert pair.epsilon.value == pytest.approx(
                compute_epsilon(local_delta, local_sigma, 1e-8).value
            )


class TestDeltaDistributions:
    def test_one_seed_two_members_only_s(self):
        summaries = delta_distributions([record("a", 1), record("b", 1)])
        assert set(summaries) == {KIND_S}

    def test_all_identical_weights_degenerate_at_zero(self):
        records = [record(ds, s) for ds in ("a", "b") for s in (1, 2)]
        summaries = delta_distributions(records)
        for summary in summaries.values():
            assert summary.min == summary.max == 0.0
            assert summary.bin_counts == (summary.count,)

    def test_counts_match_combinatorial_formulas(self):
        rng = np.random.default_rng(1)
        seeds, members = (1, 2, 3), ("a", "b", "c")
        records = [
            record(ds, s, weights=tuple(rng.standard_normal(3)))
            for ds in members
            for s in seeds
        ]
        summaries = delta_distributions(records)
        r, m = len(seeds), len(members)
        assert summaries[KIND_S].count == r * m * (m - 1) // 2
        assert summaries[KIND_V_VARY].count == m * r * (r - 1) // 2
        total_pairs = len(records) * (len(records) - 1) // 2
        assert summaries[KIND_S_PLUS_V].count == total_pairs - summaries[KIND_S].count - summaries[KIND_V_VARY].count

    def test_fixed_mode_populates_v_fix(self):
        rng = np.random.default_rng(9)
        records = [
            record("a", s, mode, weights=tuple(rng.standard_normal(3)))
            for s in (1, 2)
            for mode in ("vary", "fixed")
        ]
        summaries = delta_distributions(records)
        assert summaries[KIND_V_FIX].count == 1
        assert summaries[KIND_V_VARY].count == 1
        assert KIND_S not in summaries  # cross-mode pairs are inadmissible


class TestStepCurves:
    def make_records(self):
        rng = np.random.default_rng(4)
        records = []
        for ds in ("a", "b"):
            for seed in (1, 2):
                for mode in ("vary", "fixed"):
                    base = rng.standard_normal(3)
                    checkpoints = {
                        0: tuple(base if mode == "fixed" else rng.standard_normal(3)),
                        5: tuple(rng.standard_normal(3)),
                    }
                    if mode == "fixed":
                        checkpoints[0] = (0.5, 0.5, 0.5)  # shared fixed init
                    records.append(
                        record(ds, seed, mode, weights=checkpoints[5], checkpoints=checkpoints)
                    )
        return records

    def test_sigma_fixed_zero_and_sigma_vary_positive_at_step_zero(self):
        curves = stability_vs_steps(self.make_records())
        assert curves.steps[0] == 0
        assert curves.sigma_fixed[0] == 0.0
        assert curves.sigma_vary[0] > 0.0

    def test_final_theory_point_matches_full_run_bound(self):
        curves = stability_vs_steps(
            self.make_records(),
            lipschitz=math.sqrt(2.0),
            learning_rate=0.5,
            batch_size=2,
            n_rows=10,
        )
        expected = theoretical_sensitivity(5 * 2 / 10, math.sqrt(2.0), 0.5, 2)
        assert curves.theoretical[-1] == pytest.approx(expected, rel=1e-12)

    def test_per_epoch_accounting_is_stepwise(self):
        values = [
            theoretical_sensitivity_at_step(
                t, math.sqrt(2.0), 0.5, 2, 10, accounting="per_epoch"
            )
            for t in range(0, 11)
        ]
        # 5 steps per epoch: t in 1..5 charges one pass, 6..10 charges two
        assert values[0] == 0.0
        assert len(set(values[1:6])) == 1
        assert len(set(values[6:11])) == 1
        assert values[6] == pytest.approx(2 * values[1], rel=1e-12)

    def test_mismatched_schedules_rejected(self):
        records = self.make_records()
        records.append(record("c", 1, checkpoints={0: (0, 0, 0)}))
        with pytest.raises(AnalysisError, match="schedule"):
            stability_vs_steps(records)


class TestEstimateConvergence:
    def make_records(self):
        rng = np.random.default_rng(11)
        return [
            record(ds, seed, weights=tuple(rng.standard_normal(3)))
            for ds in ("a", "b", "c")
            for seed in (1, 2, 3, 4)
        ]

    def test_full_subset_matches_global_estimates(self):
        records = self.make_records()
        curves = estimate_convergence(records, [4, 8, 12], resample_seed=0)
        assert curves.empirical_sensitivity[-1] == pytest.approx(
            empirical_sensitivity(records).empirical
        )
        assert curves.sigma_i[-1] == pytest.approx(variability_sigma(records).sigma_i)

    def test_sensitivity_nondecreasing_along_inclusion_chain(self):
        curves = estimate_convergence(self.make_records(), [2, 4, 6, 8, 10, 12], resample_seed=3)
        observed = [v for v in curves.empirical_sensitivity if not math.isnan(v)]
        assert observed == sorted(observed)

    def test_deterministic_in_resample_seed(self):
        a = estimate_convergence(self.make_records(), [3, 6, 12], resample_seed=7)
        b = estimate_convergence(self.make_records(), [3, 6, 12], resample_seed=7)
        assert a == b

    def test_empty_subset_rejected(self):
        with pytest.raises(AnalysisError):
            estimate_convergence(self.make_records(), [0, 4], resample_seed=0)
