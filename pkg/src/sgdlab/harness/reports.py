"""Report bundle derived from a result store.

Emits (a) the headline sensitivity/variability/epsilon record, (b) histograms
of the four weight-distance kinds, (c) the pairwise-epsilon distribution,
(d) the paired utility comparison, (e) sensitivity-and-variability-vs-steps
curves, (f) the per-coordinate normality sweep, and (g) estimate-convergence
curves. Items are produced independently: a grid too small for one item skips
it with a reason while the rest are still written. Every output byte is a
deterministic function of (store contents, config, report seed).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from ..analysis import (
    AnalysisError,
    EpsilonValue,
    compute_epsilon,
    delta_distributions,
    empirical_sensitivity,
    estimate_convergence,
    pairwise_epsilon,
    stability_vs_steps,
    theoretical_sensitivity,
    variability_sigma,
)
from ..privacy import (
    GAUSSIAN_ASSUMPTION_NOTE,
    PrivacyError,
    compare_utilities,
)
from ..rng import derive_streams
from ..stats import StatsError, normality_sweep
from ..train import ExperimentRecord, TrainError
from .config import build_data_context, parse_config
from .store import ResultStore, StoreError

DESCRIPTIVE_NOTE = (
    "intrinsic epsilon values are descriptive estimates of seed noise versus "
    "data sensitivity, not a privacy guarantee"
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _epsilon_json(value: EpsilonValue | None) -> dict | None:
    if value is None:
        return None
    return {
        "value": None if value.infinite else value.value,
        "exceeds_gaussian_range": value.exceeds_gaussian_range,
        "infinite": value.infinite,
    }


def _pick_mode(records: list[ExperimentRecord]) -> str:
    modes = {r.init_mode for r in records}
    return "vary" if "vary" in modes else sorted(modes)[0]


def make_reports(
    store: ResultStore,
    epsilons: tuple[float, ...] = (0.5, 1.0),
    report_seed: int = 0,
    max_models: int = 500,
    significance_threshold: float = 1e-6,
    step_accounting: str = "fractional",
    out_dir: str | Path | None = None,
) -> dict:
    """Produce the full report bundle; returns the manifest that is also written."""
    cfg = parse_config(store.config_raw)
    ctx = build_data_context(cfg)
    records = store.load_all()
    if not records:
        raise StoreError("store holds no records")
    out = Path(out_dir) if out_dir is not None else store.root / "reports"
    out.mkdir(parents=True, exist_ok=True)

    mode = _pick_mode(records)
    mode_records = [r for r in records if r.init_mode == mode]
    train = cfg.train
    theoretical = None
    if ctx.constants.lipschitz is not None:
        passes = train.total_steps * train.batch_size / ctx.member_rows
        theoretical = theoretical_sensitivity(
            passes, ctx.constants.lipschitz, train.learning_rate, train.batch_size
        )

    items: dict[str, dict] = {}

    def record_item(name: str, files: list[str]) -> None:
        items[name] = {"status": "written", "files": sorted(files)}

    def skip_item(name: str, reason: str) -> None:
        items[name] = {"status": "skipped", "reason": reason, "files": []}

    # (a) headline record: delta, sensitivities, sigma_i, epsilons
    sens = var = None
    try:
        sens = empirical_sensitivity(mode_records, theoretical=theoretical)
        var = variability_sigma(mode_records)
        summary = {
            "delta": ctx.delta,
            "init_mode_used": mode,
            "theoretical_sensitivity": theoretical,
            "empirical_sensitivity": sens.empirical,
            "sigma_i": var.sigma_i,
            "sigma_by_dataset": var.sigma_by_dataset,
            "epsilon_theoretical": _epsilon_json(
                compute_epsilon(theoretical, var.sigma_i, ctx.delta)
                if theoretical is not None
                else None
            ),
            "epsilon_empirical": _epsilon_json(
                compute_epsilon(sens.empirical, var.sigma_i, ctx.delta)
            ),
            "pass_count": train.total_steps * train.batch_size / ctx.member_rows,
            "pass_count_accounting": "fractional (T * B / N), drop-remainder batching",
            "notes": [DESCRIPTIVE_NOTE, GAUSSIAN_ASSUMPTION_NOTE],
        }
        _write_json(out / "epsilon_summary.json", summary)
        record_item("epsilon_summary", ["epsilon_summary.json"])
    except (AnalysisError, TrainError) as exc:
        skip_item("epsilon_summary", str(exc))

    # (b) distance histograms per kind
    try:
        summaries = delta_distributions(records)
        files = []
        stats_obj = {}
        for kind, summary in sorted(summaries.items()):
            name = f"delta_hist_{kind}.csv"
            if len(summary.bin_edges) == 2 and len(summary.bin_counts) == 1:
                rows = [[summary.bin_edges[0], summary.bin_edges[1], summary.bin_counts[0]]]
            else:
                rows = [
                    [summary.bin_edges[i], summary.bin_edges[i + 1], summary.bin_counts[i]]
                    for i in range(len(summary.bin_counts))
                ]
            _write_csv(out / name, ["bin_left", "bin_right", "count"], rows)
            files.append(name)
            stats_obj[kind] = {
                "count": summary.count,
                "min": summary.min,
                "median": summary.median,
                "max": summary.max,
            }
        _write_json(out / "delta_summary.json", stats_obj)
        record_item("delta_distributions", files + ["delta_summary.json"])
    except (AnalysisError, TrainError) as exc:
        skip_item("delta_distributions", str(exc))

    # (c) pairwise epsilon distribution
    try:
        pairs = pairwise_epsilon(mode_records, ctx.delta)
        rows = [
            [
                p.dataset_a,
                p.dataset_b,
                p.local_sensitivity,
                p.local_sigma,
                math.inf if p.epsilon.infinite else p.epsilon.value,
            ]
            for p in pairs
        ]
        _write_csv(
            out / "pairwise_epsilon.csv",
            ["dataset_a", "dataset_b", "local_sensitivity", "local_sigma", "epsilon"],
            rows,
        )
        record_item("pairwise_epsilon", ["pairwise_epsilon.csv"])
    except (AnalysisError, TrainError) as exc:
        skip_item("pairwise_epsilon", str(exc))

    # (d) utility comparison on the held-out split
    if not epsilons:
        skip_item("utility", "no epsilons requested")
    elif ctx.test_set is None:
        skip_item("utility", "config has no test split")
    elif sens is None or var is None:
        skip_item("utility", "sensitivity/variability unavailable")
    else:
        try:
            models = [
                (f"{r.dataset_id}__s{r.seed}", r.final_weights)
                for r in sorted(mode_records, key=lambda r: r.key)[:max_models]
            ]
            table = compare_utilities(
                models=models,
                spec=ctx.model_spec,
                test_set=ctx.test_set,
                sensitivities=(
                    {"empirical": sens.empirical, "theoretical": theoretical}
                    if theoretical is not None
                    else {"empirical": sens.empirical}
                ),
                sigma_i=var.sigma_i,
                epsilons=list(epsilons),
                delta=ctx.delta,
                noise_seed_stream=derive_streams(report_seed).noise,
                significance_threshold=significance_threshold,
            )
            _write_csv(
                out / "utility.csv",
                ["model_id", "sensitivity_kind", "epsilon", "variant", "accuracy"],
                [list(row) for row in table.per_model],
            )
            summary_rows = []
            for row in table.rows:
                summary_rows.append(
                    {
                        "sensitivity_kind": row.sensitivity_kind,
                        "sensitivity": row.sensitivity,
                        "epsilon": row.epsilon,
                        "sigma_target": row.sigma_target,
                        "sigma_augment": row.sigma_augment,
                        "noiseless_mean": row.noiseless.mean,
                        "noiseless_stddev": row.noiseless.stddev,
                        "sgd_d_mean": row.deterministic.mean,
                        "sgd_d_stddev": row.deterministic.stddev,
                        "sgd_r_mean": row.randomized.mean,
                        "sgd_r_stddev": row.randomized.stddev,
                        "mean_improvement": row.mean_improvement,
                        "t_statistic": None if row.t_test is None else row.t_test.statistic,
                        "p_value": None if row.t_test is None else row.t_test.p_value,
                        "significant": row.significant,
                        "percent_of_gap": row.percent_of_gap,
                    }
                )
            _write_json(
                out / "utility_summary.json",
                {
                    "rows": summary_rows,
                    "models_used": len(models),
                    "significance_threshold": significance_threshold,
                    "note": table.assumption,
                },
            )
            record_item("utility", ["utility.csv", "utility_summary.json"])
        except (AnalysisError, PrivacyError, TrainError) as exc:
            skip_item("utility", str(exc))

    # (e) sensitivity and variability against training steps
    try:
        curves = stability_vs_steps(
            records,
            lipschitz=ctx.constants.lipschitz,
            learning_rate=train.learning_rate,
            batch_size=train.batch_size,
            n_rows=ctx.member_rows,
            accounting=step_accounting,
        )
        rows = []
        for i, step in enumerate(curves.steps):
            rows.append(
                [
                    step,
                    curves.empirical_sensitivity[i],
                    curves.sigma_fixed[i],
                    curves.sigma_vary[i],
                    curves.theoretical[i] if curves.theoretical is not None else math.nan,
                ]
            )
        _write_csv(
            out / "step_curves.csv",
            ["step", "empirical_sensitivity", "sigma_fixed", "sigma_vary", "theoretical_sensitivity"],
            rows,
        )
        record_item("step_curves", ["step_curves.csv"])
    except (AnalysisError, TrainError) as exc:
        skip_item("step_curves", str(exc))

    # (f) normality sweep over weight coordinates
    try:
        sweep = normality_sweep(mode_records)
        _write_csv(
            out / "normality.csv",
            ["dataset_id", "coordinate", "w_statistic", "p_value"],
            [[e.dataset_id, e.coordinate, e.statistic, e.p_value] for e in sweep.entries],
        )
        _write_json(
            out / "normality_summary.json",
            {
                "tested": len(sweep.entries),
                "untestable": sweep.untestable,
                "records_used": sweep.records_used,
                "alpha": sweep.alpha,
                "hypothesis_count": sweep.hypothesis_count,
                "corrected_threshold": sweep.corrected_threshold,
                "rejected_raw": sweep.rejected_raw,
                "rejected_corrected": sweep.rejected_corrected,
            },
        )
        record_item("normality", ["normality.csv", "normality_summary.json"])
    except StatsError as exc:
        skip_item("normality", str(exc))

    # (g) estimate convergence with growing experiment subsets
    try:
        n = len(mode_records)
        if n < 2:
            raise AnalysisError("need at least 2 records")
        sizes = []
        size = 2
        while size < n:
            sizes.append(size)
            size *= 2
        sizes.append(n)
        conv = estimate_convergence(mode_records, sizes, resample_seed=report_seed)
        rows = [
            [conv.subset_sizes[i], conv.empirical_sensitivity[i], conv.sigma_i[i]]
            for i in range(len(conv.subset_sizes))
        ]
        _write_csv(
            out / "convergence.csv",
            ["n_experiments", "empirical_sensitivity", "sigma_i"],
            rows,
        )
        record_item("convergence", ["convergence.csv"])
    except (AnalysisError, TrainError) as exc:
        skip_item("convergence", str(exc))

    manifest = {
        "items": items,
        "epsilons": list(epsilons),
        "report_seed": report_seed,
        "max_models": max_models,
        "significance_threshold": significance_threshold,
        "step_accounting": step_accounting,
        "records": len(records),
    }
    _write_json(out / "reports_manifest.json", manifest)
    return manifest
