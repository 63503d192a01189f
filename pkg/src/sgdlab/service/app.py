"""FastAPI service wrapping the core package.

All endpoints are synchronous wrappers over pure library calls; state lives
on disk in result stores named by request paths, so the service can be run
for a team sharing a compute box or driven in-process by the bundled CLI.
"""

from __future__ import annotations

import functools
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..analysis import (
    AnalysisError,
    compute_epsilon,
    delta_distributions,
    empirical_sensitivity,
    pairwise_epsilon,
    theoretical_sensitivity,
    variability_sigma,
)
from ..data import DataError, generate_synthetic, normalize_max_norm, save_csv
from ..harness.config import ConfigError, build_data_context, load_config, parse_config
from ..harness.grid import run_grid
from ..harness.reports import DESCRIPTIVE_NOTE, _pick_mode, make_reports
from ..harness.store import ResultStore, StoreError
from ..model import ModelError, WeightVector, load_weight_values, save_weights
from ..privacy import (
    GAUSSIAN_ASSUMPTION_NOTE,
    PrivacyError,
    PrivacyParams,
    compare_utilities,
    privatize,
    sigma_augment,
    sigma_target,
)
from ..rng import derive_streams
from ..stats import StatsError, normality_sweep
from ..theory import BoundInputs, TheoryError, theory_report
from ..train import TrainError
from . import schemas

_CLIENT_ERRORS = (
    AnalysisError,
    ConfigError,
    DataError,
    ModelError,
    PrivacyError,
    StatsError,
    StoreError,
    TheoryError,
    TrainError,
    OSError,
)


def _client_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    return wrapper


def _open_store(store_dir: str) -> ResultStore:
    return ResultStore(store_dir)


def _grid_inputs(store: ResultStore):
    cfg = parse_config(store.config_raw)
    ctx = build_data_context(cfg)
    records = store.load_all()
    if not records:
        raise StoreError(f"store {store.root} holds no records")
    theoretical = None
    if ctx.constants.lipschitz is not None:
        passes = cfg.train.total_steps * cfg.train.batch_size / ctx.member_rows
        theoretical = theoretical_sensitivity(
            passes, ctx.constants.lipschitz, cfg.train.learning_rate, cfg.train.batch_size
        )
    return cfg, ctx, records, theoretical


def create_app() -> FastAPI:
    app = FastAPI(
        title="sgdlab",
        version=__version__,
        description=(
            "Seed-variability and intrinsic-privacy experiments for SGD: "
            "grid execution, sensitivity/epsilon estimation, and "
            "intrinsic-noise-aware output perturbation."
        ),
    )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/theory/bounds", response_model=schemas.TheoryBoundsResponse)
    @_client_errors
    def theory_bounds(req: schemas.TheoryBoundsRequest) -> schemas.TheoryBoundsResponse:
        report = theory_report(
            BoundInputs(
                k=req.k,
                lipschitz=req.lipschitz,
                learning_rate=req.learning_rate,
                n_rows=req.n_rows,
                batch_size=req.batch_size,
            )
        )
        return schemas.TheoryBoundsResponse(**report)

    @app.post("/data/generate", response_model=schemas.GenerateDataResponse)
    @_client_errors
    def generate(req: schemas.GenerateDataRequest) -> schemas.GenerateDataResponse:
        dataset = generate_synthetic(n=req.n, d=req.d, separation=req.separation, seed=req.seed)
        if req.normalize:
            dataset = normalize_max_norm(dataset)
        out = Path(req.out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_csv(dataset, str(out))
        return schemas.GenerateDataResponse(
            path=str(out),
            n=dataset.n,
            d=dataset.d,
            norm_bound=dataset.norm_bound,
            source_id=dataset.source_id,
        )

    @app.post("/grid/run", response_model=schemas.RunGridResponse)
    @_client_errors
    def grid_run(req: schemas.RunGridRequest) -> schemas.RunGridResponse:
        if (req.config_path is None) == (req.config is None):
            raise HTTPException(
                status_code=400, detail="provide exactly one of config_path or config"
            )
        cfg = load_config(req.config_path) if req.config_path else parse_config(req.config)
        result = run_grid(cfg, req.out_dir, jobs=req.jobs)
        return schemas.RunGridResponse(
            store_dir=result.store_dir,
            total=result.total,
            new=result.new,
            skipped=result.skipped,
        )

    @app.post("/analysis/deltas", response_model=schemas.AnalyzeResponse)
    @_client_errors
    def analyze(req: schemas.StoreRequest) -> schemas.AnalyzeResponse:
        store = _open_store(req.store_dir)
        _cfg, _ctx, records, theoretical = _grid_inputs(store)
        kinds = {
            kind: schemas.DeltaKindSummary(
                count=summary.count, min=summary.min, median=summary.median, max=summary.max
            )
            for kind, summary in delta_distributions(records).items()
        }
        return schemas.AnalyzeResponse(
            records=len(records), kinds=kinds, theoretical_sensitivity=theoretical
        )

    @app.post("/analysis/epsilon", response_model=schemas.EpsilonResponse)
    @_client_errors
    def epsilon(req: schemas.StoreRequest) -> schemas.EpsilonResponse:
        store = _open_store(req.store_dir)
        _cfg, ctx, records, theoretical = _grid_inputs(store)
        mode = _pick_mode(records)
        mode_records = [r for r in records if r.init_mode == mode]
        sens = empirical_sensitivity(mode_records, theoretical=theoretical)
        var = variability_sigma(mode_records)
        pairs = pairwise_epsilon(mode_records, ctx.delta)

        def estimate(value):
            if value is None:
                return None
            e = compute_epsilon(value, var.sigma_i, ctx.delta)
            return schemas.EpsilonEstimate(
                value=None if e.infinite else e.value,
                exceeds_gaussian_range=e.exceeds_gaussian_range,
                infinite=e.infinite,
            )

        return schemas.EpsilonResponse(
            delta=ctx.delta,
            init_mode_used=mode,
            theoretical_sensitivity=theoretical,
            empirical_sensitivity=sens.empirical,
            sigma_i=var.sigma_i,
            sigma_by_dataset=var.sigma_by_dataset,
            epsilon_theoretical=estimate(theoretical),
            epsilon_empirical=estimate(sens.empirical),
            pairwise_epsilon_count=len(pairs),
            notes=[DESCRIPTIVE_NOTE, GAUSSIAN_ASSUMPTION_NOTE],
        )

    @app.post("/privacy/privatize", response_model=schemas.PrivatizeResponse)
    @_client_errors
    def privatize_weights(req: schemas.PrivatizeRequest) -> schemas.PrivatizeResponse:
        if req.weights_path is None or req.out_path is None:
            raise HTTPException(
                status_code=400, detail="weights_path and out_path are required"
            )
        target = sigma_target(PrivacyParams(req.epsilon, req.delta, req.sensitivity))
        decision = sigma_augment(target, req.sigma_intrinsic)
        values = load_weight_values(req.weights_path)
        layout = (("flat", (values.shape[0],), 0),)
        noisy = privatize(
            WeightVector(values=values, layout=layout),
            decision.sigma_augment,
            derive_streams(req.seed).noise,
        )
        out = Path(req.out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_weights(str(out), noisy)
        return schemas.PrivatizeResponse(
            out_path=str(out),
            sigma_target=decision.sigma_target,
            sigma_intrinsic=decision.sigma_i,
            sigma_augment=decision.sigma_augment,
            clipped=decision.clipped,
            note=GAUSSIAN_ASSUMPTION_NOTE,
        )

    @app.post("/utility/evaluate", response_model=schemas.UtilityResponse)
    @_client_errors
    def utility(req: schemas.UtilityRequest) -> schemas.UtilityResponse:
        store = _open_store(req.store_dir)
        _cfg, ctx, records, theoretical = _grid_inputs(store)
        if ctx.test_set is None:
            raise HTTPException(status_code=400, detail="config has no test split")
        mode = _pick_mode(records)
        mode_records = sorted(
            (r for r in records if r.init_mode == mode), key=lambda r: r.key
        )
        sens = empirical_sensitivity(mode_records, theoretical=theoretical)
        var = variability_sigma(mode_records)
        models = [
            (f"{r.dataset_id}__s{r.seed}", r.final_weights)
            for r in mode_records[: req.max_models]
        ]
        sensitivities = {"empirical": sens.empirical}
        if theoretical is not None:
            sensitivities["theoretical"] = theoretical
        table = compare_utilities(
            models=models,
            spec=ctx.model_spec,
            test_set=ctx.test_set,
            sensitivities=sensitivities,
            sigma_i=var.sigma_i,
            epsilons=req.epsilons,
            delta=ctx.delta,
            noise_seed_stream=derive_streams(req.seed).noise,
            significance_threshold=req.significance_threshold,
        )
        rows = [
            schemas.UtilityRowModel(
                sensitivity_kind=row.sensitivity_kind,
                sensitivity=row.sensitivity,
                epsilon=row.epsilon,
                sigma_target=row.sigma_target,
                sigma_augment=row.sigma_augment,
                noiseless_mean=row.noiseless.mean,
                noiseless_stddev=row.noiseless.stddev,
                sgd_d_mean=row.deterministic.mean,
                sgd_d_stddev=row.deterministic.stddev,
                sgd_r_mean=row.randomized.mean,
                sgd_r_stddev=row.randomized.stddev,
                mean_improvement=row.mean_improvement,
                t_statistic=None if row.t_test is None else row.t_test.statistic,
                p_value=None if row.t_test is None else row.t_test.p_value,
                significant=row.significant,
                percent_of_gap=row.percent_of_gap,
            )
            for row in table.rows
        ]
        return schemas.UtilityResponse(
            rows=rows,
            models_used=len(models),
            significance_threshold=req.significance_threshold,
            note=table.assumption,
        )

    @app.post("/stats/normality", response_model=schemas.NormalityResponse)
    @_client_errors
    def normality(req: schemas.StoreRequest) -> schemas.NormalityResponse:
        store = _open_store(req.store_dir)
        records = store.load_all()
        if not records:
            raise HTTPException(status_code=400, detail=f"store {store.root} holds no records")
        mode = _pick_mode(records)
        sweep = normality_sweep([r for r in records if r.init_mode == mode])
        return schemas.NormalityResponse(
            tested=len(sweep.entries),
            untestable=sweep.untestable,
            records_used=sweep.records_used,
            alpha=sweep.alpha,
            hypothesis_count=sweep.hypothesis_count,
            corrected_threshold=sweep.corrected_threshold,
            rejected_raw=sweep.rejected_raw,
            rejected_corrected=sweep.rejected_corrected,
        )

    @app.post("/reports/make", response_model=schemas.ReportResponse)
    @_client_errors
    def reports(req: schemas.ReportRequest) -> schemas.ReportResponse:
        store = _open_store(req.store_dir)
        manifest = make_reports(
            store,
            epsilons=tuple(req.epsilons),
            report_seed=req.seed,
            max_models=req.max_models,
            significance_threshold=req.significance_threshold,
            step_accounting=req.step_accounting,
            out_dir=req.out_dir,
        )
        out_dir = req.out_dir if req.out_dir is not None else str(Path(req.store_dir) / "reports")
        items = {
            name: schemas.ReportItem(
                status=item["status"], files=item["files"], reason=item.get("reason")
            )
            for name, item in manifest["items"].items()
        }
        return schemas.ReportResponse(out_dir=out_dir, items=items, records=manifest["records"])

    return app


app = create_app()
