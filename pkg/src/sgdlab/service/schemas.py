"""Request/response models for the service endpoints."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class TheoryBoundsRequest(BaseModel):
    k: float = Field(ge=0, description="passes over the data (may be fractional)")
    lipschitz: float = Field(gt=0)
    learning_rate: float = Field(gt=0)
    n_rows: int = Field(ge=1)
    batch_size: int = Field(default=1, ge=1)


class TheoryBoundsResponse(BaseModel):
    k: float
    lipschitz: float
    learning_rate: float
    n_rows: float
    batch_size: float
    sensitivity_bound: float
    variability_bound: float
    variability_to_sensitivity_ratio: float | None
    expected_variability: float
    variability_variance: float
    chebyshev_tail_probability: float
    chebyshev_threshold: float | None


class GenerateDataRequest(BaseModel):
    out_path: str
    n: int = Field(ge=2)
    d: int = Field(ge=1)
    separation: float = Field(ge=0)
    seed: int = 0
    normalize: bool = False


class GenerateDataResponse(BaseModel):
    path: str
    n: int
    d: int
    norm_bound: float
    source_id: str


class RunGridRequest(BaseModel):
    out_dir: str
    config_path: str | None = None
    config: dict | None = None
    jobs: int = Field(default=1, ge=1)


class RunGridResponse(BaseModel):
    store_dir: str
    total: int
    new: int
    skipped: int


class StoreRequest(BaseModel):
    store_dir: str


class DeltaKindSummary(BaseModel):
    count: int
    min: float
    median: float
    max: float


class AnalyzeResponse(BaseModel):
    records: int
    kinds: dict[str, DeltaKindSummary]
    theoretical_sensitivity: float | None


class EpsilonEstimate(BaseModel):
    value: float | None  # None when infinite
    exceeds_gaussian_range: bool
    infinite: bool


class EpsilonResponse(BaseModel):
    delta: float
    init_mode_used: str
    theoretical_sensitivity: float | None
    empirical_sensitivity: float
    sigma_i: float
    sigma_by_dataset: dict[str, float]
    epsilon_theoretical: EpsilonEstimate | None
    epsilon_empirical: EpsilonEstimate
    pairwise_epsilon_count: int
    notes: list[str]


class PrivatizeRequest(BaseModel):
    epsilon: float = Field(gt=0)
    delta: float = Field(gt=0, lt=1)
    sensitivity: float = Field(ge=0)
    sigma_intrinsic: float = Field(default=0.0, ge=0)
    weights_path: str | None = None
    out_path: str | None = None
    seed: int = 0


class PrivatizeResponse(BaseModel):
    out_path: str
    sigma_target: float
    sigma_intrinsic: float
    sigma_augment: float
    clipped: bool
    note: str


class UtilityRequest(BaseModel):
    store_dir: str
    epsilons: list[float] = Field(default=[0.5, 1.0], min_length=1)
    seed: int = 0
    max_models: int = Field(default=500, ge=2)
    significance_threshold: float = Field(default=1e-6, gt=0, lt=1)


class UtilityRowModel(BaseModel):
    sensitivity_kind: str
    sensitivity: float
    epsilon: float
    sigma_target: float
    sigma_augment: float
    noiseless_mean: float
    noiseless_stddev: float
    sgd_d_mean: float
    sgd_d_stddev: float
    sgd_r_mean: float
    sgd_r_stddev: float
    mean_improvement: float
    t_statistic: float | None
    p_value: float | None
    significant: bool
    percent_of_gap: float | None


class UtilityResponse(BaseModel):
    rows: list[UtilityRowModel]
    models_used: int
    significance_threshold: float
    note: str


class NormalityResponse(BaseModel):
    tested: int
    untestable: int
    records_used: int
    alpha: float
    hypothesis_count: int
    corrected_threshold: float
    rejected_raw: int
    rejected_corrected: int


class ReportRequest(BaseModel):
    store_dir: str
    out_dir: str | None = None
    epsilons: list[float] = [0.5, 1.0]
    seed: int = 0
    max_models: int = Field(default=500, ge=2)
    significance_threshold: float = Field(default=1e-6, gt=0, lt=1)
    step_accounting: str = "fractional"


class ReportItem(BaseModel):
    status: str
    files: list[str]
    reason: str | None = None


class ReportResponse(BaseModel):
    out_dir: str
    items: dict[str, ReportItem]
    records: int
