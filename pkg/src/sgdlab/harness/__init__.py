"""Grid orchestration: configuration, persistence, execution, and reports."""

from .config import ConfigError, DataContext, GridConfig, build_data_context, load_config, parse_config
from .grid import GridRunResult, run_grid
from .reports import make_reports
from .store import ResultStore, StoreError

__all__ = [
    "ConfigError",
    "DataContext",
    "GridConfig",
    "GridRunResult",
    "ResultStore",
    "StoreError",
    "build_data_context",
    "load_config",
    "make_reports",
    "parse_config",
    "run_grid",
]
