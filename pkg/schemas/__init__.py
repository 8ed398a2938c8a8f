from .config import AdmmConfig, AladinConfig, ExperimentConfig, LocalSolverOptions
from .report import CompareSummary, RunMeta, SummaryRow
from .trace import (
    CSV_COLUMNS,
    ConvergenceTrace,
    KKTResidual,
    StallReport,
    TraceRow,
)

__all__ = [
    "AdmmConfig",
    "AladinConfig",
    "ExperimentConfig",
    "LocalSolverOptions",
    "CompareSummary",
    "RunMeta",
    "SummaryRow",
    "CSV_COLUMNS",
    "ConvergenceTrace",
    "KKTResidual",
    "StallReport",
    "TraceRow",
]
