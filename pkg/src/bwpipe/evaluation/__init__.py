"""Cross-validation, the selector x model grid and result reporting."""

from ..splits import kfold_split
from .grid import (
    LEADERBOARD_HEADER,
    MODES,
    EvalRecord,
    GridRun,
    GridSearchResult,
    combo_seed,
    evaluate_combo,
    evaluate_combo_leak_free,
    grid_search,
    grid_search_folds,
    holdout_split,
    leak_free_context,
    leak_free_reports,
    leaderboard,
    leaderboard_rows,
    run_grid,
    selector_frequency,
)
from .metrics import (
    RESIDUAL_EDGES,
    RESIDUAL_LABELS,
    CVConfig,
    Metrics,
    ResidualBins,
    SexGap,
    coefficient_report,
    compute_metrics,
    feature_importance_report,
    mean_metrics,
    residual_analysis,
    residual_bins,
    sex_gap,
)

__all__ = [
    "CVConfig",
    "Metrics",
    "EvalRecord",
    "ResidualBins",
    "SexGap",
    "GridRun",
    "GridSearchResult",
    "kfold_split",
    "holdout_split",
    "combo_seed",
    "compute_metrics",
    "mean_metrics",
    "grid_search",
    "grid_search_folds",
    "evaluate_combo",
    "evaluate_combo_leak_free",
    "leak_free_context",
    "leak_free_reports",
    "run_grid",
    "leaderboard",
    "leaderboard_rows",
    "selector_frequency",
    "residual_analysis",
    "residual_bins",
    "feature_importance_report",
    "coefficient_report",
    "sex_gap",
    "RESIDUAL_EDGES",
    "RESIDUAL_LABELS",
    "LEADERBOARD_HEADER",
    "MODES",
]
