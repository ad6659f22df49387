"""Module for calculating classification metrics."""
from .metr import (
    METRICS,
    FoldResult,
    atomic_write,
    compute_auc,
    compute_recalls,
    format_mean_std,
    metrics_table,
    summarize,
    write_table,
)

__all__ = [
    "METRICS",
    "FoldResult",
    "atomic_write",
    "compute_auc",
    "compute_recalls",
    "format_mean_std",
    "metrics_table",
    "summarize",
    "write_table",
]
