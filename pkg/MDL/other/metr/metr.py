"""Module with functions for calculating classification metrics and reports."""
import logging
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

METRICS = ("auc", "accuracy", "recall_t2", "recall_t3")
STD_NOTE = "std is the population standard deviation over successful folds."


def _check_binary(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels).astype(int).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.shape[0]} scores vs {labels.shape[0]} labels.")
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise ValueError("Both classes must be present; AUC and recalls are undefined otherwise.")
    return scores, labels


def compute_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random positive outscores a random negative, ties counting ½.

    :param scores: Scores, higher means class 1.
    :type scores: Sequence[float]
    :param labels: Labels in {0, 1}.
    :type labels: Sequence[int]
    :rtype: float
    """
    scores, labels = _check_binary(scores, labels)
    ranks = pd.Series(scores).rank(method="average").to_numpy()
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_recalls(
    scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5
) -> Tuple[float, float, float]:
    """Per-class recalls and accuracy at ``score >= threshold`` meaning class 1.

    :param scores: Probabilities.
    :type scores: Sequence[float]
    :param labels: Labels in {0, 1}.
    :type labels: Sequence[int]
    :param threshold: Operating point.
    :type threshold: float
    :rtype: Tuple[float, float, float]
    """
    scores, labels = _check_binary(scores, labels)
    pred = (scores >= threshold).astype(int)
    recall_t2 = float(np.mean(pred[labels == 0] == 0))
    recall_t3 = float(np.mean(pred[labels == 1] == 1))
    accuracy = float(np.mean(pred == labels))
    return recall_t2, recall_t3, accuracy


@dataclass
class FoldResult:
    """Hold-out metrics of one fold; ``error`` is set when the fold failed."""

    fold: int
    auc: float = float("nan")
    accuracy: float = float("nan")
    recall_t2: float = float("nan")
    recall_t3: float = float("nan")
    n_t2: int = 0
    n_t3: int = 0
    error: str = ""

    @property
    def failed(self) -> bool:
        """True if training or evaluation aborted."""
        return bool(self.error)

    @classmethod
    def from_scores(cls, fold: int, scores, labels, threshold: float = 0.5) -> "FoldResult":
        """Evaluate hold-out probabilities."""
        recall_t2, recall_t3, accuracy = compute_recalls(scores, labels, threshold)
        labels = np.asarray(labels).astype(int)
        return cls(
            fold,
            compute_auc(scores, labels),
            accuracy,
            recall_t2,
            recall_t3,
            int((labels == 0).sum()),
            int((labels == 1).sum()),
        )

    def to_dict(self) -> Dict:
        """Row for tables."""
        return asdict(self)


def summarize(results: Sequence[FoldResult]) -> Dict[str, float]:
    """Mean and population std of every metric over successful folds.

    Sensitivity and specificity are reported as aliases of recall_t3 and recall_t2.

    :param results: Per-fold results.
    :type results: Sequence[FoldResult]
    :rtype: Dict[str, float]
    """
    ok = [r for r in results if not r.failed]
    summary: Dict[str, float] = {"n_folds": len(results), "failed_folds": len(results) - len(ok)}
    for metric in METRICS:
        values = np.array([getattr(r, metric) for r in ok], dtype=float)
        summary[f"{metric}_mean"] = float(values.mean()) if len(values) else float("nan")
        summary[f"{metric}_std"] = float(values.std(ddof=0)) if len(values) else float("nan")
    summary["sensitivity_mean"] = summary["recall_t3_mean"]
    summary["specificity_mean"] = summary["recall_t2_mean"]
    return summary


def format_mean_std(mean: float, std: float, digits: int = 3) -> str:
    """``0.831 ± 0.020``."""
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def metrics_table(results: Sequence[FoldResult]) -> pd.DataFrame:
    """Per-fold rows followed by 'mean' and 'std' rows."""
    df = pd.DataFrame([r.to_dict() for r in results])
    ok = df[df["error"] == ""]
    mean = {"fold": "mean", **{m: ok[m].mean() for m in METRICS}}
    std = {"fold": "std", **{m: ok[m].std(ddof=0) for m in METRICS}}
    df = df.astype({"fold": object})
    df = pd.concat([df, pd.DataFrame([mean, std])], ignore_index=True)
    return df.fillna({"error": "", "n_t2": 0, "n_t3": 0}).astype({"n_t2": int, "n_t3": int})


def atomic_write(path: str, text: str) -> str:
    """Write through a temporary file and rename."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)
    return path


def write_table(df: pd.DataFrame, path_stem: str, footer: str = "") -> List[str]:
    """Write ``<stem>.csv`` and an aligned ``<stem>.txt`` (with optional footer line).

    :param df: Table.
    :type df: pd.DataFrame
    :param path_stem: Output path without extension.
    :type path_stem: str
    :param footer: Text appended under the plain-text table.
    :type footer: str
    :rtype: List[str]
    """
    csv = atomic_write(f"{path_stem}.csv", df.to_csv(index=False, float_format="%.6f"))
    text = df.to_string(index=False, float_format=lambda x: f"{x:.4f}")
    if footer:
        text += f"\n\n{footer}"
    txt = atomic_write(f"{path_stem}.txt", text + "\n")
    return [csv, txt]
