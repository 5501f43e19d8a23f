"""Tabular reports: MC analysis rows, histogram tables, confusion matrices."""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
import pandas as pd

from .uncertainty import OK, McRun, McSummary, class_histograms, majority_vote, specimen_histograms, uncertainty_scores

logger = logging.getLogger(__name__)


def _bin_labels(bins: int) -> list[str]:
    edges = np.linspace(0.0, 1.0, bins + 1)
    return [f"{lo:.2f}-{hi:.2f}" for lo, hi in zip(edges[:-1], edges[1:])]


def analysis_frame(
    ids: Sequence[str],
    summary: McSummary,
    flags: Sequence[str],
    class_names: Sequence[str],
    labels: np.ndarray | None = None,
) -> pd.DataFrame:
    """One row per specimen with votes, mean and variance for every class."""
    votes_for = majority_vote(summary)
    data = {
        "id": list(ids),
        "true_label": [class_names[i] for i in labels] if labels is not None else [None] * len(ids),
        "predicted_class": [class_names[i] for i in summary.predicted_class],
        "majority_vote": [class_names[i] for i in votes_for],
    }
    for c, name in enumerate(class_names):
        data[f"votes_{name}"] = summary.votes[:, c]
    for c, name in enumerate(class_names):
        data[f"mean_{name}"] = summary.mean[:, c]
    for c, name in enumerate(class_names):
        data[f"var_{name}"] = summary.variance[:, c]
    data["uncertainty"] = uncertainty_scores(summary)
    data["flag"] = list(flags)
    return pd.DataFrame(data)


def analysis_records(frame: pd.DataFrame, class_names: Sequence[str]) -> list[dict]:
    """JSON form of ``analysis_frame``: per-class values grouped into lists."""
    rows = []
    for rec in frame.to_dict(orient="records"):
        rows.append({
            "id": rec["id"],
            "true_label": rec["true_label"],
            "predicted_class": rec["predicted_class"],
            "majority_vote": rec["majority_vote"],
            "votes": [int(rec[f"votes_{c}"]) for c in class_names],
            "mean": [float(rec[f"mean_{c}"]) for c in class_names],
            "variance": [float(rec[f"var_{c}"]) for c in class_names],
            "uncertainty": float(rec["uncertainty"]),
            "flag": rec["flag"],
        })
    return rows


def difficult_cases(frame: pd.DataFrame) -> pd.DataFrame:
    """Flagged specimens, most uncertain first."""
    flagged = frame[frame["flag"] != OK]
    return flagged.sort_values(["uncertainty", "id"], ascending=[False, True], kind="mergesort").reset_index(drop=True)


def histogram_frame(run: McRun, class_names: Sequence[str], bins: int = 20) -> pd.DataFrame:
    """Class x bin counts of predicted probabilities over [0, 1]."""
    counts = class_histograms(run, bins)
    frame = pd.DataFrame(counts, columns=_bin_labels(bins))
    frame.insert(0, "class", list(class_names))
    return frame


def specimen_histogram_frame(
    run: McRun,
    indices: Sequence[int],
    ids: Sequence[str],
    class_names: Sequence[str],
    bins: int = 20,
) -> pd.DataFrame:
    """Per-pass probability histograms for selected specimens, one row per (specimen, class)."""
    columns = ["id", "class", *_bin_labels(bins)]
    rows = []
    for i in indices:
        counts = specimen_histograms(run, int(i), bins)
        for c, name in enumerate(class_names):
            rows.append([ids[i], name, *counts[c].tolist()])
    return pd.DataFrame(rows, columns=columns)


def confusion_frame(labels: np.ndarray, predictions: np.ndarray, class_names: Sequence[str]) -> pd.DataFrame:
    """Rows are true classes, columns predicted classes, every class present."""
    names = list(class_names)
    table = pd.crosstab(
        pd.Categorical([names[i] for i in labels], categories=names),
        pd.Categorical([names[i] for i in predictions], categories=names),
        dropna=False,
    )
    table = table.reindex(index=names, columns=names, fill_value=0)
    table.index.name = "true"
    table.columns.name = None
    return table


def evaluation_summary(labels: np.ndarray, predictions: np.ndarray, class_names: Sequence[str]) -> dict:
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    per_class = {}
    for c, name in enumerate(class_names):
        mask = labels == c
        per_class[name] = {
            "n": int(mask.sum()),
            "accuracy": float(np.mean(predictions[mask] == c)) if mask.any() else None,
        }
    return {
        "n": int(len(labels)),
        "accuracy": float(np.mean(predictions == labels)) if len(labels) else 0.0,
        "per_class": per_class,
    }


def format_confusion(table: pd.DataFrame) -> str:
    return table.to_string()
