"""Monte Carlo dropout: stochastic passes, predictive statistics, voting and flags."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..core.errors import DimensionError, ParameterError
from ..core.utils import substream
from .nn.layers import ClassifierParams, draw_masks, first_hidden, propagate

logger = logging.getLogger(__name__)

UNCERTAIN = "uncertain"
CONFIDENT_WRONG = "confident_wrong"
OK = "ok"
FLAGS = (UNCERTAIN, CONFIDENT_WRONG, OK)


@dataclass(frozen=True)
class McRun:
    """Softmax outputs of ``n_passes`` dropout-active passes, shape (N, batch, classes)."""

    predictions: np.ndarray
    seed: int = 0

    def __post_init__(self):
        p = self.predictions
        if p.ndim != 3 or p.shape[0] < 1:
            raise DimensionError(f"predictions must have shape (N >= 1, batch, classes), got {p.shape}")
        if p.size and not np.allclose(p.sum(axis=2), 1.0, atol=1e-6):
            raise ParameterError("every prediction row must sum to 1")

    @property
    def n_passes(self) -> int:
        return int(self.predictions.shape[0])


@dataclass(frozen=True)
class McSummary:
    mean: np.ndarray
    variance: np.ndarray
    votes: np.ndarray
    predicted_class: np.ndarray
    n_passes: int


def mc_predict(params: ClassifierParams, features: np.ndarray, n_passes: int = 100, seed: int = 0) -> McRun:
    """Collect ``n_passes`` train-mode forward passes with independent dropout masks.

    Pass ``i`` draws its masks from the ``mc`` sub-stream at index ``i``, so any
    single pass can be reproduced on its own.
    """
    if n_passes < 1:
        raise ParameterError(f"n_passes must be >= 1, got {n_passes}")
    if params.dropout_rate == 0.0:
        logger.warning("dropout_rate is 0: all %d MC passes will be identical", n_passes)
    # the first layer does not see dropout, so it is shared by every pass
    hidden = first_hidden(params, features)
    out = np.empty((n_passes, len(hidden), params.layers[-1].out_dim))
    for i in range(n_passes):
        masks = None
        if params.dropout_rate > 0.0:
            masks = draw_masks(params, len(hidden), substream(seed, "mc", i))
        out[i] = propagate(params, hidden, masks, start=1)
    return McRun(out, seed)


def summarize(run: McRun) -> McSummary:
    """Predictive mean and population variance (divisor N) over the passes."""
    p = run.predictions
    # deviations from the first pass keep identical passes at exactly zero variance
    shifted = p - p[0]
    shift_mean = shifted.mean(axis=0)
    mean = p[0] + shift_mean
    variance = ((shifted - shift_mean) ** 2).mean(axis=0)
    n_classes = p.shape[2]
    per_pass = p.argmax(axis=2)
    votes = (per_pass[..., None] == np.arange(n_classes)).sum(axis=0).astype(np.int64)
    return McSummary(mean, variance, votes, mean.argmax(axis=1), run.n_passes)


def majority_vote(summary: McSummary) -> np.ndarray:
    """Class with most votes; ties go to the higher mean, then the lower index."""
    top = summary.votes.max(axis=1, keepdims=True)
    score = np.where(summary.votes == top, summary.mean, -np.inf)
    return score.argmax(axis=1)


def flag_difficult(
    summary: McSummary,
    labels: np.ndarray | None = None,
    confidence: float = 0.7,
    margin: float = 0.2,
) -> np.ndarray:
    """Per-specimen flag: uncertain, confident_wrong or ok.

    Uncertain wins when the top mean is below ``confidence`` or the gap to the
    runner-up is below ``margin``. Without labels nothing is marked wrong.
    """
    ordered = np.sort(summary.mean, axis=1)
    top = ordered[:, -1]
    gap = top - ordered[:, -2] if ordered.shape[1] > 1 else top
    flags = np.full(len(top), OK, dtype=object)
    if labels is not None:
        wrong = summary.predicted_class != np.asarray(labels)
        flags[wrong & (top >= confidence)] = CONFIDENT_WRONG
    flags[(top < confidence) | (gap < margin)] = UNCERTAIN
    return flags


def uncertainty_scores(summary: McSummary) -> np.ndarray:
    """Ranking scalar: the largest per-class variance of each specimen."""
    return summary.variance.max(axis=1)


def mc_statistics(run: McRun, summary: McSummary, labels: np.ndarray) -> dict:
    """Single-pass accuracy spread versus predictive-mean and majority-vote accuracy."""
    labels = np.asarray(labels)
    per_pass = (run.predictions.argmax(axis=2) == labels).mean(axis=1)
    return {
        "n_passes": run.n_passes,
        "n_specimens": int(len(labels)),
        "single_pass_accuracy_mean": float(per_pass.mean()),
        "single_pass_accuracy_std": float(per_pass.std()),
        "single_pass_accuracy_min": float(per_pass.min()),
        "single_pass_accuracy_max": float(per_pass.max()),
        "mean_prediction_accuracy": float(np.mean(summary.predicted_class == labels)),
        "majority_vote_accuracy": float(np.mean(majority_vote(summary) == labels)),
    }


def class_histograms(run: McRun, bins: int = 20) -> np.ndarray:
    """Counts of per-class probabilities over all passes and specimens, shape (classes, bins)."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    return np.stack([
        np.histogram(run.predictions[:, :, c], bins=edges)[0] for c in range(run.predictions.shape[2])
    ])


def specimen_histograms(run: McRun, index: int, bins: int = 20) -> np.ndarray:
    """Counts over the N passes for one specimen, shape (classes, bins)."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    return np.stack([
        np.histogram(run.predictions[:, index, c], bins=edges)[0] for c in range(run.predictions.shape[2])
    ])
