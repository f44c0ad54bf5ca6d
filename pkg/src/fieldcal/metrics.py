"""Evaluation metrics for binary probabilistic predictions.

Instance-level (log-loss, Brier), probability-binned (Prob-ECE), field-level
(Field-ECE, Field-RCE) and ranking (AUC) metrics, plus an aggregate report.
Field-level metrics partition rows by the categorical fairness field ``z``
rather than by the predictions themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, MetricError

LOG_LOSS_CLIP = 1e-7
DEFAULT_PROB_ECE_BINS = 100
DEFAULT_EPSILON = 0.01


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Aligned predictions, outcomes and fairness-field values for one split."""

    probs: np.ndarray
    labels: np.ndarray
    z: np.ndarray | None = None
    logits: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64).ravel()
        labels = np.asarray(self.labels).ravel()
        n = len(probs)
        if len(labels) != n:
            raise DataError(f"probs has {n} entries but labels has {len(labels)}")
        if not np.isfinite(probs).all() or (n and (probs.min() < 0 or probs.max() > 1)):
            raise DataError("probabilities must be finite and inside [0, 1]")
        if n and not np.isin(labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels.astype(np.float64))
        if self.z is not None:
            z = np.asarray(self.z).ravel()
            if len(z) != n:
                raise DataError(f"z has {len(z)} entries, expected {n}")
            object.__setattr__(self, "z", z)
        if self.logits is not None:
            lg = np.asarray(self.logits, dtype=np.float64).ravel()
            if len(lg) != n:
                raise DataError(f"logits has {len(lg)} entries, expected {n}")
            object.__setattr__(self, "logits", lg)

    def __len__(self) -> int:
        return len(self.probs)


def _nonempty(p: PredictionSet) -> None:
    if len(p) == 0:
        raise DataError("metric undefined on an empty prediction set")


def _levels(p: PredictionSet):
    _nonempty(p)
    if p.z is None:
        raise DataError("field-level metrics need z values")
    levels, inverse = np.unique(p.z, return_inverse=True)
    return levels, inverse


def log_loss(p: PredictionSet) -> float:
    _nonempty(p)
    q = np.clip(p.probs, LOG_LOSS_CLIP, 1.0 - LOG_LOSS_CLIP)
    y = p.labels
    return float(np.mean(-y * np.log(q) - (1.0 - y) * np.log1p(-q)))


def brier(p: PredictionSet) -> float:
    _nonempty(p)
    return float(np.mean((p.labels - p.probs) ** 2))


def prob_bin_index(probs: np.ndarray, num_bins: int) -> np.ndarray:
    """Equal-width bin index of each probability; 1.0 lands in the last bin."""
    edges = np.arange(num_bins + 1) / num_bins
    idx = np.searchsorted(edges, probs, side="right") - 1
    return np.clip(idx, 0, num_bins - 1)


def prob_ece(p: PredictionSet, num_bins: int = DEFAULT_PROB_ECE_BINS) -> float:
    """Calibration error over ``num_bins`` equal-width probability bins."""
    if num_bins < 1:
        raise DataError("num_bins must be >= 1")
    _nonempty(p)
    idx = prob_bin_index(p.probs, num_bins)
    sums = np.bincount(idx, weights=p.labels - p.probs, minlength=num_bins)
    return float(np.abs(sums).sum() / len(p))


def field_ece(p: PredictionSet) -> float:
    _, inverse = _levels(p)
    sums = np.bincount(inverse, weights=p.labels - p.probs)
    return float(np.abs(sums).sum() / len(p))


def field_rce(p: PredictionSet, epsilon: float = DEFAULT_EPSILON) -> float:
    """Relative field-level error, as a fraction (not a percentage)."""
    if not epsilon > 0:
        raise DataError("epsilon must be positive")
    _, inverse = _levels(p)
    counts = np.bincount(inverse).astype(np.float64)
    resid = np.bincount(inverse, weights=p.labels - p.probs)
    denom = np.bincount(inverse, weights=p.labels) + epsilon * counts
    return float(np.sum(counts * np.abs(resid) / denom) / len(p))


def auc(p: PredictionSet) -> float:
    """Area under the ROC curve from average ranks (ties count one half)."""
    pos = p.labels == 1
    n_pos = int(pos.sum())
    n_neg = len(p) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined when only one class is present")
    ranks = rankdata(p.probs, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class LevelStats:
    level: int | str
    count: int
    mean_prediction: float
    mean_outcome: float
    abs_gap: float


@dataclass
class MetricsReport:
    log_loss: float
    brier: float
    prob_ece: float
    field_ece: float
    field_rce: float
    auc: float | None
    per_field: list[LevelStats] = field(default_factory=list)
    n: int = 0

    @property
    def auc_defined(self) -> bool:
        return self.auc is not None

    def breakdown_field_ece(self) -> float:
        """Field-ECE re-aggregated from the per-level breakdown."""
        return sum(s.count * s.abs_gap for s in self.per_field) / self.n

    def to_dict(self) -> dict:
        return {
            "log_loss": self.log_loss,
            "brier": self.brier,
            "prob_ece": self.prob_ece,
            "field_ece": self.field_ece,
            "field_rce": self.field_rce,
            "auc": self.auc,
            "n": self.n,
            "per_field": [vars(s) for s in self.per_field],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            d["log_loss"], d["brier"], d["prob_ece"], d["field_ece"], d["field_rce"], d["auc"],
            [LevelStats(**s) for s in d.get("per_field", [])], d.get("n", 0),
        )


def field_breakdown(p: PredictionSet, level_names: Sequence | None = None) -> list[LevelStats]:
    levels, inverse = _levels(p)
    counts = np.bincount(inverse)
    pred = np.bincount(inverse, weights=p.probs) / counts
    out = np.bincount(inverse, weights=p.labels) / counts
    rows = []
    for k, lev in enumerate(levels):
        name = lev.item() if hasattr(lev, "item") else lev
        if level_names is not None:
            name = level_names[int(lev)]
        rows.append(LevelStats(name, int(counts[k]), float(pred[k]), float(out[k]), float(abs(out[k] - pred[k]))))
    return rows


def evaluate_all(
    p: PredictionSet,
    prob_ece_bins: int = DEFAULT_PROB_ECE_BINS,
    epsilon: float = DEFAULT_EPSILON,
    require_auc: bool = False,
    level_names: Sequence | None = None,
) -> MetricsReport:
    """Compute every metric. AUC is ``None`` for single-class sets unless
    ``require_auc`` is set, in which case the :class:`MetricError` propagates."""
    try:
        a = auc(p)
    except MetricError:
        if require_auc:
            raise
        a = None
    return MetricsReport(
        log_loss=log_loss(p),
        brier=brier(p),
        prob_ece=prob_ece(p, prob_ece_bins),
        field_ece=field_ece(p),
        field_rce=field_rce(p, epsilon),
        auc=a,
        per_field=field_breakdown(p, level_names),
        n=len(p),
    )


# Hand-worked examples: (inputs, {metric: value}). Values are closed forms
# computed by hand; the test suite checks the functions reproduce them exactly.
WORKED_EXAMPLES = (
    # log-loss = -ln(0.8 * 0.4 * 0.7) / 3, Brier = (0.04 + 0.36 + 0.09) / 3
    (
        dict(probs=[0.8, 0.6, 0.3], labels=[1, 0, 0]),
        {"log_loss": 0.49870307570903244, "brier": 49 / 300},
    ),
    # two prob bins each off by 0.5 in total; level b carries the whole
    # field gap of 1, so Field-RCE = (1/4) * 2 * 1 / (2 + 0.02)
    (
        dict(probs=[0.25, 0.25, 0.75, 0.75], labels=[0, 1, 1, 1], z=["a", "b", "a", "b"]),
        {"prob_ece@2": 0.25, "field_ece": 0.25, "field_rce": 25 / 101},
    ),
    # 4 positive/negative pairs: 3 ordered correctly and 1 tie worth 1/2
    (
        dict(probs=[0.2, 0.4, 0.4, 0.8], labels=[0, 1, 0, 1]),
        {"auc": 0.875},
    ),
)


def worked_example_values(inputs: dict) -> dict:
    """Every metric of :data:`WORKED_EXAMPLES` evaluated on ``inputs``."""
    p = PredictionSet(**inputs)
    out = {"log_loss": log_loss(p), "brier": brier(p), "prob_ece@2": prob_ece(p, 2), "auc": auc(p)}
    if p.z is not None:
        out.update(field_ece=field_ece(p), field_rce=field_rce(p))
    return out
