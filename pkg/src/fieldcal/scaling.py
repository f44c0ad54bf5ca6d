"""Univariate calibration maps fitted on held-out (validation) predictions.

* :class:`HistogramBinning` - equal-frequency bins over ``sigmoid(logit)``.
* :class:`IsotonicMapping` - pool-adjacent-violators step function of the logit.
* :class:`PlattParams` - ``sigmoid(a * logit + b)``.
* :class:`ILPSParams` - isotonic line-plot scaling: a monotone piecewise-linear
  logit-to-logit map through fixed knots ``a_k`` with learned values ``b_k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit, logit as sp_logit

from .errors import ConfigError, DataError, TrainingError
from .optim import minibatch_adam

CALIBRATOR_FORMAT = "fieldcal.calibrator"
CALIBRATOR_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    """Optimisation settings for the gradient-fitted maps.

    ``lr``/``batch_size``/epoch bounds/``tol`` drive ILPS (mini-batch Adam with
    early stopping on the full-batch gradient max-norm). Platt uses
    ``platt_tol`` and ``platt_max_iters``.
    """

    lr: float = 1e-3
    batch_size: int = 1024
    min_epochs: int = 1
    max_epochs: int = 200
    tol: float = 1e-5
    seed: int = 0
    penalty_weight: float = 10.0
    num_knots: int = 100
    platt_tol: float = 1e-8
    platt_max_iters: int = 10_000

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.penalty_weight <= 0:
            raise ConfigError("lr, batch_size and penalty_weight must be positive")
        if not 1 <= self.min_epochs <= self.max_epochs:
            raise ConfigError("need 1 <= min_epochs <= max_epochs")
        if self.num_knots < 1:
            raise ConfigError("num_knots must be >= 1")


def _check_xy(logits, labels, min_size: int = 1):
    l = np.asarray(logits, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(l) != len(y):
        raise DataError(f"{len(l)} logits but {len(y)} labels")
    if len(l) < min_size:
        raise DataError(f"need at least {min_size} points, got {len(l)}")
    if not np.isfinite(l).all():
        raise DataError("logits must be finite")
    if len(y) and not np.isin(y, (0.0, 1.0)).all():
        raise DataError("labels must be 0 or 1")
    return l, y


def _require_both_classes(y: np.ndarray, what: str) -> None:
    if y.min() == y.max():
        raise TrainingError(f"{what} needs both classes among the labels")


# ---------------------------------------------------------------------------
# Histogram binning


@dataclass(frozen=True)
class HistogramBinning:
    bin_edges: np.ndarray
    bin_values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.bin_edges, dtype=np.float64)
        v = np.asarray(self.bin_values, dtype=np.float64)
        if len(e) != len(v) + 1 or e[0] != 0.0 or e[-1] != 1.0 or np.any(np.diff(e) <= 0):
            raise DataError("bin edges must be strictly increasing from 0 to 1, one more than values")
        if np.any((v < 0) | (v > 1)):
            raise DataError("bin values must lie in [0, 1]")
        object.__setattr__(self, "bin_edges", e)
        object.__setattr__(self, "bin_values", v)

    def bin_index(self, probs: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.bin_edges, probs, side="right") - 1
        return np.clip(idx, 0, len(self.bin_values) - 1)

    def __call__(self, logits) -> np.ndarray:
        return self.bin_values[self.bin_index(expit(np.asarray(logits, dtype=np.float64)))]


def fit_histogram_binning(logits, labels, num_bins: int = 100) -> HistogramBinning:
    """Equal-frequency binning of ``sigmoid(logits)``; each bin gets its mean label.

    Edges sit halfway between the last member of one frequency block and the
    first of the next; edges that coincide because of tied scores are merged.
    Bins left empty inherit the value of the nearest non-empty bin.
    """
    l, y = _check_xy(logits, labels)
    if num_bins < 1:
        raise ConfigError("num_bins must be >= 1")
    if num_bins > len(l):
        raise DataError(f"num_bins={num_bins} exceeds the number of points ({len(l)})")
    p = np.sort(expit(l))
    cuts = [len(c) for c in np.array_split(np.arange(len(p)), num_bins)]
    bounds = np.cumsum(cuts)[:-1]
    inner = (p[bounds - 1] + p[bounds]) / 2.0
    edges = np.unique(np.concatenate([[0.0], inner[(inner > 0.0) & (inner < 1.0)], [1.0]]))

    hb = HistogramBinning(edges, np.zeros(len(edges) - 1))
    idx = hb.bin_index(expit(l))
    counts = np.bincount(idx, minlength=len(edges) - 1)
    sums = np.bincount(idx, weights=y, minlength=len(edges) - 1)
    filled = np.flatnonzero(counts)
    values = np.empty(len(counts))
    centers = np.arange(len(counts))
    nearest = filled[np.abs(centers[:, None] - filled[None, :]).argmin(axis=1)]
    values[:] = sums[nearest] / counts[nearest]
    return HistogramBinning(edges, values)


# ---------------------------------------------------------------------------
# Isotonic regression


def pool_adjacent_violators(values, weights=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit of ``values`` (in order)."""
    y = np.asarray(values, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    # blocks as parallel stacks: weighted mean, total weight, length
    means, wsum, size = [], [], []
    for yi, wi in zip(y, w):
        m, s, c = yi, wi, 1
        while means and means[-1] > m:
            pm, ps, pc = means.pop(), wsum.pop(), size.pop()
            m = (pm * ps + m * s) / (ps + s)
            s += ps
            c += pc
        means.append(m)
        wsum.append(s)
        size.append(c)
    return np.repeat(means, size)


@dataclass(frozen=True)
class IsotonicMapping:
    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if bp.shape != v.shape or len(bp) == 0:
            raise DataError("breakpoints and values must be equal-length and non-empty")
        if np.any(np.diff(bp) < 0) or np.any(np.diff(v) < 0):
            raise DataError("breakpoints and values must be non-decreasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", v)

    def __call__(self, logits) -> np.ndarray:
        l = np.asarray(logits, dtype=np.float64)
        idx = np.searchsorted(self.breakpoints, l, side="right") - 1
        return self.values[np.clip(idx, 0, len(self.values) - 1)]


def fit_isotonic(logits, labels) -> IsotonicMapping:
    """PAV on labels ordered by logit; tied logits are pooled first."""
    l, y = _check_xy(logits, labels)
    bp, inverse = np.unique(l, return_inverse=True)
    counts = np.bincount(inverse).astype(np.float64)
    means = np.bincount(inverse, weights=y) / counts
    return IsotonicMapping(bp, pool_adjacent_violators(means, counts))


# ---------------------------------------------------------------------------
# Platt scaling


@dataclass(frozen=True)
class PlattParams:
    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise DataError("Platt parameters must be finite")

    def __call__(self, logits) -> np.ndarray:
        return expit(self.a * np.asarray(logits, dtype=np.float64) + self.b)


def fit_platt(logits, labels, config: FitConfig = FitConfig()) -> PlattParams:
    """Logistic regression of the label on the logit, from ``a=1, b=0``.

    Full-batch gradient descent preconditioned with the fixed curvature
    bound ``X^T X / 4n`` of the logistic loss (a majorise-minimise step, so
    every iteration decreases the loss). Stops once the gradient max-norm is
    below ``config.platt_tol``.
    """
    l, y = _check_xy(logits, labels)
    _require_both_classes(y, "Platt scaling")
    X = np.column_stack([l, np.ones_like(l)])
    n = len(l)
    step = np.linalg.pinv(X.T @ X / (4.0 * n))
    w = np.array([1.0, 0.0])
    for _ in range(config.platt_max_iters):
        grad = X.T @ (expit(X @ w) - y) / n
        if np.max(np.abs(grad)) < config.platt_tol:
            break
        w -= step @ grad
    return PlattParams(float(w[0]), float(w[1]))


# ---------------------------------------------------------------------------
# Isotonic line-plot scaling


def ilps_knots(num_knots: int) -> np.ndarray:
    """Logit-space knots with ``sigmoid(a_k) = k / (K + 1)``."""
    k = np.arange(1, num_knots + 1)
    return sp_logit(k / (num_knots + 1.0))


@dataclass(frozen=True)
class ILPSParams:
    knots: np.ndarray
    values: np.ndarray
    penalty_weight: float = 10.0

    def __post_init__(self):
        a = np.asarray(self.knots, dtype=np.float64)
        b = np.asarray(self.values, dtype=np.float64)
        if a.ndim != 1 or a.shape != b.shape or len(a) == 0:
            raise DataError("knots and values must be equal-length 1-d arrays")
        if np.any(np.diff(a) <= 0):
            raise DataError("knots must be strictly increasing")
        object.__setattr__(self, "knots", a)
        object.__setattr__(self, "values", b)

    @property
    def K(self) -> int:
        return len(self.knots)

    @classmethod
    def identity(cls, num_knots: int = 100, penalty_weight: float = 10.0) -> "ILPSParams":
        a = ilps_knots(num_knots)
        return cls(a, a.copy(), penalty_weight)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0))

    def __call__(self, logits) -> np.ndarray:
        return expit(ilps_eta(logits, self))


def _segments(l: np.ndarray, a: np.ndarray):
    """Left knot index and interpolation weight of each input (clamped)."""
    K = len(a)
    if K == 1:
        return np.zeros(len(l), dtype=np.int64), np.zeros(len(l))
    lo = np.clip(np.searchsorted(a, l, side="right") - 1, 0, K - 2)
    t = np.clip((l - a[lo]) / (a[lo + 1] - a[lo]), 0.0, 1.0)
    return lo, t


def _interp(b: np.ndarray, lo: np.ndarray, t: np.ndarray) -> np.ndarray:
    if len(b) == 1:
        return np.full(len(lo), b[0])
    return b[lo] * (1.0 - t) + b[lo + 1] * t


def ilps_eta(logits, params: ILPSParams) -> np.ndarray:
    """Calibrated logit: line plot through ``(a_k, b_k)``, flat outside ``[a_1, a_K]``."""
    l = np.asarray(logits, dtype=np.float64)
    scalar = l.ndim == 0
    l = np.atleast_1d(l)
    lo, t = _segments(l, params.knots)
    out = _interp(params.values, lo, t)
    return out[0] if scalar else out


def isotonic_penalty(b: np.ndarray, weight: float) -> tuple[float, np.ndarray]:
    """``weight * sum_k max(0, b_k - b_{k+1})^2`` and its gradient."""
    viol = np.maximum(0.0, b[:-1] - b[1:])
    grad = np.zeros_like(b)
    grad[:-1] += 2.0 * weight * viol
    grad[1:] -= 2.0 * weight * viol
    return float(weight * np.sum(viol * viol)), grad


def ilps_objective(b, knots, logits, labels, penalty_weight, offset=None, segments=None):
    """Mean log-loss of ``sigmoid(eta(l) + offset)`` plus the isotonic penalty.

    Returns ``(loss, grad_b, dloss_dlogit)``; the last term is the per-row
    derivative with respect to the final logit, which callers use to
    back-propagate into whatever produced ``offset``.
    """
    lo, t = segments if segments is not None else _segments(logits, knots)
    s = _interp(b, lo, t)
    if offset is not None:
        s = s + offset
    n = len(labels)
    loss = float(np.mean(np.logaddexp(0.0, s) - labels * s))
    r = (expit(s) - labels) / n
    K = len(b)
    if K == 1:
        grad = np.array([r.sum()])
    else:
        grad = np.bincount(lo, weights=r * (1.0 - t), minlength=K) + np.bincount(
            lo + 1, weights=r * t, minlength=K
        )
    pen, pgrad = isotonic_penalty(b, penalty_weight)
    return loss + pen, grad + pgrad, r


def project_monotone(b: np.ndarray) -> np.ndarray:
    """Running maximum: the smallest non-decreasing sequence above ``b``."""
    return np.maximum.accumulate(b)


def fit_ilps(logits, labels, config: FitConfig = FitConfig()) -> ILPSParams:
    """Fit ILPS values by mini-batch Adam from the identity map.

    The isotonic constraint enters the loss as a squared-hinge penalty; a
    final running-max projection makes ``b`` exactly non-decreasing.
    """
    l, y = _check_xy(logits, labels)
    a = ilps_knots(config.num_knots)
    b = a.copy()
    lo_all, t_all = _segments(l, a)

    def loss_and_grad(idx):
        loss, g, _ = ilps_objective(
            b, a, l[idx], y[idx], config.penalty_weight, segments=(lo_all[idx], t_all[idx])
        )
        return loss, [g]

    minibatch_adam(
        [b],
        loss_and_grad,
        len(l),
        lr=config.lr,
        batch_size=config.batch_size,
        seed=config.seed,
        min_epochs=config.min_epochs,
        max_epochs=config.max_epochs,
        tol=config.tol,
    )
    return ILPSParams(a, project_monotone(b), config.penalty_weight)


# ---------------------------------------------------------------------------
# Dispatch and persistence

Calibrator = Union[HistogramBinning, IsotonicMapping, PlattParams, ILPSParams]

_TAGS = {
    HistogramBinning: "histogram",
    IsotonicMapping: "isotonic",
    PlattParams: "platt",
    ILPSParams: "ilps",
}


def apply(calibrator: Calibrator, logits) -> np.ndarray:
    """Calibrated probabilities for raw logits."""
    if type(calibrator) not in _TAGS:
        raise TypeError(f"not a calibrator: {type(calibrator).__name__}")
    return np.clip(calibrator(np.asarray(logits, dtype=np.float64)), 0.0, 1.0)


def calibrator_to_dict(calibrator: Calibrator) -> dict:
    tag = _TAGS[type(calibrator)]
    if tag == "histogram":
        params = {"bin_edges": calibrator.bin_edges.tolist(), "bin_values": calibrator.bin_values.tolist()}
    elif tag == "isotonic":
        params = {"breakpoints": calibrator.breakpoints.tolist(), "values": calibrator.values.tolist()}
    elif tag == "platt":
        params = {"a": calibrator.a, "b": calibrator.b}
    else:
        params = {
            "knots": calibrator.knots.tolist(),
            "values": calibrator.values.tolist(),
            "penalty_weight": calibrator.penalty_weight,
        }
    return {"format": CALIBRATOR_FORMAT, "version": CALIBRATOR_VERSION, "type": tag, "params": params}


def calibrator_from_dict(d: dict) -> Calibrator:
    if d.get("format") != CALIBRATOR_FORMAT:
        raise DataError("not a calibrator document")
    if d.get("version") != CALIBRATOR_VERSION:
        raise DataError(f"unsupported calibrator version {d.get('version')!r}")
    p = d["params"]
    tag = d["type"]
    if tag == "histogram":
        return HistogramBinning(p["bin_edges"], p["bin_values"])
    if tag == "isotonic":
        return IsotonicMapping(p["breakpoints"], p["values"])
    if tag == "platt":
        return PlattParams(p["a"], p["b"])
    if tag == "ilps":
        return ILPSParams(p["knots"], p["values"], p["penalty_weight"])
    raise DataError(f"unknown calibrator type {tag!r}")


def dumps(calibrator: Calibrator) -> str:
    return json.dumps(calibrator_to_dict(calibrator), indent=1)


def loads(text: str) -> Calibrator:
    return calibrator_from_dict(json.loads(text))
