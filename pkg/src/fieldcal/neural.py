"""Embedding MLP with hand-written backprop, and Neural Calibration.

One network type serves as the base classifier ``f(x)``, its incrementally
updated variant, and the auxiliary network ``g(x)`` of the calibration model
``q(l, x) = sigmoid(eta(l) + g(x))``. Everything runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit

from .data import Dataset, Schema, Standardizer
from .errors import ConfigError, DataError, TrainingError
from .optim import Adam, check_gradients, minibatch_adam
from .scaling import (
    ILPSParams,
    _segments,
    calibrator_from_dict,
    calibrator_to_dict,
    ilps_eta,
    ilps_knots,
    ilps_objective,
    project_monotone,
)

MODEL_FORMAT = "fieldcal.mlp"
NC_FORMAT = "fieldcal.neural_calibration"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    emb_dim: int = 16
    hidden_dims: tuple[int, ...] = (32, 32)
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 1
    seed: int = 0
    penalty_weight: float = 10.0
    num_knots: int = 100
    # False gives g zero capacity, so Neural Calibration degenerates to ILPS
    aux_net: bool = True
    # g's output layer starts at this fraction of the usual init so q starts near sigmoid(l)
    aux_init_scale: float = 0.01
    fresh_optimizer: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.emb_dim < 0 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("emb_dim must be >= 0 and hidden widths >= 1")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.penalty_weight <= 0:
            raise ConfigError("lr, batch_size, epochs and penalty_weight must be positive")
        if self.num_knots < 1:
            raise ConfigError("num_knots must be >= 1")


PROFILES: dict[str, TrainConfig] = {
    "desk": TrainConfig(),
    "paper": TrainConfig(emb_dim=256, hidden_dims=(200, 200), batch_size=256),
}


@dataclass(eq=False)
class MLPModel:
    """Per-field embedding tables feeding ReLU layers and a scalar logit head.

    ``weights[i]`` has shape (fan_in, fan_out); the last layer is the output
    head with shape (width, 1).
    """

    schema: Schema
    vocab_sizes: tuple[int, ...]
    emb_dim: int
    hidden_dims: tuple[int, ...]
    embeddings: list[np.ndarray]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    standardizer: Standardizer
    vocabularies: Mapping | None = None
    optimizer: Adam | None = field(default=None, repr=False)
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def input_dim(self) -> int:
        return len(self.embeddings) * self.emb_dim + len(self.schema.numerical)

    def parameters(self) -> list[np.ndarray]:
        out = list(self.embeddings)
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def parameter_names(self) -> list[str]:
        names = [f"embedding.{n}" for n in self.schema.categorical]
        for i in range(len(self.weights)):
            tag = "output" if i == len(self.weights) - 1 else f"dense{i}"
            names += [f"{tag}.weight", f"{tag}.bias"]
        return names

    def copy(self) -> "MLPModel":
        return MLPModel(
            self.schema,
            self.vocab_sizes,
            self.emb_dim,
            self.hidden_dims,
            [e.copy() for e in self.embeddings],
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.standardizer,
            self.vocabularies,
            None,
            list(self.history),
        )


def init_mlp(
    schema: Schema,
    vocab_sizes,
    emb_dim: int,
    hidden_dims,
    seed,
    standardizer: Standardizer | None = None,
    vocabularies: Mapping | None = None,
    output_scale: float = 1.0,
) -> MLPModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; embeddings count as fan_in 1."""
    rng = np.random.default_rng(seed)
    vocab_sizes = tuple(int(v) for v in vocab_sizes)
    if len(vocab_sizes) != len(schema.categorical):
        raise ConfigError("one vocabulary size per categorical field is required")
    n_num = len(schema.numerical)
    embeddings = [rng.uniform(-1.0, 1.0, size=(v, emb_dim)) for v in vocab_sizes]
    widths = [len(vocab_sizes) * emb_dim + n_num, *hidden_dims, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    weights[-1] *= output_scale
    biases[-1] *= output_scale
    return MLPModel(
        schema,
        vocab_sizes,
        emb_dim,
        tuple(hidden_dims),
        embeddings,
        weights,
        biases,
        standardizer if standardizer is not None else Standardizer.identity(n_num),
        vocabularies,
    )


# ---------------------------------------------------------------------------
# Forward / backward


def _as_batch(model: MLPModel, cat, num):
    cat = np.atleast_2d(np.asarray(cat, dtype=np.int64))
    num = np.asarray(num, dtype=np.float64)
    num = num.reshape(cat.shape[0], -1) if num.size else np.zeros((cat.shape[0], 0))
    if cat.shape[1] != len(model.vocab_sizes) or num.shape[1] != len(model.schema.numerical):
        raise DataError(
            f"row has {cat.shape[1]} categorical / {num.shape[1]} numerical values, model expects "
            f"{len(model.vocab_sizes)} / {len(model.schema.numerical)}"
        )
    if cat.size and (cat.min() < 0 or np.any(cat.max(axis=0) >= np.array(model.vocab_sizes))):
        raise DataError("categorical index out of range for the model's embedding tables")
    return cat, num


def _forward(model: MLPModel, cat: np.ndarray, num_std: np.ndarray):
    parts = [E[cat[:, j]] for j, E in enumerate(model.embeddings)]
    parts.append(num_std)
    h = np.concatenate(parts, axis=1)
    acts = [h]
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    out = h @ model.weights[-1][:, 0] + model.biases[-1][0]
    return out, acts


def _backward(model: MLPModel, acts, cat: np.ndarray, dout: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients (in ``parameters()`` order) given d loss / d logit."""
    n_layers = len(model.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    dW[-1] = acts[-1].T @ dout[:, None]
    db[-1] = np.array([dout.sum()])
    dh = dout[:, None] * model.weights[-1][:, 0][None, :]
    for i in range(n_layers - 2, -1, -1):
        da = dh * (acts[i + 1] > 0)
        dW[i] = acts[i].T @ da
        db[i] = da.sum(axis=0)
        dh = da @ model.weights[i].T
    grads = []
    e = model.emb_dim
    for j, E in enumerate(model.embeddings):
        dE = np.zeros_like(E)
        np.add.at(dE, cat[:, j], dh[:, j * e : (j + 1) * e])
        grads.append(dE)
    for w, b in zip(dW, db):
        grads += [w, b]
    return grads


def forward(model: MLPModel, cat, num) -> np.ndarray:
    """Logits for one row (1-d inputs) or a batch of rows.

    ``num`` holds raw numerical values; the model standardizes them.
    """
    scalar = np.ndim(cat) == 1
    cat, num = _as_batch(model, cat, num)
    out, _ = _forward(model, cat, model.standardizer.apply(num))
    return out[0] if scalar else out


def predict_logits(model: MLPModel, dataset: Dataset) -> np.ndarray:
    return forward(model, dataset.cat, dataset.num)


def _mean_log_loss(s: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, s) - y * s))


def mlp_loss_and_grad(model: MLPModel, cat, num_std, y):
    out, acts = _forward(model, cat, num_std)
    dout = (expit(out) - y) / len(y)
    return _mean_log_loss(out, y), _backward(model, acts, cat, dout)


# ---------------------------------------------------------------------------
# Training


def _check_trainable(ds: Dataset, what: str) -> None:
    if len(ds) == 0:
        raise TrainingError(f"{what}: no rows to train on")
    if ds.labels.min() == ds.labels.max():
        raise TrainingError(f"{what}: training data contains a single class")


def _fit(model: MLPModel, data: Dataset, config: TrainConfig, optimizer: Adam | None) -> MLPModel:
    cat, num = _as_batch(model, data.cat, data.num)
    num = model.standardizer.apply(num)
    y = data.labels.astype(np.float64)

    def loss_and_grad(idx):
        return mlp_loss_and_grad(model, cat[idx], num[idx], y[idx])

    opt, hist = minibatch_adam(
        model.parameters(),
        loss_and_grad,
        len(y),
        lr=config.lr,
        batch_size=config.batch_size,
        seed=config.seed,
        min_epochs=config.epochs,
        max_epochs=config.epochs,
        optimizer=optimizer,
    )
    model.optimizer = opt
    model.history = model.history + hist
    return model


def train_base(train: Dataset, config: TrainConfig = TrainConfig()) -> MLPModel:
    """Model-1: mini-batch Adam on the log-loss over the training split."""
    _check_trainable(train, "train_base")
    model = init_mlp(
        train.schema,
        train.vocab_sizes,
        config.emb_dim,
        config.hidden_dims,
        [config.seed, 1],
        Standardizer.fit(train.num),
        train.vocabularies,
    )
    return _fit(model, train, config, None)


def incremental_update(model: MLPModel, valid: Dataset, config: TrainConfig = TrainConfig()) -> MLPModel:
    """Model-2: a copy of ``model`` trained further on ``valid``.

    The optimizer restarts unless ``config.fresh_optimizer`` is False and the
    model still carries the optimizer state from its own training.
    """
    _check_trainable(valid, "incremental_update")
    new = model.copy()
    opt = None
    if not config.fresh_optimizer and model.optimizer is not None:
        old = model.optimizer
        opt = Adam(
            new.parameters(),
            lr=config.lr,
            beta1=old.beta1,
            beta2=old.beta2,
            eps=old.eps,
            step_count=old.step_count,
            m=[m.copy() for m in old.m],
            v=[v.copy() for v in old.v],
        )
    return _fit(new, valid, config, opt)


# ---------------------------------------------------------------------------
# Neural Calibration


@dataclass(eq=False)
class NeuralCalibration:
    """``q(l, x) = sigmoid(eta(l) + g(x))``; ``g=None`` means ``g == 0``."""

    eta: ILPSParams
    g: MLPModel | None

    def aux(self, cat, num) -> np.ndarray:
        if self.g is None:
            return np.zeros(np.atleast_2d(cat).shape[0])
        return np.atleast_1d(forward(self.g, cat, num))

    def calibrated_logits(self, base_logits, cat, num) -> np.ndarray:
        return ilps_eta(np.atleast_1d(base_logits), self.eta) + self.aux(cat, num)

    def predict(self, base_logits, cat, num) -> np.ndarray:
        return expit(self.calibrated_logits(base_logits, cat, num))


def _nc_parts(valid: Dataset, base_logits, config: TrainConfig, standardizer):
    l = np.asarray(base_logits, dtype=np.float64).ravel()
    if len(l) != len(valid):
        raise DataError(f"{len(l)} base logits for {len(valid)} validation rows")
    a = ilps_knots(config.num_knots)
    g = None
    if config.aux_net:
        g = init_mlp(
            valid.schema,
            valid.vocab_sizes,
            config.emb_dim,
            config.hidden_dims,
            [config.seed, 2],
            standardizer if standardizer is not None else Standardizer.fit(valid.num),
            valid.vocabularies,
            output_scale=config.aux_init_scale,
        )
    return l, a, g


def nc_objective(b, a, g, l, cat, num_std, y, penalty_weight, segments=None):
    """Log-loss of ``sigmoid(eta(l) + g(x))`` plus the isotonic penalty, with
    gradients for ``[b] + g.parameters()``."""
    if g is None:
        loss, gb, _ = ilps_objective(b, a, l, y, penalty_weight, segments=segments)
        return loss, [gb]
    off, acts = _forward(g, cat, num_std)
    loss, gb, r = ilps_objective(b, a, l, y, penalty_weight, offset=off, segments=segments)
    return loss, [gb] + _backward(g, acts, cat, r)


def fit_neural_calibration(
    valid: Dataset,
    base_logits,
    config: TrainConfig = TrainConfig(),
    standardizer: Standardizer | None = None,
) -> NeuralCalibration:
    """Jointly fit the ILPS values and ``g`` on the validation split.

    ``eta`` starts at the identity and ``g`` near zero, so training starts
    from the uncalibrated predictions. ``standardizer`` defaults to
    statistics of ``valid``; pass the base model's to reuse training-split
    statistics. After training the ILPS values are projected to be exactly
    non-decreasing.
    """
    _check_trainable(valid, "fit_neural_calibration")
    l, a, g = _nc_parts(valid, base_logits, config, standardizer)
    b = a.copy()
    lo, t = _segments(l, a)
    y = valid.labels.astype(np.float64)
    if g is not None:
        cat, num = _as_batch(g, valid.cat, valid.num)
        num = g.standardizer.apply(num)
    else:
        cat = num = None

    def loss_and_grad(idx):
        return nc_objective(
            b, a, g, l[idx],
            None if cat is None else cat[idx],
            None if num is None else num[idx],
            y[idx], config.penalty_weight, segments=(lo[idx], t[idx]),
        )

    params = [b] + (g.parameters() if g is not None else [])
    _, hist = minibatch_adam(
        params,
        loss_and_grad,
        len(y),
        lr=config.lr,
        batch_size=config.batch_size,
        seed=config.seed,
        min_epochs=config.epochs,
        max_epochs=config.epochs,
    )
    if g is not None:
        g.history = hist
    return NeuralCalibration(ILPSParams(a, project_monotone(b), config.penalty_weight), g)


def nc_predict(nc: NeuralCalibration, base: MLPModel, cat, num):
    """Calibrated probability ``sigmoid(eta(f(x)) + g(x))`` for a row or batch."""
    scalar = np.ndim(cat) == 1
    p = nc.predict(np.atleast_1d(forward(base, cat, num)), cat, num)
    return float(p[0]) if scalar else p


# ---------------------------------------------------------------------------
# Gradient checking


def gradient_check(obj, batch, h: float = 1e-5, n_checks: int = 40, seed: int = 0) -> float:
    """Max relative error of analytic vs central-difference gradients.

    ``batch`` is ``(cat, num, labels)`` for an :class:`MLPModel`,
    ``(logits, labels)`` for :class:`ILPSParams` and
    ``(base_logits, cat, num, labels)`` for :class:`NeuralCalibration`.
    The object itself is not modified.
    """
    if isinstance(obj, MLPModel):
        model = obj.copy()
        cat, num, y = batch
        cat, num = _as_batch(model, cat, num)
        num = model.standardizer.apply(num)
        y = np.asarray(y, dtype=np.float64)
        params = model.parameters()
        fn = lambda: mlp_loss_and_grad(model, cat, num, y)  # noqa: E731
    elif isinstance(obj, ILPSParams):
        l, y = (np.asarray(x, dtype=np.float64) for x in batch)
        b = obj.values.copy()
        params = [b]

        def fn():
            loss, gb, _ = ilps_objective(b, obj.knots, l, y, obj.penalty_weight)
            return loss, [gb]
    elif isinstance(obj, NeuralCalibration):
        l, cat, num, y = batch
        l = np.asarray(l, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        b = obj.eta.values.copy()
        g = obj.g.copy() if obj.g is not None else None
        if g is not None:
            cat, num = _as_batch(g, cat, num)
            num = g.standardizer.apply(num)
        params = [b] + (g.parameters() if g is not None else [])
        fn = lambda: nc_objective(b, obj.eta.knots, g, l, cat, num, y, obj.eta.penalty_weight)  # noqa: E731
    else:
        raise TypeError(f"cannot gradient-check {type(obj).__name__}")
    return check_gradients(fn, params, h=h, n_checks=n_checks, seed=seed)


# ---------------------------------------------------------------------------
# Persistence


def model_to_dict(model: MLPModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "schema": model.schema.to_dict(),
        "schema_hash": model.schema.fingerprint(),
        "vocabularies": {k: dict(v) for k, v in (model.vocabularies or {}).items()},
        "vocab_sizes": list(model.vocab_sizes),
        "emb_dim": model.emb_dim,
        "hidden_dims": list(model.hidden_dims),
        "standardizer": {
            "mean": model.standardizer.mean.tolist(),
            "scale": model.standardizer.scale.tolist(),
        },
        "params": [
            {"name": name, "shape": list(p.shape), "data": p.ravel().tolist()}
            for name, p in zip(model.parameter_names(), model.parameters())
        ],
    }


def model_from_dict(d: dict) -> MLPModel:
    if d.get("format") != MODEL_FORMAT or d.get("version") != FORMAT_VERSION:
        raise DataError("not a version-1 model document")
    schema = Schema.from_dict(d["schema"])
    if schema.fingerprint() != d["schema_hash"]:
        raise DataError("model schema hash mismatch")
    arrays = [np.array(p["data"], dtype=np.float64).reshape(p["shape"]) for p in d["params"]]
    n_emb = len(schema.categorical)
    embeddings = arrays[:n_emb]
    dense = arrays[n_emb:]
    st = d["standardizer"]
    return MLPModel(
        schema,
        tuple(d["vocab_sizes"]),
        d["emb_dim"],
        tuple(d["hidden_dims"]),
        embeddings,
        dense[0::2],
        dense[1::2],
        Standardizer(np.array(st["mean"], dtype=np.float64), np.array(st["scale"], dtype=np.float64)),
        d.get("vocabularies") or None,
    )


def nc_to_dict(nc: NeuralCalibration) -> dict:
    return {
        "format": NC_FORMAT,
        "version": FORMAT_VERSION,
        "eta": calibrator_to_dict(nc.eta),
        "g": model_to_dict(nc.g) if nc.g is not None else None,
    }


def nc_from_dict(d: dict) -> NeuralCalibration:
    if d.get("format") != NC_FORMAT or d.get("version") != FORMAT_VERSION:
        raise DataError("not a version-1 neural calibration document")
    return NeuralCalibration(calibrator_from_dict(d["eta"]), model_from_dict(d["g"]) if d["g"] else None)


def save_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
