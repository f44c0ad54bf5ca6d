"""Tabular datasets: schema, CSV ingestion, splitting and synthetic generation.

Categorical values are stored as dense vocabulary indices with index 0
reserved for out-of-vocabulary values, so every categorical column of a
dataset with vocabulary ``V`` takes values in ``[0, len(V)]``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from .errors import ConfigError, DataError, SchemaError

CATEGORICAL = "categorical"
NUMERICAL = "numerical"

_KIND_ALIASES = {
    "cat": CATEGORICAL,
    "categorical": CATEGORICAL,
    "num": NUMERICAL,
    "numerical": NUMERICAL,
}

OOV_INDEX = 0

Vocabulary = dict  # raw string value -> dense index (>= 1)


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind)
        if kind is None:
            raise SchemaError(f"unknown field kind {self.kind!r} for field {self.name!r}")
        object.__setattr__(self, "kind", kind)


@dataclass(frozen=True)
class Schema:
    """Ordered field descriptors plus the fairness field and the label column."""

    fields: tuple[FieldSpec, ...]
    fairness_field: str
    label_field: str = "label"

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate field names in {names}")
        if self.label_field in names:
            raise SchemaError(f"label field {self.label_field!r} listed among input fields")
        if self.fairness_field not in self.categorical:
            raise SchemaError(
                f"fairness field {self.fairness_field!r} must name a categorical field"
            )

    @classmethod
    def parse(cls, text: str, fairness_field: str, label_field: str = "label") -> "Schema":
        """Build a schema from ``"name:kind, name:kind"`` text."""
        specs = []
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            name, sep, kind = item.partition(":")
            if not sep:
                raise SchemaError(f"field descriptor {item!r} is not of the form name:kind")
            specs.append(FieldSpec(name.strip(), kind.strip()))
        return cls(tuple(specs), fairness_field, label_field)

    @property
    def categorical(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields if f.kind == CATEGORICAL)

    @property
    def numerical(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields if f.kind == NUMERICAL)

    @property
    def z_column(self) -> int:
        """Column of the fairness field inside the categorical matrix."""
        return self.categorical.index(self.fairness_field)

    def describe(self) -> str:
        return ", ".join(f"{f.name}:{'cat' if f.kind == CATEGORICAL else 'num'}" for f in self.fields)

    def to_dict(self) -> dict:
        return {
            "fields": [[f.name, f.kind] for f in self.fields],
            "fairness_field": self.fairness_field,
            "label_field": self.label_field,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        return cls(
            tuple(FieldSpec(n, k) for n, k in d["fields"]),
            d["fairness_field"],
            d.get("label_field", "label"),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded rows of a tabular dataset.

    Attributes
    ----------
    cat : int64 array, shape (n, n_categorical)
        Vocabulary indices, one column per categorical field in schema order.
    num : float64 array, shape (n, n_numerical)
    labels : int64 array of {0, 1}, shape (n,)
    row_ids : int64 array, shape (n,)
        Position of each row in the originally loaded/generated data. Used to
        prove split disjointness.
    """

    schema: Schema
    vocabularies: Mapping[str, Vocabulary]
    cat: np.ndarray
    num: np.ndarray
    labels: np.ndarray
    row_ids: np.ndarray
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        cat = np.asarray(self.cat, dtype=np.int64).reshape(n, len(self.schema.categorical))
        num = np.asarray(self.num, dtype=np.float64).reshape(n, len(self.schema.numerical))
        labels = np.asarray(self.labels, dtype=np.int64)
        row_ids = np.asarray(self.row_ids, dtype=np.int64)
        if row_ids.shape != (n,):
            raise SchemaError("row_ids must have one entry per row")
        if n and not np.isin(labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        if not np.isfinite(num).all():
            raise DataError("numerical values must be finite")
        for j, name in enumerate(self.schema.categorical):
            if name not in self.vocabularies:
                raise SchemaError(f"no vocabulary for categorical field {name!r}")
            size = len(self.vocabularies[name]) + 1
            if n and (cat[:, j].min() < 0 or cat[:, j].max() >= size):
                raise SchemaError(f"index out of range for field {name!r}")
        for arr in (cat, num, labels, row_ids):
            arr.flags.writeable = False
        object.__setattr__(self, "cat", cat)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "row_ids", row_ids)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def z(self) -> np.ndarray:
        return self.cat[:, self.schema.z_column]

    @property
    def vocab_sizes(self) -> tuple[int, ...]:
        """Embedding table sizes, including the OOV slot."""
        return tuple(len(self.vocabularies[n]) + 1 for n in self.schema.categorical)

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.schema,
            self.vocabularies,
            self.cat[idx],
            self.num[idx],
            self.labels[idx],
            self.row_ids[idx],
            dict(self.meta),
        )


@dataclass(frozen=True)
class DataSplits:
    train: Dataset
    valid: Dataset
    test: Dataset

    def __iter__(self):
        return iter((self.train, self.valid, self.test))


@dataclass(frozen=True)
class Standardizer:
    """Per-column z-scoring of numerical fields."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, num: np.ndarray) -> "Standardizer":
        num = np.asarray(num, dtype=np.float64)
        if len(num) == 0:
            return cls(np.zeros(num.shape[1]), np.ones(num.shape[1]))
        mean = num.mean(axis=0)
        scale = num.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, width: int) -> "Standardizer":
        return cls(np.zeros(width), np.ones(width))

    def apply(self, num: np.ndarray) -> np.ndarray:
        return (np.asarray(num, dtype=np.float64) - self.mean) / self.scale


# ---------------------------------------------------------------------------
# CSV


def load_csv(
    path: str | Path,
    schema: Schema,
    vocabularies: Mapping[str, Vocabulary] | None = None,
) -> Dataset:
    """Read a CSV file into an encoded :class:`Dataset`.

    With ``vocabularies=None`` the vocabularies are built from the file in
    first-appearance order. When vocabularies are supplied (e.g. from a saved
    model) they are used as-is and unseen values map to the OOV index 0.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    cat_names = schema.categorical
    num_names = schema.numerical
    building = vocabularies is None
    vocabs = {n: {} for n in cat_names} if building else {n: dict(vocabularies[n]) for n in cat_names}

    cat_rows, num_rows, labels = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [n for n in (*cat_names, *num_names, schema.label_field) if n not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        for line_no, rec in enumerate(reader, start=2):
            raw_label = rec[schema.label_field].strip()
            if raw_label not in ("0", "1"):
                raise DataError(f"{path}:{line_no}: label must be 0 or 1, got {raw_label!r}")
            labels.append(int(raw_label))
            codes = []
            for n in cat_names:
                v = rec[n]
                vocab = vocabs[n]
                if v not in vocab:
                    if building:
                        vocab[v] = len(vocab) + 1
                    codes.append(vocab.get(v, OOV_INDEX))
                else:
                    codes.append(vocab[v])
            cat_rows.append(codes)
            values = []
            for n in num_names:
                try:
                    x = float(rec[n])
                except ValueError:
                    raise DataError(f"{path}:{line_no}: field {n!r} is not a number: {rec[n]!r}") from None
                if not math.isfinite(x):
                    raise DataError(f"{path}:{line_no}: field {n!r} is not finite: {rec[n]!r}")
                values.append(x)
            num_rows.append(values)

    n = len(labels)
    return Dataset(
        schema,
        vocabs,
        np.array(cat_rows, dtype=np.int64).reshape(n, len(cat_names)),
        np.array(num_rows, dtype=np.float64).reshape(n, len(num_names)),
        np.array(labels, dtype=np.int64),
        np.arange(n, dtype=np.int64),
        {"source": str(path)},
    )


def write_csv(dataset: Dataset, path: str | Path) -> None:
    """Write raw (decoded) values; floats use ``repr`` so they round-trip exactly."""
    schema = dataset.schema
    inverse = {
        n: {idx: raw for raw, idx in dataset.vocabularies[n].items()} for n in schema.categorical
    }
    cat_pos = {n: j for j, n in enumerate(schema.categorical)}
    num_pos = {n: j for j, n in enumerate(schema.numerical)}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f.name for f in schema.fields] + [schema.label_field])
        for i in range(len(dataset)):
            row = []
            for f in schema.fields:
                if f.kind == CATEGORICAL:
                    row.append(inverse[f.name].get(int(dataset.cat[i, cat_pos[f.name]]), ""))
                else:
                    row.append(repr(float(dataset.num[i, num_pos[f.name]])))
            row.append(str(int(dataset.labels[i])))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Splitting

SPLIT_STRATEGIES = ("by-index", "shuffled")


def check_fractions(fractions: Sequence[float]) -> tuple[float, float, float]:
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3:
        raise ConfigError("split needs exactly three fractions")
    if any(f <= 0 for f in fr):
        raise ConfigError(f"split fractions must be positive, got {fr}")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fr)!r}")
    return fr


def split(
    dataset: Dataset,
    fractions: Sequence[float] = (0.6, 0.2, 0.2),
    strategy: str = "by-index",
    seed: int | None = None,
    order_by: str | None = None,
) -> DataSplits:
    """Cut a dataset into train/valid/test.

    Boundaries are ``floor`` of the cumulative fractions times N; the
    remainder goes to test. ``"shuffled"`` applies a permutation drawn from
    ``seed`` first. ``order_by`` names a numerical column (e.g. a date stamp)
    to sort on, stably, before cutting; it overrides ``strategy``.
    """
    fr = check_fractions(fractions)
    n = len(dataset)
    if order_by is not None:
        if order_by not in dataset.schema.numerical:
            raise ConfigError(f"order_by must name a numerical field, got {order_by!r}")
        col = dataset.schema.numerical.index(order_by)
        order = np.argsort(dataset.num[:, col], kind="stable")
    elif strategy == "by-index":
        order = np.arange(n)
    elif strategy == "shuffled":
        if seed is None:
            raise ConfigError("shuffled split requires a seed")
        order = np.random.default_rng(seed).permutation(n)
    else:
        raise ConfigError(f"unknown split strategy {strategy!r}; expected one of {SPLIT_STRATEGIES}")

    # small slack so e.g. 0.29 * 100 does not floor to 28
    b1 = min(n, math.floor(fr[0] * n + 1e-9))
    b2 = min(n, math.floor((fr[0] + fr[1]) * n + 1e-9))
    return DataSplits(dataset.take(order[:b1]), dataset.take(order[b1:b2]), dataset.take(order[b2:]))


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    ``cat_cardinalities`` lists the non-fairness categorical fields; the
    fairness field ``z`` has ``z_cardinality`` levels with target positive
    rates ``z_rates``.
    """

    n_rows: int
    z_rates: tuple[float, ...]
    cat_cardinalities: tuple[int, ...] = (10, 20, 50)
    z_cardinality: int | None = None
    n_numerical: int = 2
    weight_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "z_rates", tuple(float(r) for r in self.z_rates))
        object.__setattr__(self, "cat_cardinalities", tuple(int(c) for c in self.cat_cardinalities))
        if self.z_cardinality is None:
            object.__setattr__(self, "z_cardinality", len(self.z_rates))
        if self.n_rows < 0:
            raise ConfigError("n_rows must be non-negative")
        if self.z_cardinality < 1 or len(self.z_rates) != self.z_cardinality:
            raise ConfigError(
                f"z_rates has {len(self.z_rates)} entries but z_cardinality is {self.z_cardinality}"
            )
        if any(not (0.0 < r < 1.0) for r in self.z_rates):
            raise ConfigError(f"every z rate must lie in (0, 1), got {self.z_rates}")
        if any(c < 1 for c in self.cat_cardinalities):
            raise ConfigError("categorical cardinalities must be >= 1")
        if self.n_numerical < 0 or self.weight_scale < 0:
            raise ConfigError("n_numerical and weight_scale must be non-negative")

    @property
    def schema(self) -> Schema:
        specs = [FieldSpec("z", CATEGORICAL)]
        specs += [FieldSpec(f"c{j + 1}", CATEGORICAL) for j in range(len(self.cat_cardinalities))]
        specs += [FieldSpec(f"x{j + 1}", NUMERICAL) for j in range(self.n_numerical)]
        return Schema(tuple(specs), "z", "label")


def _level_bias(scores: np.ndarray, rate: float) -> float:
    """Offset b with mean(sigmoid(scores + b)) == rate."""
    if len(scores) == 0:
        return float(logit(rate))
    return brentq(lambda b: expit(scores + b).mean() - rate, -60.0, 60.0, xtol=1e-12)


def synthesize(config: SynthConfig, seed: int) -> Dataset:
    """Draw i.i.d. rows with ``y ~ Bernoulli(sigmoid(score + bias_z))``.

    The score is a sum of per-value random effects of the non-fairness
    categorical fields plus a linear term in standard-normal numerical
    fields. ``bias_z`` is solved per level on the drawn rows so the expected
    positive rate of each level equals ``z_rates[z]``.
    """
    rng = np.random.default_rng(seed)
    n = config.n_rows
    kz = config.z_cardinality

    z = rng.integers(0, kz, size=n)
    others = [rng.integers(0, card, size=n) for card in config.cat_cardinalities]
    num = rng.standard_normal((n, config.n_numerical))
    effects = [rng.normal(0.0, config.weight_scale, size=card) for card in config.cat_cardinalities]
    num_coef = rng.normal(0.0, config.weight_scale, size=config.n_numerical)

    score = num @ num_coef
    for codes, eff in zip(others, effects):
        score = score + eff[codes]
    bias = np.array([_level_bias(score[z == k], r) for k, r in enumerate(config.z_rates)])
    true_logit = score + bias[z]
    labels = (rng.random(n) < expit(true_logit)).astype(np.int64)

    schema = config.schema
    vocabs = {"z": {f"z{k}": k + 1 for k in range(kz)}}
    for j, card in enumerate(config.cat_cardinalities):
        vocabs[f"c{j + 1}"] = {f"c{j + 1}_{v}": v + 1 for v in range(card)}
    cat = np.column_stack([z + 1] + [c + 1 for c in others]) if n else np.zeros((0, 1 + len(others)))
    return Dataset(
        schema,
        vocabs,
        cat,
        num,
        labels,
        np.arange(n, dtype=np.int64),
        {"source": "synthetic", "seed": seed, "true_rates": list(config.z_rates), "level_bias": bias.tolist()},
    )
