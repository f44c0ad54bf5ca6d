"""End-to-end experiments comparing base models and calibration methods.

One run: load or synthesize data, split it, optionally re-sample the
training split's class prior, train the base model (Model-1) once, fit every
requested method on the validation split against that shared base, and score
all of them on the untouched test split.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from . import metrics as M
from . import neural, scaling
from .data import SPLIT_STRATEGIES, Dataset, DataSplits, Schema, SynthConfig, check_fractions, load_csv, split, synthesize
from .errors import ConfigError, FieldcalError

log = logging.getLogger(__name__)

METHODS = ("model1", "model2", "histogram", "isotonic", "platt", "ilps", "neural_calibration")
SCALING_METHODS = ("histogram", "isotonic", "platt", "ilps")
ABLATION_METHODS = SCALING_METHODS

TRAINING_DATA = {
    "model1": "train",
    "model2": "train+valid",
    **{m: "train->valid" for m in (*SCALING_METHODS, "neural_calibration")},
}

DISPLAY_NAMES = {
    "model1": "Base (Model-1)",
    "model2": "Base (Model-2)",
    "histogram": "Histogram Bin.",
    "isotonic": "Isotonic Reg.",
    "platt": "Platt Scaling",
    "ilps": "ILPS",
    "neural_calibration": "Neural Calibration",
}


def derive_seed(master: int, name: str) -> int:
    """Stable per-component seed: a hash of the master seed and a name."""
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig | None = None
    csv_path: str | None = None
    schema: Schema | None = None
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    split_strategy: str = "shuffled"
    order_by: str | None = None
    # training-split prior shift, in log-odds: global offset plus per-level uniform spread
    prior_shift_global: float = 0.0
    prior_shift_spread: float = 0.0
    # fraction of training negatives relabelled positive (non-affine miscalibration)
    train_label_noise: float = 0.0
    base: neural.TrainConfig = neural.PROFILES["desk"]
    model2: neural.TrainConfig = neural.PROFILES["desk"]
    nc: neural.TrainConfig = neural.PROFILES["desk"]
    fit: scaling.FitConfig = scaling.FitConfig()
    histogram_bins: int = 100
    methods: tuple[str, ...] = METHODS
    prob_ece_bins: int = M.DEFAULT_PROB_ECE_BINS
    epsilon: float = M.DEFAULT_EPSILON
    seed: int = 0
    repeats: int = 1
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "fractions", check_fractions(self.fractions))
        if self.split_strategy not in SPLIT_STRATEGIES:
            raise ConfigError(f"split strategy must be one of {SPLIT_STRATEGIES}, got {self.split_strategy!r}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method(s) {unknown}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if (self.synth is None) == (self.csv_path is None):
            raise ConfigError("configure exactly one data source (synthetic or csv)")
        if self.csv_path is not None and self.schema is None:
            raise ConfigError("a csv data source needs a schema")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.prior_shift_spread < 0:
            raise ConfigError("prior_shift_spread must be non-negative")
        if not 0.0 <= self.train_label_noise < 1.0:
            raise ConfigError("train_label_noise must lie in [0, 1)")

    def to_dict(self) -> dict:
        """Settings echo for reports; the output path is left out so a report's
        bytes do not depend on where it is written."""
        d = dataclasses.asdict(self)
        d["schema"] = self.schema.to_dict() if self.schema else None
        del d["out"]
        return d


@dataclass
class MethodResult:
    method: str
    training_data: str
    metrics: M.MetricsReport
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "training_data": self.training_data,
            "metrics": self.metrics.to_dict(),
            "details": self.details,
        }


@dataclass
class ExperimentReport:
    results: list[MethodResult]
    config: dict
    runtime: dict = field(default_factory=dict)

    def __getitem__(self, method: str) -> MethodResult:
        for r in self.results:
            if r.method == method:
                return r
        raise KeyError(method)

    @property
    def methods(self) -> list[str]:
        return [r.method for r in self.results]

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = {"format": "fieldcal.report", "version": 1, "config": self.config,
             "results": [r.to_dict() for r in self.results]}
        if include_runtime:
            d["runtime"] = self.runtime
        return d

    def to_json(self, include_runtime: bool = False) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2, sort_keys=True) + "\n"

    def to_markdown(self) -> str:
        lines = [
            "| Method | Training data | Log-loss | Brier score | Field-ECE | Field-RCE | AUC |",
            "|---|---|---|---|---|---|---|",
        ]
        for r in self.results:
            m = r.metrics
            auc = "n/a" if m.auc is None else f"{m.auc:.4f}"
            lines.append(
                f"| {DISPLAY_NAMES[r.method]} | {r.training_data} | {m.log_loss:.4f} | {m.brier:.4f} "
                f"| {m.field_ece:.4f} | {100 * m.field_rce:.2f}% | {auc} |"
            )
        return "\n".join(lines) + "\n"

    def ablation_markdown(self) -> str:
        lines = ["| Method | Field-ECE |", "|---|---|"]
        for r in self.results:
            lines.append(f"| {DISPLAY_NAMES[r.method]} | {r.metrics.field_ece:.4f} |")
        return "\n".join(lines) + "\n"


Audit = Callable[[str, Dataset], None]


class TestRowAudit:
    """Records the row ids handed to every fitting routine.

    ``violations(test)`` lists the stages that received any test row. Row
    ids are also hashed so a log of fingerprints can be compared byte for
    byte across runs.
    """

    __test__ = False  # not a pytest class

    def __init__(self):
        self.seen: dict[str, np.ndarray] = {}
        self.fingerprints: dict[str, str] = {}

    def __call__(self, stage: str, dataset: Dataset) -> None:
        ids = np.sort(np.asarray(dataset.row_ids, dtype=np.int64))
        self.seen[stage] = ids
        self.fingerprints[stage] = hashlib.sha256(ids.tobytes()).hexdigest()

    def violations(self, test: Dataset) -> list[str]:
        test_ids = np.asarray(test.row_ids)
        return [s for s, ids in self.seen.items() if np.intersect1d(ids, test_ids).size]


def shift_prior(
    dataset: Dataset, global_shift: float, spread: float, seed: int, label_noise: float = 0.0
) -> Dataset:
    """Re-sample rows so each fairness level's log-odds move by ``u_z``.

    ``u_z = global_shift + spread * Uniform(-1, 1)``. Positives are kept
    with probability ``min(1, e^{u_z})`` and negatives with
    ``min(1, e^{-u_z})``, which multiplies the level's odds by ``e^{u_z}``.
    Afterwards each remaining negative is relabelled positive with
    probability ``label_noise``, turning a rate ``p`` into
    ``p + label_noise * (1 - p)``.
    """
    if global_shift == 0.0 and spread == 0.0 and label_noise == 0.0:
        return dataset
    rng = np.random.default_rng(seed)
    n_levels = len(dataset.vocabularies[dataset.schema.fairness_field]) + 1
    u = global_shift + spread * rng.uniform(-1.0, 1.0, size=n_levels)
    shift = u[dataset.z]
    keep_prob = np.where(dataset.labels == 1, np.minimum(1.0, np.exp(shift)), np.minimum(1.0, np.exp(-shift)))
    keep = np.flatnonzero(rng.random(len(dataset)) < keep_prob)
    out = dataset.take(keep)
    labels = out.labels.copy()
    flip = (labels == 0) & (rng.random(len(out)) < label_noise)
    labels[flip] = 1
    meta = {**dict(dataset.meta), "prior_shift": u.tolist(), "label_noise": label_noise}
    return Dataset(out.schema, out.vocabularies, out.cat, out.num, labels, out.row_ids, meta)


def load_dataset(config: ExperimentConfig, seed: int) -> Dataset:
    if config.synth is not None:
        return synthesize(config.synth, derive_seed(seed, "data"))
    return load_csv(config.csv_path, config.schema)


def level_names(data: Dataset) -> list[str]:
    vocab = data.vocabularies[data.schema.fairness_field]
    return ["<oov>"] + sorted(vocab, key=vocab.get)


def _evaluate(config: ExperimentConfig, probs, test: Dataset) -> M.MetricsReport:
    pset = M.PredictionSet(probs, test.labels, test.z)
    return M.evaluate_all(pset, config.prob_ece_bins, config.epsilon, level_names=level_names(test))


class MethodError(FieldcalError):
    """A method failed inside the pipeline; the message names the method."""

    def __init__(self, method: str, cause: Exception):
        super().__init__(f"[{method}] {type(cause).__name__}: {cause}")
        self.method = method
        self.cause = cause


def prepare_splits(config: ExperimentConfig, seed: int) -> DataSplits:
    """Load and split the data, then apply the training-split miscalibration."""
    dataset = load_dataset(config, seed)
    splits = split(dataset, config.fractions, config.split_strategy, derive_seed(seed, "split"), config.order_by)
    train = shift_prior(splits.train, config.prior_shift_global, config.prior_shift_spread,
                        derive_seed(seed, "prior_shift"), config.train_label_noise)
    return DataSplits(train, splits.valid, splits.test)


def train_model1(config: ExperimentConfig, seed: int, train: Dataset) -> neural.MLPModel:
    return neural.train_base(train, replace(config.base, seed=derive_seed(seed, "model1")))


def fit_method(method: str, config: ExperimentConfig, seed: int, model1: neural.MLPModel,
               valid: Dataset, l_valid: np.ndarray | None = None):
    """Fit one method on the validation split against the shared ``model1``.

    Returns an :class:`~fieldcal.neural.MLPModel` for ``model2``, a
    :class:`~fieldcal.neural.NeuralCalibration`, a scaling calibrator, or
    ``None`` for ``model1`` itself.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "model1":
        return None
    if l_valid is None:
        l_valid = neural.predict_logits(model1, valid)
    mseed = derive_seed(seed, method)
    if method == "model2":
        return neural.incremental_update(model1, valid, replace(config.model2, seed=mseed))
    if method == "neural_calibration":
        return neural.fit_neural_calibration(valid, l_valid, replace(config.nc, seed=mseed), model1.standardizer)
    fit = replace(config.fit, seed=mseed)
    if method == "histogram":
        return scaling.fit_histogram_binning(l_valid, valid.labels, config.histogram_bins)
    if method == "isotonic":
        return scaling.fit_isotonic(l_valid, valid.labels)
    if method == "platt":
        return scaling.fit_platt(l_valid, valid.labels, fit)
    return scaling.fit_ilps(l_valid, valid.labels, fit)


def predict(fitted, model1: neural.MLPModel, data: Dataset, l_base: np.ndarray | None = None) -> np.ndarray:
    """Probabilities of a :func:`fit_method` result (``None`` means Model-1)."""
    if isinstance(fitted, neural.MLPModel):
        return expit(neural.predict_logits(fitted, data))
    if l_base is None:
        l_base = neural.predict_logits(model1, data)
    if fitted is None:
        return expit(l_base)
    if isinstance(fitted, neural.NeuralCalibration):
        return fitted.predict(l_base, data.cat, data.num)
    return scaling.apply(fitted, l_base)


def _details(fitted, l_test: np.ndarray) -> dict:
    if isinstance(fitted, neural.NeuralCalibration):
        return {"eta_strictly_increasing": bool(np.all(np.diff(fitted.eta.values) > 0))}
    if isinstance(fitted, scaling.PlattParams):
        return {"a": fitted.a, "b": fitted.b}
    if isinstance(fitted, scaling.ILPSParams):
        return {
            "strictly_increasing": bool(np.all(np.diff(fitted.values) > 0)),
            "test_logits_inside_knots": bool(l_test.min() >= fitted.knots[0] and l_test.max() <= fitted.knots[-1]),
        }
    return {}


def _run_once(config: ExperimentConfig, seed: int, audit: Audit | None) -> ExperimentReport:
    timings = {}
    t0 = time.perf_counter()
    train, valid, test = prepare_splits(config, seed)
    timings["data"] = time.perf_counter() - t0
    audit = audit or (lambda stage, ds: None)

    def step(method, fn):
        t = time.perf_counter()
        try:
            out = fn()
        except FieldcalError as exc:
            raise MethodError(method, exc) from exc
        timings[method] = time.perf_counter() - t
        return out

    audit("model1", train)
    model1 = step("model1", lambda: train_model1(config, seed, train))
    l_valid = neural.predict_logits(model1, valid)
    l_test = neural.predict_logits(model1, test)
    results = []
    for method in config.methods:
        if method != "model1":
            audit(method, valid)
        fitted = step(method, lambda: fit_method(method, config, seed, model1, valid, l_valid))
        probs = predict(fitted, model1, test, l_test)
        results.append(MethodResult(method, TRAINING_DATA[method], _evaluate(config, probs, test), _details(fitted, l_test)))

    timings["total"] = time.perf_counter() - t0
    runtime = {"seconds": timings, "rows": {"train": len(train), "valid": len(valid), "test": len(test)}}
    return ExperimentReport(results, config.to_dict(), runtime)


def _average(reports: list[ExperimentReport]) -> ExperimentReport:
    first = reports[0]
    results = []
    for i, r in enumerate(first.results):
        vals = {}
        for key in ("log_loss", "brier", "prob_ece", "field_ece", "field_rce", "auc"):
            xs = [getattr(rep.results[i].metrics, key) for rep in reports]
            vals[key] = None if any(x is None for x in xs) else float(np.mean(xs))
        m = M.MetricsReport(**vals, per_field=[], n=r.metrics.n)
        results.append(MethodResult(r.method, r.training_data, m, {"repeats": len(reports)}))
    runtime = {"runs": [rep.runtime for rep in reports]}
    return ExperimentReport(results, first.config, runtime)


def run_pipeline(config: ExperimentConfig, audit: Audit | None = None) -> ExperimentReport:
    """Run every requested method; with ``repeats > 1`` metrics are averaged
    over master seeds ``seed, seed + 1, ...`` (per-level breakdowns dropped)."""
    reports = [_run_once(config, config.seed + r, audit) for r in range(config.repeats)]
    report = reports[0] if len(reports) == 1 else _average(reports)
    log.info("experiment finished in %.1fs", sum(
        rep.runtime.get("seconds", {}).get("total", 0.0) for rep in reports))
    if config.out:
        write_report(report, config.out)
    return report


def compare_ablation(config: ExperimentConfig, audit: Audit | None = None) -> ExperimentReport:
    """Univariate mappings only, all on the shared Model-1."""
    return run_pipeline(replace(config, methods=ABLATION_METHODS), audit)


def write_report(report: ExperimentReport, out: str | Path) -> tuple[Path, Path]:
    """Write ``<out>`` (JSON) and the markdown table next to it (``.md``)."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(), encoding="utf-8")
    md = out.with_suffix(".md")
    md.write_text(report.to_markdown(), encoding="utf-8")
    return out, md
