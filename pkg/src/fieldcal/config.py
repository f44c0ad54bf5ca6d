"""INI-style experiment settings.

Files are plain ``key = value`` text grouped in sections; every key and its
default is listed in :data:`DEFAULT_CONFIG` (``fieldcal print-config`` shows
the effective values). Empty values in ``[train]`` fall back to the chosen
profile. Overrides use ``section.key`` names.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import Schema, SynthConfig
from .errors import ConfigError, FieldcalError
from .neural import PROFILES, TrainConfig
from .pipeline import METHODS, ExperimentConfig
from .scaling import FitConfig

# validation-split step budget (Model-2 and Neural Calibration) per profile
VALID_EPOCHS = {"desk": 2, "paper": 1}

_DEMO_RATES = ", ".join(f"{r:.4g}" for r in np.linspace(0.05, 0.6, 20))

DEFAULT_CONFIG = f"""\
[data]
# synth | csv
source = synth
csv_path =
# csv schema, e.g.  state:cat, amount:num
fields =
fairness_field =
label_field = label

[synth]
n_rows = 100000
# one target positive rate per level of the fairness field z
z_rates = {_DEMO_RATES}
# non-fairness categorical fields
cat_cardinalities = 10, 30, 50
n_numerical = 2
weight_scale = 1.0

[split]
fractions = 0.6, 0.2, 0.2
# by-index | shuffled
strategy = shuffled
# numerical column to sort on before cutting (date-style split)
order_by =
# training-split miscalibration knobs
prior_shift_global = 0.0
prior_shift_spread = 1.0
train_label_noise = 0.1

[train]
# desk | paper
profile = desk
emb_dim =
hidden_dims =
lr =
batch_size =
epochs =
# Model-2 and Neural Calibration share this budget on the validation split
valid_epochs =
valid_lr =
fresh_optimizer = true

[calibration]
penalty_weight = 10.0
num_knots = 100
aux_net = true
aux_init_scale = 0.01
histogram_bins = 100
scaling_lr = 0.001
scaling_batch_size = 1024
scaling_min_epochs = 1
scaling_max_epochs = 200
scaling_tol = 1e-5
platt_tol = 1e-8
platt_max_iters = 10000

[experiment]
methods = {", ".join(METHODS)}
seed = 3
repeats = 1
prob_ece_bins = 100
epsilon = 0.01
out = report.json

[artifacts]
model = model1.json
calibrator = calibrator.json
"""


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    cp.read_string(DEFAULT_CONFIG)
    return cp


def read_settings(path: str | Path | None = None, overrides: Mapping[str, str] | None = None):
    """Defaults, then the file at ``path``, then ``section.key`` overrides."""
    cp = _parser()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"{path}: no such config file")
        try:
            extra = configparser.ConfigParser(interpolation=None)
            extra.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from None
        for section in extra.sections():
            if not cp.has_section(section):
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, value in extra.items(section, raw=True):
                if key not in cp[section]:
                    raise ConfigError(f"{path}: unknown key {section}.{key}")
                cp[section][key] = value
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not cp.has_section(section) or key not in cp[section]:
            raise ConfigError(f"unknown setting {dotted!r}")
        cp[section][key] = str(value)
    return cp


def render(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _get(cp, section, key, cast, allow_empty=False):
    raw = cp[section][key].strip()
    if raw == "":
        if allow_empty:
            return None
        raise ConfigError(f"{section}.{key} must not be empty")
    try:
        return cast(raw)
    except (ValueError, FieldcalError) as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from None


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(x) for x in raw.split(",") if x.strip())


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.split(",") if x.strip())


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def train_configs(cp) -> tuple[TrainConfig, TrainConfig, TrainConfig]:
    """Base, Model-2 and Neural Calibration training settings."""
    profile = cp["train"]["profile"].strip()
    if profile not in PROFILES:
        raise ConfigError(f"train.profile must be one of {sorted(PROFILES)}, got {profile!r}")
    base = PROFILES[profile]
    updates = {}
    for key, cast in (("emb_dim", int), ("hidden_dims", _ints), ("lr", float), ("batch_size", int), ("epochs", int)):
        value = _get(cp, "train", key, cast, allow_empty=True)
        if value is not None:
            updates[key] = value
    cal = cp["calibration"]
    updates["penalty_weight"] = _get(cp, "calibration", "penalty_weight", float)
    updates["num_knots"] = _get(cp, "calibration", "num_knots", int)
    updates["fresh_optimizer"] = _get(cp, "train", "fresh_optimizer", _bool)
    try:
        base = replace(base, **updates)
        valid_epochs = _get(cp, "train", "valid_epochs", int, allow_empty=True) or VALID_EPOCHS[profile]
        valid_lr = _get(cp, "train", "valid_lr", float, allow_empty=True) or base.lr
        model2 = replace(base, epochs=valid_epochs, lr=valid_lr)
        nc = replace(
            model2,
            aux_net=_get(cp, "calibration", "aux_net", _bool),
            aux_init_scale=float(cal["aux_init_scale"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return base, model2, nc


def fit_config(cp) -> FitConfig:
    g = lambda k, c: _get(cp, "calibration", k, c)  # noqa: E731
    try:
        return FitConfig(
            lr=g("scaling_lr", float),
            batch_size=g("scaling_batch_size", int),
            min_epochs=g("scaling_min_epochs", int),
            max_epochs=g("scaling_max_epochs", int),
            tol=g("scaling_tol", float),
            penalty_weight=g("penalty_weight", float),
            num_knots=g("num_knots", int),
            platt_tol=g("platt_tol", float),
            platt_max_iters=g("platt_max_iters", int),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def synth_config(cp) -> SynthConfig:
    s = "synth"
    return SynthConfig(
        n_rows=_get(cp, s, "n_rows", int),
        z_rates=_get(cp, s, "z_rates", _floats),
        cat_cardinalities=_get(cp, s, "cat_cardinalities", _ints, allow_empty=True) or (),
        n_numerical=_get(cp, s, "n_numerical", int),
        weight_scale=_get(cp, s, "weight_scale", float),
    )


def experiment_config(cp) -> ExperimentConfig:
    source = cp["data"]["source"].strip()
    synth = csv_path = schema = None
    if source == "synth":
        synth = synth_config(cp)
    elif source == "csv":
        csv_path = _get(cp, "data", "csv_path", str)
        schema = Schema.parse(
            _get(cp, "data", "fields", str),
            _get(cp, "data", "fairness_field", str),
            _get(cp, "data", "label_field", str),
        )
    else:
        raise ConfigError(f"data.source must be 'synth' or 'csv', got {source!r}")
    base, model2, nc = train_configs(cp)
    methods = tuple(m.strip() for m in cp["experiment"]["methods"].split(",") if m.strip())
    if methods == ("all",):
        methods = METHODS
    sp = "split"
    return ExperimentConfig(
        synth=synth,
        csv_path=csv_path,
        schema=schema,
        fractions=_get(cp, sp, "fractions", _floats),
        split_strategy=cp[sp]["strategy"].strip(),
        order_by=cp[sp]["order_by"].strip() or None,
        prior_shift_global=_get(cp, sp, "prior_shift_global", float),
        prior_shift_spread=_get(cp, sp, "prior_shift_spread", float),
        train_label_noise=_get(cp, sp, "train_label_noise", float),
        base=base,
        model2=model2,
        nc=nc,
        fit=fit_config(cp),
        histogram_bins=_get(cp, "calibration", "histogram_bins", int),
        methods=methods,
        prob_ece_bins=_get(cp, "experiment", "prob_ece_bins", int),
        epsilon=_get(cp, "experiment", "epsilon", float),
        seed=_get(cp, "experiment", "seed", int),
        repeats=_get(cp, "experiment", "repeats", int),
        out=cp["experiment"]["out"].strip() or None,
    )


def load_config(path: str | Path | None = None, overrides: Mapping[str, str] | None = None) -> ExperimentConfig:
    return experiment_config(read_settings(path, overrides))
