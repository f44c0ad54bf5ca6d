"""Command line entry point: ``fieldcal <command> [options]``.

Commands share one INI config (see ``fieldcal print-config``). Every
failure prints a single JSON line to stderr, for example
``{"error": "data", "exit_code": 3, "message": "..."}``, and exits with
2 (config), 3 (data or metric) or 4 (training).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfg
from . import neural, scaling
from .data import load_csv, synthesize, write_csv
from .errors import ConfigError, DataError, FieldcalError, TrainingError
from .metrics import PredictionSet, evaluate_all
from .pipeline import (
    METHODS,
    MethodError,
    derive_seed,
    fit_method,
    level_names,
    predict,
    prepare_splits,
    run_pipeline,
    train_model1,
)

EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 2, 3, 4


def _settings(args):
    overrides = dict(kv.split("=", 1) for kv in args.set if "=" in kv)
    bad = [kv for kv in args.set if "=" not in kv]
    if bad:
        raise ConfigError(f"--set expects section.key=value, got {bad[0]!r}")
    if getattr(args, "seed", None) is not None:
        overrides["experiment.seed"] = str(args.seed)
    if getattr(args, "profile", None) is not None:
        overrides["train.profile"] = args.profile
    return cfg.read_settings(args.config, overrides)


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_print_config(args) -> int:
    sys.stdout.write(cfg.render(_settings(args)))
    return 0


def cmd_synth(args) -> int:
    settings = _settings(args)
    config = cfg.experiment_config(settings)
    if config.synth is None:
        raise ConfigError("synth needs data.source = synth")
    out = args.out or "synth.csv"
    write_csv(synthesize(config.synth, derive_seed(config.seed, "data")), out)
    print(out)
    return 0


def cmd_train(args) -> int:
    config = cfg.experiment_config(_settings(args))
    train, _, _ = prepare_splits(config, config.seed)
    model = train_model1(config, config.seed, train)
    out = args.out or "model1.json"
    neural.save_json(neural.model_to_dict(model), out)
    print(out)
    return 0


def _load_model(path) -> neural.MLPModel:
    return neural.model_from_dict(neural.load_json(path))


def _load_calibrator(path):
    doc = neural.load_json(path)
    fmt = doc.get("format")
    if fmt == scaling.CALIBRATOR_FORMAT:
        return scaling.calibrator_from_dict(doc)
    if fmt == neural.NC_FORMAT:
        return neural.nc_from_dict(doc)
    if fmt == neural.MODEL_FORMAT:
        return neural.model_from_dict(doc)
    raise DataError(f"{path}: unrecognised calibrator format {fmt!r}")


def _dump_fitted(fitted) -> dict:
    if isinstance(fitted, neural.MLPModel):
        return neural.model_to_dict(fitted)
    if isinstance(fitted, neural.NeuralCalibration):
        return neural.nc_to_dict(fitted)
    return scaling.calibrator_to_dict(fitted)


def cmd_calibrate(args) -> int:
    if args.method == "model1":
        raise ConfigError("model1 is the uncalibrated base; pick a calibration method")
    config = cfg.experiment_config(_settings(args))
    _, valid, _ = prepare_splits(config, config.seed)
    model = _load_model(args.model)
    fitted = fit_method(args.method, config, config.seed, model, valid)
    out = args.out or "calibrator.json"
    neural.save_json(_dump_fitted(fitted), out)
    print(out)
    return 0


def cmd_evaluate(args) -> int:
    config = cfg.experiment_config(_settings(args))
    model = _load_model(args.model)
    if args.data:
        data = load_csv(args.data, model.schema, model.vocabularies)
    else:
        _, _, data = prepare_splits(config, config.seed)
    fitted = _load_calibrator(args.calibrator) if args.calibrator else None
    probs = predict(fitted, model, data)
    report = evaluate_all(
        PredictionSet(probs, data.labels, data.z),
        config.prob_ece_bins,
        config.epsilon,
        require_auc=True,
        level_names=level_names(data),
    )
    _emit(report.to_dict(), args.out)
    return 0


def cmd_experiment(args) -> int:
    settings = _settings(args)
    if args.out:
        settings["experiment"]["out"] = args.out
    config = cfg.experiment_config(settings)
    report = run_pipeline(config)
    if config.out:
        print(config.out)
    else:
        sys.stdout.write(report.to_markdown())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldcal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI file layered over the defaults")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one setting (repeatable)")
        p.add_argument("--seed", type=int, help="master seed (experiment.seed)")
        p.add_argument("--profile", choices=sorted(neural.PROFILES), help="model size profile")
        p.set_defaults(fn=fn)
        return p

    add("print-config", cmd_print_config, "show the effective configuration")
    add("synth", cmd_synth, "write the synthetic dataset as CSV").add_argument("--out")
    add("train", cmd_train, "train the base model (Model-1)").add_argument("--out")
    p = add("calibrate", cmd_calibrate, "fit one calibration method on the validation split")
    p.add_argument("--method", required=True, choices=[m for m in METHODS if m != "model1"])
    p.add_argument("--model", required=True, help="Model-1 JSON from 'train'")
    p.add_argument("--out")
    p = add("evaluate", cmd_evaluate, "score a model (and optional calibrator)")
    p.add_argument("--model", required=True)
    p.add_argument("--calibrator", help="output of 'calibrate'")
    p.add_argument("--data", help="labelled CSV to score instead of the test split")
    p.add_argument("--out", help="metrics JSON path (default stdout)")
    add("experiment", cmd_experiment, "run the full comparison").add_argument(
        "--out", help="report JSON path; a markdown table is written beside it")
    return parser


def _exit_code(exc: BaseException) -> tuple[str, int]:
    if isinstance(exc, MethodError):
        return _exit_code(exc.cause)
    if isinstance(exc, ConfigError):
        return "config", EXIT_CONFIG
    if isinstance(exc, TrainingError):
        return "training", EXIT_TRAINING
    return "data", EXIT_DATA


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except FieldcalError as exc:
        kind, code = _exit_code(exc)
        message = " ".join(str(exc).split())
        print(json.dumps({"error": kind, "exit_code": code, "message": message}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
