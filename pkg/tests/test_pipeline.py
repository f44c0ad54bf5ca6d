import hashlib
import json
from dataclasses import replace

import numpy as np
import pytest

from fieldcal import neural, scaling
from fieldcal import pipeline as P
from fieldcal.data import Schema, SynthConfig, synthesize, write_csv
from fieldcal.errors import ConfigError
from fieldcal.neural import TrainConfig

FAST = P.ExperimentConfig(
    synth=SynthConfig(3000, (0.2, 0.5, 0.7), cat_cardinalities=(4, 6)),
    prior_shift_spread=1.0,
    base=TrainConfig(emb_dim=4, hidden_dims=(8,)),
    model2=TrainConfig(emb_dim=4, hidden_dims=(8,)),
    nc=TrainConfig(emb_dim=4, hidden_dims=(8,)),
    fit=scaling.FitConfig(max_epochs=5, num_knots=20),
    histogram_bins=20,
    seed=5,
)


def digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).hexdigest()


def test_report_rows_and_order():
    report = P.run_pipeline(FAST)
    assert report.methods == list(P.METHODS)
    assert [r.training_data for r in report.results] == [
        "train", "train+valid", *["train->valid"] * 5
    ]
    for r in report.results:
        assert r.metrics.n == report.results[0].metrics.n


def test_single_method():
    report = P.run_pipeline(replace(FAST, methods=("model1",)))
    assert report.methods == ["model1"]
    assert report.to_markdown().count("\n") == 3


def test_byte_identical_json():
    a = P.run_pipeline(FAST).to_json()
    b = P.run_pipeline(FAST).to_json()
    assert a == b
    assert "runtime" not in json.loads(a)


def test_seed_changes_results():
    a = P.run_pipeline(FAST).to_json()
    assert P.run_pipeline(replace(FAST, seed=6)).to_json() != a


def test_two_level_scenario_every_method_beats_model1():
    cfg = replace(
        P.ExperimentConfig(synth=SynthConfig(100_000, (0.1, 0.9)), seed=3),
        prior_shift_spread=1.0,
        train_label_noise=0.1,
        model2=TrainConfig(epochs=2),
        nc=TrainConfig(epochs=2),
    )
    report = P.run_pipeline(cfg)
    base = report["model1"].metrics.field_ece
    for method in report.methods[1:]:
        assert report[method].metrics.field_ece < base, method


class TestHygiene:
    def test_audit_hook_sees_no_test_rows(self):
        audit = P.TestRowAudit()
        P.run_pipeline(FAST, audit=audit)
        _, _, test = P.prepare_splits(FAST, FAST.seed)
        assert audit.violations(test) == []
        assert set(audit.seen) == set(P.METHODS)
        assert len(audit.fingerprints["model1"]) == 64

    def test_fitters_receive_only_train_and_valid(self, monkeypatch):
        """Independent of the audit hook: wrap the fitting entry points."""
        seen = []

        def wrap(module, name, kind):
            original = getattr(module, name)

            def spy(*args, **kwargs):
                seen.append((name, kind, args))
                return original(*args, **kwargs)

            monkeypatch.setattr(module, name, spy)

        for name in ("train_base", "incremental_update", "fit_neural_calibration"):
            wrap(neural, name, "dataset")
        for name in ("fit_histogram_binning", "fit_isotonic", "fit_platt", "fit_ilps"):
            wrap(scaling, name, "logits")

        P.run_pipeline(FAST)
        calls = list(seen)  # freeze before the reference model below is trained
        train, valid, test = P.prepare_splits(FAST, FAST.seed)
        test_ids = set(test.row_ids.tolist())
        model1 = neural.train_base(train, replace(FAST.base, seed=P.derive_seed(FAST.seed, "model1")))
        valid_logits = digest(neural.predict_logits(model1, valid))

        assert sum(1 for name, *_ in calls if name == "train_base") == 1  # one shared Model-1
        for name, kind, args in calls:
            if kind == "dataset":
                data = args[1] if name == "incremental_update" else args[0]
                assert not test_ids & set(data.row_ids.tolist()), name
            else:
                assert digest(args[0]) == valid_logits, name
                np.testing.assert_array_equal(args[1], valid.labels)


def test_shared_base_scaling_auc():
    report = P.run_pipeline(replace(FAST, methods=("model1", "platt")))
    assert report["platt"].details["a"] > 0
    assert report["platt"].metrics.auc == report["model1"].metrics.auc


def test_repeats_average():
    cfg = replace(FAST, methods=("model1", "platt"), repeats=2)
    avg = P.run_pipeline(cfg)
    runs = [P.run_pipeline(replace(cfg, repeats=1, seed=FAST.seed + r)) for r in range(2)]
    for m in ("model1", "platt"):
        want = np.mean([r[m].metrics.field_ece for r in runs])
        assert avg[m].metrics.field_ece == pytest.approx(want, abs=1e-15)


def test_compare_ablation():
    report = P.compare_ablation(FAST)
    assert report.methods == list(P.ABLATION_METHODS)
    assert report.ablation_markdown().count("|") == 3 * (2 + 4)


def test_write_report(tmp_path):
    out = tmp_path / "sub" / "r.json"
    report = P.run_pipeline(replace(FAST, methods=("model1", "isotonic"), out=str(out)))
    assert json.loads(out.read_text())["results"][1]["method"] == "isotonic"
    md = out.with_suffix(".md").read_text()
    assert md.splitlines()[0] == "| Method | Training data | Log-loss | Brier score | Field-ECE | Field-RCE | AUC |"
    assert "Isotonic Reg." in md and "%" in md
    assert report.to_markdown() == md


def test_csv_source(tmp_path):
    ds = synthesize(SynthConfig(1500, (0.3, 0.6), cat_cardinalities=(3,)), seed=0)
    path = tmp_path / "d.csv"
    write_csv(ds, path)
    cfg = replace(
        FAST, synth=None, csv_path=str(path), schema=Schema.parse("z:cat, c1:cat, x1:num, x2:num", "z"),
        methods=("model1", "ilps"), split_strategy="by-index",
    )
    report = P.run_pipeline(cfg)
    assert report.methods == ["model1", "ilps"]
    assert {s.level for s in report["ilps"].metrics.per_field} <= {"<oov>", "z0", "z1"}


def test_method_error_is_tagged():
    # a one-class validation split cannot support Platt scaling
    cfg = replace(FAST, synth=SynthConfig(600, (0.01,), cat_cardinalities=(2,)), methods=("platt",))
    with pytest.raises(P.MethodError, match=r"^\[") as info:
        for seed in range(20):
            P.run_pipeline(replace(cfg, seed=seed))
    assert info.value.method in ("model1", "platt")


@pytest.mark.parametrize(
    "kwargs",
    [
        {"methods": ()},
        {"methods": ("model1", "model1")},
        {"methods": ("bbq",)},
        {"repeats": 0},
        {"train_label_noise": 1.0},
        {"prior_shift_spread": -1.0},
        {"csv_path": "x.csv"},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        replace(FAST, **kwargs)


def test_shift_prior_moves_rates_as_documented():
    ds = synthesize(SynthConfig(40_000, (0.3, 0.3)), seed=2)
    shifted = P.shift_prior(ds, 1.0, 0.0, seed=1)
    odds = lambda r: r / (1 - r)  # noqa: E731
    assert odds(shifted.labels.mean()) / odds(ds.labels.mean()) == pytest.approx(np.e, rel=0.05)
    noisy = P.shift_prior(ds, 0.0, 0.0, seed=1, label_noise=0.2)
    assert noisy.labels.mean() == pytest.approx(ds.labels.mean() + 0.2 * (1 - ds.labels.mean()), abs=0.01)
    assert P.shift_prior(ds, 0.0, 0.0, seed=1) is ds


def test_derive_seed_is_stable():
    assert P.derive_seed(3, "model1") == P.derive_seed(3, "model1")
    assert P.derive_seed(3, "model1") != P.derive_seed(3, "model2")
    assert 0 <= P.derive_seed(0, "x") < 2**31
