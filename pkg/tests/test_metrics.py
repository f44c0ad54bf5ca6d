import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fieldcal import metrics as M
from fieldcal.errors import DataError, MetricError

# frozen from oracles (exact rationals / pairwise counts), see test_frozen_values_match_oracles
LOG_LOSS_3 = 0.49870307570903244
BRIER_3 = 0.16333333333333333
FIELD_ECE_4 = 0.3
FIELD_RCE_4 = 760 / 1717
AUC_4 = 0.75

P3, Y3 = [0.8, 0.6, 0.3], [1, 0, 0]
P4, Y4, Z4 = [0.8, 0.6, 0.3, 0.1], [1, 1, 0, 1], [0, 0, 1, 1]


def ps(probs, labels, z=None):
    return M.PredictionSet(probs, labels, z)


def test_frozen_values_match_oracles():
    assert oracles.log_loss(P3, Y3) == pytest.approx(LOG_LOSS_3, abs=1e-15)
    assert oracles.brier(P3, Y3) == pytest.approx(BRIER_3, abs=1e-15)
    assert oracles.field_ece(P4, Y4, Z4) == pytest.approx(FIELD_ECE_4, abs=1e-15)
    assert oracles.field_rce(P4, Y4, Z4) == pytest.approx(FIELD_RCE_4, abs=1e-15)
    assert oracles.auc([0.2, 0.4, 0.6, 0.8], [0, 1, 0, 1]) == AUC_4


@pytest.mark.parametrize("inputs, expected", M.WORKED_EXAMPLES)
def test_worked_examples_match_oracles(inputs, expected):
    p, y, z = inputs["probs"], inputs["labels"], inputs.get("z")
    direct = {
        "log_loss": lambda: oracles.log_loss(p, y),
        "brier": lambda: oracles.brier(p, y),
        "prob_ece@2": lambda: oracles.prob_ece(p, y, 2),
        "field_ece": lambda: oracles.field_ece(p, y, z),
        "field_rce": lambda: oracles.field_rce(p, y, z),
        "auc": lambda: oracles.auc(p, y),
    }
    got = M.worked_example_values(inputs)
    for key, want in expected.items():
        assert direct[key]() == pytest.approx(want, abs=1e-15), key
        assert got[key] == want, key


class TestLogLoss:
    def test_half(self):
        assert M.log_loss(ps([0.5, 0.5], [0, 1])) == pytest.approx(math.log(2), abs=1e-15)

    def test_clipping_floor(self):
        assert M.log_loss(ps([1.0], [1])) <= 1.2e-7

    def test_worked_example(self):
        assert M.log_loss(ps(P3, Y3)) == pytest.approx(LOG_LOSS_3, abs=1e-15)

    def test_empty(self):
        with pytest.raises(DataError):
            M.log_loss(ps([], []))


class TestBrier:
    def test_perfect(self):
        assert M.brier(ps([1, 0], [1, 0])) == 0.0

    def test_single(self):
        assert M.brier(ps([0.5], [1])) == 0.25

    def test_worked_example(self):
        assert M.brier(ps(P3, Y3)) == pytest.approx(BRIER_3, abs=1e-15)

    def test_empty(self):
        with pytest.raises(DataError):
            M.brier(ps([], []))


class TestProbECE:
    def test_constant_at_base_rate(self):
        y = [0, 1, 1, 0, 0, 1, 0, 0]
        for bins in (1, 2, 7, 100):
            assert M.prob_ece(ps([3 / 8] * 8, y), bins) == pytest.approx(0.0, abs=1e-15)

    def test_two_bins(self):
        assert M.prob_ece(ps([0.1, 0.9], [0, 1]), 2) == pytest.approx(0.1, abs=1e-15)

    def test_perfect_binary(self):
        assert M.prob_ece(ps([0.0, 1.0], [0, 1]), 10) == 0.0

    def test_one_lands_in_last_bin(self):
        assert M.prob_bin_index(np.array([0.0, 0.5, 1.0]), 4).tolist() == [0, 2, 3]

    def test_bad_bins(self):
        with pytest.raises(DataError):
            M.prob_ece(ps([0.5], [1]), 0)


class TestFieldECE:
    def test_worked_example(self):
        assert M.field_ece(ps(P4, Y4, Z4)) == pytest.approx(FIELD_ECE_4, abs=1e-15)

    def test_perfect(self):
        assert M.field_ece(ps([1, 0, 1], [1, 0, 1], [0, 1, 1])) == 0.0

    def test_single_level(self):
        p, y = [0.2, 0.9, 0.4], [0, 1, 1]
        assert M.field_ece(ps(p, y, [5, 5, 5])) == pytest.approx(abs(np.mean(y) - np.mean(p)), abs=1e-15)

    def test_needs_z(self):
        with pytest.raises(DataError):
            M.field_ece(ps([0.5], [1]))

    def test_empty(self):
        with pytest.raises(DataError):
            M.field_ece(ps([], [], []))


class TestFieldRCE:
    def test_worked_example(self):
        assert M.field_rce(ps(P4, Y4, Z4), 0.01) == pytest.approx(FIELD_RCE_4, abs=1e-15)

    def test_perfect(self):
        assert M.field_rce(ps([1, 0], [1, 0], [0, 1])) == 0.0

    def test_all_negative_level(self):
        # one level, all labels 0: contributes n * m / (n * eps), divided by |D| = n
        p = [0.1, 0.3, 0.2]
        m = sum(p)
        assert M.field_rce(ps(p, [0, 0, 0], [1, 1, 1]), 0.01) == pytest.approx(
            (3 * m / (3 * 0.01)) / 3, rel=1e-14
        )

    def test_epsilon_positive(self):
        with pytest.raises(DataError):
            M.field_rce(ps([0.5], [1], [0]), 0.0)


class TestAUC:
    def test_perfect(self):
        assert M.auc(ps([0.1, 0.9], [0, 1])) == 1.0

    def test_tie(self):
        assert M.auc(ps([0.5, 0.5], [0, 1])) == 0.5

    def test_worked_example(self):
        assert M.auc(ps([0.2, 0.4, 0.6, 0.8], [0, 1, 0, 1])) == AUC_4

    def test_single_class(self):
        with pytest.raises(MetricError, match="AUC"):
            M.auc(ps([0.2, 0.3], [1, 1]))


class TestReport:
    def test_composition(self):
        rep = M.evaluate_all(ps(P4, Y4, Z4), prob_ece_bins=10, epsilon=0.01)
        assert rep.field_ece == pytest.approx(FIELD_ECE_4, abs=1e-15)
        assert rep.field_rce == pytest.approx(FIELD_RCE_4, abs=1e-15)
        assert rep.n == 4
        assert rep.breakdown_field_ece() == pytest.approx(rep.field_ece, abs=1e-15)
        assert [s.count for s in rep.per_field] == [2, 2]

    def test_single_class_flags_auc(self):
        rep = M.evaluate_all(ps([0.2, 0.3], [1, 1], [0, 0]))
        assert rep.auc is None and not rep.auc_defined
        with pytest.raises(MetricError):
            M.evaluate_all(ps([0.2, 0.3], [1, 1], [0, 0]), require_auc=True)

    def test_json_keys_and_roundtrip(self):
        rep = M.evaluate_all(ps(P4, Y4, Z4), level_names=["oov", "A", "B"])
        d = json.loads(json.dumps(rep.to_dict()))
        assert {"log_loss", "brier", "prob_ece", "field_ece", "field_rce", "auc", "per_field"} <= set(d)
        assert [s["level"] for s in d["per_field"]] == ["oov", "A"]
        assert M.MetricsReport.from_dict(d).to_dict() == d


class TestValidation:
    def test_length_mismatch(self):
        with pytest.raises(DataError):
            ps([0.1, 0.2], [1])

    def test_out_of_range(self):
        with pytest.raises(DataError):
            ps([1.5], [1])

    def test_bad_labels(self):
        with pytest.raises(DataError):
            ps([0.5], [2])


# ---------------------------------------------------------------------------
# properties

probs_labels = st.integers(1, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
        st.lists(st.integers(0, 4), min_size=n, max_size=n),
    )
)


@settings(max_examples=150, deadline=None)
@given(probs_labels)
def test_oracle_agreement(data):
    p, y, z = data
    pset = ps(p, y, z)
    assert M.log_loss(pset) == pytest.approx(oracles.log_loss(p, y), abs=1e-12)
    assert M.brier(pset) == pytest.approx(oracles.brier(p, y), abs=1e-12)
    assert M.prob_ece(pset, 10) == pytest.approx(oracles.prob_ece(p, y, 10), abs=1e-12)
    assert M.field_ece(pset) == pytest.approx(oracles.field_ece(p, y, z), abs=1e-12)
    assert M.field_rce(pset) == pytest.approx(oracles.field_rce(p, y, z), abs=1e-12)
    if 0 < sum(y) < len(y):
        assert M.auc(pset) == pytest.approx(oracles.auc(p, y), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=40), st.lists(st.integers(0, 3), min_size=40, max_size=40))
def test_perfect_prediction_identity(y, z):
    pset = ps([float(v) for v in y], y, z[: len(y)])
    rep = M.evaluate_all(pset)
    assert rep.log_loss <= 1.2e-7
    assert rep.brier == rep.prob_ece == rep.field_ece == rep.field_rce == 0.0


@settings(max_examples=60, deadline=None)
@given(probs_labels)
def test_merging_levels_never_increases_field_ece(data):
    p, y, z = data
    merged = M.field_ece(ps(p, y, [0] * len(p)))
    assert merged <= M.field_ece(ps(p, y, z)) + 1e-12


@settings(max_examples=60, deadline=None)
@given(probs_labels, st.randoms(use_true_random=False))
def test_permutation_invariance(data, rnd):
    p, y, z = data
    order = list(range(len(p)))
    rnd.shuffle(order)
    a = M.evaluate_all(ps(p, y, z))
    b = M.evaluate_all(ps([p[i] for i in order], [y[i] for i in order], [z[i] for i in order]))
    for key in ("log_loss", "brier", "prob_ece", "field_ece", "field_rce"):
        assert getattr(a, key) == pytest.approx(getattr(b, key), abs=1e-12)
    assert a.auc == b.auc


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_invariant_under_strictly_increasing_map(rows):
    p = [k / 1000 for k, _ in rows]
    y = [v for _, v in rows]
    if not 0 < sum(y) < len(y):
        return
    # squaring is strictly increasing on this grid, even after rounding
    q = [v * v for v in p]
    assert M.auc(ps(q, y)) == M.auc(ps(p, y))


def test_brute_force_auc_up_to_200():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(2, 201))
        p = np.round(rng.random(n), int(rng.integers(1, 4)))  # rounding makes ties
        y = rng.integers(0, 2, n)
        if 0 < y.sum() < n:
            assert M.auc(ps(p, y)) == pytest.approx(oracles.auc(p.tolist(), y.tolist()), abs=1e-12)


def test_constant_base_rate_dissociation_on_generator_data():
    """Field-ECE of the constant predictor equals the weighted level deviation."""
    from fieldcal.data import SynthConfig, synthesize

    ds = synthesize(SynthConfig(4000, (0.1, 0.9)), seed=1)
    y = ds.labels
    p = np.full(len(y), y.mean())
    pset = ps(p, y, ds.z)
    dev = sum((ds.z == k).sum() * abs(y[ds.z == k].mean() - y.mean()) for k in np.unique(ds.z)) / len(y)
    assert M.prob_ece(pset) == pytest.approx(0.0, abs=1e-12)
    assert M.field_ece(pset) == pytest.approx(dev, abs=1e-12)
    assert M.field_ece(pset) > 0.3
