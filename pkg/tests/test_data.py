import numpy as np
import pytest

from fieldcal.data import (
    OOV_INDEX,
    Dataset,
    Schema,
    Standardizer,
    SynthConfig,
    load_csv,
    split,
    synthesize,
    write_csv,
)
from fieldcal.errors import ConfigError, DataError, SchemaError

SCHEMA = Schema.parse("state:cat, amount:num", fairness_field="state")


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestSchema:
    def test_parse(self):
        assert SCHEMA.categorical == ("state",)
        assert SCHEMA.numerical == ("amount",)
        assert SCHEMA.z_column == 0

    def test_fairness_field_must_be_categorical(self):
        with pytest.raises(SchemaError):
            Schema.parse("state:cat, amount:num", fairness_field="amount")

    def test_bad_kind(self):
        with pytest.raises(SchemaError):
            Schema.parse("state:text", fairness_field="state")

    def test_roundtrip_and_fingerprint(self):
        again = Schema.from_dict(SCHEMA.to_dict())
        assert again == SCHEMA
        assert again.fingerprint() == SCHEMA.fingerprint()
        other = Schema.parse("state:cat, amount:num, x:num", fairness_field="state")
        assert other.fingerprint() != SCHEMA.fingerprint()


class TestLoadCSV:
    def test_three_rows(self, tmp_path):
        path = write(tmp_path, "state,amount,label\nCA,1.5,0\nNY,2.0,1\nCA,-3,0\n")
        ds = load_csv(path, SCHEMA)
        assert len(ds) == 3
        assert ds.vocab_sizes == (1 + 2,)
        assert ds.labels.tolist() == [0, 1, 0]
        assert ds.z.tolist() == [1, 2, 1]
        assert ds.num[:, 0].tolist() == [1.5, 2.0, -3.0]

    def test_bad_label_names_row(self, tmp_path):
        path = write(tmp_path, "state,amount,label\nCA,1,0\nNY,2,2\n")
        with pytest.raises(DataError, match=r":3: label"):
            load_csv(path, SCHEMA)

    def test_header_only(self, tmp_path):
        ds = load_csv(write(tmp_path, "state,amount,label\n"), SCHEMA)
        assert len(ds) == 0
        assert ds.vocabularies["state"] == {}
        assert ds.cat.shape == (0, 1) and ds.num.shape == (0, 1)

    def test_missing_column(self, tmp_path):
        with pytest.raises(SchemaError, match="amount"):
            load_csv(write(tmp_path, "state,label\nCA,1\n"), SCHEMA)

    def test_non_finite(self, tmp_path):
        with pytest.raises(DataError, match="finite"):
            load_csv(write(tmp_path, "state,amount,label\nCA,inf,1\n"), SCHEMA)

    def test_not_a_number(self, tmp_path):
        with pytest.raises(DataError, match=":2:"):
            load_csv(write(tmp_path, "state,amount,label\nCA,abc,1\n"), SCHEMA)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "nope.csv", SCHEMA)

    def test_supplied_vocabulary_maps_unknowns_to_oov(self, tmp_path):
        path = write(tmp_path, "state,amount,label\nTX,1,0\nCA,2,1\n")
        ds = load_csv(path, SCHEMA, vocabularies={"state": {"CA": 1, "NY": 2}})
        assert ds.z.tolist() == [OOV_INDEX, 1]

    def test_write_roundtrip(self, tmp_path):
        ds = synthesize(SynthConfig(50, (0.3, 0.7), cat_cardinalities=(3,), n_numerical=2), seed=4)
        path = tmp_path / "out.csv"
        write_csv(ds, path)
        back = load_csv(path, ds.schema, ds.vocabularies)
        np.testing.assert_array_equal(back.cat, ds.cat)
        np.testing.assert_array_equal(back.num, ds.num)
        np.testing.assert_array_equal(back.labels, ds.labels)


class TestDataset:
    def test_arrays_are_read_only(self):
        ds = synthesize(SynthConfig(10, (0.5,)), seed=0)
        with pytest.raises(ValueError):
            ds.labels[0] = 1

    def test_index_out_of_range(self):
        with pytest.raises(SchemaError):
            Dataset(SCHEMA, {"state": {"CA": 1}}, [[5]], [[0.0]], [1], [0])


def _ten_rows():
    ds = synthesize(SynthConfig(10, (0.5,), cat_cardinalities=(), n_numerical=1), seed=0)
    return ds


class TestSplit:
    def test_by_index(self):
        tr, va, te = split(_ten_rows(), (0.6, 0.2, 0.2), "by-index")
        assert tr.row_ids.tolist() == [0, 1, 2, 3, 4, 5]
        assert va.row_ids.tolist() == [6, 7]
        assert te.row_ids.tolist() == [8, 9]

    def test_shuffled_is_seeded(self):
        a = split(_ten_rows(), (0.6, 0.2, 0.2), "shuffled", seed=7)
        b = split(_ten_rows(), (0.6, 0.2, 0.2), "shuffled", seed=7)
        for x, y in zip(a, b):
            assert x.row_ids.tolist() == y.row_ids.tolist()
        ids = np.concatenate([s.row_ids for s in a])
        assert sorted(ids.tolist()) == list(range(10))
        assert ids.tolist() != list(range(10))

    def test_zero_fraction(self):
        with pytest.raises(ConfigError):
            split(_ten_rows(), (0.5, 0.5, 0.0))

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            split(_ten_rows(), (0.5, 0.3, 0.3))

    def test_shared_vocabularies(self):
        ds = synthesize(SynthConfig(200, (0.2, 0.8)), seed=2)
        for part in split(ds, seed=1, strategy="shuffled"):
            assert part.vocabularies is ds.vocabularies

    def test_order_by(self):
        ds = synthesize(SynthConfig(30, (0.5,), cat_cardinalities=(), n_numerical=1), seed=3)
        tr, va, te = split(ds, (0.6, 0.2, 0.2), "by-index", order_by="x1")
        assert tr.num.max() <= va.num.min() and va.num.max() <= te.num.min()


class TestSynthesize:
    def test_level_rates(self):
        ds = synthesize(SynthConfig(10_000, (0.1, 0.9)), seed=1)
        for k, r in enumerate((0.1, 0.9)):
            assert abs(ds.labels[ds.z == k + 1].mean() - r) <= 0.03

    def test_empty(self):
        ds = synthesize(SynthConfig(0, (0.1, 0.9)), seed=1)
        assert len(ds) == 0

    def test_seeds(self):
        cfg = SynthConfig(500, (0.3, 0.6))
        a, b, c = synthesize(cfg, 1), synthesize(cfg, 1), synthesize(cfg, 2)
        np.testing.assert_array_equal(a.cat, b.cat)
        np.testing.assert_array_equal(a.num, b.num)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert not np.array_equal(a.cat, c.cat)

    @pytest.mark.parametrize("rates", [(0.0, 0.5), (0.5, 1.0), (1.2,)])
    def test_rates_outside_unit_interval(self, rates):
        with pytest.raises(ConfigError):
            SynthConfig(10, rates)

    def test_field_count(self):
        cfg = SynthConfig(10, tuple(np.linspace(0.1, 0.5, 20)), cat_cardinalities=(10, 30, 50))
        assert len(cfg.schema.categorical) == 4
        assert synthesize(cfg, 0).vocab_sizes[0] == 21


def test_standardizer():
    x = np.array([[1.0, 5.0], [3.0, 5.0]])
    st = Standardizer.fit(x)
    out = st.apply(x)
    np.testing.assert_allclose(out[:, 0], [-1.0, 1.0])
    assert np.isfinite(out).all()  # constant column does not divide by zero
