import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from summit.data import DataError, Dataset, Feature, FeatureSchema, generate_synthetic
from summit.summarize import (COUNT_COLUMN, LAST, MODE, SummarizationConfig, SummaryMatrix,
                              apply_normalizer, column_names, export_summaries_csv,
                              fit_normalizer, missing_rate, summarize, summarize_dataset)

from conftest import NAN, series, tiny_synth


class TestSummarize:
    def test_worked_example(self, one_num_schema):
        s = series("a", [0, 1, 3], [1.0, 3.0, NAN])
        sm = summarize(s, SummarizationConfig(2.0), 4.0, one_num_schema)
        np.testing.assert_array_equal(sm.values, [[2.0, 2.0], [NAN, 1.0]])
        np.testing.assert_array_equal(sm.mask, [[1, 1], [0, 1]])

    @pytest.mark.parametrize("agg, expected", [(MODE, 0), (LAST, 1)])
    def test_categorical_aggregators(self, agg, expected):
        schema = FeatureSchema((Feature("u", "categorical", ("A", "B")),))
        s = series("a", [0, 0.5, 1], [0, 0, 1])  # A, A, B in one window
        sm = summarize(s, SummarizationConfig(2.0, agg), 2.0, schema)
        assert sm.values[0, 0] == expected

    def test_mode_tie_goes_to_earliest(self):
        schema = FeatureSchema((Feature("u", "categorical", ("A", "B", "C")),))
        s = series("a", [0, 0.5, 1, 1.5], [2, 1, 1, 2])
        assert summarize(s, SummarizationConfig(2.0), 2.0, schema).values[0, 0] == 2

    def test_p12_style_window_count(self, one_num_schema):
        s = series("a", [0, 47.5], [1.0, 2.0])
        sm = summarize(s, SummarizationConfig(2.0), 48.0, one_num_schema)
        assert sm.k == 24 and sm.values.shape == (24, 2)

    def test_remainder_absorbed_by_last_window(self, one_num_schema):
        # T=5, p=2: k=2 and the last window is [2, 5]
        s = series("a", [0, 2.5, 4.9, 5.0], [1, 2, 3, 4])
        sm = summarize(s, SummarizationConfig(2.0), 5.0, one_num_schema)
        np.testing.assert_array_equal(sm.values, [[1, 1], [3, 3]])

    def test_anchored_at_first_timestamp(self, one_num_schema):
        a = summarize(series("a", [0, 1, 3], [1, 2, 3]), SummarizationConfig(2.0), 4.0, one_num_schema)
        b = summarize(series("b", [10, 11, 13], [1, 2, 3]), SummarizationConfig(2.0), 4.0, one_num_schema)
        np.testing.assert_array_equal(a.values, b.values)

    def test_empty_series(self, mixed_schema):
        s = series("e", [], np.zeros((0, 2)))
        sm = summarize(s, SummarizationConfig(1.0), 3.0, mixed_schema)
        np.testing.assert_array_equal(sm.mask, [[0, 0, 1]] * 3)
        np.testing.assert_array_equal(sm.values[:, -1], 0)

    def test_window_longer_than_T(self, one_num_schema):
        with pytest.raises(DataError):
            summarize(series("a", [0], [1]), SummarizationConfig(5.0), 4.0, one_num_schema)

    def test_count_column_and_mask_invariants(self, tiny_ds):
        cfg = SummarizationConfig(2.0)
        for s, sm in zip(tiny_ds.samples, summarize_dataset(tiny_ds, cfg)):
            assert sm.k == int(np.floor(tiny_ds.observation_window / cfg.window))
            assert sm.values[:, -1].sum() == s.m
            assert np.all(sm.mask[:, -1] == 1)
            assert np.array_equal(sm.mask == 0, np.isnan(sm.values))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_shuffling_rows_within_a_window(self, seed):
        rng = np.random.default_rng(seed)
        schema = FeatureSchema((Feature("x"), Feature("u", "categorical", ("A", "B", "C"))))
        m = 8
        t = np.zeros(m)  # one shared timestamp: row order within it is free
        vals = np.column_stack([rng.normal(size=m), rng.integers(0, 3, size=m)]).astype(float)
        vals[rng.random(vals.shape) < 0.3] = np.nan
        counts = np.bincount(vals[~np.isnan(vals[:, 1]), 1].astype(int), minlength=3)
        perm = rng.permutation(m)
        a = summarize(series("a", t, vals), SummarizationConfig(1.0), 1.0, schema)
        b = summarize(series("b", t, vals[perm]), SummarizationConfig(1.0), 1.0, schema)
        np.testing.assert_allclose(a.values[:, 0], b.values[:, 0], rtol=1e-12, equal_nan=True)
        if counts.max() > 0 and (counts == counts.max()).sum() == 1:  # unique mode
            assert a.values[0, 1] == b.values[0, 1]

    def test_column_names(self, mixed_schema):
        assert column_names(mixed_schema) == ["hr", "unit", COUNT_COLUMN]


def _sm(values):
    v = np.asarray(values, dtype=float)
    return SummaryMatrix(v, (~np.isnan(v)).astype(np.uint8))


class TestNormalizer:
    def test_mean_and_std(self, one_num_schema):
        norm = fit_normalizer([_sm([[1.0, 1.0], [3.0, 1.0]])], one_num_schema)
        assert norm.mean[0] == 2.0 and norm.std[0] == 1.0

    def test_all_missing_column_falls_back(self, one_num_schema):
        norm = fit_normalizer([_sm([[NAN, 1.0], [NAN, 2.0]])], one_num_schema)
        assert norm.mean[0] == 0.0 and norm.std[0] == 1.0

    def test_constant_column(self, one_num_schema):
        sm = _sm([[5.0, 1], [5.0, 1], [5.0, 1]])
        norm = fit_normalizer([sm], one_num_schema)
        assert norm.std[0] == 1.0
        np.testing.assert_array_equal(apply_normalizer(sm, norm).values[:, 0], 0.0)

    def test_apply_observed_cell(self, one_num_schema):
        norm = fit_normalizer([_sm([[1.0, 0.0], [3.0, 0.0]])], one_num_schema)
        out = apply_normalizer(_sm([[2.0, 0.0], [NAN, 0.0]]), norm)
        assert out.values[0, 0] == 0.0
        assert np.isnan(out.values[1, 0]) and out.mask[1, 0] == 0

    def test_impute_all_missing_row(self, mixed_schema):
        train = [_sm([[1.0, 2.0, 1.0], [3.0, 2.0, 1.0], [2.0, 0.0, 3.0]])]
        norm = fit_normalizer(train, mixed_schema)
        out = apply_normalizer(_sm([[NAN, NAN, 0.0]]), norm, impute=True)
        assert out.values[0, 0] == 0.0 and out.values[0, 1] == 2.0
        np.testing.assert_array_equal(out.mask, [[1, 1, 1]])

    def test_shape_mismatch(self, one_num_schema, mixed_schema):
        norm = fit_normalizer([_sm([[1.0, 1.0]])], one_num_schema)
        with pytest.raises(DataError):
            apply_normalizer(_sm([[1.0, 0.0, 1.0]]), norm)

    def test_json_round_trip(self, mixed_schema):
        norm = fit_normalizer([_sm([[1.0, 2.0, 1.0], [4.0, 1.0, 2.0]])], mixed_schema)
        back = type(norm).from_json(norm.to_json())
        for f in ("mean", "std", "mode", "categorical"):
            np.testing.assert_array_equal(getattr(back, f), getattr(norm, f))


class TestMissingRate:
    def test_all_observed(self):
        assert missing_rate([_sm(np.ones((3, 4)))]) == 0.0

    def test_three_of_twelve(self):
        v = np.ones((3, 5))  # 4 feature columns + count
        v[0, 0] = v[1, 2] = v[2, 3] = NAN
        assert missing_rate([_sm(v)]) == 0.25

    def test_synthetic_target(self):
        cfg = tiny_synth(n_samples=400, missing_rate=0.75, observation_window=48.0,
                         summary_window=6.0, mean_events=40)
        rate = missing_rate(summarize_dataset(generate_synthetic(cfg), SummarizationConfig(6.0)))
        assert abs(rate - 0.75) <= 0.02

    def test_empty_list(self):
        with pytest.raises(ValueError):
            missing_rate([])


def test_csv_export(tmp_path, mixed_schema):
    ds = Dataset(mixed_schema, [series("a", [0, 1], [[1.5, 0], [NAN, 2]])], 2.0)
    sms = summarize_dataset(ds, SummarizationConfig(1.0))
    p = tmp_path / "s.csv"
    export_summaries_csv(ds, sms, p)
    lines = p.read_text().splitlines()
    assert lines[0] == ("id,window,hr,unit,segment_entry_count,"
                        "hr.mask,unit.mask,segment_entry_count.mask")
    assert lines[1] == "a,0,1.5,0.0,1.0,1,1,1"
    assert lines[2] == "a,1,,2.0,1.0,0,1,1"
