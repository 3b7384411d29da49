import numpy as np
import pandas as pd
import pytest

from ext.constants import (
    ConfigError,
    DegenerateSplit,
    EligibilityError,
    FeatureKind,
    NoNumericFeatures,
    ParseError,
    SchemaError,
    TaskKind,
)
from ext.dataset import (
    DatasetManifest,
    FeatureDescriptor,
    TaskSpec,
    check_eligibility,
    load_table,
    prepare_dataset,
    select_features,
    split,
)
from helpers import write_csv, write_jsonl, write_manifest


def numeric(name, variance=1.0, position=0):
    return FeatureDescriptor(name, FeatureKind.NUMERIC, 0.0, 1.0, 2, variance, position)


def categorical(name, position=0):
    return FeatureDescriptor(name, FeatureKind.CATEGORICAL, distinct_count=2, position=position)


class TestLoadTable:
    """Reading csv and jsonl files into raw rows plus descriptors"""

    def test_three_row_csv(self, tmp_path):
        path = write_csv(tmp_path / 'small.csv', ['a', 'b', 'label'],
                         [['1', '2.5', 'x'], ['2', '3.5', 'y'], ['3', '4.5', 'x']])
        rows, descriptors = load_table(path, 'csv', label_field='label')

        assert len(rows) == 3
        assert [d.name for d in descriptors] == ['a', 'b', 'label']
        assert descriptors[0].kind is FeatureKind.NUMERIC
        assert descriptors[2].kind is FeatureKind.CATEGORICAL

    def test_empty_cell_is_missing(self, tmp_path):
        path = write_csv(tmp_path / 'gap.csv', ['a', 'label'], [['1', 'x'], ['', 'y'], ['3', 'x']])
        rows, descriptors = load_table(path, 'csv', label_field='label')

        assert rows['a'].iloc[1] is None
        assert descriptors[0].kind is FeatureKind.NUMERIC
        assert descriptors[0].observed_min == 1.0

    def test_jsonl_text_and_label(self, tmp_path):
        path = write_jsonl(tmp_path / 'docs.jsonl', [
            {'text': 'a fine film indeed', 'label': 'positive'},
            {'text': 'not good at all', 'label': 'negative'},
        ])
        _, descriptors = load_table(path, 'jsonl', text_field='text', label_field='label')

        kinds = {d.name: d.kind for d in descriptors}
        assert kinds == {'text': FeatureKind.TEXT, 'label': FeatureKind.CATEGORICAL}

    def test_ragged_csv_rejected(self, tmp_path):
        path = write_csv(tmp_path / 'ragged.csv', ['a', 'b'], [['1', '2'], ['3']])
        with pytest.raises(SchemaError):
            load_table(path, 'csv')

    def test_jsonl_unexpected_field(self, tmp_path):
        path = write_jsonl(tmp_path / 'extra.jsonl', [{'a': 1}, {'a': 2, 'b': 3}])
        with pytest.raises(SchemaError):
            load_table(path, 'jsonl')

    def test_jsonl_invalid_utf8(self, tmp_path):
        path = tmp_path / 'bad.jsonl'
        path.write_bytes(b'{"text": "ok", "label": "a"}\n{"text": "\xff\xfe", "label": "b"}\n')
        with pytest.raises(ParseError, match='UTF-8'):
            load_table(path, 'jsonl', text_field='text', label_field='label')


class TestEligibility:
    """Numeric-coverage and missing-value filters"""

    def _rows(self, names, n=40):
        return pd.DataFrame({name: [1.0] * n for name in names}, dtype=object)

    def test_six_of_ten_numeric_is_eligible(self):
        descriptors = [numeric(f"n{i}", position=i) for i in range(6)]
        descriptors += [categorical(f"c{i}", position=6 + i) for i in range(4)]
        report = check_eligibility(descriptors, self._rows([d.name for d in descriptors]), min_rows=30)

        assert report.numeric_fraction == pytest.approx(0.6)
        assert report.eligible

    def test_five_of_ten_numeric_is_not(self):
        descriptors = [numeric(f"n{i}", position=i) for i in range(5)]
        descriptors += [categorical(f"c{i}", position=5 + i) for i in range(5)]
        report = check_eligibility(descriptors, self._rows([d.name for d in descriptors]), min_rows=30)

        assert report.numeric_fraction == pytest.approx(0.5)
        assert not report.eligible

    def test_missing_value_drop_off(self):
        descriptors = [numeric('a'), numeric('b', position=1)]
        rows = pd.DataFrame({'a': [1.0, None, 3.0], 'b': [None, 2.0, None]}, dtype=object)
        report = check_eligibility(descriptors, rows, min_rows=1)

        assert not report.eligible
        assert report.rows_dropped_missing == 3
        assert 'missing-value drop-off' in report.reason

    def test_unselected_sparse_feature_keeps_rows(self):
        descriptors = [numeric('x1', variance=25.0), numeric('x2', variance=25.0, position=1),
                       numeric('tiny', variance=1e-4, position=2)]
        rows = self._rows(['x1', 'x2', 'tiny'])
        rows.loc[:14, 'tiny'] = None
        report = check_eligibility(descriptors, rows, min_rows=30, feature_cap=2)

        assert report.eligible
        assert report.rows_dropped_missing == 0
        assert report.selected == ('x1', 'x2')

    def test_adding_a_numeric_feature_never_breaks_eligibility(self):
        for n_numeric in range(1, 6):
            for n_categorical in range(0, 6):
                descriptors = [numeric(f"n{i}", position=i) for i in range(n_numeric)]
                descriptors += [categorical(f"c{i}", position=n_numeric + i) for i in range(n_categorical)]
                wider = descriptors + [numeric('extra', position=len(descriptors))]
                before = check_eligibility(descriptors, self._rows([d.name for d in descriptors]), min_rows=30)
                after = check_eligibility(wider, self._rows([d.name for d in wider]), min_rows=30)

                assert after.numeric_fraction >= before.numeric_fraction
                assert after.eligible or not before.eligible


class TestSplit:
    """Deterministic 70/15/15 partition"""

    def test_balanced_binary(self):
        rows = pd.DataFrame({'label': ['p', 'n'] * 50})
        task = TaskSpec(TaskKind.CLASSIFICATION, label_space=('p', 'n'), target_name='label')
        result = split(rows, task, seed=42)

        assert (len(result.train), len(result.valid), len(result.test)) == (70, 15, 15)
        train_labels = rows.loc[list(result.train), 'label']
        assert abs((train_labels == 'p').sum() - 35) <= 1
        assert result.stratified

    def test_same_seed_same_sets(self):
        rows = pd.DataFrame({'label': ['p', 'n', 'n'] * 30})
        task = TaskSpec(TaskKind.CLASSIFICATION, label_space=('p', 'n'), target_name='label')

        assert split(rows, task, seed=3) == split(rows, task, seed=3)

    def test_regression_twenty_rows(self):
        rows = pd.DataFrame({'y': [float(i) for i in range(20)]})
        result = split(rows, TaskSpec(TaskKind.REGRESSION, target_name='y'), seed=0)

        assert (len(result.train), len(result.valid), len(result.test)) == (14, 3, 3)
        assert not result.stratified

    def test_too_few_rows(self):
        rows = pd.DataFrame({'y': [1.0, 2.0]})
        with pytest.raises(DegenerateSplit):
            split(rows, TaskSpec(TaskKind.REGRESSION, target_name='y'), seed=0)


class TestSelectFeatures:
    """Variance-ranked feature cap"""

    def test_under_cap_keeps_all(self):
        descriptors = [numeric(f"f{i}", variance=float(i), position=i) for i in range(7)]
        assert len(select_features(descriptors, cap=10)) == 7

    def test_cap_keeps_highest_variance(self):
        descriptors = [numeric(f"f{i}", variance=float(i % 13), position=i) for i in range(25)]
        first = select_features(descriptors, cap=10)
        second = select_features(descriptors, cap=10)

        assert len(first) == 10
        assert first == second
        assert min(d.variance for d in first) >= max(d.variance for d in descriptors if d not in first)

    def test_cap_of_one(self):
        descriptors = [numeric(f"f{i}", variance=1.0, position=i) for i in range(3)]
        selected = select_features(descriptors, cap=1)

        assert [d.name for d in selected] == ['f0']

    def test_no_numeric_features(self):
        with pytest.raises(NoNumericFeatures):
            select_features([categorical('c')], cap=10)

    def test_invalid_cap(self):
        with pytest.raises(ConfigError):
            select_features([numeric('a')], cap=0)


class TestPrepareDataset:
    """Manifest to split, feature-capped dataset"""

    def test_tabular(self, tabular_manifest):
        prepared = prepare_dataset(DatasetManifest.load(tabular_manifest), seed=0)

        assert prepared.dataset_id == 'tabular'
        assert prepared.task.label_space == ('no', 'yes')
        assert prepared.feature_names == ['x3', 'x2', 'x1']
        assert len(prepared.split_rows('test')) == 60

    def test_text(self, text_manifest):
        prepared = prepare_dataset(DatasetManifest.load(text_manifest), seed=0)

        assert prepared.manifest.modality == 'text'
        assert prepared.feature_names == ['review']

    def test_ineligible(self, tmp_path):
        path = write_csv(tmp_path / 'tiny.csv', ['a', 'label'], [['1', 'x'], ['2', 'y']])
        manifest = write_manifest(tmp_path, 'tiny', path.name, 'csv', 'classification', 'label')
        with pytest.raises(EligibilityError):
            prepare_dataset(DatasetManifest.load(manifest), seed=0)

    def test_missing_values_only_count_in_selected_features(self, tmp_path):
        rng = np.random.default_rng(1)
        rows = []
        for i in range(40):
            x1, x2 = rng.normal(scale=5.0, size=2)
            tiny = '' if i < 15 else f"{rng.normal(scale=0.01):.6f}"
            rows.append([f"{x1:.6f}", f"{x2:.6f}", tiny, 'a' if i % 2 else 'b'])
        write_csv(tmp_path / 'sparse.csv', ['x1', 'x2', 'tiny', 'label'], rows)
        manifest = write_manifest(tmp_path, 'sparse', 'sparse.csv', 'csv', 'classification', 'label')

        prepared = prepare_dataset(DatasetManifest.load(manifest), seed=0, feature_cap=2)

        assert len(prepared.rows) == 40
        assert sorted(prepared.feature_names) == ['x1', 'x2']
        assert prepared.eligibility.rows_dropped_missing == 0

    def test_manifest_missing_field(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{"path": "x.csv", "format": "csv"}', encoding='utf-8')
        with pytest.raises(ConfigError, match='task_kind'):
            DatasetManifest.load(path)
