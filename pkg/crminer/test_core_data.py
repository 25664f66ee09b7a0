#!/usr/bin/env python3
"""
Unit tests for core_data.py

Tests cover:
- Table loading, missing-value dropping and error reporting
- Score transform and predicted labels
- Quantile discretization and vocabulary ids
- Encoding, unseen categories and outcome partitions
"""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from crminer import core_data
from crminer.core_data import (
    Dataset,
    Item,
    ItemVocabulary,
    Operator,
    Predicate,
    RawTable,
    ScoreTransform,
    TableSchema,
    encode,
    fit_discretization,
    load_table,
    minimum_count,
    predicted_label,
    transform_score,
)
from crminer.errors import (
    ContractViolation,
    DataError,
    EmptyDatasetError,
    RowError,
    SchemaError,
    ScoreRangeError,
)

SAMPLE = Path(__file__).parent / "sample-tiny.csv"
SCHEMA = TableSchema(score_col="score", label_col="label")


def write_csv(tmp_path, text, name="table.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def table_of(columns, scores=None, labels=None, numeric=(), categorical=()):
    frame = pd.DataFrame(columns)
    n = len(frame)
    return RawTable(
        frame=frame,
        scores=np.zeros(n) if scores is None else np.asarray(scores, dtype=float),
        labels=np.ones(n, dtype=np.int8) if labels is None else np.asarray(labels, dtype=np.int8),
        numeric=tuple(numeric),
        categorical=tuple(categorical),
    )


class TestLoadTable:
    """Test load_table() function."""

    def test_loads_sample(self):
        """Bundled sample loads with inferred attribute kinds."""
        table = load_table(str(SAMPLE), SCHEMA)

        assert len(table) == 36
        assert table.numeric == ("age", "hours")
        assert table.categorical == ("job",)
        assert set(np.unique(table.labels)) == {-1, 1}

    def test_three_rows_without_missing_values(self, tmp_path):
        """Complete rows are all kept."""
        path = write_csv(tmp_path, "age,score,label\n25,-0.4,1\n35,0.5,1\n45,0.2,-1\n")

        assert len(load_table(path, SCHEMA)) == 3

    def test_drops_rows_with_missing_attribute(self, tmp_path):
        """A row lacking an attribute value is dropped."""
        path = write_csv(tmp_path, "age,job,score,label\n25,a,-0.4,1\n,b,0.5,1\n45,c,0.2,-1\n")

        table = load_table(path, SCHEMA)

        assert len(table) == 2
        assert list(table.frame["job"]) == ["a", "c"]

    def test_missing_label_column_raises_schema_error(self, tmp_path):
        """A table without the label column is rejected."""
        path = write_csv(tmp_path, "age,score\n25,-0.4\n")

        with pytest.raises(SchemaError, match="label"):
            load_table(path, SCHEMA)

    def test_unparseable_score_reports_row(self, tmp_path):
        """A non-numeric score raises a row error naming the row."""
        path = write_csv(tmp_path, "age,score,label\n25,-0.4,1\n30,abc,1\n")

        with pytest.raises(RowError) as excinfo:
            load_table(path, SCHEMA)

        assert excinfo.value.row_index == 1
        assert excinfo.value.column == "score"

    def test_declared_numeric_column_must_parse(self, tmp_path):
        """A declared numeric attribute with text raises a row error."""
        path = write_csv(tmp_path, "age,score,label\n25,-0.4,1\nold,0.1,1\n")
        schema = TableSchema(score_col="score", label_col="label", numeric_cols=("age",))

        with pytest.raises(RowError) as excinfo:
            load_table(path, schema)

        assert excinfo.value.row_index == 1

    def test_zero_labels_map_to_minus_one(self, tmp_path):
        """Labels encoded as {0, 1} are read as {-1, 1}."""
        path = write_csv(tmp_path, "age,score,label\n25,-0.4,0\n35,0.5,1\n")

        assert list(load_table(path, SCHEMA).labels) == [-1, 1]

    def test_identity_scores_must_lie_inside_range(self, tmp_path):
        """An identity score of 2.0 is a range error."""
        path = write_csv(tmp_path, "age,score,label\n25,2.0,1\n")

        with pytest.raises(ScoreRangeError):
            load_table(path, SCHEMA)

    def test_tanh_transform_maps_unbounded_scores(self, tmp_path):
        """tanh keeps large raw scores strictly inside (-1, 1)."""
        path = write_csv(tmp_path, "age,score,label\n25,50.0,1\n30,-3.0,-1\n")
        schema = TableSchema(score_col="score", label_col="label", score_transform=ScoreTransform.TANH)

        table = load_table(path, schema)

        assert np.all(np.abs(table.scores) < 1)
        assert table.scores[1] == pytest.approx(np.tanh(-3.0))

    def test_missing_file_is_data_error(self, tmp_path):
        """A missing input file is reported as a data error."""
        with pytest.raises(DataError):
            load_table(str(tmp_path / "absent.csv"), SCHEMA)


class TestTransformScore:
    """Test transform_score() and predicted_label()."""

    def test_tanh_of_zero(self):
        """tanh(0) is 0."""
        assert transform_score(0.0, ScoreTransform.TANH) == 0.0

    def test_identity(self):
        """Identity returns the score unchanged."""
        assert transform_score(0.7, ScoreTransform.IDENTITY) == 0.7

    def test_identity_out_of_range(self):
        """Identity rejects |score| >= 1."""
        with pytest.raises(ScoreRangeError):
            transform_score(2.0, ScoreTransform.IDENTITY)

    def test_tanh_overflow_is_nudged_inside(self):
        """Scores that saturate tanh stay strictly inside (-1, 1)."""
        assert transform_score(1000.0, ScoreTransform.TANH) == core_data.SCORE_LIMIT
        assert transform_score(-1000.0, ScoreTransform.TANH) == -core_data.SCORE_LIMIT

    @pytest.mark.parametrize("score,label", [(0.7, 1), (-0.3, -1), (0.0, -1)])
    def test_predicted_label(self, score, label):
        """Positive scores predict 1; zero and below predict -1."""
        assert predicted_label(score) == label


class TestFitDiscretization:
    """Test fit_discretization() function."""

    def test_numeric_cuts_produce_two_items_each(self):
        """Quartile cuts 20, 30, 40 give six items in cut order."""
        table = table_of({"age": [10.0, 20.0, 30.0, 40.0, 50.0]}, numeric=["age"])

        spec, vocabulary = fit_discretization(table)

        assert spec.attributes[0].cuts == (20.0, 30.0, 40.0)
        assert [(i.operator, i.value) for i in vocabulary.items] == [
            (Operator.LT, 20.0), (Operator.GE, 20.0),
            (Operator.LT, 30.0), (Operator.GE, 30.0),
            (Operator.LT, 40.0), (Operator.GE, 40.0),
        ]
        assert [i.id for i in vocabulary.items] == list(range(6))

    def test_categorical_items(self):
        """Categories {a, b} give two = items."""
        table = table_of({"job": ["b", "a", "b"]}, categorical=["job"])

        _, vocabulary = fit_discretization(table)

        assert [(i.operator, i.value) for i in vocabulary.items] == [(Operator.EQ, "a"), (Operator.EQ, "b")]

    def test_categorical_not_equal_items(self):
        """With the flag, each category also gets a != item right after its = item."""
        table = table_of({"job": ["b", "a"]}, categorical=["job"])

        _, vocabulary = fit_discretization(table, categorical_not_equal=True)

        assert [i.describe() for i in vocabulary.items] == ["job = a", "job ≠ a", "job = b", "job ≠ b"]

    def test_constant_column_has_no_items(self):
        """A constant numeric column yields no cut points and no items."""
        table = table_of({"age": [5.0, 5.0, 5.0]}, numeric=["age"])

        spec, vocabulary = fit_discretization(table)

        assert spec.attributes[0].cuts == ()
        assert len(vocabulary) == 0

    def test_duplicate_quantiles_collapse(self):
        """Repeated quantile values become a single cut."""
        table = table_of({"x": [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0]}, numeric=["x"])

        spec, _ = fit_discretization(table)

        assert spec.attributes[0].cuts == (1.0,)

    def test_ids_follow_attribute_order(self):
        """Items of earlier attributes get lower ids."""
        table = table_of(
            {"job": ["a", "b", "a", "b", "a"], "age": [10.0, 20.0, 30.0, 40.0, 50.0]},
            numeric=["age"], categorical=["job"],
        )

        _, vocabulary = fit_discretization(table)

        assert [i.attribute for i in vocabulary.items] == ["job", "job"] + ["age"] * 6

    def test_empty_table_rejected(self):
        """Fitting needs at least one row."""
        with pytest.raises(EmptyDatasetError):
            fit_discretization(table_of({"age": []}, numeric=["age"]))


class TestItemVocabulary:
    """Test ItemVocabulary and Predicate contracts."""

    def test_fingerprint_is_stable(self):
        """Equal items give equal fingerprints."""
        items = (Item("age", Operator.LT, 30.0, 0), Item("age", Operator.GE, 30.0, 1))

        assert ItemVocabulary(items).fingerprint == ItemVocabulary(items).fingerprint
        assert ItemVocabulary(items).fingerprint != ItemVocabulary(items[:1]).fingerprint

    def test_ids_must_be_contiguous(self):
        """A gap in the ids is a contract violation."""
        with pytest.raises(ContractViolation):
            ItemVocabulary((Item("age", Operator.LT, 30.0, 1),))

    def test_order_must_be_bijection(self):
        """order_permutation must permute the ids."""
        items = (Item("a", Operator.EQ, "x", 0), Item("a", Operator.EQ, "y", 1))

        assert ItemVocabulary(items).order_permutation == (0, 1)
        assert ItemVocabulary(items).with_order([1, 0]).order_permutation == (1, 0)
        with pytest.raises(ContractViolation):
            ItemVocabulary(items, (0, 0))

    def test_numeric_operator_needs_numeric_value(self):
        """< with a string value is rejected."""
        with pytest.raises(ContractViolation):
            Predicate("age", Operator.LT, "thirty")

    def test_lookup(self):
        """Items are found by attribute, operator and value."""
        vocabulary = ItemVocabulary((Item("age", Operator.LT, 30.0, 0), Item("job", Operator.EQ, "a", 1)))

        assert vocabulary.lookup("age", "<", 30) == 0
        assert vocabulary.lookup("job", "=", "a") == 1
        with pytest.raises(KeyError):
            vocabulary.lookup("job", "=", "b")


class TestEncode:
    """Test encode() and Dataset partitions."""

    def test_row_bitset_and_partition(self):
        """age=25 with score -0.4 and label 1 contains age<30 and is a false negative."""
        table = table_of({"age": [25.0, 35.0]}, scores=[-0.4, 0.5], labels=[1, 1], numeric=["age"])
        vocabulary = ItemVocabulary((Item("age", Operator.LT, 30.0, 0), Item("age", Operator.GE, 30.0, 1)))
        spec = core_data.DiscretizationSpec(attributes=(core_data.AttributeSpec("age", "numeric", (30.0,)),))

        dataset = encode(table, spec, vocabulary)

        assert dataset.instance(0).items == frozenset({0})
        assert list(dataset.false_negative) == [0]
        assert list(dataset.true_positive) == [1]

    def test_unseen_category_sets_no_item(self):
        """A category not seen at fit time leaves every item of its attribute unset."""
        fitted = table_of({"job": ["a", "b"]}, categorical=["job"])
        spec, vocabulary = fit_discretization(fitted, categorical_not_equal=True)
        table = table_of({"job": ["c", "a"]}, categorical=["job"])

        dataset = encode(table, spec, vocabulary)

        assert not dataset.items[0].any()
        assert dataset.instance(1).items == frozenset({vocabulary.lookup("job", "=", "a"),
                                                      vocabulary.lookup("job", "!=", "b")})

    def test_empty_table_gives_empty_partitions(self):
        """Encoding no rows yields an empty dataset."""
        spec, vocabulary = fit_discretization(table_of({"job": ["a"]}, categorical=["job"]))

        dataset = encode(table_of({"job": []}, categorical=["job"]), spec, vocabulary)

        assert len(dataset) == 0
        assert set(dataset.partition_sizes().values()) == {0}

    def test_missing_attribute_is_schema_error(self):
        """A table lacking a vocabulary attribute cannot be encoded."""
        spec, vocabulary = fit_discretization(table_of({"job": ["a"]}, categorical=["job"]))

        with pytest.raises(SchemaError):
            encode(table_of({"age": [1.0]}, numeric=["age"]), spec, vocabulary)

    def test_sample_partitions_and_predicates(self):
        """Partitions cover every instance once and every bit matches its predicate."""
        table = load_table(str(SAMPLE), SCHEMA)
        spec, vocabulary = fit_discretization(table, categorical_not_equal=True)

        dataset = encode(table, spec, vocabulary)

        parts = np.concatenate([dataset.true_positive, dataset.false_positive,
                                dataset.true_negative, dataset.false_negative])
        assert sorted(parts) == list(range(len(dataset)))
        assert np.all(dataset.scores[dataset.false_positive] > 0)
        assert np.all(dataset.labels[dataset.false_negative] == 1)
        for item in vocabulary.items:
            assert np.array_equal(dataset.items[:, item.id], item.evaluate(table.frame[item.attribute]))

    def test_encoding_is_deterministic(self):
        """Encoding twice gives identical arrays."""
        table = load_table(str(SAMPLE), SCHEMA)
        spec, vocabulary = fit_discretization(table)

        first, second = encode(table, spec, vocabulary), encode(table, spec, vocabulary)

        assert np.array_equal(first.items, second.items)
        assert np.array_equal(first.scores, second.scores)


class TestDataset:
    """Test Dataset construction and helpers."""

    def test_arrays_are_read_only(self, two_instance_dataset):
        """Datasets cannot be modified after construction."""
        with pytest.raises(ValueError):
            two_instance_dataset.scores[0] = 0.1

    def test_rejects_scores_outside_range(self):
        """Scores must lie strictly inside (-1, 1)."""
        with pytest.raises(ScoreRangeError):
            Dataset(np.zeros((1, 1), bool), np.array([1.0]), np.array([1]), core_data.binary_vocabulary(1))

    def test_subset_and_hits_matrix(self, two_instance_dataset):
        """subset keeps the chosen rows; hits_matrix has one column per itemset."""
        subset = two_instance_dataset.subset([1])

        assert subset.instance(0).score == -0.2
        assert two_instance_dataset.hits_matrix([(0,), (1,), ()]).tolist() == [[True, False, True],
                                                                               [True, False, True]]


class TestMinimumCount:
    """Test minimum_count() function."""

    @pytest.mark.parametrize("fraction,total,expected", [
        (0.05, 100, 5),
        (0.1, 30, 3),
        (0.0, 10, 0),
        (1.0, 7, 7),
        (0.3, 10, 3),
    ])
    def test_matches_ratio_test(self, fraction, total, expected):
        """Smallest count whose ratio reaches the fraction."""
        assert minimum_count(fraction, total) == expected
        assert expected / total >= fraction
        assert expected == 0 or (expected - 1) / total < fraction
