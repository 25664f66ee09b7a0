#!/usr/bin/env python3
"""
Unit tests for formats.py

Tests cover:
- Vocabulary, dataset, rules and model files
- Fingerprint checks and malformed input
- Atomic writes
"""

import json
from pathlib import Path

import numpy as np
import pytest

from crminer import formats
from crminer.core_data import TableSchema, encode, fit_discretization, load_table
from crminer.correction_models import CorrectionRuleList, CorrectionRuleSet
from crminer.errors import RowError, SchemaError, VocabularyMismatchError
from crminer.miner import MinerConfig, mine

SAMPLE = Path(__file__).parent / "sample-tiny.csv"


@pytest.fixture(scope="module")
def prepared():
    table = load_table(str(SAMPLE), TableSchema(score_col="score", label_col="label"))
    spec, vocabulary = fit_discretization(table, categorical_not_equal=True)
    dataset = encode(table, spec, vocabulary)
    rules = mine(dataset, MinerConfig(max_length=2, support=0.1, confidence=0.6, workers=1)).rules
    return spec, vocabulary, dataset, rules


@pytest.fixture(scope="module")
def other_vocabulary():
    table = load_table(str(SAMPLE), TableSchema(score_col="score", label_col="label"))
    return fit_discretization(table, bins=2)[1]


class TestVocabularyFile:
    """Test write_vocabulary() / read_vocabulary()."""

    def test_round_trip(self, tmp_path, prepared):
        spec, vocabulary, _, _ = prepared
        path = tmp_path / "vocab.json"

        formats.write_vocabulary(path, spec, vocabulary)
        read_spec, read_vocabulary = formats.read_vocabulary(path)

        assert read_spec == spec
        assert read_vocabulary.items == vocabulary.items
        assert read_vocabulary.fingerprint == vocabulary.fingerprint

    def test_tampered_items(self, tmp_path, prepared):
        """Editing an item without updating the fingerprint is detected."""
        spec, vocabulary, _, _ = prepared
        path = tmp_path / "vocab.json"
        formats.write_vocabulary(path, spec, vocabulary)
        obj = json.loads(path.read_text())
        obj["items"][0]["attr"] = "renamed"
        path.write_text(json.dumps(obj))

        with pytest.raises(VocabularyMismatchError):
            formats.read_vocabulary(path)

    def test_wrong_format(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"format": "something-else"}))

        with pytest.raises(SchemaError):
            formats.read_vocabulary(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError):
            formats.read_vocabulary(tmp_path / "absent.json")


class TestDatasetFile:
    """Test write_dataset() / read_dataset()."""

    def test_round_trip(self, tmp_path, prepared):
        _, vocabulary, dataset, _ = prepared
        path = tmp_path / "data.jsonl"

        formats.write_dataset(path, dataset)
        read = formats.read_dataset(path, vocabulary)

        assert np.array_equal(read.items, dataset.items)
        assert np.array_equal(read.scores, dataset.scores)
        assert np.array_equal(read.labels, dataset.labels)

    def test_header(self, tmp_path, prepared):
        _, vocabulary, dataset, _ = prepared
        path = tmp_path / "data.jsonl"

        formats.write_dataset(path, dataset)
        header = json.loads(path.read_text().splitlines()[0])

        assert header == {"format": "crminer-dataset", "vocabulary": vocabulary.fingerprint,
                          "n_items": len(vocabulary)}

    def test_other_vocabulary(self, tmp_path, prepared, other_vocabulary):
        _, _, dataset, _ = prepared
        path = tmp_path / "data.jsonl"
        formats.write_dataset(path, dataset)

        with pytest.raises(VocabularyMismatchError):
            formats.read_dataset(path, other_vocabulary)

    def test_malformed_line(self, tmp_path, prepared):
        """A broken record reports its line number."""
        _, vocabulary, dataset, _ = prepared
        path = tmp_path / "data.jsonl"
        formats.write_dataset(path, dataset)
        lines = path.read_text().splitlines()
        lines[2] = '{"items": [0], "score": "high", "label": 1}'
        path.write_text("\n".join(lines) + "\n")

        with pytest.raises(RowError) as excinfo:
            formats.read_dataset(path, vocabulary)

        assert excinfo.value.row_index == 2

    def test_item_id_out_of_range(self, tmp_path, prepared):
        _, vocabulary, dataset, _ = prepared
        path = tmp_path / "data.jsonl"
        formats.write_dataset(path, dataset)
        lines = path.read_text().splitlines()
        lines[1] = json.dumps({"items": [len(vocabulary)], "score": 0.1, "label": 1})
        path.write_text("\n".join(lines) + "\n")

        with pytest.raises(RowError):
            formats.read_dataset(path, vocabulary)

    def test_empty_file(self, tmp_path, prepared):
        _, vocabulary, _, _ = prepared
        path = tmp_path / "data.jsonl"
        path.write_text("")

        with pytest.raises(SchemaError):
            formats.read_dataset(path, vocabulary)


class TestRulesFile:
    """Test write_rules() / read_rules()."""

    def test_write_read_write_is_byte_identical(self, tmp_path, prepared):
        _, vocabulary, _, rules = prepared
        first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"

        formats.write_rules(first, rules, vocabulary)
        formats.write_rules(second, formats.read_rules(first, vocabulary), vocabulary)

        assert rules
        assert first.read_bytes() == second.read_bytes()

    def test_rules_survive_reading(self, tmp_path, prepared):
        _, vocabulary, _, rules = prepared
        path = tmp_path / "rules.jsonl"

        formats.write_rules(path, rules, vocabulary)

        assert formats.read_rules(path, vocabulary) == list(rules)

    def test_record_layout(self, tmp_path, prepared):
        """Rules are written with attribute/operator/value items and a +/- direction."""
        _, vocabulary, _, rules = prepared
        path = tmp_path / "rules.jsonl"

        formats.write_rules(path, rules[:1], vocabulary)
        record = json.loads(path.read_text().splitlines()[1])

        assert list(record) == ["items", "delta", "direction", "support", "confidence",
                                "n_true_changed", "n_false_changed"]
        assert record["direction"] in ("+", "-")
        assert set(record["items"][0]) == {"attr", "op", "value"}

    def test_other_vocabulary(self, tmp_path, prepared, other_vocabulary):
        _, vocabulary, _, rules = prepared
        path = tmp_path / "rules.jsonl"
        formats.write_rules(path, rules, vocabulary)

        with pytest.raises(VocabularyMismatchError):
            formats.read_rules(path, other_vocabulary)

    def test_unknown_item(self, tmp_path, prepared):
        """An item missing from the vocabulary is a mismatch even with the right fingerprint."""
        _, vocabulary, _, rules = prepared
        path = tmp_path / "rules.jsonl"
        formats.write_rules(path, rules[:1], vocabulary)
        lines = path.read_text().splitlines()
        record = json.loads(lines[1])
        record["items"][0]["value"] = "astronaut"
        record["items"][0]["op"] = "="
        path.write_text(lines[0] + "\n" + json.dumps(record) + "\n")

        with pytest.raises(VocabularyMismatchError):
            formats.read_rules(path, vocabulary)

    def test_unknown_direction(self, tmp_path, prepared):
        _, vocabulary, _, rules = prepared
        path = tmp_path / "rules.jsonl"
        formats.write_rules(path, rules[:1], vocabulary)
        lines = path.read_text().splitlines()
        record = json.loads(lines[1])
        record["direction"] = "up"
        path.write_text(lines[0] + "\n" + json.dumps(record) + "\n")

        with pytest.raises(RowError):
            formats.read_rules(path, vocabulary)


class TestModelFile:
    """Test write_model() / read_model()."""

    @pytest.mark.parametrize("model_type", [CorrectionRuleList, CorrectionRuleSet])
    def test_round_trip(self, tmp_path, prepared, model_type):
        _, vocabulary, _, rules = prepared
        path = tmp_path / "model.jsonl"
        model = model_type(rules[:3])

        formats.write_model(path, model, vocabulary)

        assert formats.read_model(path, vocabulary) == model

    def test_unknown_kind(self, tmp_path, prepared):
        _, vocabulary, _, rules = prepared
        path = tmp_path / "model.jsonl"
        formats.write_model(path, CorrectionRuleList(rules[:1]), vocabulary)
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["kind"] = "forest"
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")

        with pytest.raises(SchemaError):
            formats.read_model(path, vocabulary)

    def test_rules_file_is_not_a_model(self, tmp_path, prepared):
        _, vocabulary, _, rules = prepared
        path = tmp_path / "rules.jsonl"
        formats.write_rules(path, rules, vocabulary)

        with pytest.raises(SchemaError):
            formats.read_model(path, vocabulary)


class TestAtomicWrite:
    """Test atomic_write() function."""

    def test_replaces_content_without_leftovers(self, tmp_path):
        path = tmp_path / "nested" / "out.txt"

        formats.atomic_write(path, "first\n")
        formats.atomic_write(path, "second\n")

        assert path.read_text() == "second\n"
        assert [p.name for p in path.parent.iterdir()] == ["out.txt"]

    def test_stats_path(self):
        assert formats.stats_path("out/rules.jsonl") == Path("out/rules.jsonl.stats.json")
