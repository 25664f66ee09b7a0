"""
File formats of the command line tool.

Every file starts with (or is) a JSON object naming its format, and every file
derived from an item vocabulary carries the vocabulary fingerprint so files
from different discretizations are never mixed. Writes are atomic.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
from aws_lambda_powertools import Logger

from crminer.core_data import (
    AttributeSpec,
    Dataset,
    DiscretizationSpec,
    Item,
    ItemVocabulary,
    Operator,
)
from crminer.correction_models import CorrectionModel, CorrectionRuleList, CorrectionRuleSet, ModelKind
from crminer.errors import RowError, SchemaError, VocabularyMismatchError
from crminer.rule_semantics import CorrectionRule, Direction

logger = Logger(service="crminer-formats")

VOCABULARY_FORMAT = "crminer-vocabulary"
DATASET_FORMAT = "crminer-dataset"
RULES_FORMAT = "crminer-rules"
MODEL_FORMAT = "crminer-model"
SCENARIO_FORMAT = "crminer-scenario"

PathLike = Union[str, Path]


def atomic_write(path: PathLike, text: str) -> None:
    """Write text to a temporary file next to `path`, then rename it over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.unlink(temporary)
        raise


def _dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False)


def write_json(path: PathLike, obj: Any) -> None:
    atomic_write(path, json.dumps(obj, ensure_ascii=False, indent=2) + "\n")


def read_json(path: PathLike, expected_format: Optional[str] = None) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as handle:
            obj = json.load(handle)
    except FileNotFoundError as e:
        raise SchemaError(f"File not found: {path}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"Malformed JSON in {path}: {e}") from e
    if expected_format and (not isinstance(obj, dict) or obj.get("format") != expected_format):
        raise SchemaError(f"{path} is not a {expected_format} file")
    return obj


def _read_jsonl(path: PathLike, expected_format: str) -> Tuple[Dict[str, Any], Iterator[Tuple[int, Dict[str, Any]]]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as e:
        raise SchemaError(f"File not found: {path}") from e
    if not lines:
        raise SchemaError(f"{path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise SchemaError(f"Malformed header in {path}: {e}") from e
    if not isinstance(header, dict) or header.get("format") != expected_format:
        raise SchemaError(f"{path} is not a {expected_format} file")

    def records() -> Iterator[Tuple[int, Dict[str, Any]]]:
        for number, line in enumerate(lines[1:], start=1):
            if not line.strip():
                continue
            try:
                yield number, json.loads(line)
            except json.JSONDecodeError as e:
                raise RowError(f"Malformed JSON line in {path}: {e.msg}", number) from e

    return header, records()


def _check_fingerprint(header: Dict[str, Any], vocabulary: ItemVocabulary, path: PathLike) -> None:
    if header.get("vocabulary") != vocabulary.fingerprint:
        raise VocabularyMismatchError(
            f"{path} was written for vocabulary {header.get('vocabulary')}, not {vocabulary.fingerprint}"
        )


def _item_json(item: Item) -> Dict[str, Any]:
    return {"attr": item.attribute, "op": item.operator.value, "value": item.value}


def vocabulary_to_json(spec: DiscretizationSpec, vocabulary: ItemVocabulary) -> Dict[str, Any]:
    attributes = []
    for attribute in spec.attributes:
        entry: Dict[str, Any] = {"name": attribute.name, "kind": attribute.kind}
        if attribute.kind == "numeric":
            entry["cuts"] = list(attribute.cuts)
        else:
            entry["categories"] = list(attribute.categories)
        attributes.append(entry)
    return {
        "format": VOCABULARY_FORMAT,
        "fingerprint": vocabulary.fingerprint,
        "bins": spec.bins,
        "categorical_not_equal": spec.categorical_not_equal,
        "attributes": attributes,
        "items": [{"id": item.id, **_item_json(item)} for item in vocabulary.items],
    }


def write_vocabulary(path: PathLike, spec: DiscretizationSpec, vocabulary: ItemVocabulary) -> None:
    write_json(path, vocabulary_to_json(spec, vocabulary))


def read_vocabulary(path: PathLike) -> Tuple[DiscretizationSpec, ItemVocabulary]:
    """
    Load a vocabulary file.

    Raises:
        SchemaError: If the file is not a vocabulary
        VocabularyMismatchError: If the items do not match the stored fingerprint
    """
    obj = read_json(path, VOCABULARY_FORMAT)
    try:
        attributes = tuple(
            AttributeSpec(
                name=a["name"],
                kind=a["kind"],
                cuts=tuple(float(c) for c in a.get("cuts", ())),
                categories=tuple(str(c) for c in a.get("categories", ())),
            )
            for a in obj["attributes"]
        )
        items = tuple(
            Item(
                attribute=i["attr"],
                operator=Operator(i["op"]),
                value=float(i["value"]) if Operator(i["op"]).numeric else str(i["value"]),
                id=int(i["id"]),
            )
            for i in obj["items"]
        )
        spec = DiscretizationSpec(bins=int(obj["bins"]), categorical_not_equal=bool(obj["categorical_not_equal"]),
                                  attributes=attributes)
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"Malformed vocabulary {path}: {e}") from e
    vocabulary = ItemVocabulary(items)
    if vocabulary.fingerprint != obj.get("fingerprint"):
        raise VocabularyMismatchError(f"Vocabulary {path} does not match its fingerprint")
    return spec, vocabulary


def write_dataset(path: PathLike, dataset: Dataset) -> None:
    lines = [_dumps({
        "format": DATASET_FORMAT,
        "vocabulary": dataset.vocabulary.fingerprint,
        "n_items": len(dataset.vocabulary),
    })]
    for row in range(len(dataset)):
        lines.append(_dumps({
            "items": [int(i) for i in np.flatnonzero(dataset.items[row])],
            "score": float(dataset.scores[row]),
            "label": int(dataset.labels[row]),
        }))
    atomic_write(path, "\n".join(lines) + "\n")


def read_dataset(path: PathLike, vocabulary: ItemVocabulary) -> Dataset:
    """
    Load an encoded dataset.

    Raises:
        VocabularyMismatchError: If the dataset was encoded with another vocabulary
        RowError: If a line is malformed
    """
    header, records = _read_jsonl(path, DATASET_FORMAT)
    _check_fingerprint(header, vocabulary, path)
    rows: List[List[int]] = []
    scores: List[float] = []
    labels: List[int] = []
    for number, record in records:
        try:
            items = [int(i) for i in record["items"]]
            if any(not 0 <= i < len(vocabulary) for i in items):
                raise ValueError(f"item id out of range: {items}")
            rows.append(items)
            scores.append(float(record["score"]))
            labels.append(int(record["label"]))
        except (KeyError, TypeError, ValueError) as e:
            raise RowError(f"Malformed dataset record in {path}: {e}", number) from e
    matrix = np.zeros((len(rows), len(vocabulary)), dtype=bool)
    for row, items in enumerate(rows):
        matrix[row, items] = True
    return Dataset(items=matrix, scores=np.array(scores), labels=np.array(labels), vocabulary=vocabulary)


def rule_to_json(rule: CorrectionRule, vocabulary: ItemVocabulary) -> Dict[str, Any]:
    return {
        "items": [_item_json(vocabulary[i]) for i in rule.itemset],
        "delta": rule.delta,
        "direction": rule.direction.symbol,
        "support": rule.support,
        "confidence": rule.confidence,
        "n_true_changed": rule.n_truly_changed,
        "n_false_changed": rule.n_falsely_changed,
    }


def rule_from_json(record: Dict[str, Any], vocabulary: ItemVocabulary) -> CorrectionRule:
    itemset = []
    for entry in record["items"]:
        try:
            itemset.append(vocabulary.lookup(entry["attr"], entry["op"], entry["value"]))
        except KeyError as e:
            raise VocabularyMismatchError(f"Rule item {entry} is not in the vocabulary") from e
    direction = {"+": Direction.POSITIVE, "-": Direction.NEGATIVE}[record["direction"]]
    return CorrectionRule(
        itemset=tuple(itemset),
        delta=float(record["delta"]),
        direction=direction,
        support=float(record["support"]),
        confidence=float(record["confidence"]),
        n_truly_changed=int(record["n_true_changed"]),
        n_falsely_changed=int(record["n_false_changed"]),
    )


def _write_rule_lines(path: PathLike, header: Dict[str, Any], rules: Iterable[CorrectionRule],
                      vocabulary: ItemVocabulary) -> None:
    lines = [_dumps(header)] + [_dumps(rule_to_json(rule, vocabulary)) for rule in rules]
    atomic_write(path, "\n".join(lines) + "\n")


def _read_rule_lines(path: PathLike, expected_format: str, vocabulary: ItemVocabulary
                     ) -> Tuple[Dict[str, Any], List[CorrectionRule]]:
    header, records = _read_jsonl(path, expected_format)
    _check_fingerprint(header, vocabulary, path)
    rules = []
    for number, record in records:
        try:
            rules.append(rule_from_json(record, vocabulary))
        except VocabularyMismatchError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise RowError(f"Malformed rule in {path}: {e}", number) from e
    return header, rules


def write_rules(path: PathLike, rules: Iterable[CorrectionRule], vocabulary: ItemVocabulary) -> None:
    _write_rule_lines(path, {"format": RULES_FORMAT, "vocabulary": vocabulary.fingerprint}, rules, vocabulary)


def read_rules(path: PathLike, vocabulary: ItemVocabulary) -> List[CorrectionRule]:
    """
    Load a rules file written for `vocabulary`.

    Raises:
        VocabularyMismatchError: If the file or one of its items belongs to another vocabulary
    """
    return _read_rule_lines(path, RULES_FORMAT, vocabulary)[1]


def write_model(path: PathLike, model: CorrectionModel, vocabulary: ItemVocabulary) -> None:
    header = {"format": MODEL_FORMAT, "kind": model.kind.value, "vocabulary": vocabulary.fingerprint}
    _write_rule_lines(path, header, model.rules, vocabulary)


def read_model(path: PathLike, vocabulary: ItemVocabulary) -> CorrectionModel:
    header, rules = _read_rule_lines(path, MODEL_FORMAT, vocabulary)
    try:
        kind = ModelKind(header.get("kind"))
    except ValueError as e:
        raise SchemaError(f"Unknown model kind in {path}: {header.get('kind')!r}") from e
    return CorrectionRuleList(rules) if kind is ModelKind.CRL else CorrectionRuleSet(rules)


def stats_path(rules_path: PathLike) -> Path:
    rules_path = Path(rules_path)
    return rules_path.with_name(rules_path.name + ".stats.json")
