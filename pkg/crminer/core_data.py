"""
Core data handling for correction rule mining.

This module turns a delimited table annotated with base-model scores and true
labels into an encoded dataset:
1. Loading the table and dropping rows with a missing attribute
2. Mapping raw scores into (-1, 1)
3. Learning quantile cut points and categories (the item vocabulary)
4. Encoding every row as an itemset plus score and label
5. Splitting the encoded instances into the four prediction outcomes
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from aws_lambda_powertools import Logger

from crminer.errors import (
    ContractViolation,
    DataError,
    EmptyDatasetError,
    RowError,
    SchemaError,
    ScoreRangeError,
)

logger = Logger(service="crminer-core-data")

# Largest magnitude a score may take after the tanh transform
SCORE_LIMIT = 1.0 - 1e-12

DEFAULT_BINS = 4

Value = Union[float, str]


class Operator(str, Enum):
    """Relational operator of an item."""
    LT = "<"
    GE = ">="
    EQ = "="
    NE = "!="

    @property
    def numeric(self) -> bool:
        return self in (Operator.LT, Operator.GE)

    @property
    def symbol(self) -> str:
        return {"<": "<", ">=": "≥", "=": "=", "!=": "≠"}[self.value]


class ScoreTransform(str, Enum):
    IDENTITY = "identity"
    TANH = "tanh"


@dataclass(frozen=True)
class Predicate:
    """A condition `attribute operator value` over one column of a table."""
    attribute: str
    operator: Operator
    value: Value

    def __post_init__(self):
        if self.operator.numeric and isinstance(self.value, str):
            raise ContractViolation(f"Operator {self.operator.value} needs a numeric value: {self.value!r}")
        if not self.operator.numeric and not isinstance(self.value, str):
            raise ContractViolation(f"Operator {self.operator.value} needs a categorical value: {self.value!r}")

    def evaluate(self, column: pd.Series) -> np.ndarray:
        """
        Evaluate the predicate on every row of a column.

        Args:
            column: Attribute values (float for numeric, str for categorical)

        Returns:
            np.ndarray: Boolean mask of satisfying rows
        """
        if self.operator is Operator.LT:
            return column.to_numpy(dtype=float) < self.value
        if self.operator is Operator.GE:
            return column.to_numpy(dtype=float) >= self.value
        values = column.astype(str).to_numpy()
        if self.operator is Operator.EQ:
            return values == self.value
        return values != self.value

    def describe(self) -> str:
        value = f"{self.value:g}" if isinstance(self.value, float) else self.value
        return f"{self.attribute} {self.operator.symbol} {value}"


@dataclass(frozen=True)
class Item(Predicate):
    """A predicate with a stable integer id inside a vocabulary."""
    id: int


@dataclass(frozen=True)
class AttributeSpec:
    """Learned discretization of one attribute."""
    name: str
    kind: str  # "numeric" or "categorical"
    cuts: Tuple[float, ...] = ()
    categories: Tuple[str, ...] = ()


@dataclass(frozen=True)
class DiscretizationSpec:
    bins: int = DEFAULT_BINS
    categorical_not_equal: bool = False
    attributes: Tuple[AttributeSpec, ...] = ()

    def __post_init__(self):
        if self.bins < 2:
            raise ContractViolation(f"Discretization needs at least 2 bins: {self.bins}")
        for attribute in self.attributes:
            if any(b <= a for a, b in zip(attribute.cuts, attribute.cuts[1:])):
                raise ContractViolation(f"Cut points of {attribute.name!r} must be strictly increasing")


@dataclass(frozen=True)
class ItemVocabulary:
    """
    Ordered items with contiguous ids.

    order_permutation maps an original item id to its position in mining
    order; it is the identity unless set with `with_order`.
    """
    items: Tuple[Item, ...]
    order_permutation: Tuple[int, ...] = ()

    def __post_init__(self):
        for position, item in enumerate(self.items):
            if item.id != position:
                raise ContractViolation(f"Item ids must be contiguous from 0: found {item.id} at {position}")
        if not self.order_permutation:
            object.__setattr__(self, "order_permutation", tuple(range(len(self.items))))
        if sorted(self.order_permutation) != list(range(len(self.items))):
            raise ContractViolation("order_permutation must be a bijection on the item ids")

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, item_id: int) -> Item:
        return self.items[item_id]

    @cached_property
    def fingerprint(self) -> str:
        """SHA-256 over the canonical JSON of the items."""
        payload = [
            {"attr": item.attribute, "op": item.operator.value, "value": item.value}
            for item in self.items
        ]
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @cached_property
    def _index(self) -> Dict[Tuple[str, str, Value], int]:
        return {(i.attribute, i.operator.value, i.value): i.id for i in self.items}

    def lookup(self, attribute: str, operator: str, value: Value) -> int:
        """
        Find the id of an item.

        Raises:
            KeyError: If no such item exists
        """
        if Operator(operator).numeric:
            value = float(value)
        return self._index[(attribute, Operator(operator).value, value)]

    def with_order(self, order_permutation: Sequence[int]) -> "ItemVocabulary":
        return ItemVocabulary(self.items, tuple(int(p) for p in order_permutation))

    def describe(self, itemset: Iterable[int]) -> str:
        return " ∧ ".join(self.items[i].describe() for i in sorted(itemset)) or "∅"


class Instance(NamedTuple):
    items: frozenset
    score: float
    label: int


@dataclass(frozen=True)
class TableSchema:
    """Column roles of an input table."""
    score_col: str
    label_col: str
    delimiter: str = ","
    score_transform: ScoreTransform = ScoreTransform.IDENTITY
    numeric_cols: Optional[Tuple[str, ...]] = None
    categorical_cols: Optional[Tuple[str, ...]] = None


@dataclass(frozen=True, eq=False)
class RawTable:
    """
    Typed attribute values plus transformed scores and {-1, 1} labels.

    Numeric attributes hold floats, categorical attributes hold strings.
    """
    frame: pd.DataFrame
    scores: np.ndarray
    labels: np.ndarray
    numeric: Tuple[str, ...] = ()
    categorical: Tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def attributes(self) -> List[str]:
        return list(self.frame.columns)

    def take(self, indices: Sequence[int]) -> "RawTable":
        indices = np.asarray(indices, dtype=int)
        return RawTable(
            frame=self.frame.iloc[indices].reset_index(drop=True),
            scores=self.scores[indices],
            labels=self.labels[indices],
            numeric=self.numeric,
            categorical=self.categorical,
        )

    def to_frame(self, schema: TableSchema) -> pd.DataFrame:
        """Attributes plus score and label columns, ready to be written as a table."""
        frame = self.frame.copy()
        frame[schema.score_col] = self.scores
        frame[schema.label_col] = self.labels
        return frame


def transform_score(raw_score: float, mode: ScoreTransform = ScoreTransform.IDENTITY) -> float:
    """
    Map a raw base-model score into (-1, 1).

    Args:
        raw_score: Score produced by the base model
        mode: identity (score already in (-1, 1)) or tanh

    Returns:
        float: Score strictly inside (-1, 1)

    Raises:
        ScoreRangeError: If mode is identity and |raw_score| >= 1
    """
    return float(transform_scores(np.array([raw_score], dtype=float), mode)[0])


def transform_scores(raw_scores: np.ndarray, mode: ScoreTransform = ScoreTransform.IDENTITY) -> np.ndarray:
    raw_scores = np.asarray(raw_scores, dtype=float)
    if ScoreTransform(mode) is ScoreTransform.TANH:
        return np.clip(np.tanh(raw_scores), -SCORE_LIMIT, SCORE_LIMIT)
    bad = np.flatnonzero(~(np.abs(raw_scores) < 1.0))
    if bad.size:
        raise ScoreRangeError(
            f"Score {raw_scores[bad[0]]!r} at position {int(bad[0])} is outside (-1, 1); "
            "use the tanh transform for unbounded scores"
        )
    return raw_scores.copy()


def predicted_label(score: float) -> int:
    """Predicted class of a score: 1 when score > 0, otherwise -1."""
    return 1 if score > 0 else -1


def predicted_labels(scores: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(scores) > 0, 1, -1).astype(np.int8)


def _parse_numeric(values: pd.Series, column: str, row_numbers: np.ndarray) -> np.ndarray:
    parsed = pd.to_numeric(values, errors="coerce")
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        raise RowError(f"Cannot parse {values.iloc[bad[0]]!r} as a number", int(row_numbers[bad[0]]), column)
    return parsed.to_numpy(dtype=float)


def _is_numeric_column(values: pd.Series) -> bool:
    present = values.dropna()
    return len(present) > 0 and pd.to_numeric(present, errors="coerce").notna().all()


def load_table(path: str, schema: TableSchema) -> RawTable:
    """
    Load a delimited table with score and label columns.

    Rows with a missing attribute value are dropped. Labels may be encoded as
    {-1, 1} or {0, 1}; 0 is read as -1.

    Args:
        path: Path of the table (header row required)
        schema: Column roles and parsing options

    Returns:
        RawTable: Typed rows

    Raises:
        SchemaError: If the file cannot be parsed or lacks the score/label column
        RowError: If a score, label or declared numeric value cannot be parsed
        ScoreRangeError: If an identity-transformed score lies outside (-1, 1)
    """
    try:
        frame = pd.read_csv(path, sep=schema.delimiter, dtype=str, keep_default_na=True)
    except FileNotFoundError as e:
        raise DataError(f"Input table not found: {path}") from e
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise SchemaError(f"Cannot parse table {path}: {e}") from e

    missing = [c for c in (schema.score_col, schema.label_col) if c not in frame.columns]
    if missing:
        raise SchemaError(f"Table {path} lacks required column(s): {', '.join(missing)}")

    attributes = [c for c in frame.columns if c not in (schema.score_col, schema.label_col)]
    row_numbers = np.arange(len(frame))

    complete = frame[attributes].notna().all(axis=1).to_numpy() if attributes else np.ones(len(frame), bool)
    dropped = int((~complete).sum())
    if dropped:
        logger.info("Dropped rows with missing attributes", extra={"path": path, "droppedCount": dropped})
    frame = frame[complete].reset_index(drop=True)
    row_numbers = row_numbers[complete]

    for role in (schema.score_col, schema.label_col):
        absent = np.flatnonzero(frame[role].isna().to_numpy())
        if absent.size:
            raise RowError("Missing value", int(row_numbers[absent[0]]), role)

    raw_scores = _parse_numeric(frame[schema.score_col], schema.score_col, row_numbers)
    try:
        scores = transform_scores(raw_scores, schema.score_transform)
    except ScoreRangeError as e:
        bad = int(np.flatnonzero(~(np.abs(raw_scores) < 1.0))[0])
        raise ScoreRangeError(f"{e} (row {int(row_numbers[bad])})") from e

    raw_labels = _parse_numeric(frame[schema.label_col], schema.label_col, row_numbers)
    bad = np.flatnonzero(~np.isin(raw_labels, (-1.0, 0.0, 1.0)))
    if bad.size:
        raise RowError(f"Label must be one of -1, 0, 1: {raw_labels[bad[0]]!r}", int(row_numbers[bad[0]]), schema.label_col)
    labels = np.where(raw_labels > 0, 1, -1).astype(np.int8)

    declared_numeric = set(schema.numeric_cols or ())
    declared_categorical = set(schema.categorical_cols or ())
    numeric: List[str] = []
    categorical: List[str] = []
    typed: Dict[str, pd.Series] = {}
    for name in attributes:
        if name in declared_categorical:
            is_numeric = False
        elif name in declared_numeric:
            is_numeric = True
        else:
            is_numeric = _is_numeric_column(frame[name])
        if is_numeric:
            typed[name] = pd.Series(_parse_numeric(frame[name], name, row_numbers))
            numeric.append(name)
        else:
            typed[name] = frame[name].astype(str).str.strip()
            categorical.append(name)

    logger.debug("Loaded table", extra={
        "path": path,
        "rowCount": len(frame),
        "numericAttributes": numeric,
        "categoricalAttributes": categorical,
    })

    return RawTable(
        frame=pd.DataFrame(typed, columns=attributes),
        scores=scores,
        labels=labels,
        numeric=tuple(numeric),
        categorical=tuple(categorical),
    )


def quantile_cuts(values: np.ndarray, bins: int = DEFAULT_BINS) -> Tuple[float, ...]:
    """
    Cut points at the empirical quantiles 1/bins, ..., (bins-1)/bins.

    Duplicate cut values are collapsed and a cut equal to the column minimum is
    dropped, since `attr < min` can never hold.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return ()
    probabilities = np.arange(1, bins) / bins
    cuts = np.unique(np.quantile(values, probabilities))
    return tuple(float(c) for c in cuts[cuts > values.min()])


def fit_discretization(
    table: RawTable,
    bins: int = DEFAULT_BINS,
    categorical_not_equal: bool = False,
) -> Tuple[DiscretizationSpec, ItemVocabulary]:
    """
    Learn cut points and categories, and assign item ids.

    Ids follow attribute order, then value order: for each numeric cut c the
    pair (attr < c, attr >= c); for each category v the item attr = v, followed
    by attr != v when categorical_not_equal is set.

    Args:
        table: Loaded table
        bins: Number of quantile bins for numeric attributes
        categorical_not_equal: Also emit != items for categories

    Returns:
        Tuple of (DiscretizationSpec, ItemVocabulary)

    Raises:
        EmptyDatasetError: If the table has no rows
    """
    if len(table) == 0:
        raise EmptyDatasetError("Cannot fit a discretization on an empty table")

    attributes: List[AttributeSpec] = []
    items: List[Item] = []
    for name in table.attributes:
        if name in table.numeric:
            cuts = quantile_cuts(table.frame[name].to_numpy(dtype=float), bins)
            if not cuts:
                logger.warning("Numeric attribute has no usable cut points", extra={"attribute": name})
            attributes.append(AttributeSpec(name=name, kind="numeric", cuts=cuts))
            for cut in cuts:
                items.append(Item(attribute=name, operator=Operator.LT, value=cut, id=len(items)))
                items.append(Item(attribute=name, operator=Operator.GE, value=cut, id=len(items)))
        else:
            categories = tuple(sorted(table.frame[name].astype(str).unique()))
            attributes.append(AttributeSpec(name=name, kind="categorical", categories=categories))
            for category in categories:
                items.append(Item(attribute=name, operator=Operator.EQ, value=category, id=len(items)))
                if categorical_not_equal:
                    items.append(Item(attribute=name, operator=Operator.NE, value=category, id=len(items)))

    spec = DiscretizationSpec(bins=bins, categorical_not_equal=categorical_not_equal, attributes=tuple(attributes))
    vocabulary = ItemVocabulary(tuple(items))
    logger.info("Fitted discretization", extra={
        "attributeCount": len(attributes),
        "itemCount": len(items),
        "fingerprint": vocabulary.fingerprint,
    })
    return spec, vocabulary


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Encoded instances: an itemset bitmap, a score in (-1, 1) and a label in {-1, 1}.

    Arrays are made read-only on construction so a dataset can be shared
    between workers.
    """
    items: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    vocabulary: ItemVocabulary

    def __post_init__(self):
        items = np.ascontiguousarray(self.items, dtype=bool).reshape(-1, len(self.vocabulary))
        scores = np.ascontiguousarray(self.scores, dtype=float).reshape(-1)
        labels = np.ascontiguousarray(self.labels, dtype=np.int8).reshape(-1)
        if not (len(items) == len(scores) == len(labels)):
            raise DataError(
                f"Dataset arrays disagree in length: items={len(items)}, scores={len(scores)}, labels={len(labels)}"
            )
        if scores.size and not np.all(np.abs(scores) < 1.0):
            raise ScoreRangeError("Dataset scores must lie strictly inside (-1, 1)")
        if labels.size and not np.all(np.isin(labels, (-1, 1))):
            raise DataError("Dataset labels must be -1 or 1")
        for name, array in (("items", items), ("scores", scores), ("labels", labels)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    def __len__(self) -> int:
        return len(self.scores)

    @classmethod
    def from_instances(cls, instances: Iterable[Instance], vocabulary: ItemVocabulary) -> "Dataset":
        instances = list(instances)
        items = np.zeros((len(instances), len(vocabulary)), dtype=bool)
        for row, instance in enumerate(instances):
            items[row, list(instance.items)] = True
        return cls(
            items=items,
            scores=np.array([i.score for i in instances], dtype=float),
            labels=np.array([i.label for i in instances], dtype=np.int8),
            vocabulary=vocabulary,
        )

    def instance(self, index: int) -> Instance:
        return Instance(
            items=frozenset(int(i) for i in np.flatnonzero(self.items[index])),
            score=float(self.scores[index]),
            label=int(self.labels[index]),
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.items[indices], self.scores[indices], self.labels[indices], self.vocabulary)

    def covers(self, itemset: Iterable[int]) -> np.ndarray:
        """Boolean mask of instances whose itemset contains every given item."""
        columns = sorted(set(itemset))
        if not columns:
            return np.ones(len(self), dtype=bool)
        return self.items[:, columns].all(axis=1)

    def hits_matrix(self, itemsets: Sequence[Iterable[int]]) -> np.ndarray:
        """(instances x itemsets) boolean matrix; column r is covers(itemsets[r])."""
        matrix = np.zeros((len(self), len(itemsets)), dtype=bool)
        for column, itemset in enumerate(itemsets):
            matrix[:, column] = self.covers(itemset)
        return matrix

    @cached_property
    def predicted(self) -> np.ndarray:
        return predicted_labels(self.scores)

    @cached_property
    def true_positive(self) -> np.ndarray:
        return np.flatnonzero((self.predicted == 1) & (self.labels == 1))

    @cached_property
    def false_positive(self) -> np.ndarray:
        return np.flatnonzero((self.predicted == 1) & (self.labels == -1))

    @cached_property
    def true_negative(self) -> np.ndarray:
        return np.flatnonzero((self.predicted == -1) & (self.labels == -1))

    @cached_property
    def false_negative(self) -> np.ndarray:
        return np.flatnonzero((self.predicted == -1) & (self.labels == 1))

    def partition_sizes(self) -> Dict[str, int]:
        return {
            "truePositive": len(self.true_positive),
            "falsePositive": len(self.false_positive),
            "trueNegative": len(self.true_negative),
            "falseNegative": len(self.false_negative),
        }


def encode(table: RawTable, spec: DiscretizationSpec, vocabulary: ItemVocabulary) -> Dataset:
    """
    Encode every row of a table as an instance over the vocabulary.

    A category not seen when the discretization was fitted sets no item of its
    attribute.

    Args:
        table: Loaded table
        spec: Fitted discretization
        vocabulary: Items produced together with spec

    Returns:
        Dataset: Encoded instances with their partitions

    Raises:
        SchemaError: If the table lacks an attribute of the discretization
    """
    missing = [a.name for a in spec.attributes if a.name not in table.frame.columns]
    if missing:
        raise SchemaError(f"Table lacks attribute(s) of the vocabulary: {', '.join(missing)}")

    matrix = np.zeros((len(table), len(vocabulary)), dtype=bool)
    for item in vocabulary.items:
        matrix[:, item.id] = item.evaluate(table.frame[item.attribute])

    for attribute in spec.attributes:
        if attribute.kind != "categorical":
            continue
        unseen = ~table.frame[attribute.name].astype(str).isin(attribute.categories).to_numpy()
        if unseen.any():
            logger.warning("Unseen categories encoded without items", extra={
                "attribute": attribute.name,
                "rowCount": int(unseen.sum()),
            })
            ids = [i.id for i in vocabulary.items if i.attribute == attribute.name]
            matrix[np.ix_(np.flatnonzero(unseen), ids)] = False

    dataset = Dataset(items=matrix, scores=table.scores, labels=table.labels, vocabulary=vocabulary)
    logger.debug("Encoded dataset", extra={"instanceCount": len(dataset), **dataset.partition_sizes()})
    return dataset


def binary_vocabulary(n_items: int, prefix: str = "f") -> ItemVocabulary:
    """Vocabulary of n independent binary features `f<i> = 1`."""
    return ItemVocabulary(tuple(
        Item(attribute=f"{prefix}{i}", operator=Operator.EQ, value="1", id=i) for i in range(n_items)
    ))


def minimum_count(fraction: float, total: int) -> int:
    """Smallest count c with c / total >= fraction, evaluated exactly as the ratio test."""
    if total <= 0:
        return 0
    count = max(0, math.ceil(fraction * total))
    while count > 0 and (count - 1) / total >= fraction:
        count -= 1
    while count <= total and count / total < fraction:
        count += 1
    return count
