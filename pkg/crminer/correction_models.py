"""
Correction rule lists and sets.

A correction rule list (CRL) corrects an instance with the first rule that
hits it. A correction rule set (CRS) adds the mean correction amount of every
rule that hits it. Both are built greedily from mined rules against an
objective measured on the corrected scores.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from aws_lambda_powertools import Logger
from sklearn.metrics import accuracy_score, f1_score, log_loss, precision_score, recall_score

from crminer.core_data import Dataset, Instance, predicted_labels
from crminer.errors import ContractViolation, EmptyDatasetError
from crminer.rule_semantics import CorrectionRule

logger = Logger(service="crminer-correction-models")

PROBABILITY_EPSILON = 1e-12


class ModelKind(str, Enum):
    CRL = "crl"
    CRS = "crs"


class ObjectiveKind(str, Enum):
    ACCURACY = "accuracy"
    F1 = "f1"
    LOG_LOSS = "log_loss"


def _rule_identity(rule: CorrectionRule):
    return rule.direction, rule.itemset, rule.delta


def _check_unique(rules: Sequence[CorrectionRule]) -> None:
    seen = set()
    for rule in rules:
        if _rule_identity(rule) in seen:
            raise ContractViolation(f"Duplicate rule in correction model: {rule.describe()}")
        seen.add(_rule_identity(rule))


@dataclass(frozen=True)
class CorrectionRuleList:
    """Ordered rules; the first rule whose itemset the instance contains applies."""
    rules: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        _check_unique(self.rules)

    def __len__(self) -> int:
        return len(self.rules)

    @property
    def kind(self) -> ModelKind:
        return ModelKind.CRL


@dataclass(frozen=True)
class CorrectionRuleSet:
    """Unordered rules; the mean amount of all rules hitting the instance applies."""
    rules: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        _check_unique(self.rules)

    def __len__(self) -> int:
        return len(self.rules)

    @property
    def kind(self) -> ModelKind:
        return ModelKind.CRS


CorrectionModel = Union[CorrectionRuleList, CorrectionRuleSet]


def crl_apply(model: CorrectionRuleList, instance: Instance) -> float:
    """Score corrected by the first matching rule, or unchanged."""
    for rule in model.rules:
        if instance.items.issuperset(rule.itemset):
            return instance.score + rule.delta
    return instance.score


def crs_apply(model: CorrectionRuleSet, instance: Instance) -> float:
    """Score plus the mean amount of the matching rules, or unchanged."""
    deltas = [rule.delta for rule in model.rules if instance.items.issuperset(rule.itemset)]
    if not deltas:
        return instance.score
    return instance.score + sum(deltas) / len(deltas)


def _shift(kind: ModelKind, hit_matrix: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    if hit_matrix.shape[1] == 0:
        return np.zeros(hit_matrix.shape[0])
    matched = hit_matrix.any(axis=1)
    if kind is ModelKind.CRL:
        first = np.argmax(hit_matrix, axis=1)
        return np.where(matched, deltas[first], 0.0)
    counts = hit_matrix.sum(axis=1)
    totals = hit_matrix.astype(float) @ deltas
    return np.divide(totals, counts, out=np.zeros(len(counts)), where=matched)


def apply_model(model: Optional[CorrectionModel], dataset: Dataset) -> np.ndarray:
    """Corrected scores of every instance; the raw scores when model is None."""
    if model is None or len(model) == 0:
        return dataset.scores.copy()
    hit_matrix = dataset.hits_matrix([rule.itemset for rule in model.rules])
    deltas = np.array([rule.delta for rule in model.rules], dtype=float)
    return dataset.scores + _shift(model.kind, hit_matrix, deltas)


def score_probabilities(scores: np.ndarray) -> np.ndarray:
    """Map scores in (-1, 1) to positive-class probabilities, clipped away from 0 and 1."""
    return np.clip((np.asarray(scores) + 1.0) / 2.0, PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON)


@dataclass(frozen=True)
class Objective:
    """Quality of corrected scores; accuracy and f1 are maximized, log loss minimized."""
    kind: ObjectiveKind = ObjectiveKind.ACCURACY

    @property
    def maximize(self) -> bool:
        return ObjectiveKind(self.kind) is not ObjectiveKind.LOG_LOSS

    def value(self, scores: np.ndarray, labels: np.ndarray) -> float:
        kind = ObjectiveKind(self.kind)
        if kind is ObjectiveKind.LOG_LOSS:
            p = score_probabilities(scores)
            positive = labels == 1
            return float(-np.mean(np.where(positive, np.log(p), np.log(1.0 - p))))
        predicted = predicted_labels(scores)
        if kind is ObjectiveKind.ACCURACY:
            return float(np.mean(predicted == labels))
        tp = int(np.sum((predicted == 1) & (labels == 1)))
        fp = int(np.sum((predicted == 1) & (labels == -1)))
        fn = int(np.sum((predicted == -1) & (labels == 1)))
        return 2 * tp / (2 * tp + fp + fn) if tp else 0.0

    def better(self, candidate: float, incumbent: float) -> bool:
        return candidate > incumbent if self.maximize else candidate < incumbent


def _crl_shift(covered: np.ndarray, shifts: np.ndarray, hit: np.ndarray, delta: float) -> np.ndarray:
    # Instances already covered keep the amount of the earlier rule
    return np.where(covered, shifts, np.where(hit, delta, 0.0))


def greedy_build(
    candidates: Sequence[CorrectionRule],
    dataset: Dataset,
    objective: Objective = Objective(),
    max_size: Optional[int] = None,
    kind: ModelKind = ModelKind.CRL,
) -> CorrectionModel:
    """
    Greedily grow a CRL or CRS from candidate rules.

    Each round tries every unused candidate (appended at the end for a CRL),
    recomputes the objective on the corrected scores of the build dataset, and
    takes the best one if it strictly improves the current value. Ties go to
    the lower candidate index.

    Args:
        candidates: Rules to choose from
        dataset: Build data
        objective: Objective to optimize
        max_size: Rule limit; unlimited when None
        kind: CRL or CRS

    Returns:
        CorrectionRuleList or CorrectionRuleSet
    """
    kind = ModelKind(kind)
    if max_size is not None and max_size < 1:
        raise ContractViolation(f"Model size limit must be at least 1: {max_size}")
    if len(dataset) == 0:
        raise EmptyDatasetError("Cannot build a correction model on an empty dataset")

    hit_matrix = dataset.hits_matrix([rule.itemset for rule in candidates])
    deltas = np.array([rule.delta for rule in candidates], dtype=float)
    scores, labels = dataset.scores, dataset.labels

    covered = np.zeros(len(dataset), dtype=bool)
    totals = np.zeros(len(dataset))
    counts = np.zeros(len(dataset))
    chosen: List[int] = []
    used = set()
    current = objective.value(scores, labels)
    evaluations = 0

    while max_size is None or len(chosen) < max_size:
        best_index, best_value = None, current
        for index, rule in enumerate(candidates):
            if _rule_identity(rule) in used:
                continue
            hit = hit_matrix[:, index]
            if kind is ModelKind.CRL:
                shift = _crl_shift(covered, totals, hit, deltas[index])
            else:
                new_counts = counts + hit
                shift = np.divide(totals + hit * deltas[index], new_counts,
                                  out=np.zeros(len(dataset)), where=new_counts > 0)
            value = objective.value(scores + shift, labels)
            evaluations += 1
            if objective.better(value, best_value):
                best_index, best_value = index, value
        if best_index is None:
            break

        hit = hit_matrix[:, best_index]
        if kind is ModelKind.CRL:
            totals = _crl_shift(covered, totals, hit, deltas[best_index])
            covered = covered | hit
        else:
            totals = totals + hit * deltas[best_index]
            counts = counts + hit
        chosen.append(best_index)
        used.add(_rule_identity(candidates[best_index]))
        current = best_value

    logger.info("Built correction model", extra={
        "kind": kind.value,
        "objective": ObjectiveKind(objective.kind).value,
        "candidateCount": len(candidates),
        "ruleCount": len(chosen),
        "objectiveValue": current,
        "evaluations": evaluations,
    })
    rules = [candidates[i] for i in chosen]
    return CorrectionRuleList(rules) if kind is ModelKind.CRL else CorrectionRuleSet(rules)


def build_crs_all(rules: Sequence[CorrectionRule]) -> CorrectionRuleSet:
    """A CRS holding every given rule, without optimization; repeated rules are kept once."""
    unique: Dict[tuple, CorrectionRule] = {}
    for rule in rules:
        unique.setdefault(_rule_identity(rule), rule)
    return CorrectionRuleSet(tuple(unique.values()))


class Metrics(NamedTuple):
    accuracy: float
    precision: float
    recall: float
    f1: float
    log_loss: float


def evaluate(dataset: Dataset, model: Optional[CorrectionModel] = None) -> Metrics:
    """
    Classification metrics of the (corrected) scores; label 1 is the positive class.

    Raises:
        EmptyDatasetError: If the dataset has no instances
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("Cannot evaluate on an empty dataset")
    scores = apply_model(model, dataset)
    predicted = predicted_labels(scores)
    truth = dataset.labels
    return Metrics(
        accuracy=float(accuracy_score(truth, predicted)),
        precision=float(precision_score(truth, predicted, pos_label=1, zero_division=0)),
        recall=float(recall_score(truth, predicted, pos_label=1, zero_division=0)),
        f1=float(f1_score(truth, predicted, pos_label=1, zero_division=0)),
        log_loss=float(log_loss(truth == 1, score_probabilities(scores), labels=[False, True])),
    )


class CoverageRecord(NamedTuple):
    coverage: float
    jaccard: float


def coverage_jaccard(
    ground_truth: Sequence[np.ndarray],
    rules: Sequence[CorrectionRule],
    dataset: Dataset,
) -> List[CoverageRecord]:
    """
    How well mined rules recover known regions.

    Args:
        ground_truth: Per region, the indices of the dataset instances it contains
        rules: Mined rules
        dataset: Instances both are evaluated on

    Returns:
        List[CoverageRecord]: Per region, the best |G∩R|/|G| and the best
        |G∩R|/|G∪R| over the rules; (0, 0) for a region without instances or
        when there are no rules
    """
    hit_matrix = dataset.hits_matrix([rule.itemset for rule in rules]).astype(np.int64)
    rule_sizes = hit_matrix.sum(axis=0)
    records: List[CoverageRecord] = []
    for region, members in enumerate(ground_truth):
        region_mask = np.zeros(len(dataset), dtype=np.int64)
        region_mask[np.asarray(members, dtype=int)] = 1
        size = int(region_mask.sum())
        if size == 0:
            logger.warning("Ground-truth region hits no instances", extra={"region": region})
            records.append(CoverageRecord(0.0, 0.0))
            continue
        if not rules:
            records.append(CoverageRecord(0.0, 0.0))
            continue
        overlap = region_mask @ hit_matrix
        union = size + rule_sizes - overlap
        records.append(CoverageRecord(
            coverage=float(np.max(overlap / size)),
            jaccard=float(np.max(overlap / union)),
        ))
    return records
