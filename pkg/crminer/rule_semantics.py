"""
Correction rules and their measures.

A correction rule X -> delta adds delta to the score of every instance whose
itemset contains X. It truly changes a wrongly predicted instance when the
corrected sign matches the label, and falsely changes a correctly predicted
one when it does not.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Optional, Tuple

import numpy as np

from crminer.core_data import Dataset, ItemVocabulary, predicted_labels
from crminer.errors import ContractViolation, DirectionUnavailableError


class Direction(str, Enum):
    """Sign of a correction: positive rules repair false negatives, negative rules false positives."""
    POSITIVE = "positive"
    NEGATIVE = "negative"

    @property
    def sign(self) -> int:
        return 1 if self is Direction.POSITIVE else -1

    @property
    def symbol(self) -> str:
        return "+" if self is Direction.POSITIVE else "-"


BOTH_DIRECTIONS: Tuple[Direction, ...] = (Direction.POSITIVE, Direction.NEGATIVE)


@dataclass(frozen=True)
class CorrectionRule:
    """
    A rule X -> delta together with its statistics on the mining data.

    false_hits optionally holds the packed bitmap of the instances of the
    direction's false partition hit by the itemset; minimal filtering groups
    rules by it.
    """
    itemset: Tuple[int, ...]
    delta: float
    direction: Direction
    support: float = 0.0
    confidence: float = 0.0
    n_truly_changed: int = 0
    n_falsely_changed: int = 0
    false_hits: bytes = field(default=b"", compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "itemset", tuple(sorted(int(i) for i in self.itemset)))
        object.__setattr__(self, "direction", Direction(self.direction))
        if not -1.0 <= self.delta <= 1.0:
            raise ContractViolation(f"Correction amount must lie in [-1, 1]: {self.delta}")
        if self.delta != 0 and (self.delta > 0) != (self.direction is Direction.POSITIVE):
            raise ContractViolation(f"Correction amount {self.delta} does not match direction {self.direction.value}")
        if self.delta == 0 and (self.support != 0 or self.confidence != 0):
            raise ContractViolation("A rule without a correction amount has zero support and confidence")

    @property
    def key(self) -> Tuple[str, Tuple[int, ...]]:
        return self.direction.value, self.itemset

    def describe(self, vocabulary: Optional[ItemVocabulary] = None) -> str:
        """Human readable form, e.g. `age >= 40 ∧ job = admin -> +0.35 (supp 0.12, conf 0.93)`."""
        condition = vocabulary.describe(self.itemset) if vocabulary else "{" + ", ".join(map(str, self.itemset)) + "}"
        return f"{condition} -> {self.delta:+.4g} (supp {self.support:.3f}, conf {self.confidence:.3f})"


@dataclass(frozen=True, eq=False)
class DeltaCandidates:
    """
    Candidate correction amounts of a dataset.

    scores are the sorted distinct scores q_0 < ... < q_{k-1}; deltas holds the
    k + 1 values -(p_i + p_{i+1}) / 2 over the scores padded with -1 and 1, in
    decreasing order. first_positive[i] is the rank of the first distinct score
    q with q + deltas[i] > 0.
    """
    scores: np.ndarray
    deltas: np.ndarray
    first_positive: np.ndarray

    def __len__(self) -> int:
        return len(self.deltas)

    def ranks(self, scores: np.ndarray) -> np.ndarray:
        """Rank of each score among the distinct scores; every score must occur in the dataset."""
        return np.searchsorted(self.scores, scores)


class DeltaChoice(NamedTuple):
    delta: float
    support: float
    confidence: float
    n_truly_changed: int
    n_falsely_changed: int


NO_DELTA = DeltaChoice(0.0, 0.0, 0.0, 0, 0)


def delta_candidates(dataset: Dataset) -> DeltaCandidates:
    """
    Midpoints between consecutive distinct scores, negated.

    Any other amount corrects exactly the same instances as one of these, so
    optimizing over the candidates is optimizing over [-1, 1].
    """
    scores = np.unique(dataset.scores)
    padded = np.concatenate(([-1.0], scores, [1.0]))
    deltas = -(padded[:-1] + padded[1:]) / 2
    first_positive = np.searchsorted(scores, -deltas, side="right")
    for array in (scores, deltas, first_positive):
        array.setflags(write=False)
    return DeltaCandidates(scores=scores, deltas=deltas, first_positive=first_positive)


def hits(itemset: Iterable[int], dataset: Dataset) -> np.ndarray:
    """
    Indices of the instances whose itemset contains every item of `itemset`.

    The empty itemset hits every instance.
    """
    return np.flatnonzero(dataset.covers(itemset))


def direction_partitions(dataset: Dataset, direction: Direction) -> Tuple[np.ndarray, np.ndarray]:
    """
    (false, true) instance indices a direction works on.

    Positive rules act on negative predictions: false negatives and true
    negatives. Negative rules act on false positives and true positives.
    """
    if Direction(direction) is Direction.POSITIVE:
        return dataset.false_negative, dataset.true_negative
    return dataset.false_positive, dataset.true_positive


def changed_sets(rule: CorrectionRule, dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """
    Truly and falsely changed instances of a rule.

    Args:
        rule: Rule with a non-zero correction amount
        dataset: Instances to apply the rule to

    Returns:
        Tuple of (truly changed, falsely changed) instance indices

    Raises:
        ContractViolation: If rule.delta is 0
    """
    if rule.delta == 0:
        raise ContractViolation("Changed sets are undefined for a rule without a correction amount")
    hit = dataset.covers(rule.itemset)
    corrected = predicted_labels(dataset.scores + rule.delta) == dataset.labels
    wrong = dataset.predicted != dataset.labels
    return np.flatnonzero(hit & wrong & corrected), np.flatnonzero(hit & ~wrong & ~corrected)


def support_confidence(rule: CorrectionRule, dataset: Dataset) -> Tuple[float, float]:
    """
    Support and confidence of a rule on a dataset.

    Support is |truly changed| over the size of the direction's false
    partition, confidence is |truly changed| over |truly changed| + |falsely
    changed|. Both are 0 when nothing changes or delta is 0.

    Raises:
        DirectionUnavailableError: If the direction's false partition is empty
    """
    false_idx, _ = direction_partitions(dataset, rule.direction)
    if len(false_idx) == 0:
        raise DirectionUnavailableError(f"No wrongly predicted instances for the {rule.direction.value} direction")
    if rule.delta == 0:
        return 0.0, 0.0
    truly, falsely = changed_sets(rule, dataset)
    changed = len(truly) + len(falsely)
    return len(truly) / len(false_idx), (len(truly) / changed if changed else 0.0)


def cumulative_counts(ranks: np.ndarray, n_ranks: int) -> np.ndarray:
    """counts[r] = number of ranks strictly below r, for r in 0..n_ranks."""
    return np.concatenate(([0], np.cumsum(np.bincount(ranks, minlength=n_ranks))))


def choose_delta(
    candidates: DeltaCandidates,
    false_below: np.ndarray,
    true_below: np.ndarray,
    n_false: int,
    direction: Direction,
    support: float,
) -> DeltaChoice:
    """
    Sweep every candidate amount of a direction in one vectorized pass.

    Args:
        candidates: Candidates of the dataset
        false_below: cumulative_counts of the ranks of the hit false instances
        true_below: cumulative_counts of the ranks of the hit true instances
        n_false: Size of the direction's false partition
        direction: Sign of the amounts to consider
        support: Minimum support

    Returns:
        DeltaChoice: Best amount by confidence, then support, then smaller
        |delta|, then larger delta (positive) or smaller delta (negative);
        NO_DELTA when no amount reaches the support
    """
    cut = candidates.first_positive
    deltas = candidates.deltas
    if direction is Direction.POSITIVE:
        truly = false_below[-1] - false_below[cut]
        falsely = true_below[-1] - true_below[cut]
        allowed = deltas > 0
    else:
        truly = false_below[cut]
        falsely = true_below[cut]
        allowed = deltas < 0

    supports = truly / n_false
    changed = truly + falsely
    confidences = np.divide(truly, changed, out=np.zeros(len(deltas)), where=changed > 0)
    feasible = np.flatnonzero(allowed & (supports >= support))
    if feasible.size == 0:
        return NO_DELTA

    tie = -deltas[feasible] if direction is Direction.POSITIVE else deltas[feasible]
    order = np.lexsort((tie, np.abs(deltas[feasible]), -supports[feasible], -confidences[feasible]))
    best = feasible[order[0]]
    return DeltaChoice(
        delta=float(deltas[best]),
        support=float(supports[best]),
        confidence=float(confidences[best]),
        n_truly_changed=int(truly[best]),
        n_falsely_changed=int(falsely[best]),
    )


def optimize_delta(
    itemset: Iterable[int],
    direction: Direction,
    dataset: Dataset,
    support: float,
    candidates: Optional[DeltaCandidates] = None,
) -> DeltaChoice:
    """
    Best correction amount of an itemset in one direction.

    Args:
        itemset: Condition of the rule
        direction: Sign of the correction
        dataset: Mining data
        support: Minimum support in [0, 1]
        candidates: Precomputed delta_candidates(dataset)

    Returns:
        DeltaChoice: Chosen amount and its statistics, or NO_DELTA

    Raises:
        ContractViolation: If support is outside [0, 1]
        DirectionUnavailableError: If the direction's false partition is empty
    """
    if not 0.0 <= support <= 1.0:
        raise ContractViolation(f"Support threshold must lie in [0, 1]: {support}")
    direction = Direction(direction)
    false_idx, true_idx = direction_partitions(dataset, direction)
    if len(false_idx) == 0:
        raise DirectionUnavailableError(f"No wrongly predicted instances for the {direction.value} direction")
    candidates = candidates if candidates is not None else delta_candidates(dataset)

    hit = dataset.covers(itemset)
    n_ranks = len(candidates.scores)
    false_ranks = candidates.ranks(dataset.scores[false_idx[hit[false_idx]]])
    true_ranks = candidates.ranks(dataset.scores[true_idx[hit[true_idx]]])
    return choose_delta(
        candidates,
        cumulative_counts(false_ranks, n_ranks),
        cumulative_counts(true_ranks, n_ranks),
        len(false_idx),
        direction,
        support,
    )


def best_rule(
    itemset: Iterable[int],
    direction: Direction,
    dataset: Dataset,
    support: float,
    candidates: Optional[DeltaCandidates] = None,
) -> CorrectionRule:
    """The rule itemset -> delta* with its statistics."""
    choice = optimize_delta(itemset, direction, dataset, support, candidates)
    return CorrectionRule(
        itemset=tuple(itemset),
        delta=choice.delta,
        direction=direction,
        support=choice.support,
        confidence=choice.confidence,
        n_truly_changed=choice.n_truly_changed,
        n_falsely_changed=choice.n_falsely_changed,
    )


def is_acceptable(rule: CorrectionRule, max_length: int, support: float, confidence: float) -> bool:
    """Length, support, confidence and non-zero amount conditions of an acceptable rule."""
    return (
        rule.delta != 0
        and 0 < len(rule.itemset) <= max_length
        and rule.support >= support
        and rule.confidence >= confidence
    )
