"""
Shared fixtures: small random datasets and an exhaustive reference enumerator.

The reference enumerator evaluates the definitions directly: every itemset up
to the length limit, every candidate amount, sign of s + delta per instance.
"""

import itertools
from typing import Dict, FrozenSet, Iterable, List, Sequence, Set, Tuple

import numpy as np
import pytest

from crminer.core_data import Dataset, Instance, binary_vocabulary
from crminer.rule_semantics import BOTH_DIRECTIONS, Direction

# Scores on a coarse grid so datasets have ties and candidates at exactly 0
SCORE_GRID = np.round(np.arange(-0.9, 0.91, 0.1), 1)

Key = Tuple[str, Tuple[int, ...]]


def make_dataset(instances: Sequence[Tuple[Iterable[int], float, int]], n_items: int) -> Dataset:
    """Dataset over binary items f0.. from (items, score, label) triples."""
    return Dataset.from_instances(
        [Instance(frozenset(items), score, label) for items, score, label in instances],
        binary_vocabulary(n_items),
    )


def random_dataset(seed: int, n_items: int = None, n_instances: int = None) -> Dataset:
    rng = np.random.default_rng(seed)
    n_items = n_items or int(rng.integers(3, 13))
    n_instances = n_instances or int(rng.integers(10, 201))
    density = rng.uniform(0.2, 0.8, size=n_items)
    items = rng.random((n_instances, n_items)) < density
    scores = rng.choice(SCORE_GRID, size=n_instances)
    predicted = np.where(scores > 0, 1, -1)
    labels = np.where(rng.random(n_instances) < 0.7, predicted, -predicted)
    return Dataset(items=items, scores=scores, labels=labels, vocabulary=binary_vocabulary(n_items))


def corpus_settings(seed: int) -> Tuple[int, float, float]:
    """(max_length, support, confidence) for corpus member `seed`."""
    return 1 + seed % 3, (0.0, 0.1, 0.3)[(seed // 3) % 3], (0.0, 0.5, 0.9)[(seed // 9) % 3]


def _partition_masks(dataset: Dataset, direction: Direction) -> Tuple[np.ndarray, np.ndarray]:
    if direction is Direction.POSITIVE:
        return (dataset.scores <= 0) & (dataset.labels == 1), (dataset.scores <= 0) & (dataset.labels == -1)
    return (dataset.scores > 0) & (dataset.labels == -1), (dataset.scores > 0) & (dataset.labels == 1)


def _hit_mask(dataset: Dataset, itemset: Sequence[int]) -> np.ndarray:
    if not itemset:
        return np.ones(len(dataset), dtype=bool)
    return dataset.items[:, list(itemset)].all(axis=1)


class Oracle:
    """Exhaustive evaluation of correction rules on one dataset."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        points = [-1.0] + sorted(set(float(s) for s in dataset.scores)) + [1.0]
        self.deltas = [-(a + b) / 2 for a, b in zip(points, points[1:])]
        corrected = np.where(np.add.outer(dataset.scores, np.array(self.deltas)) > 0, 1, -1)
        self.right = corrected == dataset.labels[:, None]

    def best_delta(self, itemset: Sequence[int], direction: Direction, support: float
                   ) -> Tuple[float, float, float]:
        false, true = _partition_masks(self.dataset, direction)
        n_false = int(false.sum())
        hit = _hit_mask(self.dataset, itemset)
        truly = self.right[hit & false].sum(axis=0)
        falsely = (~self.right[hit & true]).sum(axis=0)
        best = None
        for j, delta in enumerate(self.deltas):
            if (direction is Direction.POSITIVE and delta <= 0) or (direction is Direction.NEGATIVE and delta >= 0):
                continue
            ct, cf = int(truly[j]), int(falsely[j])
            supp = ct / n_false
            if supp < support:
                continue
            conf = ct / (ct + cf) if ct + cf else 0.0
            key = (-conf, -supp, abs(delta), -delta if direction is Direction.POSITIVE else delta)
            if best is None or key < best[0]:
                best = (key, delta, supp, conf)
        return (0.0, 0.0, 0.0) if best is None else best[1:]

    def confidence_at(self, itemset: Sequence[int], direction: Direction, delta: float) -> Tuple[float, float]:
        """(supp, conf) of itemset -> delta for an arbitrary delta."""
        false, true = _partition_masks(self.dataset, direction)
        hit = _hit_mask(self.dataset, itemset)
        right = np.where(self.dataset.scores + delta > 0, 1, -1) == self.dataset.labels
        ct = int(np.sum(hit & false & right))
        cf = int(np.sum(hit & true & ~right))
        return ct / int(false.sum()), (ct / (ct + cf) if ct + cf else 0.0)

    def rules(self, max_length: int, support: float, confidence: float,
              directions: Sequence[Direction] = BOTH_DIRECTIONS) -> Dict[Key, Tuple[float, float, float]]:
        found: Dict[Key, Tuple[float, float, float]] = {}
        n_items = self.dataset.items.shape[1]
        for direction in directions:
            false, _ = _partition_masks(self.dataset, direction)
            if not false.any():
                continue
            for length in range(1, max_length + 1):
                for itemset in itertools.combinations(range(n_items), length):
                    delta, supp, conf = self.best_delta(itemset, direction, support)
                    if delta != 0 and conf >= confidence:
                        found[(direction.value, itemset)] = (delta, supp, conf)
        return found

    def false_hits(self, itemset: Sequence[int], direction: Direction) -> FrozenSet[int]:
        false, _ = _partition_masks(self.dataset, direction)
        return frozenset(np.flatnonzero(false & _hit_mask(self.dataset, itemset)).tolist())

    def minimal(self, rules: Dict[Key, Tuple[float, float, float]]) -> Dict[Key, Tuple[float, float, float]]:
        hits = {key: self.false_hits(key[1], Direction(key[0])) for key in rules}
        kept = {}
        for (direction, itemset), value in rules.items():
            dominated = any(
                other_direction == direction
                and set(other) < set(itemset)
                and hits[(other_direction, other)] == hits[(direction, itemset)]
                for other_direction, other in rules
            )
            if not dominated:
                kept[(direction, itemset)] = value
        return kept

    def frequent(self, direction: Direction, support: float, max_length: int) -> Set[Tuple[int, ...]]:
        false, _ = _partition_masks(self.dataset, direction)
        n_false = int(false.sum())
        n_items = self.dataset.items.shape[1]
        found = set()
        for length in range(0, max_length + 1):
            for itemset in itertools.combinations(range(n_items), length):
                if int(np.sum(false & _hit_mask(self.dataset, itemset))) / n_false >= support:
                    found.add(itemset)
        return found


def rule_map(rules) -> Dict[Key, Tuple[float, float, float]]:
    return {(r.direction.value, r.itemset): (r.delta, r.support, r.confidence) for r in rules}


@pytest.fixture
def two_instance_dataset():
    """A false negative at -0.4 and a true negative at -0.2, both containing f0."""
    return make_dataset([({0}, -0.4, 1), ({0}, -0.2, -1)], n_items=2)


@pytest.fixture(scope="session")
def corpus() -> List[Tuple[Dataset, int, float, float]]:
    return [(random_dataset(seed), *corpus_settings(seed)) for seed in range(200)]
