"""
Post-processing of mined rule sets: validation denoising, concept-drift
filtering against the base model's training data, and k-modes summarization.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from aws_lambda_powertools import Logger

from crminer.core_data import Dataset
from crminer.errors import ContractViolation, DirectionUnavailableError
from crminer.rule_semantics import BOTH_DIRECTIONS, CorrectionRule, Direction, support_confidence

logger = Logger(service="crminer-postprocess")


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 10
    max_iterations: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ContractViolation(f"Cluster count must be at least 1: {self.k}")
        if self.max_iterations < 1:
            raise ContractViolation(f"Iteration cap must be at least 1: {self.max_iterations}")


@dataclass
class KModesResult:
    """
    Clustering of one direction's rules.

    rule_ids index into the rule list passed to cluster_rules; assignments,
    hit vectors and representatives are positions within rule_ids.
    """
    direction: Direction
    rule_ids: List[int]
    centroids: np.ndarray
    assignments: np.ndarray
    cost_history: List[int] = field(default_factory=list)
    representatives: List[int] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.cost_history)


def _confidences(rules: Sequence[CorrectionRule], dataset: Dataset) -> List[float]:
    confidences = []
    unavailable = set()
    for rule in rules:
        try:
            _, confidence = support_confidence(rule, dataset)
        except DirectionUnavailableError:
            unavailable.add(rule.direction.value)
            confidence = 0.0
        confidences.append(confidence)
    for direction in sorted(unavailable):
        logger.warning("Direction unavailable on dataset; rules scored with confidence 0",
                       extra={"direction": direction, "instanceCount": len(dataset)})
    return confidences


def denoise(rules: Sequence[CorrectionRule], validation: Dataset, confidence: float) -> List[CorrectionRule]:
    """
    Drop rules whose confidence on validation data is below a threshold.

    The mined correction amount is kept fixed; only confidence is recomputed.

    Args:
        rules: Mined rules
        validation: Validation data encoded with the mining vocabulary
        confidence: Minimum validation confidence in [0, 1]

    Returns:
        List[CorrectionRule]: Kept rules in input order
    """
    if not 0.0 <= confidence <= 1.0:
        raise ContractViolation(f"Validation confidence threshold must lie in [0, 1]: {confidence}")
    kept = [r for r, c in zip(rules, _confidences(rules, validation)) if c >= confidence]
    logger.info("Denoised rules", extra={"ruleCount": len(rules), "keptCount": len(kept), "threshold": confidence})
    return kept


def drift_filter(rules: Sequence[CorrectionRule], old: Dataset, confidence: float) -> List[CorrectionRule]:
    """
    Keep rules that do not hold on the old data, i.e. likely concept-drift regions.

    Args:
        rules: Rules mined on new data
        old: The base model's training data encoded with the mining vocabulary
        confidence: Rules with old-data confidence below this are kept

    Returns:
        List[CorrectionRule]: Kept rules in input order
    """
    if not 0.0 <= confidence <= 1.0:
        raise ContractViolation(f"Drift confidence threshold must lie in [0, 1]: {confidence}")
    kept = [r for r, c in zip(rules, _confidences(rules, old)) if c < confidence]
    logger.info("Filtered drift rules", extra={"ruleCount": len(rules), "keptCount": len(kept), "threshold": confidence})
    return kept


def hamming_distances(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(vectors x centroids) Hamming distances between boolean rows."""
    v = vectors.astype(np.int64)
    c = centroids.astype(np.int64)
    return v @ (1 - c).T + (1 - v) @ c.T


def _initial_centroids(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(len(vectors)))]
    nearest = hamming_distances(vectors, vectors[chosen]).min(axis=1)
    while len(chosen) < k:
        candidates = nearest.copy()
        candidates[chosen] = -1
        pick = int(np.argmax(candidates))
        chosen.append(pick)
        nearest = np.minimum(nearest, hamming_distances(vectors, vectors[[pick]])[:, 0])
    return vectors[chosen].copy()


def kmodes(vectors: np.ndarray, config: ClusterConfig) -> Tuple[np.ndarray, np.ndarray, List[int]]:
    """
    k-modes over boolean vectors with Hamming distance.

    Starts from a seeded random vector and adds the farthest vectors greedily.
    Vectors go to the nearest centroid (lowest index on ties); a centroid
    becomes the coordinate-wise mode of its members with 0.5 resolved to 1,
    and an empty cluster keeps its centroid. Stops when no assignment changes
    or after max_iterations.

    Returns:
        Tuple of (centroids, assignments, cost per iteration)
    """
    vectors = np.asarray(vectors, dtype=bool)
    rng = np.random.default_rng(config.seed)
    centroids = _initial_centroids(vectors, config.k, rng)
    assignments = np.full(len(vectors), -1)
    costs: List[int] = []

    for _ in range(config.max_iterations):
        distances = hamming_distances(vectors, centroids)
        updated = np.argmin(distances, axis=1)
        costs.append(int(distances[np.arange(len(vectors)), updated].sum()))
        if np.array_equal(updated, assignments):
            break
        assignments = updated
        for cluster in range(len(centroids)):
            members = vectors[assignments == cluster]
            if len(members):
                centroids[cluster] = members.mean(axis=0) >= 0.5

    return centroids, assignments, costs


def cluster_rules(
    rules: Sequence[CorrectionRule],
    reference: Dataset,
    config: ClusterConfig,
) -> Dict[Direction, KModesResult]:
    """
    Cluster each direction's rules by their hit vectors on a reference dataset.

    A direction with at most k rules is not clustered: each rule represents itself.
    """
    results: Dict[Direction, KModesResult] = {}
    for direction in BOTH_DIRECTIONS:
        rule_ids = [i for i, r in enumerate(rules) if r.direction is direction]
        if not rule_ids:
            continue
        vectors = reference.hits_matrix([rules[i].itemset for i in rule_ids]).T
        if len(rule_ids) <= config.k:
            results[direction] = KModesResult(
                direction=direction,
                rule_ids=rule_ids,
                centroids=vectors.copy(),
                assignments=np.arange(len(rule_ids)),
                representatives=list(range(len(rule_ids))),
            )
            continue

        centroids, assignments, costs = kmodes(vectors, config)
        nearest = np.argmin(hamming_distances(vectors, centroids), axis=0)
        representatives = sorted(set(int(i) for i in nearest))
        results[direction] = KModesResult(
            direction=direction,
            rule_ids=rule_ids,
            centroids=centroids,
            assignments=assignments,
            cost_history=costs,
            representatives=representatives,
        )
        logger.debug("Clustered rules", extra={
            "direction": direction.value,
            "ruleCount": len(rule_ids),
            "iterations": len(costs),
            "finalCost": costs[-1],
        })
    return results


def kmodes_summarize(
    rules: Sequence[CorrectionRule],
    reference: Dataset,
    config: ClusterConfig,
) -> List[CorrectionRule]:
    """
    Summarize a rule set by the rule nearest to each k-modes centroid, per direction.

    Args:
        rules: Non-empty rule set
        reference: Instances the hit vectors are computed on
        config: Cluster count, iteration cap and seed

    Returns:
        List[CorrectionRule]: At most k representatives per direction, in input order

    Raises:
        ContractViolation: If rules is empty
    """
    if not rules:
        raise ContractViolation("Cannot summarize an empty rule set")
    results = cluster_rules(rules, reference, config)
    chosen = sorted(
        result.rule_ids[position]
        for result in results.values()
        for position in result.representatives
    )
    logger.info("Summarized rules", extra={"ruleCount": len(rules), "representativeCount": len(chosen), "k": config.k})
    return [rules[i] for i in chosen]
