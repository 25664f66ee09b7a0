"""
Synthetic evaluation scenarios.

Data lacking: a small training split, a mining split, an augmentation pool and
a test split, drawn class-wise stratified. Concept drift: ten disjoint regions
of a random axis-aligned partition whose selected label is made rare in the
training split, so a base model fitted there mispredicts inside the regions.
Planted rules: a binary dataset whose scores are wrong exactly on the instances
hit by a known itemset.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from aws_lambda_powertools import Logger
from sklearn.model_selection import train_test_split

from crminer.core_data import (
    DEFAULT_BINS,
    SCORE_LIMIT,
    Dataset,
    Operator,
    Predicate,
    RawTable,
    binary_vocabulary,
    quantile_cuts,
)
from crminer.correction_models import ModelKind, Objective, greedy_build
from crminer.errors import ContractViolation, ScenarioGenerationError
from crminer.rule_semantics import CorrectionRule

logger = Logger(service="crminer-scenario-harness")

CATEGORIES = ("a", "b", "c")


@dataclass(frozen=True)
class DriftScenarioConfig:
    """
    Drift scenario settings.

    shift_inclusion is the relative chance that an instance of a region's
    selected label is drawn into TRN.
    """
    regions: int = 10
    depth: int = 5
    min_fraction: float = 0.03
    max_fraction: float = 0.05
    min_class_fraction: float = 0.1
    shift_inclusion: float = 0.05
    max_attempts: int = 1000
    trn_fraction: float = 0.4
    mng_fraction: float = 0.4
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if self.regions < 1 or self.depth < 1 or self.max_attempts < 1:
            raise ContractViolation("Region count, depth and attempt cap must be positive")
        if not 0.0 < self.min_fraction <= self.max_fraction < 1.0:
            raise ContractViolation(f"Region size bounds are invalid: [{self.min_fraction}, {self.max_fraction}]")
        if not 0.0 < self.shift_inclusion <= 1.0:
            raise ContractViolation(f"Shift inclusion must lie in (0, 1]: {self.shift_inclusion}")
        if self.trn_fraction <= 0 or self.mng_fraction <= 0 or self.trn_fraction + self.mng_fraction >= 1:
            raise ContractViolation("TRN and MNG fractions must be positive and leave room for TST")


@dataclass(frozen=True)
class LackSplitConfig:
    trn_size: int = 100
    mng_size: int = 500
    aug_fraction: float = 0.5

    def __post_init__(self):
        if self.trn_size < 1 or self.mng_size < 1:
            raise ContractViolation("TRN and MNG sizes must be positive")
        if not 0.0 <= self.aug_fraction < 1.0:
            raise ContractViolation(f"AUG fraction must lie in [0, 1): {self.aug_fraction}")


@dataclass(frozen=True, eq=False)
class Region:
    """A conjunction of predicates, the table rows it holds and its selected label."""
    conditions: Tuple[Predicate, ...]
    members: np.ndarray
    selected_label: int
    shifted: np.ndarray

    def members_in(self, split: np.ndarray) -> np.ndarray:
        """Positions within `split` of the region's members."""
        return np.flatnonzero(np.isin(split, self.members))

    def describe(self) -> str:
        return " ∧ ".join(c.describe() for c in self.conditions)


@dataclass(eq=False)
class DriftScenario:
    seed: int
    regions: List[Region]
    trn: np.ndarray
    mng: np.ndarray
    tst: np.ndarray
    attempts: int = 1
    shift_inclusion: float = 0.05


@dataclass(eq=False)
class LackSplits:
    trn: np.ndarray
    mng: np.ndarray
    aug: np.ndarray
    tst: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"trn": self.trn, "mng": self.mng, "aug": self.aug, "tst": self.tst}


@dataclass(eq=False)
class PlantedDataset:
    dataset: Dataset
    planted: Tuple[int, ...]
    hits: np.ndarray
    flipped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _seed_int(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def gen_synthetic_table(
    n_instances: int = 10000,
    n_numeric: int = 6,
    n_categorical: int = 4,
    seed: int = 0,
    label_noise: float = 0.1,
) -> Tuple[RawTable, np.ndarray]:
    """
    A table labelled by a hidden linear concept with uniform label noise.

    Numeric attributes x0.. are standard normal, categorical attributes c0..
    take the values a, b, c uniformly. The concept logit is a random linear
    combination of the numeric attributes plus a per-category offset; labels
    are its sign, flipped with probability label_noise. Scores are
    tanh(logit / 2).

    Returns:
        Tuple of (RawTable, concept logits)
    """
    if not 0.0 <= label_noise < 0.5:
        raise ContractViolation(f"Label noise must lie in [0, 0.5): {label_noise}")
    rng = np.random.default_rng(seed)
    numeric = rng.standard_normal((n_instances, n_numeric))
    categorical = rng.integers(0, len(CATEGORIES), size=(n_instances, n_categorical))

    weights = rng.uniform(0.5, 1.5, size=n_numeric) * rng.choice([-1.0, 1.0], size=n_numeric)
    offsets = rng.uniform(-0.5, 0.5, size=(n_categorical, len(CATEGORIES)))
    logits = numeric @ weights / math.sqrt(n_numeric) * 2.0
    logits += offsets[np.arange(n_categorical), categorical].sum(axis=1)

    labels = np.where(logits > 0, 1, -1).astype(np.int8)
    flips = rng.random(n_instances) < label_noise
    labels[flips] *= -1

    columns = {f"x{j}": numeric[:, j] for j in range(n_numeric)}
    columns.update({f"c{j}": np.array(CATEGORIES)[categorical[:, j]] for j in range(n_categorical)})
    table = RawTable(
        frame=pd.DataFrame(columns),
        scores=np.clip(np.tanh(logits / 2), -SCORE_LIMIT, SCORE_LIMIT),
        labels=labels,
        numeric=tuple(f"x{j}" for j in range(n_numeric)),
        categorical=tuple(f"c{j}" for j in range(n_categorical)),
    )
    return table, logits


def _split_options(table: RawTable, bins: int) -> Dict[str, Tuple[Operator, tuple]]:
    options: Dict[str, Tuple[Operator, tuple]] = {}
    for name in table.attributes:
        if name in table.numeric:
            cuts = quantile_cuts(table.frame[name].to_numpy(dtype=float), bins)
            if cuts:
                options[name] = (Operator.LT, cuts)
        else:
            categories = tuple(sorted(table.frame[name].astype(str).unique()))
            if len(categories) > 1:
                options[name] = (Operator.EQ, categories)
    return options


def _random_partition(
    table: RawTable,
    options: Dict[str, Tuple[Operator, tuple]],
    depth: int,
    rng: np.random.Generator,
) -> List[Tuple[Tuple[Predicate, ...], np.ndarray]]:
    """Leaves of a random axis-aligned tree: (path conditions, row indices)."""
    attributes = sorted(options)
    columns = {name: table.frame[name] for name in attributes}
    leaves: List[Tuple[Tuple[Predicate, ...], np.ndarray]] = []

    def split(conditions: Tuple[Predicate, ...], rows: np.ndarray, level: int) -> None:
        if level == depth or len(rows) < 2 or not attributes:
            leaves.append((conditions, rows))
            return
        name = attributes[int(rng.integers(len(attributes)))]
        operator, values = options[name]
        value = values[int(rng.integers(len(values)))]
        if operator is Operator.LT:
            left, right = Predicate(name, Operator.LT, value), Predicate(name, Operator.GE, value)
        else:
            left, right = Predicate(name, Operator.EQ, value), Predicate(name, Operator.NE, value)
        inside = left.evaluate(columns[name].iloc[rows])
        split(conditions + (left,), rows[inside], level + 1)
        split(conditions + (right,), rows[~inside], level + 1)

    split((), np.arange(len(table)), 0)
    return leaves


def _qualifies(rows: np.ndarray, labels: np.ndarray, n: int, config: DriftScenarioConfig) -> bool:
    if not config.min_fraction * n <= len(rows) <= config.max_fraction * n:
        return False
    positives = int(np.sum(labels[rows] == 1))
    smaller = min(positives, len(rows) - positives)
    return smaller >= config.min_class_fraction * len(rows)


def _check_scenario(scenario: DriftScenario, n: int, labels: np.ndarray, config: DriftScenarioConfig) -> None:
    seen = np.zeros(n, dtype=bool)
    for region in scenario.regions:
        if seen[region.members].any():
            raise ScenarioGenerationError("Drift regions overlap")
        seen[region.members] = True
        if not _qualifies(region.members, labels, n, config):
            raise ScenarioGenerationError(f"Drift region violates size or class balance: {region.describe()}")
    splits = np.concatenate([scenario.trn, scenario.mng, scenario.tst])
    if len(splits) != n or len(np.unique(splits)) != n:
        raise ScenarioGenerationError("TRN, MNG and TST must partition the table")


def gen_drift_scenario(
    table: RawTable,
    seed: int = 0,
    config: Optional[DriftScenarioConfig] = None,
) -> DriftScenario:
    """
    Plant concept-drift regions and draw TRN/MNG/TST splits.

    A random depth-limited tree over quantile cut points and categories
    partitions the rows; a tree is accepted once it has enough leaves of
    acceptable size with both classes present. Each region gets a random
    selected label whose instances are drawn into TRN with relative weight
    shift_inclusion. MNG and TST are drawn class-wise stratified from the rest.

    Args:
        table: Table to plant regions in
        seed: Random seed
        config: Scenario settings

    Returns:
        DriftScenario

    Raises:
        ScenarioGenerationError: If no tree qualifies within max_attempts
    """
    config = config or DriftScenarioConfig()
    rng = np.random.default_rng(seed)
    n = len(table)
    labels = table.labels
    options = _split_options(table, config.bins)

    for attempt in range(1, config.max_attempts + 1):
        leaves = _random_partition(table, options, config.depth, rng)
        qualifying = [leaf for leaf in leaves if _qualifies(leaf[1], labels, n, config)]
        if len(qualifying) >= config.regions:
            break
    else:
        logger.error("Drift scenario search exhausted", extra={
            "attempts": config.max_attempts,
            "instanceCount": n,
            "regions": config.regions,
        })
        raise ScenarioGenerationError(
            f"No partition with {config.regions} qualifying regions after {config.max_attempts} attempts"
        )

    picks = np.sort(rng.choice(len(qualifying), size=config.regions, replace=False))
    regions = []
    for pick in picks:
        conditions, rows = qualifying[int(pick)]
        selected = int(rng.choice([-1, 1]))
        regions.append(Region(
            conditions=conditions,
            members=np.sort(rows),
            selected_label=selected,
            shifted=np.sort(rows[labels[rows] == selected]),
        ))

    weights = np.ones(n)
    for region in regions:
        weights[region.shifted] = config.shift_inclusion
    trn = np.sort(rng.choice(n, size=int(round(config.trn_fraction * n)), replace=False, p=weights / weights.sum()))
    rest = np.setdiff1d(np.arange(n), trn)
    mng_size = int(round(config.mng_fraction * n))
    mng, tst = train_test_split(rest, train_size=mng_size, stratify=labels[rest], random_state=_seed_int(rng))

    scenario = DriftScenario(
        seed=seed,
        regions=regions,
        trn=trn,
        mng=np.sort(mng),
        tst=np.sort(tst),
        attempts=attempt,
        shift_inclusion=config.shift_inclusion,
    )
    _check_scenario(scenario, n, labels, config)
    logger.info("Generated drift scenario", extra={
        "seed": seed,
        "attempts": attempt,
        "regionSizes": [len(r.members) for r in regions],
        "trnSize": len(trn),
        "mngSize": len(scenario.mng),
        "tstSize": len(scenario.tst),
    })
    return scenario


def emulate_base_scores(
    logits: np.ndarray,
    scenario: DriftScenario,
    shift_inclusion: Optional[float] = None,
) -> np.ndarray:
    """
    Scores of an ideal base model fitted on the biased TRN split.

    Drawing a region's selected label c with relative weight rho multiplies
    its odds by rho inside the region, so the logit moves by c * log(rho).
    This stands in for training a classifier on TRN.
    """
    rho = scenario.shift_inclusion if shift_inclusion is None else shift_inclusion
    shifted = np.asarray(logits, dtype=float).copy()
    for region in scenario.regions:
        shifted[region.members] += region.selected_label * math.log(rho)
    return np.clip(np.tanh(shifted / 2), -SCORE_LIMIT, SCORE_LIMIT)


def _stratified_counts(sizes: Sequence[int], n_positive: int, n: int) -> List[int]:
    cumulative = np.concatenate(([0], np.cumsum(sizes)))
    bounds = np.rint(cumulative * n_positive / n).astype(int)
    return list(np.diff(bounds))


def gen_lack_splits(labels: np.ndarray, config: Optional[LackSplitConfig] = None, seed: int = 0) -> LackSplits:
    """
    Class-wise stratified TRN, MNG, AUG and TST splits for the data-lacking setting.

    TRN and MNG have fixed sizes, AUG is aug_fraction of all instances and TST
    takes the rest. Each split's class counts are within one instance of the
    global class ratio.

    Raises:
        ScenarioGenerationError: If the dataset cannot hold the requested splits
    """
    config = config or LackSplitConfig()
    labels = np.asarray(labels)
    n = len(labels)
    aug_size = int(round(config.aug_fraction * n))
    tst_size = n - config.trn_size - config.mng_size - aug_size
    if tst_size < 1:
        raise ScenarioGenerationError(
            f"{n} instances cannot hold TRN={config.trn_size}, MNG={config.mng_size}, AUG={aug_size} and a TST split"
        )
    sizes = [config.trn_size, config.mng_size, aug_size, tst_size]
    rng = np.random.default_rng(seed)
    positive = rng.permutation(np.flatnonzero(labels == 1))
    negative = rng.permutation(np.flatnonzero(labels != 1))
    positive_counts = _stratified_counts(sizes, len(positive), n)

    splits: List[np.ndarray] = []
    p_start = n_start = 0
    for size, p_count in zip(sizes, positive_counts):
        n_count = size - p_count
        splits.append(np.sort(np.concatenate([
            positive[p_start:p_start + p_count],
            negative[n_start:n_start + n_count],
        ])))
        p_start += p_count
        n_start += n_count

    logger.info("Generated data-lacking splits", extra={"seed": seed, "sizes": sizes})
    return LackSplits(*splits)


def split_mining_validation(dataset: Dataset, validation_fraction: float = 0.2, seed: int = 0
                            ) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stratified split of mining data into mining and validation indices.

    Strata are the four prediction outcomes, falling back to labels and then
    to no stratification when a stratum is too small.
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ContractViolation(f"Validation fraction must lie in (0, 1): {validation_fraction}")
    indices = np.arange(len(dataset))
    outcomes = dataset.labels * 2 + dataset.predicted
    for strata in (outcomes, dataset.labels, None):
        if strata is not None and np.min(np.unique(strata, return_counts=True)[1]) < 2:
            continue
        try:
            mining, validation = train_test_split(indices, test_size=validation_fraction,
                                                  stratify=strata, random_state=seed)
            break
        except ValueError:
            if strata is None:
                raise
    return np.sort(mining), np.sort(validation)


def rule_guided_sample(
    rules: Sequence[CorrectionRule],
    aug: Dataset,
    n_rules: int = 10,
    per_rule: int = 50,
    total: int = 500,
    seed: int = 0,
    reduce_to: Optional[int] = None,
    reduce_on: Optional[Dataset] = None,
) -> np.ndarray:
    """
    Sample augmentation instances hit by randomly chosen rules.

    For each chosen rule up to per_rule of its not yet sampled hits are drawn;
    the shortfall to `total` is made up uniformly from the rest of AUG. With no
    rules this is uniform sampling.

    Args:
        rules: Mined rules
        aug: Augmentation pool
        n_rules: Rules to sample around
        per_rule: Instances per rule
        total: Sample size
        seed: Random seed
        reduce_to: First reduce the rules to a greedy accuracy CRL of this size
        reduce_on: Dataset the reduction CRL is built on

    Returns:
        np.ndarray: Sorted AUG indices

    Raises:
        ScenarioGenerationError: If AUG is empty
    """
    if len(aug) == 0:
        raise ScenarioGenerationError("Cannot sample from an empty augmentation pool")
    if reduce_to is not None:
        if reduce_on is None:
            raise ContractViolation("Rule reduction needs a dataset to build the CRL on")
        rules = greedy_build(rules, reduce_on, Objective(), reduce_to, ModelKind.CRL).rules

    rng = np.random.default_rng(seed)
    taken = np.zeros(len(aug), dtype=bool)
    order = rng.choice(len(rules), size=min(n_rules, len(rules)), replace=False) if len(rules) else []
    for index in order:
        budget = min(per_rule, total - int(taken.sum()))
        if budget <= 0:
            break
        hit = np.flatnonzero(aug.covers(rules[int(index)].itemset) & ~taken)
        if len(hit) > budget:
            hit = rng.choice(hit, size=budget, replace=False)
        taken[hit] = True

    guided = int(taken.sum())
    remaining = np.flatnonzero(~taken)
    top_up = min(total - guided, len(remaining))
    if top_up > 0:
        taken[rng.choice(remaining, size=top_up, replace=False)] = True

    logger.info("Sampled augmentation instances", extra={
        "ruleCount": len(order),
        "guidedCount": guided,
        "uniformCount": max(top_up, 0),
    })
    return np.flatnonzero(taken)


def plant_rule_dataset(
    n_items: int = 20,
    n_instances: int = 2000,
    planted: Sequence[int] = (0, 1),
    flip_rate: float = 0.9,
    noise: float = 0.05,
    seed: int = 0,
) -> PlantedDataset:
    """
    A binary dataset whose base model is wrong on a known subpopulation.

    Items are independent fair coins and labels are random. Instances hit by
    the planted itemset get a wrong-sign score of magnitude in [0.05, 0.35)
    with probability flip_rate, otherwise a correct-sign score of magnitude in
    [0.05, 0.95). Every other instance gets a correct-sign score of magnitude
    in [0.05, 0.95) plus Gaussian noise.

    Raises:
        ContractViolation: If flip_rate is outside (0, 1]
        ScenarioGenerationError: If the planted itemset hits nothing
    """
    if not 0.0 < flip_rate <= 1.0:
        raise ContractViolation(f"Flip rate must lie in (0, 1]: {flip_rate}")
    planted = tuple(sorted(set(planted)))
    if not planted or max(planted) >= n_items:
        raise ContractViolation(f"Planted itemset must be a non-empty subset of the {n_items} items: {planted}")

    rng = np.random.default_rng(seed)
    items = rng.random((n_instances, n_items)) < 0.5
    labels = rng.choice(np.array([-1, 1], dtype=np.int8), size=n_instances)
    hit = items[:, list(planted)].all(axis=1)
    if not hit.any():
        raise ScenarioGenerationError(f"Planted itemset {planted} hits no instance")

    flipped = hit & (rng.random(n_instances) < flip_rate)
    magnitude = np.where(flipped, rng.uniform(0.05, 0.35, n_instances), rng.uniform(0.05, 0.95, n_instances))
    scores = np.where(flipped, -labels, labels) * magnitude
    scores = np.where(hit, scores, scores + rng.normal(0.0, noise, n_instances) if noise > 0 else scores)
    scores = np.clip(scores, -SCORE_LIMIT, SCORE_LIMIT)

    dataset = Dataset(items=items, scores=scores, labels=labels, vocabulary=binary_vocabulary(n_items))
    logger.debug("Planted rule dataset", extra={
        "planted": list(planted),
        "hitCount": int(hit.sum()),
        "flippedCount": int(flipped.sum()),
    })
    return PlantedDataset(dataset=dataset, planted=planted, hits=np.flatnonzero(hit), flipped=np.flatnonzero(flipped))


def with_scores(table: RawTable, scores: np.ndarray) -> RawTable:
    """Copy of a table with new base-model scores."""
    return replace(table, scores=np.asarray(scores, dtype=float))
