"""
Enumeration of all acceptable correction rules.

Frequent itemsets of a direction's false partition are enumerated as
equivalent lattices L(X, S): every Y with X ⊆ Y ⊆ X ∪ S hits the same false
instances, so a lattice shares its false-side statistics and can be skipped
whole when even its top element X ∪ S cannot reach the confidence threshold.

Lattices are independent; with workers > 1 they are scanned in a process pool
and merged back in discovery order, so the output does not depend on the
worker count.
"""

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from aws_lambda_powertools import Logger

from crminer.core_data import Dataset, minimum_count
from crminer.errors import ContractViolation
from crminer.rule_semantics import (
    BOTH_DIRECTIONS,
    CorrectionRule,
    DeltaCandidates,
    DeltaChoice,
    Direction,
    choose_delta,
    cumulative_counts,
    delta_candidates,
    direction_partitions,
)

logger = Logger(service="crminer-miner")

DEFAULT_WORKERS = int(os.environ.get("CRMINER_WORKERS", "1"))

# Lattice chunks handed to each worker process
CHUNKS_PER_WORKER = 4


@dataclass(frozen=True)
class MinerConfig:
    """Settings of one mining run."""
    max_length: int = 5
    support: float = 0.05
    confidence: float = 0.9
    minimal: bool = False
    directions: Tuple[Direction, ...] = BOTH_DIRECTIONS
    prune: bool = True
    workers: int = field(default_factory=lambda: DEFAULT_WORKERS)

    def __post_init__(self):
        if self.max_length < 1:
            raise ContractViolation(f"Maximum itemset length must be at least 1: {self.max_length}")
        if not 0.0 <= self.support <= 1.0:
            raise ContractViolation(f"Support threshold must lie in [0, 1]: {self.support}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ContractViolation(f"Confidence threshold must lie in [0, 1]: {self.confidence}")
        if self.workers < 1:
            raise ContractViolation(f"Worker count must be at least 1: {self.workers}")
        directions = tuple(Direction(d) for d in self.directions)
        if not directions:
            raise ContractViolation("At least one direction must be mined")
        object.__setattr__(self, "directions", tuple(d for d in BOTH_DIRECTIONS if d in directions))


@dataclass(frozen=True)
class EquivalentLattice:
    """
    L(core, tail) over a false partition of n_false instances.

    core and tail hold item ids, the tail in mining order. occurrence is the
    bitset (bit i = false instance i) hit by every member of the lattice.
    """
    lattice_id: int
    core: Tuple[int, ...]
    tail: Tuple[int, ...]
    occurrence: int
    n_false: int

    @property
    def top(self) -> Tuple[int, ...]:
        return self.core + self.tail

    def occurrence_bytes(self) -> bytes:
        return _to_bytes(self.occurrence, self.n_false)

    @property
    def fingerprint(self) -> str:
        return hashlib.blake2b(self.occurrence_bytes(), digest_size=16).hexdigest()

    def members(self, max_length: Optional[int] = None) -> Iterator[Tuple[int, ...]]:
        """Every itemset of the lattice, core first, tail subsets in index order."""
        limit = max_length if max_length is not None else len(self.top)

        def walk(itemset: Tuple[int, ...], start: int):
            yield itemset
            if len(itemset) >= limit:
                return
            for j in range(start, len(self.tail)):
                yield from walk(itemset + (self.tail[j],), j + 1)

        if len(self.core) <= limit:
            yield from walk(self.core, 0)


@dataclass
class MinerCounters:
    lattices_enumerated: int = 0
    lattices_pruned: int = 0
    itemsets_scanned: int = 0

    def add(self, other: "MinerCounters") -> None:
        self.lattices_enumerated += other.lattices_enumerated
        self.lattices_pruned += other.lattices_pruned
        self.itemsets_scanned += other.itemsets_scanned

    def as_dict(self) -> Dict[str, int]:
        return {
            "latticesEnumerated": self.lattices_enumerated,
            "latticesPruned": self.lattices_pruned,
            "itemsetsScanned": self.itemsets_scanned,
        }


@dataclass
class MinedRuleSet:
    """Mined rules, the lattice each came from, and run counters."""
    rules: List[CorrectionRule] = field(default_factory=list)
    provenance: List[int] = field(default_factory=list)
    counters: MinerCounters = field(default_factory=MinerCounters)
    skipped_directions: List[Direction] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rules)

    def direction_counts(self) -> Dict[str, int]:
        counts = {d.value: 0 for d in BOTH_DIRECTIONS}
        for rule in self.rules:
            counts[rule.direction.value] += 1
        return counts


def _to_bits(mask: np.ndarray) -> int:
    return int.from_bytes(np.packbits(mask, bitorder="little").tobytes(), "little")


def _to_bytes(bits: int, n: int) -> bytes:
    return bits.to_bytes((n + 7) // 8, "little")


def _to_mask(bits: int, n: int) -> np.ndarray:
    packed = np.frombuffer(_to_bytes(bits, n), dtype=np.uint8)
    return np.unpackbits(packed, count=n, bitorder="little").astype(bool)


def reorder_items(false_items: np.ndarray) -> np.ndarray:
    """
    Mining order of the items: ascending occurrence count in the false
    partition, ties by item id.

    Args:
        false_items: (false instances x items) boolean matrix

    Returns:
        np.ndarray: Item ids in mining order
    """
    counts = np.asarray(false_items, dtype=bool).sum(axis=0)
    return np.lexsort((np.arange(len(counts)), counts))


def _item_bits(matrix: np.ndarray) -> List[int]:
    return [_to_bits(matrix[:, j]) for j in range(matrix.shape[1])]


def _lattice_stream(
    item_bits: Sequence[int],
    order: Sequence[int],
    n_false: int,
    min_count: int,
    max_length: int,
) -> Iterator[Tuple[Tuple[int, ...], Tuple[int, ...], int]]:
    everything = (1 << n_false) - 1
    root_tail = tuple(int(i) for i in order if item_bits[i] == everything)
    root_candidates = [
        (int(i), item_bits[i]) for i in order
        if item_bits[i] != everything and item_bits[i].bit_count() >= min_count
    ]
    yield (), root_tail, everything

    def extend(core, tail, candidates):
        for k, (item, occurrence) in enumerate(candidates):
            perfect: List[int] = []
            children: List[Tuple[int, int]] = []
            for other, other_occurrence in candidates[k + 1:]:
                joint = occurrence & other_occurrence
                if joint == occurrence:
                    perfect.append(other)
                elif joint.bit_count() >= min_count:
                    children.append((other, joint))
            child_core = core + (item,)
            child_tail = tail + tuple(perfect)
            yield child_core, child_tail, occurrence
            if children and len(child_core) < max_length:
                yield from extend(child_core, child_tail, children)

    if max_length >= 1:
        yield from extend((), root_tail, root_candidates)


def enumerate_lattices(
    false_items: np.ndarray,
    support: float,
    max_length: int,
    order: Optional[Sequence[int]] = None,
) -> Iterator[EquivalentLattice]:
    """
    Disjoint equivalent lattices covering the frequent itemsets of a false partition.

    Depth-first prefix extension over the mining order. After extending by an
    item, every later item present in all occurrences of the new prefix joins
    the tail and is not branched on below it. Only lattices whose core has at
    most max_length items are produced. The root lattice L(∅, items in every
    row) is always produced first.

    Args:
        false_items: (false instances x items) boolean matrix
        support: Frequency threshold as a fraction of the false instances
        max_length: Maximum core length
        order: Mining order of the item ids; reorder_items when omitted

    Yields:
        EquivalentLattice: Lattices in discovery order with consecutive ids
    """
    false_items = np.asarray(false_items, dtype=bool)
    n_false = false_items.shape[0]
    order = reorder_items(false_items) if order is None else order
    stream = _lattice_stream(_item_bits(false_items), order, n_false, minimum_count(support, n_false), max_length)
    for lattice_id, (core, tail, occurrence) in enumerate(stream):
        yield EquivalentLattice(lattice_id, core, tail, occurrence, n_false)


class _MiningContext:
    """Read-only state needed to scan the lattices of one direction."""

    def __init__(self, dataset: Dataset, direction: Direction, config: MinerConfig,
                 candidates: DeltaCandidates):
        false_idx, true_idx = direction_partitions(dataset, direction)
        self.direction = direction
        self.config = config
        self.candidates = candidates
        self.n_false = len(false_idx)
        self.n_true = len(true_idx)
        self.false_items = dataset.items[false_idx]
        self.true_bits = _item_bits(dataset.items[true_idx])
        self.all_true = (1 << self.n_true) - 1
        self.false_ranks = candidates.ranks(dataset.scores[false_idx])
        self.true_ranks = candidates.ranks(dataset.scores[true_idx])

    def true_occurrence(self, itemset: Sequence[int]) -> int:
        occurrence = self.all_true
        for item in itemset:
            occurrence &= self.true_bits[item]
        return occurrence

    def false_below(self, occurrence: int) -> np.ndarray:
        ranks = self.false_ranks[_to_mask(occurrence, self.n_false)]
        return cumulative_counts(ranks, len(self.candidates.scores))

    def choose(self, false_below: np.ndarray, true_occurrence: int) -> DeltaChoice:
        ranks = self.true_ranks[_to_mask(true_occurrence, self.n_true)]
        true_below = cumulative_counts(ranks, len(self.candidates.scores))
        return choose_delta(self.candidates, false_below, true_below, self.n_false,
                            self.direction, self.config.support)

    def prune_check(self, lattice: EquivalentLattice, false_below: np.ndarray) -> bool:
        """True when the lattice can be skipped: its top element falls short of the confidence threshold."""
        choice = self.choose(false_below, self.true_occurrence(lattice.top))
        return choice.confidence < self.config.confidence

    def scan(self, lattice: EquivalentLattice) -> Tuple[List[CorrectionRule], MinerCounters]:
        counters = MinerCounters(lattices_enumerated=1)
        false_below = self.false_below(lattice.occurrence)
        if self.config.prune and self.prune_check(lattice, false_below):
            counters.lattices_pruned = 1
            return [], counters

        config = self.config
        false_hits = lattice.occurrence_bytes()
        found: List[CorrectionRule] = []

        def visit(itemset: Tuple[int, ...], true_occurrence: int, start: int) -> None:
            if itemset:
                counters.itemsets_scanned += 1
                choice = self.choose(false_below, true_occurrence)
                if choice.delta != 0 and choice.confidence >= config.confidence:
                    found.append(CorrectionRule(
                        itemset=itemset,
                        delta=choice.delta,
                        direction=self.direction,
                        support=choice.support,
                        confidence=choice.confidence,
                        n_truly_changed=choice.n_truly_changed,
                        n_falsely_changed=choice.n_falsely_changed,
                        false_hits=false_hits,
                    ))
                    if config.minimal:
                        return
            if len(itemset) >= config.max_length:
                return
            for j in range(start, len(lattice.tail)):
                item = lattice.tail[j]
                visit(itemset + (item,), true_occurrence & self.true_bits[item], j + 1)

        if len(lattice.core) <= config.max_length:
            visit(lattice.core, self.true_occurrence(lattice.core), 0)
        found.sort(key=lambda rule: rule.itemset)
        return found, counters


_WORKER_CONTEXT: Optional[_MiningContext] = None


def _init_worker(context: _MiningContext) -> None:
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = context


def _scan_chunk(lattices: List[EquivalentLattice]) -> List[Tuple[List[CorrectionRule], MinerCounters]]:
    return [_WORKER_CONTEXT.scan(lattice) for lattice in lattices]


def _chunks(items: List[EquivalentLattice], count: int) -> List[List[EquivalentLattice]]:
    size = max(1, -(-len(items) // count))
    return [items[i:i + size] for i in range(0, len(items), size)]


def _mine_direction(context: _MiningContext, result: MinedRuleSet) -> None:
    config = context.config
    lattices = list(enumerate_lattices(context.false_items, config.support, config.max_length))

    if config.workers > 1 and len(lattices) > 1:
        with ProcessPoolExecutor(max_workers=config.workers, initializer=_init_worker,
                                 initargs=(context,)) as pool:
            chunks = _chunks(lattices, config.workers * CHUNKS_PER_WORKER)
            scanned = [outcome for chunk in pool.map(_scan_chunk, chunks) for outcome in chunk]
    else:
        scanned = [context.scan(lattice) for lattice in lattices]

    counters = MinerCounters()
    before = len(result.rules)
    for lattice, (rules, lattice_counters) in zip(lattices, scanned):
        counters.add(lattice_counters)
        result.rules.extend(rules)
        result.provenance.extend([lattice.lattice_id] * len(rules))
    result.counters.add(counters)

    logger.info("Mined direction", extra={
        "direction": context.direction.value,
        "falseCount": context.n_false,
        "trueCount": context.n_true,
        "ruleCount": len(result.rules) - before,
        **counters.as_dict(),
    })


def minimal_filter(rules: Sequence[CorrectionRule], provenance: Optional[Sequence[int]] = None
                   ) -> Tuple[List[CorrectionRule], List[int]]:
    """
    Keep rules with no acceptable strict-subset itemset hitting the same false instances.

    Rules are grouped by direction and false-hit bitmap. Buckets are keyed by a
    digest of the bitmap and split by exact comparison, so digest collisions
    never merge distinct groups.

    Args:
        rules: Rules carrying false_hits
        provenance: Optional per-rule lattice ids, filtered alongside

    Returns:
        Tuple of (kept rules, kept provenance) in input order

    Raises:
        ContractViolation: If a rule carries no false_hits
    """
    provenance = list(provenance) if provenance is not None else [-1] * len(rules)
    buckets: Dict[Tuple[Direction, bytes], List[List[int]]] = {}
    for index, rule in enumerate(rules):
        if not rule.false_hits:
            raise ContractViolation(f"Rule {rule.itemset} carries no false-hit bitmap")
        digest = hashlib.blake2b(rule.false_hits, digest_size=16).digest()
        groups = buckets.setdefault((rule.direction, digest), [])
        for group in groups:
            if rules[group[0]].false_hits == rule.false_hits:
                group.append(index)
                break
        else:
            groups.append([index])

    dominated = set()
    for groups in buckets.values():
        for group in groups:
            itemsets = [(index, frozenset(rules[index].itemset)) for index in group]
            for index, itemset in itemsets:
                if any(other < itemset for _, other in itemsets):
                    dominated.add(index)

    kept = [i for i in range(len(rules)) if i not in dominated]
    return [rules[i] for i in kept], [provenance[i] for i in kept]


def mine(dataset: Dataset, config: Optional[MinerConfig] = None) -> MinedRuleSet:
    """
    Mine every acceptable correction rule of a dataset.

    Positive rules are mined on (true negatives, false negatives), negative
    rules on (true positives, false positives). A direction without wrongly
    predicted instances is skipped with a warning.

    Args:
        dataset: Mining data
        config: Thresholds and switches; MinerConfig() when omitted

    Returns:
        MinedRuleSet: Rules ordered by direction (positive first), lattice
        discovery order, then itemset
    """
    config = config or MinerConfig()
    result = MinedRuleSet()
    candidates = delta_candidates(dataset)

    for direction in config.directions:
        false_idx, _ = direction_partitions(dataset, direction)
        if len(false_idx) == 0:
            logger.warning("Skipping direction without wrongly predicted instances",
                           extra={"direction": direction.value})
            result.skipped_directions.append(direction)
            continue
        _mine_direction(_MiningContext(dataset, direction, config, candidates), result)

    if len(result.skipped_directions) == len(config.directions):
        logger.warning("No direction could be mined", extra={"instanceCount": len(dataset)})

    if config.minimal:
        result.rules, result.provenance = minimal_filter(result.rules, result.provenance)

    logger.info("Mining finished", extra={
        "ruleCount": len(result.rules),
        "minimal": config.minimal,
        **result.direction_counts(),
        **result.counters.as_dict(),
    })
    return result
