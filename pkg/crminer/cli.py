#!/usr/bin/env python3
"""
Command line interface for correction rule mining.

Pipeline:
    # Discretize a scored table and encode it
    python3 -m crminer prepare --input scored.csv --score-col score --label-col label \\
        --vocabulary vocab.json --out mng.jsonl --validation-fraction 0.2 --out-validation val.jsonl

    # Mine, denoise, and build a correction rule list
    python3 -m crminer mine --vocabulary vocab.json --dataset mng.jsonl --out rules.jsonl
    python3 -m crminer validate --vocabulary vocab.json --rules rules.jsonl --dataset val.jsonl --out valid.jsonl
    python3 -m crminer build --vocabulary vocab.json --rules valid.jsonl --dataset mng.jsonl --kind crl --out crl.jsonl

    # Evaluate on test data
    python3 -m crminer evaluate --vocabulary vocab.json --dataset tst.jsonl --model crl.jsonl

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from aws_lambda_powertools import Logger

from crminer import formats
from crminer.core_data import (
    RawTable,
    ScoreTransform,
    TableSchema,
    encode,
    fit_discretization,
    load_table,
)
from crminer.correction_models import (
    ModelKind,
    Objective,
    ObjectiveKind,
    apply_model,
    build_crs_all,
    coverage_jaccard,
    evaluate,
    greedy_build,
)
from crminer.errors import ContractViolation, DataError, ScenarioGenerationError
from crminer.miner import DEFAULT_WORKERS, MinerConfig, mine
from crminer.postprocess import ClusterConfig, denoise, drift_filter, kmodes_summarize
from crminer.rule_semantics import BOTH_DIRECTIONS, Direction
from crminer.scenario_harness import (
    DriftScenarioConfig,
    LackSplitConfig,
    emulate_base_scores,
    gen_drift_scenario,
    gen_lack_splits,
    gen_synthetic_table,
    plant_rule_dataset,
    rule_guided_sample,
    split_mining_validation,
    with_scores,
)

logger = Logger(service="crminer-cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

SERVICES = (
    "crminer-cli",
    "crminer-core-data",
    "crminer-correction-models",
    "crminer-formats",
    "crminer-miner",
    "crminer-postprocess",
    "crminer-scenario-harness",
)

SCORE_COL = "score"
LABEL_COL = "label"


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that exits with the usage-error code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def banner(title: str) -> None:
    print("=" * 60)
    print(title)
    print("=" * 60)


def _directions(value: str) -> tuple:
    if value == "both":
        return BOTH_DIRECTIONS
    try:
        return tuple(Direction(v.strip()) for v in value.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"unknown direction in {value!r}") from e


def _columns(value: str) -> tuple:
    return tuple(c.strip() for c in value.split(",") if c.strip())


def _schema(args) -> TableSchema:
    return TableSchema(
        score_col=args.score_col,
        label_col=args.label_col,
        delimiter=args.delimiter,
        score_transform=ScoreTransform(args.score_transform),
        numeric_cols=args.numeric_cols,
        categorical_cols=args.categorical_cols,
    )


def _write_table(path: Path, table: RawTable) -> None:
    frame = table.to_frame(TableSchema(score_col=SCORE_COL, label_col=LABEL_COL))
    formats.atomic_write(path, frame.to_csv(index=False))


def cmd_prepare(args) -> int:
    schema = _schema(args)
    table = load_table(args.input, schema)
    if args.use_vocabulary:
        spec, vocabulary = formats.read_vocabulary(args.use_vocabulary)
    else:
        if not args.vocabulary:
            raise UsageError("prepare needs --vocabulary (to write) or --use-vocabulary (to reuse)")
        spec, vocabulary = fit_discretization(table, args.bins, args.categorical_not_equal)
        formats.write_vocabulary(args.vocabulary, spec, vocabulary)
    dataset = encode(table, spec, vocabulary)

    if args.validation_fraction:
        if not args.out_validation:
            raise UsageError("--validation-fraction needs --out-validation")
        mining, validation = split_mining_validation(dataset, args.validation_fraction, args.seed)
        formats.write_dataset(args.out, dataset.subset(mining))
        formats.write_dataset(args.out_validation, dataset.subset(validation))
    else:
        formats.write_dataset(args.out, dataset)

    banner("Prepared dataset")
    print(f"Instances:   {len(dataset)}")
    print(f"Items:       {len(vocabulary)}")
    print(f"Vocabulary:  {vocabulary.fingerprint}")
    for name, size in dataset.partition_sizes().items():
        print(f"{name + ':':<20} {size}")
    return EXIT_OK


def cmd_mine(args) -> int:
    _, vocabulary = formats.read_vocabulary(args.vocabulary)
    dataset = formats.read_dataset(args.dataset, vocabulary)
    config = MinerConfig(
        max_length=args.max_length,
        support=args.support,
        confidence=args.confidence,
        minimal=args.minimal,
        directions=args.directions,
        prune=not args.no_prune,
        workers=args.workers,
    )
    started = time.perf_counter()
    result = mine(dataset, config)
    wall_time = time.perf_counter() - started

    formats.write_rules(args.out, result.rules, vocabulary)
    formats.write_json(formats.stats_path(args.out), {
        "rule_count": len(result.rules),
        "rules_by_direction": result.direction_counts(),
        "skipped_directions": [d.value for d in result.skipped_directions],
        "lattices_enumerated": result.counters.lattices_enumerated,
        "lattices_pruned": result.counters.lattices_pruned,
        "itemsets_scanned": result.counters.itemsets_scanned,
        "wall_time_seconds": wall_time,
    })

    banner("Mined correction rules")
    print(f"Rules:               {len(result.rules)}")
    print(f"Lattices enumerated: {result.counters.lattices_enumerated}")
    print(f"Lattices pruned:     {result.counters.lattices_pruned}")
    print(f"Itemsets scanned:    {result.counters.itemsets_scanned}")
    print(f"Wall time:           {wall_time:.2f}s")
    for rule in result.rules[:args.show]:
        print(f"  {rule.describe(vocabulary)}")
    return EXIT_OK


def _filter_command(args, keep, title: str) -> int:
    _, vocabulary = formats.read_vocabulary(args.vocabulary)
    rules = formats.read_rules(args.rules, vocabulary)
    dataset = formats.read_dataset(args.dataset, vocabulary)
    kept = keep(rules, dataset, args.confidence)
    formats.write_rules(args.out, kept, vocabulary)
    banner(title)
    print(f"Rules in:  {len(rules)}")
    print(f"Rules out: {len(kept)}")
    return EXIT_OK


def cmd_validate(args) -> int:
    return _filter_command(args, denoise, "Denoised rules")


def cmd_drift_filter(args) -> int:
    return _filter_command(args, drift_filter, "Drift-filtered rules")


def cmd_build(args) -> int:
    _, vocabulary = formats.read_vocabulary(args.vocabulary)
    rules = formats.read_rules(args.rules, vocabulary)
    if args.kind == "crs-all":
        model = build_crs_all(rules)
    else:
        if args.dataset is None:
            raise UsageError(f"--dataset is required for --kind {args.kind}")
        dataset = formats.read_dataset(args.dataset, vocabulary)
        model = greedy_build(rules, dataset, Objective(ObjectiveKind(args.objective)), args.max_size,
                             ModelKind(args.kind))
    formats.write_model(args.out, model, vocabulary)
    banner(f"Built {model.kind.value.upper()}")
    print(f"Candidates: {len(rules)}")
    print(f"Rules:      {len(model)}")
    for rule in model.rules[:args.show]:
        print(f"  {rule.describe(vocabulary)}")
    return EXIT_OK


def cmd_apply(args) -> int:
    _, vocabulary = formats.read_vocabulary(args.vocabulary)
    model = formats.read_model(args.model, vocabulary)
    dataset = formats.read_dataset(args.dataset, vocabulary)
    corrected = apply_model(model, dataset)
    frame = pd.DataFrame({"score": dataset.scores, "corrected": corrected, "label": dataset.labels})
    formats.atomic_write(args.out, frame.to_csv(index=False))
    banner("Applied correction model")
    print(f"Instances: {len(dataset)}")
    print(f"Changed:   {int(np.sum(corrected != dataset.scores))}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _, vocabulary = formats.read_vocabulary(args.vocabulary)
    dataset = formats.read_dataset(args.dataset, vocabulary)
    model = formats.read_model(args.model, vocabulary) if args.model else None
    metrics = evaluate(dataset, model)
    if args.out:
        formats.write_json(args.out, metrics._asdict())
    banner("Evaluation" + (f" ({model.kind.value.upper()}, {len(model)} rules)" if model else " (base model)"))
    for name, value in metrics._asdict().items():
        print(f"{name + ':':<10} {value:.4f}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    _, vocabulary = formats.read_vocabulary(args.vocabulary)
    rules = formats.read_rules(args.rules, vocabulary)
    dataset = formats.read_dataset(args.dataset, vocabulary)
    if not rules:
        raise DataError(f"{args.rules} holds no rules to summarize")
    chosen = kmodes_summarize(rules, dataset, ClusterConfig(args.k, args.max_iterations, args.seed))
    formats.write_rules(args.out, chosen, vocabulary)
    banner("Summarized rules")
    print(f"Rules in:        {len(rules)}")
    print(f"Representatives: {len(chosen)}")
    return EXIT_OK


def cmd_sample(args) -> int:
    _, vocabulary = formats.read_vocabulary(args.vocabulary)
    rules = formats.read_rules(args.rules, vocabulary)
    aug = formats.read_dataset(args.dataset, vocabulary)
    reduce_on = formats.read_dataset(args.reduce_on, vocabulary) if args.reduce_on else None
    if args.reduce_to and reduce_on is None:
        raise UsageError("--reduce-to needs --reduce-on")
    sampled = rule_guided_sample(rules, aug, args.n_rules, args.per_rule, args.total, args.seed,
                                 args.reduce_to, reduce_on)
    formats.write_json(args.out, {"indices": [int(i) for i in sampled]})
    if args.out_dataset:
        formats.write_dataset(args.out_dataset, aug.subset(sampled))
    banner("Rule-guided sample")
    print(f"Sampled: {len(sampled)} of {len(aug)}")
    return EXIT_OK


def cmd_coverage(args) -> int:
    _, vocabulary = formats.read_vocabulary(args.vocabulary)
    rules = formats.read_rules(args.rules, vocabulary)
    dataset = formats.read_dataset(args.dataset, vocabulary)
    manifest = formats.read_json(args.scenario, formats.SCENARIO_FORMAT)
    try:
        regions = [np.asarray(region["members"][args.split], dtype=int) for region in manifest["regions"]]
    except KeyError as e:
        raise DataError(f"Scenario {args.scenario} has no member list for split {args.split!r}") from e
    records = coverage_jaccard(regions, rules, dataset)
    if args.out:
        formats.write_json(args.out, {"regions": [r._asdict() for r in records]})
    banner("Region recovery")
    for index, record in enumerate(records):
        print(f"Region {index:>2}: coverage {record.coverage:.3f}  jaccard {record.jaccard:.3f}")
    if records:
        print(f"Mean:      coverage {np.mean([r.coverage for r in records]):.3f}"
              f"  jaccard {np.mean([r.jaccard for r in records]):.3f}")
    return EXIT_OK


def _predicates_json(conditions) -> list:
    return [{"attr": c.attribute, "op": c.operator.value, "value": c.value} for c in conditions]


def _gen_drift(args, out_dir: Path) -> dict:
    table, logits = gen_synthetic_table(args.instances, seed=args.seed, label_noise=args.label_noise)
    scenario = gen_drift_scenario(table, args.seed, DriftScenarioConfig(shift_inclusion=args.shift_inclusion))
    table = with_scores(table, emulate_base_scores(logits, scenario))
    splits = {"trn": scenario.trn, "mng": scenario.mng, "tst": scenario.tst}
    _write_table(out_dir / "full.csv", table)
    for name, indices in splits.items():
        _write_table(out_dir / f"{name}.csv", table.take(indices))
    return {
        "files": {"full": "full.csv", **{name: f"{name}.csv" for name in splits}},
        "attempts": scenario.attempts,
        "shift_inclusion": scenario.shift_inclusion,
        "regions": [
            {
                "conditions": _predicates_json(region.conditions),
                "selected_label": region.selected_label,
                "size": int(len(region.members)),
                "members": {
                    "full": [int(i) for i in region.members],
                    **{name: [int(i) for i in region.members_in(indices)] for name, indices in splits.items()},
                },
            }
            for region in scenario.regions
        ],
    }


def _gen_lack(args, out_dir: Path) -> dict:
    if args.input:
        table = load_table(args.input, _schema(args))
    else:
        table, _ = gen_synthetic_table(args.instances, seed=args.seed, label_noise=args.label_noise)
    splits = gen_lack_splits(table.labels, LackSplitConfig(), args.seed).as_dict()
    for name, indices in splits.items():
        _write_table(out_dir / f"{name}.csv", table.take(indices))
    return {
        "files": {name: f"{name}.csv" for name in splits},
        "sizes": {name: int(len(indices)) for name, indices in splits.items()},
        "regions": [],
    }


def _gen_planted(args, out_dir: Path) -> dict:
    planted = plant_rule_dataset(args.items, args.instances, args.planted, args.flip_rate, args.noise, args.seed)
    dataset = planted.dataset
    frame = pd.DataFrame(dataset.items.astype(int), columns=[f"f{i}" for i in range(args.items)])
    frame[SCORE_COL] = dataset.scores
    frame[LABEL_COL] = dataset.labels
    formats.atomic_write(out_dir / "planted.csv", frame.to_csv(index=False))
    return {
        "files": {"all": "planted.csv"},
        "planted": [f"f{i}" for i in planted.planted],
        "regions": [{
            "conditions": [{"attr": f"f{i}", "op": ">=", "value": 1.0} for i in planted.planted],
            "members": {"all": [int(i) for i in planted.hits]},
        }],
    }


def cmd_gen_scenario(args) -> int:
    out_dir = Path(args.out_dir)
    generators = {"drift": _gen_drift, "lack": _gen_lack, "planted": _gen_planted}
    manifest = {
        "format": formats.SCENARIO_FORMAT,
        "kind": args.kind,
        "seed": args.seed,
        "score_col": SCORE_COL,
        "label_col": LABEL_COL,
        **generators[args.kind](args, out_dir),
    }
    formats.write_json(out_dir / "scenario.json", manifest)
    banner(f"Generated {args.kind} scenario")
    for name, path in manifest["files"].items():
        print(f"{name + ':':<6} {out_dir / path}")
    print(f"Regions: {len(manifest['regions'])}")
    return EXIT_OK


def _add_table_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--score-col", default=SCORE_COL, help=f"Score column (default: {SCORE_COL})")
    parser.add_argument("--label-col", default=LABEL_COL, help=f"Label column (default: {LABEL_COL})")
    parser.add_argument("--delimiter", default=",", help="Field delimiter (default: ,)")
    parser.add_argument("--score-transform", default="identity", choices=[t.value for t in ScoreTransform],
                        help="Map raw scores into (-1, 1) (default: identity)")
    parser.add_argument("--numeric-cols", type=_columns, default=None, help="Comma separated numeric attributes")
    parser.add_argument("--categorical-cols", type=_columns, default=None,
                        help="Comma separated categorical attributes")


def _add_rules_io(parser: argparse.ArgumentParser, dataset_help: str) -> None:
    parser.add_argument("--vocabulary", required=True, help="Vocabulary JSON")
    parser.add_argument("--rules", required=True, help="Rules JSONL")
    parser.add_argument("--dataset", required=True, help=dataset_help)
    parser.add_argument("--out", required=True, help="Output file")


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(prog="crminer", description="Mine and apply correction rules for binary classifiers")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("prepare", help="Discretize and encode a scored table")
    p.add_argument("--input", required=True, help="Delimited table with header")
    _add_table_options(p)
    p.add_argument("--vocabulary", help="Fit a vocabulary and write it here")
    p.add_argument("--use-vocabulary", help="Encode with an existing vocabulary")
    p.add_argument("--bins", type=int, default=4, help="Quantile bins per numeric attribute (default: 4)")
    p.add_argument("--categorical-not-equal", action="store_true", help="Also emit != items")
    p.add_argument("--out", required=True, help="Dataset JSONL")
    p.add_argument("--validation-fraction", type=float, default=0.0, help="Hold out a stratified validation part")
    p.add_argument("--out-validation", help="Validation dataset JSONL")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_prepare)

    p = sub.add_parser("mine", help="Mine all acceptable correction rules")
    p.add_argument("--vocabulary", required=True, help="Vocabulary JSON")
    p.add_argument("--dataset", required=True, help="Mining dataset JSONL")
    p.add_argument("--out", required=True, help="Rules JSONL (stats written next to it)")
    p.add_argument("--max-length", type=int, default=5, help="Maximum itemset length K (default: 5)")
    p.add_argument("--support", type=float, default=0.05, help="Support threshold (default: 0.05)")
    p.add_argument("--confidence", type=float, default=0.9, help="Confidence threshold (default: 0.9)")
    p.add_argument("--minimal", action="store_true", help="Only minimal rules")
    p.add_argument("--directions", type=_directions, default=BOTH_DIRECTIONS,
                   help="both, positive, negative or a comma separated list (default: both)")
    p.add_argument("--no-prune", action="store_true", help="Scan every lattice")
    p.add_argument("--workers", type=int, default=DEFAULT_WORKERS,
                   help=f"Worker processes (default: CRMINER_WORKERS or 1, now {DEFAULT_WORKERS})")
    p.add_argument("--show", type=int, default=10, help="Rules to print (default: 10)")
    p.set_defaults(handler=cmd_mine)

    p = sub.add_parser("validate", help="Drop rules with low confidence on validation data")
    _add_rules_io(p, "Validation dataset JSONL")
    p.add_argument("--confidence", type=float, default=0.7, help="Validation threshold (default: 0.7)")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("drift-filter", help="Keep rules with low confidence on the old training data")
    _add_rules_io(p, "Old training dataset JSONL")
    p.add_argument("--confidence", type=float, default=0.5, help="Drift threshold (default: 0.5)")
    p.set_defaults(handler=cmd_drift_filter)

    p = sub.add_parser("build", help="Build a correction rule list or set")
    p.add_argument("--vocabulary", required=True, help="Vocabulary JSON")
    p.add_argument("--rules", required=True, help="Candidate rules JSONL")
    p.add_argument("--dataset", help="Build dataset JSONL (not needed for crs-all)")
    p.add_argument("--kind", default="crl", choices=["crl", "crs", "crs-all"], help="Model kind (default: crl)")
    p.add_argument("--objective", default="accuracy", choices=[o.value for o in ObjectiveKind],
                   help="Greedy objective (default: accuracy)")
    p.add_argument("--max-size", type=int, default=None, help="Rule limit M (default: unlimited)")
    p.add_argument("--out", required=True, help="Model JSONL")
    p.add_argument("--show", type=int, default=10, help="Rules to print (default: 10)")
    p.set_defaults(handler=cmd_build)

    p = sub.add_parser("apply", help="Write corrected scores")
    p.add_argument("--vocabulary", required=True, help="Vocabulary JSON")
    p.add_argument("--model", required=True, help="Model JSONL")
    p.add_argument("--dataset", required=True, help="Dataset JSONL")
    p.add_argument("--out", required=True, help="CSV of score, corrected, label")
    p.set_defaults(handler=cmd_apply)

    p = sub.add_parser("evaluate", help="Accuracy, precision, recall, f1 and log loss")
    p.add_argument("--vocabulary", required=True, help="Vocabulary JSON")
    p.add_argument("--dataset", required=True, help="Dataset JSONL")
    p.add_argument("--model", help="Model JSONL (base scores when omitted)")
    p.add_argument("--out", help="Metrics JSON")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("summarize", help="Pick k-modes representatives per direction")
    _add_rules_io(p, "Reference dataset JSONL")
    p.add_argument("--k", type=int, default=10, help="Clusters per direction (default: 10)")
    p.add_argument("--max-iterations", type=int, default=100, help="Iteration cap (default: 100)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_summarize)

    p = sub.add_parser("sample", help="Rule-guided sampling from an augmentation pool")
    _add_rules_io(p, "Augmentation dataset JSONL")
    p.add_argument("--n-rules", type=int, default=10, help="Rules to sample around (default: 10)")
    p.add_argument("--per-rule", type=int, default=50, help="Instances per rule (default: 50)")
    p.add_argument("--total", type=int, default=500, help="Sample size (default: 500)")
    p.add_argument("--reduce-to", type=int, default=None, help="First reduce rules to a CRL of this size")
    p.add_argument("--reduce-on", help="Dataset JSONL the reduction CRL is built on")
    p.add_argument("--out-dataset", help="Also write the sampled instances as a dataset")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("coverage", help="Coverage and Jaccard of rules against scenario regions")
    p.add_argument("--vocabulary", required=True, help="Vocabulary JSON")
    p.add_argument("--rules", required=True, help="Rules JSONL")
    p.add_argument("--dataset", required=True, help="Dataset JSONL the region members refer to")
    p.add_argument("--scenario", required=True, help="Scenario manifest JSON")
    p.add_argument("--split", default="tst", help="Member list of the manifest to use (default: tst)")
    p.add_argument("--out", help="Per-region JSON")
    p.set_defaults(handler=cmd_coverage)

    p = sub.add_parser("gen-scenario", help="Generate a synthetic evaluation scenario")
    p.add_argument("--kind", required=True, choices=["lack", "drift", "planted"])
    p.add_argument("--out-dir", required=True, help="Directory for the tables and scenario.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=None,
                   help="Instances (default: 10000, or 2000 for planted)")
    p.add_argument("--label-noise", type=float, default=0.1, help="Synthetic label noise (default: 0.1)")
    p.add_argument("--shift-inclusion", type=float, default=0.05,
                   help="Relative TRN inclusion of shifted instances (default: 0.05)")
    p.add_argument("--input", help="Table to split for --kind lack (synthetic when omitted)")
    _add_table_options(p)
    p.add_argument("--items", type=int, default=20, help="Binary items for --kind planted (default: 20)")
    p.add_argument("--planted", type=lambda v: tuple(int(i) for i in v.split(",")), default=(0, 1),
                   help="Planted item ids (default: 0,1)")
    p.add_argument("--flip-rate", type=float, default=0.9, help="Planted flip rate (default: 0.9)")
    p.add_argument("--noise", type=float, default=0.05, help="Planted score noise (default: 0.05)")
    p.set_defaults(handler=cmd_gen_scenario)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "instances", 0) is None:
        args.instances = 2000 if args.kind == "planted" else 10000
    if args.verbose:
        for service in SERVICES:
            logging.getLogger(service).setLevel(logging.DEBUG)

    try:
        return args.handler(args)
    except (UsageError, ContractViolation) as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ScenarioGenerationError) as e:
        logger.exception("Command failed", extra={"command": args.command})
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
