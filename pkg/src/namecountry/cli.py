"""Command-line pipeline: extract, split, augment, train, evaluate, bench,
bias, and audit.

Every command writes a manifest (config hash, seed, input/output digests,
no timestamps) so identical inputs and seed reproduce identical digests.
Outputs are written atomically; a failing command leaves no partial files.
Exit codes: 0 success, 1 leakage/audit violations, 2 everything else.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Sequence

from . import classifier, engine, enrichment, evaluation, extraction
from . import corpus as corpus_mod
from .core import (
    InputFormatError, RecordError, TaxonomyError, UnknownLabelError,
    load_mapping, load_taxonomy, read_records, write_records,
)

log = logging.getLogger(__name__)

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "split": {"ratios": [8, 1, 1], "filter_cap": 1000},
    "augment": {"threshold": 6000, "budget": 5000, "overrides": {},
                "ratios": [3, 1, 1], "gold_per_country": 100,
                "chunk_size": 200},
    "train": {"learning_rate": 2e-5, "batch_size": 64, "max_epochs": 10,
              "warmup_fraction": 0.10, "patience": 5, "weight_decay": 0.0,
              "embedding_dim": 64, "hidden_dim": 128, "max_len": 40},
    "bench": {"batch_sizes": [1, 100, 1000, 10000], "warmup_batches": 3,
              "repetitions": 5, "streams": 1, "cost_per_million": 0.0,
              "model_name": "namecountry", "model_type": "local"},
    "oracle": {"kind": "stub", "strict_fraction": 0.8,
               "lenient_fraction": 0.5, "strictness": {},
               "http": {"endpoint": "", "model": "",
                        "api_key_env": "NAMECOUNTRY_API_KEY",
                        "timeout_seconds": 30.0, "max_retries": 3}},
}


class CommandError(Exception):
    def __init__(self, message: str, exit_code: int = 2):
        super().__init__(message)
        self.exit_code = exit_code


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    text = Path(path).read_text(encoding="utf-8")
    try:
        loaded = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CommandError(f"config {path}: invalid JSON ({exc})")
    if not isinstance(loaded, dict):
        raise CommandError(f"config {path}: top level must be an object")
    return _deep_merge(DEFAULT_CONFIG, loaded)


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)
    finally:
        tmp.unlink(missing_ok=True)


def _write_json(path: Path, obj) -> None:
    _atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True,
                                        ensure_ascii=False) + "\n")


def _manifest_key(path: Path, out_dir: Path) -> str:
    # Relative keys keep manifests identical across runs in different roots.
    try:
        return path.resolve().relative_to(out_dir.resolve()).as_posix()
    except ValueError:
        return path.name


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int,
                    inputs: Sequence[Path], outputs: Sequence[Path]) -> Path:
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "seed": seed,
        "inputs": {_manifest_key(p, out_dir): _sha256_file(p)
                   for p in inputs if p is not None and p.exists()},
        "outputs": {_manifest_key(p, out_dir): _sha256_file(p)
                    for p in outputs},
    }
    path = out_dir / "manifests" / f"{command}.json"
    _write_json(path, manifest)
    return path


def _make_validator(config: dict) -> enrichment.ValidationOracle:
    oracle = config["oracle"]
    if oracle["kind"] == "stub":
        return enrichment.StubNameValidator(
            strictness=dict(oracle.get("strictness", {})),
            strict_fraction=oracle.get("strict_fraction", 0.8),
            lenient_fraction=oracle.get("lenient_fraction", 0.5))
    if oracle["kind"] == "http":
        return _http_oracle(oracle)
    raise CommandError(f"unknown oracle kind {oracle['kind']!r}")


def _make_generator(config: dict, seed: int) -> enrichment.GeneratorOracle:
    oracle = config["oracle"]
    if oracle["kind"] == "stub":
        return enrichment.StubNameGenerator(seed=seed)
    if oracle["kind"] == "http":
        return _http_oracle(oracle)
    raise CommandError(f"unknown oracle kind {oracle['kind']!r}")


def _http_oracle(oracle: dict) -> enrichment.HttpChatOracle:
    http = oracle["http"]
    if not http.get("endpoint"):
        raise CommandError("oracle.http.endpoint is not configured")
    return enrichment.HttpChatOracle(enrichment.HttpOracleConfig(
        endpoint=http["endpoint"], model=http.get("model", ""),
        api_key_env=http.get("api_key_env", "NAMECOUNTRY_API_KEY"),
        timeout_seconds=http.get("timeout_seconds", 30.0),
        max_retries=http.get("max_retries", 3)))


def _load_alias_table(path: Path | None) -> extraction.NormalizationTable:
    if path is None:
        return extraction.NormalizationTable()
    return extraction.NormalizationTable.from_file(path)


# --- commands -------------------------------------------------------------

def cmd_extract(args, config: dict, seed: int, out_dir: Path) -> int:
    output = args.output or out_dir / "corpus.jsonl"
    stats_path = args.stats or out_dir / "extract_stats.json"
    taxonomy = load_taxonomy(args.taxonomy)
    table = _load_alias_table(args.aliases)
    records = extraction.read_affiliations(args.input)
    labeled, stats = extraction.build_labeled_corpus(records, table, taxonomy)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records(output, labeled)
    extraction.write_stats(stats_path, stats)
    _write_manifest(out_dir, "extract", config, seed,
                    [args.input, args.taxonomy, args.aliases],
                    [output, stats_path])
    print(f"extract: {stats.retained} records retained of {stats.raw} "
          f"({stats.ambiguous} ambiguous, {stats.unresolved} unresolved, "
          f"{stats.deduplicated} duplicates)")
    return 0


def cmd_split(args, config: dict, seed: int, out_dir: Path) -> int:
    split_cfg = config["split"]
    ratios = tuple(args.ratios if args.ratios else split_cfg["ratios"])
    cap = args.filter_cap or split_cfg["filter_cap"]
    split_dir = args.output_dir or out_dir / "splits"

    records = read_records(args.input)
    train, val, test = corpus_mod.split_corpus(
        records, corpus_mod.SplitConfig(ratios=ratios, seed=seed))
    train, removed = corpus_mod.enforce_no_leakage(train, val, test)
    splits = corpus_mod.CorpusSplits(train_oag=train, val_oag=val,
                                     test_oag=test)
    if not args.no_filter:
        splits.test_filter = corpus_mod.build_filtered_test(
            test, _make_validator(config), cap=cap, seed=seed)
    violations = corpus_mod.audit_splits(splits)
    if not corpus_mod.audit_is_clean(violations):
        _print_violations(violations)
        return 1
    splits.save(split_dir)
    corpus_mod.write_split_manifest(split_dir, seed=seed, ratios=ratios,
                                   sizes=splits.sizes(), audit=violations)
    outputs = [split_dir / f"{name}.jsonl" for name, n in splits.sizes().items()
               if n] + [split_dir / "manifest.json"]
    _write_manifest(out_dir, "split", config, seed, [args.input], outputs)
    sizes = splits.sizes()
    print(f"split: train={sizes['train_oag']} val={sizes['val_oag']} "
          f"test={sizes['test_oag']} test_filter={sizes['test_filter']} "
          f"(leakage removals: {removed})")
    return 0


def cmd_augment(args, config: dict, seed: int, out_dir: Path) -> int:
    aug_cfg = config["augment"]
    splits_dir = args.splits_dir or out_dir / "splits"
    output_dir = args.output_dir or splits_dir
    threshold = args.threshold or aug_cfg["threshold"]
    budget = args.budget or aug_cfg["budget"]
    gold_per_country = (args.gold_per_country
                        if args.gold_per_country is not None
                        else aug_cfg["gold_per_country"])

    if not splits_dir.is_dir():
        raise CommandError(f"{splits_dir}: not a directory")
    base = corpus_mod.CorpusSplits.load(splits_dir)
    if not base.train_oag:
        raise CommandError(f"{splits_dir}: no train_oag split found")
    counts = Counter(r.label for r in base.train_oag)
    budgets = enrichment.compute_budgets(
        counts, threshold=threshold, budget=budget,
        overrides=aug_cfg.get("overrides", {}))
    generator = _make_generator(config, seed)
    existing = {r.full_name for name in corpus_mod.SPLIT_NAMES
                for r in base[name]}
    synthetic = enrichment.collect_synthetic(
        budgets, generator, existing, chunk_size=aug_cfg["chunk_size"])
    synth_records = [r for country in sorted(synthetic)
                     for r in synthetic[country]]
    if synth_records:
        synth_train, synth_val, synth_test = corpus_mod.split_corpus(
            synth_records,
            corpus_mod.SplitConfig(ratios=tuple(aug_cfg["ratios"]), seed=seed))
    else:
        synth_train, synth_val, synth_test = [], [], []
    splits = corpus_mod.assemble_augmented_splits(
        base, synth_train, synth_val, synth_test)

    if gold_per_country > 0:
        countries = sorted({r.label for name in corpus_mod.SPLIT_NAMES
                            for r in base[name]})
        gold_budgets = [enrichment.AugmentBudget(c, 0, gold_per_country)
                        for c in countries]
        taken = existing | {r.full_name for r in synth_records}
        gold = enrichment.collect_synthetic(
            gold_budgets, generator, taken, chunk_size=aug_cfg["chunk_size"])
        splits.test_gold = [r for country in sorted(gold)
                            for r in gold[country]]

    violations = corpus_mod.audit_splits(splits)
    if not corpus_mod.audit_is_clean(violations):
        _print_violations(violations)
        return 1
    splits.save(output_dir)
    corpus_mod.write_split_manifest(
        output_dir, seed=seed, ratios=tuple(aug_cfg["ratios"]),
        sizes=splits.sizes(), audit=violations)
    outputs = [output_dir / f"{name}.jsonl" for name, n in splits.sizes().items()
               if n] + [output_dir / "manifest.json"]
    inputs = [splits_dir / f"{name}.jsonl" for name in corpus_mod.SPLIT_NAMES]
    _write_manifest(out_dir, "augment", config, seed, inputs, outputs)
    sizes = splits.sizes()
    print(f"augment: +{len(synth_records)} synthetic -> "
          f"train_aug={sizes['train_aug']} val_aug={sizes['val_aug']} "
          f"test_filter_aug={sizes['test_filter_aug']} "
          f"test_gold={sizes['test_gold']}")
    return 0


def cmd_train(args, config: dict, seed: int, out_dir: Path) -> int:
    train_cfg = config["train"]
    splits_dir = args.splits_dir or out_dir / "splits"
    model_out = args.model_out or out_dir / "model.bin"
    log_out = args.log_out or out_dir / "train_log.jsonl"
    train_path = splits_dir / f"{args.train_split}.jsonl"
    val_path = splits_dir / f"{args.val_split}.jsonl"

    taxonomy = load_taxonomy(args.taxonomy)
    train_records = read_records(train_path)
    val_records = read_records(val_path)
    tokenizer = classifier.fit_tokenizer(train_records,
                                         max_len=train_cfg["max_len"])
    model, train_log = classifier.train(
        train_records, val_records, taxonomy,
        config=classifier.TrainConfig(
            learning_rate=train_cfg["learning_rate"],
            batch_size=train_cfg["batch_size"],
            max_epochs=train_cfg["max_epochs"],
            warmup_fraction=train_cfg["warmup_fraction"],
            patience=train_cfg["patience"],
            weight_decay=train_cfg["weight_decay"],
            seed=seed),
        model_config=classifier.ModelConfig(
            embedding_dim=train_cfg["embedding_dim"],
            hidden_dim=train_cfg["hidden_dim"]),
        tokenizer=tokenizer)
    out_dir.mkdir(parents=True, exist_ok=True)
    classifier.save_model(model, model_out)
    _atomic_write_text(log_out, train_log.to_jsonl())
    _write_manifest(out_dir, "train", config, seed,
                    [train_path, val_path, args.taxonomy],
                    [model_out, log_out])
    last = train_log.epochs[-1]
    best = max(train_log.epochs, key=lambda e: e.val_macro_f1)
    print(f"train: {len(train_log.epochs)} epochs, best val macro-F1 "
          f"{best.val_macro_f1:.4f} at epoch {best.epoch} "
          f"(last train loss {last.train_loss:.4f})")
    return 0


def cmd_evaluate(args, config: dict, seed: int, out_dir: Path) -> int:
    output = args.output or out_dir / "eval_report.json"
    model = classifier.load_model(args.model)
    records = read_records(args.input)
    predicted = model.predict_labels([r.full_name for r in records])
    pairs = list(zip((r.label for r in records), predicted))

    if args.mapping:
        if not args.target_taxonomy:
            raise CommandError("--mapping requires --target-taxonomy")
        target = load_taxonomy(args.target_taxonomy)
        mapping = load_mapping(args.mapping, model.taxonomy, target)
        report = evaluation.evaluate_mapped(pairs, mapping)
        taxonomy_name = target.name
    else:
        report = evaluation.evaluate(pairs, model.taxonomy)
        taxonomy_name = model.taxonomy.name

    payload = {"taxonomy": taxonomy_name, **report.to_dict()}
    if args.train_split:
        counts = Counter(r.label for r in read_records(args.train_split))
        buckets = evaluation.bucket_report(pairs, model.taxonomy, counts,
                                           threshold=args.bucket_threshold)
        payload["buckets"] = buckets.to_dict()
    _write_json(output, payload)
    outputs = [output]
    if args.table:
        _atomic_write_text(args.table, evaluation.render_eval_table(
            [(args.model_name, taxonomy_name, report)]))
        outputs.append(args.table)
    _write_manifest(out_dir, f"evaluate_{taxonomy_name}", config, seed,
                    [args.model, args.input, args.mapping,
                     args.target_taxonomy, args.train_split],
                    outputs)
    print(f"evaluate[{taxonomy_name}]: accuracy={report.accuracy:.4f} "
          f"weighted_f1={report.weighted_f1:.4f} "
          f"macro_f1={report.macro_f1:.4f} n={report.n_records}")
    return 0


def cmd_bench(args, config: dict, seed: int, out_dir: Path) -> int:
    bench_cfg = config["bench"]
    output = args.output or out_dir / "bench_report.json"
    model = classifier.load_model(args.model)
    names = engine.read_name_file(args.names)
    report = engine.benchmark(
        model,
        engine.BenchConfig(batch_sizes=tuple(bench_cfg["batch_sizes"]),
                           warmup_batches=bench_cfg["warmup_batches"],
                           repetitions=bench_cfg["repetitions"],
                           seed=seed, streams=bench_cfg["streams"]),
        names, model_name=bench_cfg["model_name"],
        model_type=bench_cfg["model_type"],
        cost_per_million=bench_cfg["cost_per_million"])
    _write_json(output, report.to_dict())
    outputs = [output]
    if args.table:
        _atomic_write_text(args.table, engine.render_throughput_table(report))
        outputs.append(args.table)
    _write_manifest(out_dir, "bench", config, seed,
                    [args.model, args.names], outputs)
    for row in report.rows:
        print(f"bench: batch={row.batch_size} "
              f"throughput={row.throughput_names_per_second:.1f} names/s "
              f"latency={row.latency_ms_per_name:.4f} ms/name")
    return 0


def cmd_bias(args, config: dict, seed: int, out_dir: Path) -> int:
    output = args.output or out_dir / "bias_report.json"
    model = classifier.load_model(args.model)
    target = load_taxonomy(args.target_taxonomy)
    mapping = load_mapping(args.mapping, model.taxonomy, target)
    records = _read_bias_records(args.records)
    report = evaluation.bias_report(records, model, mapping)
    _write_json(output, report.to_dict())
    _write_manifest(out_dir, "bias", config, seed,
                    [args.model, args.records, args.mapping,
                     args.target_taxonomy],
                    [output])
    print(f"bias: {len(report.groups)} groups over {report.n_records} "
          f"records ({report.n_incorrect} incorrect)")
    return 0


def _read_bias_records(path: Path) -> list[tuple[str, str, bool]]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append((obj["gold_name"], obj["answered_name"],
                                bool(obj["correct"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise InputFormatError(f"bad bias record ({exc})",
                                       path=path, line=lineno) from exc
    return records


def cmd_audit(args, config: dict, seed: int, out_dir: Path) -> int:
    splits_dir = args.splits_dir or out_dir / "splits"
    output = args.output or out_dir / "audit_report.json"
    if not splits_dir.is_dir():
        raise CommandError(f"{splits_dir}: not a directory")
    splits = corpus_mod.CorpusSplits.load(splits_dir)
    violations = corpus_mod.audit_splits(splits)
    clean = corpus_mod.audit_is_clean(violations)
    _write_json(output, {"clean": clean, "violations": violations,
                         "sizes": splits.sizes()})
    inputs = [splits_dir / f"{name}.jsonl" for name in corpus_mod.SPLIT_NAMES]
    _write_manifest(out_dir, "audit", config, seed, inputs, [output])
    if clean:
        print("audit: clean")
        return 0
    _print_violations(violations)
    return 1


def _print_violations(violations: dict[str, list[str]]) -> None:
    print("audit violations:", file=sys.stderr)
    for check, names in sorted(violations.items()):
        if names:
            shown = ", ".join(repr(n) for n in names[:5])
            more = f" (+{len(names) - 5} more)" if len(names) > 5 else ""
            print(f"  {check}: {shown}{more}", file=sys.stderr)


# --- argument parsing -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="namecountry",
        description="Name-to-nationality pipeline: label extraction, "
                    "leakage-safe splits, synthetic augmentation, training, "
                    "evaluation, and benchmarking.")
    parser.add_argument("--config", type=Path,
                        help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out-dir", type=Path, default=Path("out"),
                        help="directory for default outputs and manifests")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="label an affiliation JSONL file")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--taxonomy", type=Path, required=True)
    p.add_argument("--aliases", type=Path)
    p.add_argument("--output", type=Path)
    p.add_argument("--stats", type=Path)
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("split", help="build train/val/test and test_filter")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--filter-cap", type=int)
    p.add_argument("--no-filter", action="store_true",
                   help="skip the oracle-screened test_filter")
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("augment", help="add synthetic names for tail countries")
    p.add_argument("--splits-dir", type=Path)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--threshold", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--gold-per-country", type=int)
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("train", help="train the classifier on a split")
    p.add_argument("--splits-dir", type=Path)
    p.add_argument("--train-split", default="train_aug")
    p.add_argument("--val-split", default="val_aug")
    p.add_argument("--taxonomy", type=Path, required=True)
    p.add_argument("--model-out", type=Path)
    p.add_argument("--log-out", type=Path)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="score a split, optionally mapped")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path)
    p.add_argument("--mapping", type=Path)
    p.add_argument("--target-taxonomy", type=Path)
    p.add_argument("--train-split", type=Path,
                   help="training split for head/tail bucket metrics")
    p.add_argument("--bucket-threshold", type=int, default=6000)
    p.add_argument("--table", type=Path)
    p.add_argument("--model-name", default="namecountry")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("bench", help="benchmark batch scoring throughput")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--names", type=Path, required=True)
    p.add_argument("--output", type=Path)
    p.add_argument("--table", type=Path)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("bias", help="group accuracy and answer distributions")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--mapping", type=Path, required=True)
    p.add_argument("--target-taxonomy", type=Path, required=True)
    p.add_argument("--output", type=Path)
    p.set_defaults(handler=cmd_bias)

    p = sub.add_parser("audit", help="scan split files for leakage violations")
    p.add_argument("--splits-dir", type=Path)
    p.add_argument("--output", type=Path)
    p.set_defaults(handler=cmd_audit)

    return parser


def _error_text(exc: BaseException) -> str:
    if isinstance(exc, KeyError) and exc.args:
        return str(exc.args[0])
    return str(exc)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else config["seed"]
        config = _deep_merge(config, {"seed": seed})
        out_dir = args.out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        return args.handler(args, config, seed, out_dir)
    except corpus_mod.LeakageError as exc:
        print(f"error: {_error_text(exc)}", file=sys.stderr)
        return 1
    except (CommandError, InputFormatError, TaxonomyError, UnknownLabelError,
            RecordError, classifier.TrainingError, classifier.CheckpointError,
            engine.InsufficientNamesError, enrichment.OracleTransportError,
            FileNotFoundError, IsADirectoryError, NotADirectoryError,
            PermissionError, ValueError) as exc:
        print(f"error: {_error_text(exc)}", file=sys.stderr)
        return exc.exit_code if isinstance(exc, CommandError) else 2


if __name__ == "__main__":
    raise SystemExit(main())
