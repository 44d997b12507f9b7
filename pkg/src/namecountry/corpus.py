"""Deterministic, leakage-safe corpus splits.

The pipeline produces up to eight partitions: the base train/val/test split
of the real corpus, an oracle-screened test_filter, the three *_aug splits
that fold in synthetic names, and the fully synthetic test_gold stress set.
Splitting is stratified per country with largest-remainder rounding, and
every random choice derives from an explicit seed so runs are reproducible
byte for byte.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .core import NameRecord, Provenance, name_key, read_records, write_records

log = logging.getLogger(__name__)

SPLIT_NAMES = (
    "train_oag", "val_oag", "test_oag", "test_filter",
    "train_aug", "val_aug", "test_filter_aug", "test_gold",
)


class EmptyCorpusError(ValueError):
    """split_corpus requires at least one record."""


class LeakageError(ValueError):
    """A name crosses the train/evaluation boundary."""

    def __init__(self, message: str, names: Sequence[str] = ()):
        self.names = list(names)
        if self.names:
            shown = ", ".join(repr(n) for n in self.names[:5])
            message = f"{message}: {shown}" + (" ..." if len(self.names) > 5 else "")
        super().__init__(message)


@dataclass(frozen=True)
class SplitConfig:
    """Ratio weights, seed, and optional per-country cap for splitting."""

    ratios: tuple[float, float, float] = (8.0, 1.0, 1.0)
    seed: int = 0
    per_country_cap: int | None = None

    def __post_init__(self) -> None:
        if len(self.ratios) != 3:
            raise ValueError("ratios must have exactly three entries")
        if any(r < 0 for r in self.ratios):
            raise ValueError("ratios must be non-negative")
        if sum(self.ratios) <= 0:
            raise ValueError("ratios must sum to a positive value")
        if self.per_country_cap is not None and self.per_country_cap < 1:
            raise ValueError("per_country_cap must be positive")


def _country_rng(seed: int, country: str, stage: str = "split") -> random.Random:
    # String seeds hash via sha512 inside random.Random, so results do not
    # depend on PYTHONHASHSEED or on the order countries are encountered.
    return random.Random(f"{stage}:{seed}:{country}")


def largest_remainder_allocation(total: int, weights: Sequence[float]) -> list[int]:
    """Split `total` items into len(weights) integer parts proportional to weights.

    Floors the exact shares, then hands out remaining items by largest
    fractional remainder; ties go to the earlier part. The result always sums
    to `total`.
    """
    weight_sum = sum(weights)
    shares = [total * w / weight_sum for w in weights]
    counts = [int(s) for s in shares]
    remaining = total - sum(counts)
    order = sorted(range(len(weights)),
                   key=lambda i: (-(shares[i] - counts[i]), i))
    for i in order[:remaining]:
        counts[i] += 1
    return counts


def _group_by_country(records: Iterable[NameRecord]) -> dict[str, list[NameRecord]]:
    groups: dict[str, list[NameRecord]] = {}
    for record in records:
        groups.setdefault(record.label, []).append(record)
    return groups


def split_corpus(
    records: Sequence[NameRecord], config: SplitConfig,
) -> tuple[list[NameRecord], list[NameRecord], list[NameRecord]]:
    """Stratified three-way partition, deterministic given the seed.

    Every record lands in exactly one partition; per-country sizes follow the
    ratios under largest-remainder rounding.
    """
    if not records:
        raise EmptyCorpusError("cannot split an empty corpus")
    train: list[NameRecord] = []
    val: list[NameRecord] = []
    test: list[NameRecord] = []
    for country, group in _group_by_country(records).items():
        rng = _country_rng(config.seed, country)
        shuffled = list(group)
        rng.shuffle(shuffled)
        if config.per_country_cap is not None:
            shuffled = shuffled[: config.per_country_cap]
        n_train, n_val, n_test = largest_remainder_allocation(
            len(shuffled), config.ratios)
        train.extend(shuffled[:n_train])
        val.extend(shuffled[n_train:n_train + n_val])
        test.extend(shuffled[n_train + n_val:])
        assert n_train + n_val + n_test == len(shuffled)
    return train, val, test


def enforce_no_leakage(
    train: Sequence[NameRecord],
    val: Sequence[NameRecord],
    test: Sequence[NameRecord],
) -> tuple[list[NameRecord], int]:
    """Drop from train every record whose name occurs in val or test.

    The rule is name-level (not pair-level): a training name matching an
    evaluation name under a different label is still removed. Returns the
    filtered train list and the removal count.
    """
    held_out = {r.key for r in val} | {r.key for r in test}
    kept = [r for r in train if r.key not in held_out]
    removed = len(train) - len(kept)
    if removed:
        log.info("leakage enforcement removed %d training record(s)", removed)
    return kept, removed


def build_filtered_test(
    test_oag: Sequence[NameRecord],
    validator,
    cap: int = 1000,
    seed: int = 0,
) -> list[NameRecord]:
    """Oracle-screened subset of test_oag, at most `cap` names per country.

    Candidates are consumed in a seeded per-country order, each judged by the
    validator, until the cap is reached or candidates run out. Oracle failures
    count as rejections. Retained records are re-tagged provenance=validated.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    retained: list[NameRecord] = []
    for country, group in _group_by_country(test_oag).items():
        rng = _country_rng(seed, country, stage="filter")
        candidates = list(group)
        rng.shuffle(candidates)
        accepted = 0
        for record in candidates:
            if accepted >= cap:
                break
            try:
                verdict = validator.judge(record.full_name, country)
            except Exception:
                log.warning("validator failed on %r (%s); counting as rejection",
                            record.full_name, country, exc_info=True)
                verdict = False
            if verdict:
                retained.append(dataclasses.replace(
                    record, provenance=Provenance.VALIDATED))
                accepted += 1
    return retained


@dataclass
class CorpusSplits:
    """The full split bundle. Unbuilt splits are simply empty lists."""

    train_oag: list[NameRecord] = field(default_factory=list)
    val_oag: list[NameRecord] = field(default_factory=list)
    test_oag: list[NameRecord] = field(default_factory=list)
    test_filter: list[NameRecord] = field(default_factory=list)
    train_aug: list[NameRecord] = field(default_factory=list)
    val_aug: list[NameRecord] = field(default_factory=list)
    test_filter_aug: list[NameRecord] = field(default_factory=list)
    test_gold: list[NameRecord] = field(default_factory=list)

    def __getitem__(self, split: str) -> list[NameRecord]:
        if split not in SPLIT_NAMES:
            raise KeyError(split)
        return getattr(self, split)

    def sizes(self) -> dict[str, int]:
        return {name: len(self[name]) for name in SPLIT_NAMES}

    def save(self, out_dir: str | Path) -> dict[str, int]:
        """Write each non-empty split as `<name>.jsonl` under out_dir."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = {}
        for split in SPLIT_NAMES:
            records = self[split]
            if records:
                written[split] = write_records(out_dir / f"{split}.jsonl", records)
        return written

    @staticmethod
    def load(in_dir: str | Path) -> "CorpusSplits":
        in_dir = Path(in_dir)
        splits = CorpusSplits()
        for split in SPLIT_NAMES:
            path = in_dir / f"{split}.jsonl"
            if path.exists():
                getattr(splits, split).extend(read_records(path))
        return splits


def assemble_augmented_splits(
    base: CorpusSplits,
    synth_train: Sequence[NameRecord],
    synth_val: Sequence[NameRecord],
    synth_test: Sequence[NameRecord],
) -> CorpusSplits:
    """Fold the synthetic partitions into the *_aug splits.

    Preconditions (violations raise LeakageError naming the offenders): the
    synthetic partitions are pairwise name-disjoint, synthetic training names
    stay out of every evaluation split, and synthetic val/test names stay out
    of the training side.
    """
    synth_keys = [
        ("synth_train", {r.key for r in synth_train}),
        ("synth_val", {r.key for r in synth_val}),
        ("synth_test", {r.key for r in synth_test}),
    ]
    for i, (name_a, keys_a) in enumerate(synth_keys):
        for name_b, keys_b in synth_keys[i + 1:]:
            overlap = keys_a & keys_b
            if overlap:
                raise LeakageError(
                    f"{name_a} and {name_b} share names", sorted(overlap))

    eval_keys = {r.key for split in
                 (base.val_oag, base.test_oag, base.test_filter, base.test_gold)
                 for r in split}
    bad_train = synth_keys[0][1] & eval_keys
    if bad_train:
        raise LeakageError("synthetic training names collide with evaluation splits",
                           sorted(bad_train))
    train_keys = {r.key for r in base.train_oag}
    bad_eval = (synth_keys[1][1] | synth_keys[2][1]) & train_keys
    if bad_eval:
        raise LeakageError("synthetic evaluation names collide with training names",
                           sorted(bad_eval))

    return CorpusSplits(
        train_oag=list(base.train_oag),
        val_oag=list(base.val_oag),
        test_oag=list(base.test_oag),
        test_filter=list(base.test_filter),
        train_aug=list(base.train_oag) + list(synth_train),
        val_aug=list(base.val_oag) + list(synth_val),
        test_filter_aug=list(base.test_filter) + list(synth_test),
        test_gold=list(base.test_gold),
    )


def audit_splits(splits: CorpusSplits) -> dict[str, list[str]]:
    """Scan all splits for invariant violations; empty lists mean a clean bill.

    Checks: no train/evaluation name overlap (for both the base and augmented
    families), test_gold is synthetic-only, real-only splits carry no
    synthetic records, and test_filter is a validated subset of test_oag by
    (name, label).
    """
    violations: dict[str, list[str]] = {}

    def record_violation(check: str, names: Iterable[str]) -> None:
        violations[check] = sorted(names)

    def keys(records: Sequence[NameRecord]) -> set[str]:
        return {r.key for r in records}

    for train_name, eval_names in (
        ("train_oag", ("val_oag", "test_oag", "test_filter", "test_gold")),
        ("train_aug", ("val_aug", "test_filter_aug", "test_gold")),
    ):
        train_keys = keys(splits[train_name])
        for eval_name in eval_names:
            overlap = train_keys & keys(splits[eval_name])
            record_violation(f"{train_name}_vs_{eval_name}", overlap)

    record_violation(
        "test_gold_synthetic_only",
        {r.full_name for r in splits.test_gold
         if r.provenance is not Provenance.SYNTHETIC})

    for split in ("train_oag", "val_oag", "test_oag", "test_filter"):
        record_violation(
            f"{split}_real_only",
            {r.full_name for r in splits[split]
             if r.provenance is Provenance.SYNTHETIC})

    test_oag_pairs = {(r.key, r.label) for r in splits.test_oag}
    record_violation(
        "test_filter_subset_of_test_oag",
        {r.full_name for r in splits.test_filter
         if (r.key, r.label) not in test_oag_pairs
         or r.provenance is not Provenance.VALIDATED})

    return violations


def audit_is_clean(violations: dict[str, list[str]]) -> bool:
    return all(not names for names in violations.values())


def write_split_manifest(out_dir: str | Path, *, seed: int,
                         ratios: Sequence[float], sizes: dict[str, int],
                         audit: dict[str, list[str]]) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "seed": seed,
        "ratios": list(ratios),
        "sizes": sizes,
        "audit": audit,
        "audit_clean": audit_is_clean(audit),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path
