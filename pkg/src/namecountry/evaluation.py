"""Measurement machinery: classification metrics, cross-taxonomy evaluation,
head/tail buckets, corpus representativeness reports, and group bias analysis
with Wilson confidence intervals.

Macro-F1 convention used throughout: classes with zero gold support and zero
predictions are excluded from the macro mean; classes that do appear but have
an undefined precision, recall, or F1 contribute 0. Weighted-F1 weights
per-class F1 by gold support.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import LabelMapping, NameRecord, Taxonomy, name_key

LabelPair = tuple[str, str]


@dataclass(frozen=True)
class ConfusionMatrix:
    taxonomy: Taxonomy
    counts: np.ndarray  # rows = gold, cols = predicted

    @staticmethod
    def from_pairs(pairs: Sequence[LabelPair], taxonomy: Taxonomy) -> "ConfusionMatrix":
        counts = np.zeros((len(taxonomy), len(taxonomy)), dtype=np.int64)
        for gold, predicted in pairs:
            counts[taxonomy.index_of(gold), taxonomy.index_of(predicted)] += 1
        return ConfusionMatrix(taxonomy, counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    weighted_f1: float
    macro_f1: float
    per_class: dict[str, ClassMetrics]
    n_records: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
            "n_records": self.n_records,
            "per_class": {
                label: {"precision": m.precision, "recall": m.recall,
                        "f1": m.f1, "support": m.support}
                for label, m in self.per_class.items()
            },
        }


def evaluate(pairs: Sequence[LabelPair], taxonomy: Taxonomy) -> EvalReport:
    """Metric bundle over (gold, predicted) pairs.

    An empty input yields an all-zero report rather than an error so that
    bucket restrictions over absent buckets stay total.
    """
    matrix = ConfusionMatrix.from_pairs(pairs, taxonomy)
    counts = matrix.counts
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    true_positive = np.diag(counts)

    per_class: dict[str, ClassMetrics] = {}
    included_f1: list[float] = []
    for i, label in enumerate(taxonomy):
        tp = int(true_positive[i])
        sup, pred = int(support[i]), int(predicted[i])
        precision = tp / pred if pred else 0.0
        recall = tp / sup if sup else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        per_class[label] = ClassMetrics(precision, recall, f1, sup)
        if sup or pred:
            included_f1.append(f1)

    total = matrix.total
    accuracy = float(true_positive.sum()) / total if total else 0.0
    weighted = (sum(m.f1 * m.support for m in per_class.values()) / total
                if total else 0.0)
    macro = statistics.fmean(included_f1) if included_f1 else 0.0
    return EvalReport(accuracy, weighted, macro, per_class, total)


def evaluate_mapped(pairs: Sequence[LabelPair],
                    mapping: LabelMapping) -> EvalReport:
    """Map gold and predicted labels into the target taxonomy, then evaluate."""
    mapped = [(mapping(gold), mapping(predicted)) for gold, predicted in pairs]
    return evaluate(mapped, mapping.to_taxonomy)


@dataclass(frozen=True)
class BucketReport:
    threshold: int
    head_labels: tuple[str, ...]
    tail_labels: tuple[str, ...]
    head: EvalReport
    tail: EvalReport

    @property
    def head_accuracy(self) -> float:
        return self.head.accuracy

    @property
    def head_macro_f1(self) -> float:
        return self.head.macro_f1

    @property
    def tail_accuracy(self) -> float:
        return self.tail.accuracy

    @property
    def tail_macro_f1(self) -> float:
        return self.tail.macro_f1

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "head_labels": list(self.head_labels),
            "tail_labels": list(self.tail_labels),
            "head": {"accuracy": self.head_accuracy,
                     "macro_f1": self.head_macro_f1},
            "tail": {"accuracy": self.tail_accuracy,
                     "macro_f1": self.tail_macro_f1},
        }


def bucket_report(pairs: Sequence[LabelPair], taxonomy: Taxonomy,
                  train_counts: Mapping[str, int],
                  threshold: int = 6000) -> BucketReport:
    """Head/tail metrics: tail = labels with training count below threshold.

    Only labels present in train_counts are bucketed; each bucket's metrics
    are evaluate() restricted to pairs whose gold label is in the bucket.
    """
    head = tuple(sorted(c for c, n in train_counts.items() if n >= threshold))
    tail = tuple(sorted(c for c, n in train_counts.items() if n < threshold))
    head_set, tail_set = set(head), set(tail)
    head_pairs = [p for p in pairs if p[0] in head_set]
    tail_pairs = [p for p in pairs if p[0] in tail_set]
    return BucketReport(threshold, head, tail,
                        evaluate(head_pairs, taxonomy),
                        evaluate(tail_pairs, taxonomy))


@dataclass(frozen=True)
class FrequencyRatioReport:
    ratios: dict[str, float]  # reference name -> corpus/reference ratio
    median_ratio: float
    abbreviated_fraction: float
    n_names: int

    def to_dict(self) -> dict:
        return {
            "ratios": self.ratios,
            "median_ratio": self.median_ratio,
            "abbreviated_fraction": self.abbreviated_fraction,
            "n_names": self.n_names,
        }


def _is_abbreviated(token: str) -> bool:
    if len(token) == 1:
        return token.isalpha()
    return len(token) == 2 and token[0].isalpha() and token[1] == "."


def frequency_ratio_report(
    corpus_names: Sequence[str],
    reference_freqs: Mapping[str, float],
    top_k: int = 100,
) -> FrequencyRatioReport:
    """Under- or over-representation of popular given names in the corpus.

    For each of the top_k reference names (by reference frequency), the ratio
    is its relative frequency among corpus first tokens divided by its
    reference frequency. Also reports the fraction of corpus names whose
    first token is an abbreviated given name (single letter, optional period).
    """
    if not reference_freqs:
        raise ValueError("reference_freqs must be non-empty")
    if any(f <= 0 for f in reference_freqs.values()):
        raise ValueError("reference frequencies must be positive")
    if top_k <= 0:
        raise ValueError("top_k must be positive")

    first_tokens = []
    abbreviated = 0
    for name in corpus_names:
        tokens = name_key(name).split()
        if not tokens:
            continue
        first_tokens.append(tokens[0])
        if _is_abbreviated(tokens[0]):
            abbreviated += 1
    n = len(first_tokens)

    token_counts: dict[str, int] = {}
    for token in first_tokens:
        token_counts[token] = token_counts.get(token, 0) + 1

    top = sorted(reference_freqs.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    ratios = {}
    for ref_name, ref_freq in top:
        corpus_freq = token_counts.get(name_key(ref_name), 0) / n if n else 0.0
        ratios[ref_name] = corpus_freq / ref_freq
    median = statistics.median(ratios.values()) if ratios else 0.0
    return FrequencyRatioReport(ratios, median, abbreviated / n if n else 0.0, n)


@dataclass(frozen=True)
class DuplicationReport:
    distinct_names: int
    share_two_plus: float
    share_three_plus: float
    per_country: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "distinct_names": self.distinct_names,
            "share_two_plus": self.share_two_plus,
            "share_three_plus": self.share_three_plus,
            "per_country": self.per_country,
        }


def duplication_report(corpus: Sequence[NameRecord]) -> DuplicationReport:
    """Shares of distinct names appearing under two or more country labels."""
    labels_by_name: dict[str, set[str]] = {}
    for record in corpus:
        labels_by_name.setdefault(record.key, set()).add(record.label)
    n = len(labels_by_name)
    two_plus = sum(1 for labels in labels_by_name.values() if len(labels) >= 2)
    three_plus = sum(1 for labels in labels_by_name.values() if len(labels) >= 3)

    per_country_totals: dict[str, int] = {}
    per_country_dups: dict[str, int] = {}
    for labels in labels_by_name.values():
        duplicated = len(labels) >= 2
        for label in labels:
            per_country_totals[label] = per_country_totals.get(label, 0) + 1
            if duplicated:
                per_country_dups[label] = per_country_dups.get(label, 0) + 1
    per_country = {
        label: per_country_dups.get(label, 0) / total
        for label, total in sorted(per_country_totals.items())
    }
    return DuplicationReport(
        n,
        two_plus / n if n else 0.0,
        three_plus / n if n else 0.0,
        per_country,
    )


def wilson_interval(successes: int, trials: int,
                    z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    The boundary cases return exact endpoints (successes=0 gives lower bound
    0.0, successes=trials gives upper bound 1.0); these are algebraically
    exact in the Wilson formula but drift under floating-point evaluation.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    p_hat = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p_hat + z2 / (2 * trials)) / denom
    half = (z * math.sqrt(p_hat * (1 - p_hat) / trials
                          + z2 / (4 * trials * trials))) / denom
    lower = 0.0 if successes == 0 else max(0.0, center - half)
    upper = 1.0 if successes == trials else min(1.0, center + half)
    return lower, upper


@dataclass(frozen=True)
class GroupStats:
    correct: int
    total: int
    accuracy: float
    ci_lower: float
    ci_upper: float


@dataclass(frozen=True)
class BiasReport:
    groups: dict[str, GroupStats]
    gold_distribution: dict[str, float]
    hallucinated_distribution: dict[str, float]
    n_records: int
    n_incorrect: int

    def to_dict(self) -> dict:
        return {
            "groups": {
                g: {"correct": s.correct, "total": s.total,
                    "accuracy": s.accuracy,
                    "ci_lower": s.ci_lower, "ci_upper": s.ci_upper}
                for g, s in self.groups.items()
            },
            "gold_distribution": self.gold_distribution,
            "hallucinated_distribution": self.hallucinated_distribution,
            "n_records": self.n_records,
            "n_incorrect": self.n_incorrect,
        }


def bias_report(
    records: Sequence[tuple[str, str, bool]],
    model,
    mapping: LabelMapping,
    z: float = 1.96,
) -> BiasReport:
    """Group-level accuracy and answer-distribution comparison.

    Each record is (gold_name, answered_name, correct). Gold names of all
    records and answered names of incorrect records are classified by the
    model (any object with predict_label(name) -> label in the mapping's
    source taxonomy), mapped into the coarse taxonomy, and tallied per group.
    """
    if tuple(model.taxonomy.labels) != tuple(mapping.from_taxonomy.labels):
        raise ValueError("model taxonomy does not match the mapping's "
                         "source taxonomy")

    classify: Callable[[str], str] = lambda name: mapping(model.predict_label(name))

    group_total: dict[str, int] = {}
    group_correct: dict[str, int] = {}
    hallucinated: dict[str, int] = {}
    n_incorrect = 0
    for gold_name, answered_name, correct in records:
        group = classify(gold_name)
        group_total[group] = group_total.get(group, 0) + 1
        if correct:
            group_correct[group] = group_correct.get(group, 0) + 1
        else:
            n_incorrect += 1
            answer_group = classify(answered_name)
            hallucinated[answer_group] = hallucinated.get(answer_group, 0) + 1

    groups = {}
    for group in sorted(group_total):
        total = group_total[group]
        correct_n = group_correct.get(group, 0)
        lower, upper = wilson_interval(correct_n, total, z)
        groups[group] = GroupStats(correct_n, total, correct_n / total,
                                   lower, upper)
    n = len(records)
    gold_dist = {g: group_total[g] / n for g in sorted(group_total)} if n else {}
    hall_dist = ({g: hallucinated[g] / n_incorrect for g in sorted(hallucinated)}
                 if n_incorrect else {})
    return BiasReport(groups, gold_dist, hall_dist, n, n_incorrect)


def render_eval_table(rows: Sequence[tuple[str, str, EvalReport]]) -> str:
    """Plain-text metrics table: one row per (model, taxonomy, report)."""
    header = ("Model", "Taxonomy", "Acc", "W-F1", "M-F1")
    body = [(model, taxonomy, f"{r.accuracy:.4f}",
             f"{r.weighted_f1:.4f}", f"{r.macro_f1:.4f}")
            for model, taxonomy, r in rows]
    widths = [max(len(row[i]) for row in [header, *body])
              for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
