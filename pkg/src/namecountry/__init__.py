"""Proxy-nationality corpus construction and char-level name classification."""

from .core import (
    DuplicateLabelError,
    InputFormatError,
    LabelMapping,
    NameRecord,
    Provenance,
    RecordError,
    Taxonomy,
    TaxonomyError,
    UnknownLabelError,
    identity_mapping,
    load_mapping,
    load_taxonomy,
    name_key,
    normalize_label,
    normalize_name,
    read_records,
    register_taxonomy,
    write_records,
)
from .corpus import (
    CorpusSplits,
    LeakageError,
    SplitConfig,
    assemble_augmented_splits,
    audit_splits,
    build_filtered_test,
    enforce_no_leakage,
    split_corpus,
)
from .classifier import (
    ClassifierModel,
    ModelConfig,
    TrainConfig,
    TrainLog,
    fit_tokenizer,
    load_model,
    save_model,
    train,
)
from .enrichment import (
    AugmentBudget,
    StubNameGenerator,
    StubNameValidator,
    collect_synthetic,
    compute_budgets,
    screen_pairs,
)
from .evaluation import (
    EvalReport,
    bias_report,
    bucket_report,
    evaluate,
    evaluate_mapped,
    wilson_interval,
)
from .engine import BenchConfig, ThroughputReport, benchmark
from .extraction import (
    AffiliationRecord,
    NormalizationTable,
    build_labeled_corpus,
    label_author,
    normalize_country,
)

__version__ = "0.1.0"

__all__ = [
    "AffiliationRecord",
    "AugmentBudget",
    "BenchConfig",
    "ClassifierModel",
    "CorpusSplits",
    "DuplicateLabelError",
    "EvalReport",
    "InputFormatError",
    "LabelMapping",
    "LeakageError",
    "ModelConfig",
    "NameRecord",
    "NormalizationTable",
    "Provenance",
    "RecordError",
    "SplitConfig",
    "StubNameGenerator",
    "StubNameValidator",
    "Taxonomy",
    "TaxonomyError",
    "ThroughputReport",
    "TrainConfig",
    "TrainLog",
    "UnknownLabelError",
    "assemble_augmented_splits",
    "audit_splits",
    "benchmark",
    "bias_report",
    "bucket_report",
    "build_filtered_test",
    "build_labeled_corpus",
    "collect_synthetic",
    "compute_budgets",
    "enforce_no_leakage",
    "evaluate",
    "evaluate_mapped",
    "fit_tokenizer",
    "identity_mapping",
    "label_author",
    "load_mapping",
    "load_model",
    "load_taxonomy",
    "name_key",
    "normalize_country",
    "normalize_label",
    "normalize_name",
    "read_records",
    "register_taxonomy",
    "save_model",
    "screen_pairs",
    "split_corpus",
    "train",
    "wilson_interval",
    "write_records",
]
