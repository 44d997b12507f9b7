"""Core domain vocabulary: country labels, name records, taxonomies, mappings.

Everything here is immutable after construction and safe to share across
threads. Labels are lowercase canonical country names ("china", not "CN");
the concrete label set is configuration, loaded from a taxonomy file.
"""
from __future__ import annotations

import enum
import json
import os
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping


class TaxonomyError(ValueError):
    """Invalid taxonomy or mapping definition."""


class DuplicateLabelError(TaxonomyError):
    """A label occurs more than once after normalization."""


class UnknownLabelError(KeyError):
    """A label is not a member of the expected taxonomy."""


class RecordError(ValueError):
    """Invalid name record."""


class InputFormatError(ValueError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message: str, path: str | Path | None = None,
                 line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = f"{self.path or '<input>'}:{line}" if line is not None else (self.path or "<input>")
        super().__init__(f"{where}: {message}")


def normalize_name(name: str) -> str:
    """Canonicalize a person or candidate string: NFC, trim, collapse whitespace."""
    name = unicodedata.normalize("NFC", name)
    return " ".join(name.split())


def name_key(name: str) -> str:
    """Comparison key for duplicate/leakage checks (normalized + casefolded)."""
    return normalize_name(name).casefold()


def normalize_label(label: str) -> str:
    """Canonical label form: NFC, trimmed, lowercase."""
    return unicodedata.normalize("NFC", label).strip().lower()


class Provenance(enum.Enum):
    """How a name-label pair entered the corpus."""

    EXTRACTED = "extracted"
    VALIDATED = "validated"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class NameRecord:
    """A full name paired with a country label and a provenance tag."""

    full_name: str
    label: str
    provenance: Provenance = Provenance.EXTRACTED
    source_id: str | None = None

    def __post_init__(self) -> None:
        normalized = normalize_name(self.full_name)
        if not normalized:
            raise RecordError("full_name is empty after whitespace normalization")
        object.__setattr__(self, "full_name", normalized)
        object.__setattr__(self, "label", normalize_label(self.label))

    @property
    def key(self) -> str:
        return name_key(self.full_name)


@dataclass(frozen=True)
class Taxonomy:
    """A named, ordered label space.

    Label order is stable and defines the class-index order used by the
    classifier head and confusion matrices.
    """

    name: str
    labels: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {l: i for i, l in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UnknownLabelError(
                f"label {label!r} is not in taxonomy {self.name!r}") from None


def register_taxonomy(name: str, labels: Iterable[str]) -> Taxonomy:
    """Build a Taxonomy from raw label strings, preserving input order.

    Labels are normalized (trimmed, lowercased). Raises DuplicateLabelError
    naming the first duplicate, or TaxonomyError on an empty list.
    """
    normalized: list[str] = []
    seen: set[str] = set()
    for raw in labels:
        label = normalize_label(raw)
        if not label:
            raise TaxonomyError(f"taxonomy {name!r} contains an empty label")
        if label in seen:
            raise DuplicateLabelError(
                f"duplicate label {label!r} in taxonomy {name!r}")
        seen.add(label)
        normalized.append(label)
    if not normalized:
        raise TaxonomyError(f"taxonomy {name!r} has no labels")
    return Taxonomy(name=name, labels=tuple(normalized))


def load_taxonomy(path: str | Path, name: str | None = None) -> Taxonomy:
    """Load a taxonomy from a text file: one label per line, UTF-8, LF.

    Blank lines and lines starting with '#' are ignored so shipped files can
    carry provenance notes.
    """
    path = Path(path)
    labels = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            labels.append(line)
    return register_taxonomy(name or path.stem, labels)


@dataclass(frozen=True)
class LabelMapping:
    """Directional many-to-one map between label spaces, used at evaluation time.

    The table must be total: every source label has exactly one image, and
    every image belongs to the target taxonomy.
    """

    from_taxonomy: Taxonomy
    to_taxonomy: Taxonomy
    table: Mapping[str, str]

    def __post_init__(self) -> None:
        for source in self.from_taxonomy:
            if source not in self.table:
                raise TaxonomyError(
                    f"mapping {self.from_taxonomy.name!r}->{self.to_taxonomy.name!r} "
                    f"has no entry for source label {source!r}")
        for source, target in self.table.items():
            if source not in self.from_taxonomy:
                raise UnknownLabelError(
                    f"mapping source label {source!r} is not in taxonomy "
                    f"{self.from_taxonomy.name!r}")
            if target not in self.to_taxonomy:
                raise TaxonomyError(
                    f"mapping target {target!r} (for source {source!r}) is not in "
                    f"taxonomy {self.to_taxonomy.name!r}")
        object.__setattr__(self, "table", dict(self.table))

    def __call__(self, label: str) -> str:
        return map_label(self, label)


def map_label(mapping: LabelMapping, label: str) -> str:
    """Map one source label through the table. Raises UnknownLabelError for non-members."""
    label = normalize_label(label)
    try:
        return mapping.table[label]
    except KeyError:
        raise UnknownLabelError(
            f"label {label!r} is not in taxonomy {mapping.from_taxonomy.name!r}") from None


def identity_mapping(taxonomy: Taxonomy) -> LabelMapping:
    return LabelMapping(taxonomy, taxonomy, {l: l for l in taxonomy})


def load_mapping(path: str | Path, from_taxonomy: Taxonomy,
                 to_taxonomy: Taxonomy) -> LabelMapping:
    """Load a mapping from a TSV file: `source<TAB>target` per line, UTF-8, LF."""
    path = Path(path)
    table: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split("\t")
        if len(parts) != 2:
            raise InputFormatError(
                f"expected `source<TAB>target`, got {line!r}", path=path, line=lineno)
        source, target = normalize_label(parts[0]), normalize_label(parts[1])
        if source in table:
            raise DuplicateLabelError(
                f"{path}:{lineno}: duplicate mapping source {source!r}")
        table[source] = target
    return LabelMapping(from_taxonomy, to_taxonomy, table)


# --- NameRecord JSONL serialization (fields: name, label, provenance) ---

def record_to_dict(record: NameRecord) -> dict:
    out = {"name": record.full_name, "label": record.label,
           "provenance": record.provenance.value}
    if record.source_id is not None:
        out["source_id"] = record.source_id
    return out


def record_from_dict(obj: dict) -> NameRecord:
    return NameRecord(
        full_name=obj["name"],
        label=obj["label"],
        provenance=Provenance(obj.get("provenance", "extracted")),
        source_id=obj.get("source_id"),
    )


def write_records(path: str | Path, records: Iterable[NameRecord]) -> int:
    """Write records as JSONL; returns the number written.

    Writes to a temp file and renames, so a failure never leaves a partial
    output behind.
    """
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    count = 0
    try:
        with tmp.open("w", encoding="utf-8", newline="\n") as fh:
            for record in records:
                fh.write(json.dumps(record_to_dict(record), ensure_ascii=False))
                fh.write("\n")
                count += 1
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)
    return count


def read_records(path: str | Path) -> list[NameRecord]:
    """Read a NameRecord JSONL file. Malformed lines raise InputFormatError."""
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(record_from_dict(obj))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise InputFormatError(f"bad record ({exc})", path=path, line=lineno) from exc
    return records
