"""Long-tail augmentation: budgets, prompt rendering, and name oracles.

Countries short on real names get synthetic ones from a generator oracle;
a validation oracle screens name/country pairs. Both oracles are interfaces
with two implementations: deterministic offline stubs (seeded syllable
synthesis, letter-inventory validation) and a generic HTTP chat-completion
client. Everything downstream of a fixed seed and the stub oracles is
reproducible byte for byte.
"""
from __future__ import annotations

import functools
import json
import logging
import os
import random
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

from .core import NameRecord, Provenance, RecordError, name_key

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 6000
DEFAULT_BUDGET = 5000
DEFAULT_CHUNK_SIZE = 200

# Substituted verbatim; the repetition limit is also enforced locally in
# collect_synthetic because generators are free to ignore instructions.
PROMPT_TEMPLATE = (
    "Generate {n} realistic full names for people from {country}. "
    "Each line should contain a unique full name (first & last name). "
    "Avoid repeating the same first or last names more than 3 times."
)
MAX_TOKEN_REPEATS = 3


@runtime_checkable
class GeneratorOracle(Protocol):
    def generate(self, country: str, n: int) -> list[str]:
        """Return at most n candidate full names for the country."""


@runtime_checkable
class ValidationOracle(Protocol):
    def judge(self, name: str, country: str) -> bool:
        """Accept or reject a name/country pair."""


@dataclass(frozen=True)
class AugmentBudget:
    country: str
    existing_count: int
    requested: int

    def __post_init__(self) -> None:
        if self.existing_count < 0 or self.requested < 0:
            raise ValueError("counts must be non-negative")


def compute_budgets(
    counts: Mapping[str, int],
    threshold: int = DEFAULT_THRESHOLD,
    budget: int = DEFAULT_BUDGET,
    overrides: Mapping[str, int] | None = None,
) -> list[AugmentBudget]:
    """One AugmentBudget per country, requested>0 only strictly below threshold.

    Countries below the threshold request the flat default budget unless
    `overrides` names a country-specific amount. Output is sorted by country.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if budget <= 0:
        raise ValueError("budget must be positive")
    overrides = overrides or {}
    budgets = []
    for country in sorted(counts):
        count = counts[country]
        if count < threshold:
            requested = overrides.get(country, budget)
        else:
            requested = 0
        budgets.append(AugmentBudget(country, count, requested))
    return budgets


def render_prompt(country: str, n: int) -> str:
    if n <= 0:
        raise ValueError("n must be positive")
    return PROMPT_TEMPLATE.format(n=n, country=country)


def _name_tokens(name: str) -> tuple[str, str]:
    tokens = name_key(name).split()
    return tokens[0], tokens[-1]


def collect_synthetic(
    budgets: Sequence[AugmentBudget],
    generator: GeneratorOracle,
    existing_names: Iterable[str],
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    max_retries: int = 3,
    backoff_seconds: float = 0.5,
    max_stalled_chunks: int = 3,
) -> dict[str, list[NameRecord]]:
    """Gather synthetic NameRecords per country, respecting each budget.

    Names are requested in chunks and filtered: duplicates within the
    country, names already in `existing_names`, empty names, and names whose
    first or last token has already been used MAX_TOKEN_REPEATS times are all
    dropped. Generator exceptions are retried with exponential backoff; once
    retries are exhausted the country is left partially filled and collection
    moves on. Countries are processed in sorted order so the result is
    deterministic for deterministic generators.
    """
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    existing = {name_key(n) for n in existing_names}
    result: dict[str, list[NameRecord]] = {}
    for budget in sorted(budgets, key=lambda b: b.country):
        if budget.requested == 0:
            continue
        result[budget.country] = _collect_for_country(
            budget, generator, existing, chunk_size,
            max_retries, backoff_seconds, max_stalled_chunks)
    return result


def _collect_for_country(
    budget: AugmentBudget,
    generator: GeneratorOracle,
    existing: set[str],
    chunk_size: int,
    max_retries: int,
    backoff_seconds: float,
    max_stalled_chunks: int,
) -> list[NameRecord]:
    country = budget.country
    kept: list[NameRecord] = []
    seen: set[str] = set()
    first_counts: dict[str, int] = {}
    last_counts: dict[str, int] = {}
    stalled = 0
    while len(kept) < budget.requested and stalled < max_stalled_chunks:
        want = min(chunk_size, budget.requested - len(kept))
        candidates = _generate_with_retry(
            generator, country, want, max_retries, backoff_seconds)
        if candidates is None:
            log.warning("generator gave up on %r after %d retries; "
                        "keeping %d of %d", country, max_retries,
                        len(kept), budget.requested)
            break
        progress = 0
        for raw in candidates:
            if len(kept) >= budget.requested:
                break
            try:
                record = NameRecord(full_name=raw, label=country,
                                    provenance=Provenance.SYNTHETIC)
            except RecordError:
                continue
            key = record.key
            if key in seen or key in existing:
                continue
            first, last = _name_tokens(record.full_name)
            if (first_counts.get(first, 0) >= MAX_TOKEN_REPEATS
                    or last_counts.get(last, 0) >= MAX_TOKEN_REPEATS):
                continue
            seen.add(key)
            first_counts[first] = first_counts.get(first, 0) + 1
            last_counts[last] = last_counts.get(last, 0) + 1
            kept.append(record)
            progress += 1
        stalled = 0 if progress else stalled + 1
    if len(kept) < budget.requested:
        log.info("country %r filled %d of %d requested synthetic names",
                 country, len(kept), budget.requested)
    return kept


def _generate_with_retry(
    generator: GeneratorOracle, country: str, n: int,
    max_retries: int, backoff_seconds: float,
) -> list[str] | None:
    for attempt in range(max_retries + 1):
        try:
            return generator.generate(country, n)
        except Exception:
            if attempt == max_retries:
                return None
            delay = backoff_seconds * (2 ** attempt)
            log.warning("generator error for %r (attempt %d/%d), retrying "
                        "in %.1fs", country, attempt + 1, max_retries, delay,
                        exc_info=True)
            if delay > 0:
                time.sleep(delay)
    return None


@dataclass
class ScreenResult:
    accepted: list[NameRecord]
    rejected: list[NameRecord]
    rate_by_country: dict[str, float]
    overall_rate: float

    def to_dict(self) -> dict:
        return {
            "accepted": len(self.accepted),
            "rejected": len(self.rejected),
            "rate_by_country": dict(sorted(self.rate_by_country.items())),
            "overall_rate": self.overall_rate,
        }


def screen_pairs(records: Sequence[NameRecord],
                 validator: ValidationOracle) -> ScreenResult:
    """Partition records by oracle verdict; failures count as rejections."""
    accepted: list[NameRecord] = []
    rejected: list[NameRecord] = []
    totals: dict[str, int] = {}
    hits: dict[str, int] = {}
    for record in records:
        totals[record.label] = totals.get(record.label, 0) + 1
        try:
            verdict = validator.judge(record.full_name, record.label)
        except Exception:
            log.warning("validator failed on %r (%s); counting as rejection",
                        record.full_name, record.label, exc_info=True)
            verdict = False
        if verdict:
            hits[record.label] = hits.get(record.label, 0) + 1
            accepted.append(record)
        else:
            rejected.append(record)
    rates = {c: hits.get(c, 0) / n for c, n in totals.items()}
    overall = len(accepted) / len(records) if records else 0.0
    return ScreenResult(accepted, rejected, rates, overall)


# --- deterministic stub oracles -------------------------------------------

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


@functools.lru_cache(maxsize=None)
def country_syllables(country: str) -> tuple[str, ...]:
    """A country's syllable inventory, a pure function of its name.

    Depending only on the country string (never on a generation seed) means
    independently seeded draws for the same country share one distribution,
    so stub-generated names resemble other names for that country.
    """
    rng = random.Random(f"inventory:{country}")
    consonants = rng.sample(_CONSONANTS, 7)
    vowels = rng.sample(_VOWELS, 3)
    return tuple(c + v for c in consonants for v in vowels)


@functools.lru_cache(maxsize=None)
def country_letters(country: str) -> frozenset[str]:
    return frozenset("".join(country_syllables(country)))


def synth_name(rng: random.Random, country: str) -> str:
    """Draw one two-token full name from the country's syllable inventory."""
    syllables = country_syllables(country)

    def token() -> str:
        k = rng.choice((2, 3))
        return "".join(rng.choice(syllables) for _ in range(k)).capitalize()

    return f"{token()} {token()}"


class StubNameGenerator:
    """Offline GeneratorOracle: seeded syllable synthesis, no duplicates filter.

    Each country gets its own stream; successive calls continue the stream so
    chunked collection keeps seeing fresh names.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._streams: dict[str, random.Random] = {}

    def generate(self, country: str, n: int) -> list[str]:
        if n <= 0:
            raise ValueError("n must be positive")
        rng = self._streams.get(country)
        if rng is None:
            rng = random.Random(f"stubgen:{self.seed}:{country}")
            self._streams[country] = rng
        return [synth_name(rng, country) for _ in range(n)]


@dataclass
class StubNameValidator:
    """Offline ValidationOracle: letter-inventory plausibility.

    A name passes when a large enough fraction of its letters belongs to the
    country's syllable inventory. `strictness` assigns "strict" or "lenient"
    per country; strictness for unlisted countries defaults to strict with a
    one-time warning, since the right per-country choice is configuration.
    """

    strictness: dict[str, str] = field(default_factory=dict)
    strict_fraction: float = 0.8
    lenient_fraction: float = 0.5
    _warned: set[str] = field(default_factory=set, repr=False, compare=False)

    def judge(self, name: str, country: str) -> bool:
        mode = self.strictness.get(country)
        if mode is None:
            if country not in self._warned:
                self._warned.add(country)
                log.warning("no validator strictness configured for %r; "
                            "defaulting to strict", country)
            mode = "strict"
        if mode not in ("strict", "lenient"):
            raise ValueError(f"unknown strictness {mode!r} for {country!r}")
        required = (self.strict_fraction if mode == "strict"
                    else self.lenient_fraction)
        letters = [c for c in name_key(name) if c.isalpha()]
        if not letters:
            return False
        inventory = country_letters(country)
        fraction = sum(c in inventory for c in letters) / len(letters)
        return fraction >= required


# --- HTTP chat-completion oracle ------------------------------------------

class OracleTransportError(RuntimeError):
    """HTTP oracle failed after exhausting its retries."""


@dataclass(frozen=True)
class HttpOracleConfig:
    endpoint: str
    model: str
    api_key_env: str = "NAMECOUNTRY_API_KEY"
    timeout_seconds: float = 30.0
    max_retries: int = 3
    backoff_seconds: float = 0.5


class HttpChatOracle:
    """Generator and validation oracle over a chat-completion HTTP API.

    Requests use temperature 0; responses are parsed line by line with
    leading list markers stripped. The API key is read from the configured
    environment variable at call time; if unset the request is sent without
    an Authorization header (useful against local test servers).
    """

    def __init__(self, config: HttpOracleConfig):
        self.config = config
        self.calls = 0

    def generate(self, country: str, n: int) -> list[str]:
        content = self._chat(render_prompt(country, n))
        names = [_strip_list_marker(line) for line in content.splitlines()]
        return [name for name in names if name][:n]

    def judge(self, name: str, country: str) -> bool:
        prompt = (f'Is "{name}" a plausible full name for a person from '
                  f"{country}? Answer yes or no.")
        return self._chat(prompt).strip().casefold().startswith("yes")

    def _chat(self, prompt: str) -> str:
        payload = json.dumps({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            request = urllib.request.Request(
                self.config.endpoint, data=payload, headers=headers)
            try:
                self.calls += 1
                with urllib.request.urlopen(
                        request, timeout=self.config.timeout_seconds) as resp:
                    body = json.loads(resp.read().decode("utf-8"))
                return body["choices"][0]["message"]["content"]
            except (urllib.error.URLError, TimeoutError, OSError,
                    KeyError, IndexError, json.JSONDecodeError) as exc:
                last_error = exc
                if attempt == self.config.max_retries:
                    break
                delay = self.config.backoff_seconds * (2 ** attempt)
                log.warning("oracle request failed (attempt %d/%d): %s",
                            attempt + 1, self.config.max_retries, exc)
                if delay > 0:
                    time.sleep(delay)
        raise OracleTransportError(
            f"oracle request failed after {self.config.max_retries} "
            f"retries: {last_error}")


def _strip_list_marker(line: str) -> str:
    text = line.strip()
    for marker in ("-", "*", "•"):
        if text.startswith(marker):
            return text[1:].strip()
    head, sep, tail = text.partition(".")
    if sep and head.isdigit():
        return tail.strip()
    head, sep, tail = text.partition(")")
    if sep and head.isdigit():
        return tail.strip()
    return text
