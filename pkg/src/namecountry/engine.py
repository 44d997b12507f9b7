"""Batch inference engine and throughput/latency benchmark.

Latency is defined as mean batch runtime divided by names per batch, so
every report row satisfies throughput * latency_ms = 1000 up to floating
rounding. Scoring inside the benchmark is the same code path as ordinary
prediction, so benchmarked outputs are bit-identical to unbenchmarked ones.
"""
from __future__ import annotations

import json
import random
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import read_records
from .classifier import ClassifierModel


class InsufficientNamesError(ValueError):
    """The name pool cannot cover the configured batches."""


@dataclass(frozen=True)
class BenchConfig:
    batch_sizes: tuple[int, ...] = (1, 100, 1000, 10000)
    warmup_batches: int = 3
    repetitions: int = 5
    seed: int = 0
    streams: int = 1

    def __post_init__(self) -> None:
        if not self.batch_sizes:
            raise ValueError("batch_sizes must be non-empty")
        if any(b <= 0 for b in self.batch_sizes):
            raise ValueError("batch sizes must be positive")
        if list(self.batch_sizes) != sorted(set(self.batch_sizes)):
            raise ValueError("batch_sizes must be strictly ascending")
        if self.warmup_batches < 0:
            raise ValueError("warmup_batches must be non-negative")
        if self.repetitions <= 0:
            raise ValueError("repetitions must be positive")
        if self.streams <= 0:
            raise ValueError("streams must be positive")


def run_batch(model: ClassifierModel,
              names: Sequence[str]) -> tuple[np.ndarray, float]:
    """Score one batch, timing the scoring call only (tokenization included)."""
    if not names:
        raise ValueError("names must be non-empty")
    start = time.perf_counter()
    predictions = model.predict_batch(names)
    runtime = time.perf_counter() - start
    return predictions, runtime


@dataclass(frozen=True)
class BenchRow:
    batch_size: int
    streams: int
    names_per_run: int
    mean_runtime_seconds: float
    throughput_names_per_second: float
    latency_ms_per_name: float
    runtime_samples: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "streams": self.streams,
            "names_per_run": self.names_per_run,
            "mean_runtime_seconds": self.mean_runtime_seconds,
            "throughput_names_per_second": self.throughput_names_per_second,
            "latency_ms_per_name": self.latency_ms_per_name,
            "runtime_samples": list(self.runtime_samples),
        }


@dataclass(frozen=True)
class ThroughputReport:
    model_name: str
    model_type: str
    rows: tuple[BenchRow, ...]
    cost_per_million: float = 0.0

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "model_type": self.model_type,
            "cost_per_million": self.cost_per_million,
            "rows": [row.to_dict() for row in self.rows],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")


def benchmark(model: ClassifierModel, config: BenchConfig,
              name_source: Sequence[str], model_name: str = "namecountry",
              model_type: str = "local",
              cost_per_million: float = 0.0) -> ThroughputReport:
    """Measure steady-state scoring throughput per batch size.

    For each batch size the pool is shuffled with a per-size seed and cut
    into `repetitions` disjoint fresh batches; warmup batches run untimed
    first. With streams > 1, each repetition scores that many batches
    concurrently and the row reports aggregate throughput.
    """
    pool = list(name_source)
    need = max(config.batch_sizes) * config.repetitions * config.streams
    if len(pool) < need:
        raise InsufficientNamesError(
            f"need at least {need} names (largest batch x repetitions x "
            f"streams), got {len(pool)}")

    rows = []
    for batch_size in config.batch_sizes:
        rng = random.Random(f"bench:{config.seed}:{batch_size}")
        shuffled = pool[:]
        rng.shuffle(shuffled)
        per_run = batch_size * config.streams
        runs = [shuffled[i * per_run:(i + 1) * per_run]
                for i in range(config.repetitions)]
        for i in range(config.warmup_batches):
            model.predict_batch(runs[i % len(runs)][:batch_size])
        samples = []
        for run_names in runs:
            samples.append(_timed_run(model, run_names, batch_size,
                                      config.streams))
        mean_runtime = statistics.fmean(samples)
        throughput = per_run / mean_runtime
        latency_ms = mean_runtime / per_run * 1000.0
        rows.append(BenchRow(batch_size, config.streams, per_run,
                             mean_runtime, throughput, latency_ms,
                             tuple(samples)))
    return ThroughputReport(model_name, model_type, tuple(rows),
                            cost_per_million)


def _timed_run(model: ClassifierModel, names: Sequence[str],
               batch_size: int, streams: int) -> float:
    if streams == 1:
        return run_batch(model, names)[1]
    batches = [names[i * batch_size:(i + 1) * batch_size]
               for i in range(streams)]
    with ThreadPoolExecutor(max_workers=streams) as pool:
        start = time.perf_counter()
        futures = [pool.submit(model.predict_batch, b) for b in batches]
        for future in futures:
            future.result()
        return time.perf_counter() - start


def render_throughput_table(report: ThroughputReport) -> str:
    """Plain-text table: Model, Type, Batch, Throughput, Latency, $/1M."""
    header = ("Model", "Type", "Batch", "Throughput (names/s)",
              "Latency (ms/name)", "$/1M")
    body = [
        (report.model_name, report.model_type, str(row.batch_size),
         f"{row.throughput_names_per_second:.1f}",
         f"{row.latency_ms_per_name:.4f}",
         f"{report.cost_per_million:.2f}")
        for row in report.rows
    ]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def read_name_file(path: str | Path) -> list[str]:
    """Names from a JSONL record file or a plain one-name-per-line file."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return [record.full_name for record in read_records(path)]
    return [line.strip() for line in
            path.read_text(encoding="utf-8").splitlines() if line.strip()]
