"""Corpus BLEU, decode benchmarking, and the on-the-fly adaptation simulator."""

from __future__ import annotations

import logging
import math
import os
import platform
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from . import datastore as dsmod
from .core import SentencePair
from .decode import DecodeConfig, DecodeStats, translate_batch
from .errors import EmptyCorpus, LengthMismatch
from .index import refresh

log = logging.getLogger(__name__)

MAX_ORDER = 4


@dataclass
class BleuReport:
    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: list[int] = field(default_factory=list)
    totals: list[int] = field(default_factory=list)


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence]) -> BleuReport:
    """Unsmoothed 4-gram corpus BLEU with one reference per hypothesis."""
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EmptyCorpus("BLEU over an empty corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        bp = 0.0
    else:
        bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(score, precisions, bp, hyp_len, ref_len, matches, totals)


def machine_descriptor() -> dict:
    return {"machine": platform.machine(), "processor": platform.processor() or "unknown",
            "python": platform.python_version(), "cpus": os.cpu_count()}


# -- benchmarking ------------------------------------------------------------------


@dataclass
class BenchRow:
    label: str
    sentences: int
    tokens: int
    ds_searches: int
    cache_searches: int
    ds_search_calls: int
    wall_time: float

    @property
    def tokens_per_sec(self) -> float:
        return self.tokens / self.wall_time if self.wall_time > 0 else float("inf")

    @property
    def searches_per_token(self) -> float:
        return self.ds_searches / self.tokens if self.tokens else 0.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["tokens_per_sec"] = self.tokens_per_sec
        d["searches_per_token"] = self.searches_per_token
        return d


def summarize(label: str, stats: Sequence[DecodeStats], wall_time: float) -> BenchRow:
    return BenchRow(label, len(stats), sum(s.tokens for s in stats),
                    sum(s.ds_searches for s in stats), sum(s.cache_searches for s in stats),
                    sum(s.ds_search_calls for s in stats), wall_time)


def bench(model, datastore, index, configs: Sequence[DecodeConfig],
          sources: Sequence[Sequence[int]]) -> list[tuple[BenchRow, list]]:
    """Decode the same sources under each config, one config at a time."""
    rows = []
    for cfg in configs:
        start = time.perf_counter()
        results = translate_batch(model, datastore, index, cfg, sources)
        elapsed = time.perf_counter() - start
        row = summarize(cfg.label(), [r.stats for r in results], elapsed)
        log.info("%s: %.1f tok/s, %.3f searches/token", row.label, row.tokens_per_sec,
                 row.searches_per_token)
        rows.append((row, results))
    return rows


def format_table(rows: Sequence[BenchRow]) -> str:
    header = f"{'config':<40} {'sents':>6} {'tokens':>7} {'ds_srch':>8} {'srch/tok':>9} {'tok/s':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.label:<40} {r.sentences:>6} {r.tokens:>7} {r.ds_searches:>8} "
                     f"{r.searches_per_token:>9.3f} {r.tokens_per_sec:>9.1f}")
    return "\n".join(lines)


# -- on-the-fly adaptation ---------------------------------------------------------


@dataclass(frozen=True)
class StreamConfig:
    warm_fraction: float = 0.10
    update_block: int = 250
    report_block: int = 4000

    def __post_init__(self):
        if not 0.0 < self.warm_fraction < 1.0:
            raise ValueError("warm_fraction must be in (0, 1)")
        if self.update_block < 1 or self.report_block < 1:
            raise ValueError("blocks must be >= 1")


@dataclass
class StreamBlock:
    start: int
    end: int
    bleu: float


@dataclass
class StreamReport:
    blocks: list[StreamBlock]
    bleu: float
    update_time: float
    inference_time: float
    updates: int
    appended_tokens: list[int]
    update_times: list[float]
    hypotheses: list[list[int]]

    @property
    def total_time(self) -> float:
        return self.update_time + self.inference_time


def warm_split(stream: Sequence[SentencePair], warm_fraction: float):
    n_warm = max(1, int(round(len(stream) * warm_fraction)))
    return list(stream[:n_warm]), list(stream[n_warm:])


def run_stream(model, datastore, index, config: DecodeConfig, stream: Sequence[SentencePair],
               stream_config: StreamConfig = StreamConfig()) -> StreamReport:
    """Translate ``stream`` in order, appending each finished update block to the datastore.

    ``datastore``/``index`` must already hold the warm portion; ``stream`` is
    the remainder. References stand in for post-edited translations.
    """
    hyps: list[list[int]] = []
    update_time = inference_time = 0.0
    appended, update_times = [], []
    ub = stream_config.update_block
    for lo in range(0, len(stream), ub):
        block = stream[lo:lo + ub]
        start = time.perf_counter()
        results = translate_batch(model, datastore, index, config, [p.source for p in block])
        inference_time += time.perf_counter() - start
        hyps.extend(r.tokens for r in results)
        if lo + ub < len(stream):
            start = time.perf_counter()
            datastore = dsmod.append_examples(datastore, model, block)
            index = refresh(index, datastore)
            dt = time.perf_counter() - start
            update_time += dt
            update_times.append(dt)
            appended.append(sum(len(p.target) for p in block))
    refs = [list(p.target[:-1]) for p in stream]
    blocks = []
    rb = stream_config.report_block
    for lo in range(0, len(stream), rb):
        hi = min(lo + rb, len(stream))
        blocks.append(StreamBlock(lo, hi, corpus_bleu(hyps[lo:hi], refs[lo:hi]).score))
    return StreamReport(blocks, corpus_bleu(hyps, refs).score if stream else 0.0,
                        update_time, inference_time, len(update_times), appended,
                        update_times, hyps)
