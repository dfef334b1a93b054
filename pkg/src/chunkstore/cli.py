"""``chunkstore`` command line.

Subcommands: build-vocab, train-model, build-datastore, translate, bench,
onthefly, ablate. Each reads a JSON run config (``--config``) and lets flags
override individual fields; see :mod:`chunkstore.config` for the schema.

Text files hold one sentence per line, tokens separated by spaces.

Output records are line-delimited JSON on stdout. ``translate`` emits one
record per input sentence with keys::

    id              0-based input line number
    hypothesis      detokenized output (space-joined)
    bleu            sentence BLEU against paths.reference (only when given)
    tokens          generated tokens, EOS included
    ds_searches     datastore searches along the returned hypothesis
    cache_searches  neighbors' cache searches along the returned hypothesis
    wall_ms         decode wall time attributed to the sentence

``bench`` and ``ablate`` emit one record per configuration (label, counters,
tokens_per_sec, searches_per_token, bleu when a reference is given) followed
by a plain-text table. ``onthefly`` emits one record per report block and a
summary record.

Exit status: 0 success, 1 invalid configuration or arguments, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import datastore as dsmod
from .config import RunConfig, schedule_from_spec
from .core import SentencePair, Vocab
from .decode import Strategy, translate_batch
from .errors import ChunkstoreError, ConfigInvalid
from .evalbench import (bench as run_bench, corpus_bleu, format_table, machine_descriptor,
                        run_stream, summarize, warm_split)
from .index import load_with_index, make_index, save_with_index
from .model import ToyModel, train_toy

log = logging.getLogger("chunkstore")

THREADS_ENV = "CHUNKSTORE_THREADS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


# flag -> (config section, field, type)
_OVERRIDES = {
    "strategy": ("decode", "strategy", str),
    "cache_scope": ("decode", "cache_scope", str),
    "i_min": ("schedule", "i_min", int),
    "i_max": ("schedule", "i_max", int),
    "chunk_size": ("datastore", "chunk_size", int),
    "k": ("decode", "k", int),
    "lam": ("decode", "lambda", float),
    "temp": ("decode", "temp", float),
    "lambda_cache": ("decode", "lambda_cache", float),
    "temp_cache": ("decode", "temp_cache", float),
    "beam": ("decode", "beam", int),
    "batch": ("decode", "batch", int),
    "index": ("datastore", "index", str),
    "nprobe": ("datastore", "nprobe", int),
    "input": ("paths", "input", str),
    "reference": ("paths", "reference", str),
    "output": ("paths", "output", str),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--strategy", choices=[s.value for s in Strategy])
    common.add_argument("--cache-scope", choices=["single", "beam_batch", "sentence"])
    common.add_argument("--schedule",
                        help="fixed | geometric | FIXED(i) | GEOMETRIC(i_min,i_max)")
    common.add_argument("--i-min", type=int)
    common.add_argument("--i-max", type=int)
    common.add_argument("--chunk-size", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--temp", type=float)
    common.add_argument("--lambda-cache", type=float)
    common.add_argument("--temp-cache", type=float)
    common.add_argument("--beam", type=int)
    common.add_argument("--batch", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--index", choices=["flat", "ivf"])
    common.add_argument("--nprobe", type=int)
    common.add_argument("--input", help="source sentences (paths.input)")
    common.add_argument("--reference", help="reference sentences (paths.reference)")
    common.add_argument("--output", help="write plain hypotheses here (paths.output)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="chunkstore", description="Chunk-based retrieval-augmented MT")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [
        ("build-vocab", "collect a vocabulary from the configured text files"),
        ("train-model", "fit the toy parametric model"),
        ("build-datastore", "forced-decode a corpus into a chunk datastore"),
        ("translate", "translate paths.input"),
        ("bench", "time the configured decode strategy"),
        ("onthefly", "simulate on-the-fly adaptation over a stream"),
        ("ablate", "sweep strategies x schedules x k"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        data = RunConfig.load(args.config).to_dict()
    for flag, (section, key, _) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            data.setdefault(section, {})[key] = value
    if args.seed is not None:
        data["seed"] = args.seed
    if args.schedule is not None:
        data.setdefault("schedule", {}).update(_schedule_override(args.schedule))
    return RunConfig.from_dict(data)


def _schedule_override(text: str) -> dict:
    if text.lower() in ("fixed", "geometric"):
        return {"mode": text.lower()}
    try:
        sc = schedule_from_spec(text)
    except ValueError as exc:
        raise ConfigInvalid("schedule", str(exc)) from None
    if sc.mode == "fixed":
        return {"mode": "fixed", "i": sc.i}
    return {"mode": "geometric", "i_min": sc.i_min, "i_max": sc.i_max}


def thread_count(cfg: RunConfig) -> int:
    n = cfg.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigInvalid(THREADS_ENV, f"not an integer: {env!r}") from None
        if cap < 1:
            raise ConfigInvalid(THREADS_ENV, "must be >= 1")
        n = min(n, cap)
    return max(1, n)


# -- text i/o --------------------------------------------------------------------


def read_lines(path) -> list[list[str]]:
    return [line.split() for line in Path(path).read_text(encoding="utf-8").splitlines()]


def read_pairs(vocab: Vocab, src_path, tgt_path) -> list[SentencePair]:
    src, tgt = read_lines(src_path), read_lines(tgt_path)
    if len(src) != len(tgt):
        raise ConfigInvalid(str(tgt_path), f"{len(tgt)} lines but source has {len(src)}")
    return [SentencePair(vocab.encode(s), vocab.encode(t)) for s, t in zip(src, tgt)]


def read_sources(vocab: Vocab, path) -> list[list[int]]:
    out = []
    for j, words in enumerate(read_lines(path)):
        if not words:
            raise ChunkstoreError(f"{path}: line {j + 1} is empty")
        out.append(vocab.encode(words))
    return out


def emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record, sort_keys=False) + "\n")


# -- loading ---------------------------------------------------------------------


def _load_stack(cfg: RunConfig, need_datastore: bool):
    cfg.require_files("vocab", "model")
    vocab = Vocab.load(cfg.paths.vocab)
    model = ToyModel.load(cfg.paths.model)
    ds = index = None
    if need_datastore:
        cfg.require_files("datastore")
        ds, index = load_with_index(cfg.paths.datastore, cfg.datastore.index,
                                    cfg.datastore.nprobe, cfg.seed)
    return vocab, model, ds, index


def _references(cfg: RunConfig, vocab: Vocab, n: int):
    if not cfg.paths.reference:
        return None
    cfg.require_files("reference")
    refs = [vocab.encode(w) for w in read_lines(cfg.paths.reference)]
    if len(refs) != n:
        raise ConfigInvalid("paths.reference", f"{len(refs)} lines but input has {n}")
    return refs


def sharded_translate(model, ds, index, dcfg, sources, threads: int):
    """Translate on up to ``threads`` workers; shards are whole batches, so
    results do not depend on the thread count."""
    bs = dcfg.batch_size
    batches = [sources[lo:lo + bs] for lo in range(0, len(sources), bs)]
    if threads <= 1 or len(batches) <= 1:
        return translate_batch(model, ds, index, dcfg, sources)
    per = -(-len(batches) // threads)
    shards = [sum(batches[i:i + per], []) for i in range(0, len(batches), per)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda s: translate_batch(model, ds, index, dcfg, s), shards))
    return [t for part in parts for t in part]


# -- commands --------------------------------------------------------------------


def cmd_build_vocab(cfg: RunConfig) -> None:
    cfg.require_set("vocab")
    names = [n for n in ("train_src", "train_tgt", "ds_src", "ds_tgt", "input", "reference")
             if getattr(cfg.paths, n)]
    if not names:
        raise ConfigInvalid("paths.train_src", "build-vocab needs at least one text file")
    cfg.require_files(*names)
    vocab = Vocab.build(s for n in names for s in read_lines(getattr(cfg.paths, n)))
    vocab.save(cfg.paths.vocab)
    emit({"command": "build-vocab", "vocab": cfg.paths.vocab, "size": len(vocab)})


def cmd_train_model(cfg: RunConfig) -> None:
    cfg.require_files("vocab", "train_src", "train_tgt")
    cfg.require_set("model")
    vocab = Vocab.load(cfg.paths.vocab)
    pairs = read_pairs(vocab, cfg.paths.train_src, cfg.paths.train_tgt)
    model = train_toy(pairs, seed=cfg.seed, alpha=cfg.model.alpha, d_full=cfg.model.d_full,
                      vocab_size=len(vocab))
    model.save(cfg.paths.model)
    emit({"command": "train-model", "model": cfg.paths.model, "pairs": len(pairs)})


def cmd_build_datastore(cfg: RunConfig) -> None:
    cfg.require_files("vocab", "model", "ds_src", "ds_tgt")
    cfg.require_set("datastore")
    vocab = Vocab.load(cfg.paths.vocab)
    model = ToyModel.load(cfg.paths.model)
    pairs = read_pairs(vocab, cfg.paths.ds_src, cfg.paths.ds_tgt)
    d = cfg.datastore
    ds = dsmod.build_datastore(model, pairs, c=d.chunk_size, d_key=d.d_key, d_cache=d.d_cache,
                               pca_sample=d.pca_sample, seed=cfg.seed)
    index = make_index(ds, d.index, d.n_clusters, d.nprobe, cfg.seed)
    save_with_index(ds, cfg.paths.datastore, index)
    emit({"command": "build-datastore", "datastore": cfg.paths.datastore,
          "entries": ds.entry_count, "chunk_size": ds.c, "index": d.index})


def cmd_translate(cfg: RunConfig) -> None:
    dcfg = cfg.decode_config()
    cfg.require_files("input")
    vocab, model, ds, index = _load_stack(cfg, dcfg.strategy is not Strategy.BASE)
    sources = read_sources(vocab, cfg.paths.input)
    refs = _references(cfg, vocab, len(sources))
    start = time.perf_counter()
    results = sharded_translate(model, ds, index, dcfg, sources, thread_count(cfg))
    elapsed = time.perf_counter() - start
    hyps = [" ".join(vocab.decode(r.tokens)) for r in results]
    for j, (r, hyp) in enumerate(zip(results, hyps)):
        rec = {"id": j, "hypothesis": hyp}
        if refs is not None:
            rec["bleu"] = corpus_bleu([r.tokens], [refs[j]]).score
        rec.update(tokens=r.stats.tokens, ds_searches=r.stats.ds_searches,
                   cache_searches=r.stats.cache_searches,
                   wall_ms=round(1000.0 * r.stats.wall_time, 3))
        emit(rec)
    if cfg.paths.output:
        Path(cfg.paths.output).write_text("".join(h + "\n" for h in hyps), encoding="utf-8")
    row = summarize(dcfg.label(), [r.stats for r in results], elapsed)
    print(format_table([row]), file=sys.stderr)
    if refs is not None:
        print(f"corpus BLEU {corpus_bleu([r.tokens for r in results], refs).score:.2f}",
              file=sys.stderr)


def cmd_bench(cfg: RunConfig) -> None:
    dcfg = cfg.decode_config()
    cfg.require_files("input")
    vocab, model, ds, index = _load_stack(cfg, dcfg.strategy is not Strategy.BASE)
    sources = read_sources(vocab, cfg.paths.input)
    refs = _references(cfg, vocab, len(sources))
    rows = []
    for row, results in run_bench(model, ds, index, [dcfg], sources):
        rec = {"command": "bench", **row.as_dict(), "machine": machine_descriptor()}
        if refs is not None:
            rec["bleu"] = corpus_bleu([r.tokens for r in results], refs).score
        emit(rec)
        rows.append(row)
    print(format_table(rows))


def ablation_grid(cfg: RunConfig):
    """(strategy, cache_scope, schedule, k) cells; schedule-free strategies appear once per k."""
    cells = []
    schedules = [schedule_from_spec(s) for s in cfg.ablate.schedules]
    for strategy in cfg.ablate.strategies:
        for k in cfg.ablate.k:
            if strategy in ("base", "vanilla"):
                cells.append((strategy, cfg.decode.cache_scope, None, k))
                continue
            scopes = cfg.ablate.cache_scopes if strategy == "cache" else [cfg.decode.cache_scope]
            for scope in scopes:
                for sc in schedules:
                    cells.append((strategy, scope, sc, k))
    return cells


def cmd_ablate(cfg: RunConfig) -> None:
    cfg.require_files("input")
    vocab, model, ds, index = _load_stack(cfg, True)
    sources = read_sources(vocab, cfg.paths.input)
    refs = _references(cfg, vocab, len(sources))
    rows = []
    for strategy, scope, sc, k in ablation_grid(cfg):
        dcfg = cfg.decode_config(strategy=strategy, schedule=sc, k=k, cache_scope=scope)
        start = time.perf_counter()
        results = translate_batch(model, ds, index, dcfg, sources)
        row = summarize(f"{dcfg.label()}/k={k}", [r.stats for r in results],
                        time.perf_counter() - start)
        rec = {"command": "ablate", "strategy": strategy,
               "cache_scope": scope if strategy == "cache" else None,
               "schedule": sc.label() if sc else None, "k": k,
               "bleu": (corpus_bleu([r.tokens for r in results], refs).score
                        if refs is not None else None),
               "searches_per_token": row.searches_per_token,
               "tokens_per_sec": row.tokens_per_sec, "tokens": row.tokens,
               "ds_searches": row.ds_searches, "cache_searches": row.cache_searches}
        emit(rec)
        rows.append(row)
    print(format_table(rows))


def cmd_onthefly(cfg: RunConfig) -> None:
    cfg.require_files("vocab", "model", "input", "reference")
    vocab = Vocab.load(cfg.paths.vocab)
    model = ToyModel.load(cfg.paths.model)
    stream = read_pairs(vocab, cfg.paths.input, cfg.paths.reference)
    scfg = cfg.stream_config()
    warm, rest = warm_split(stream, scfg.warm_fraction)
    d = cfg.datastore
    if cfg.paths.datastore:
        cfg.require_files("datastore")
        ds = dsmod.append_examples(dsmod.load(cfg.paths.datastore), model, warm)
    else:
        ds = dsmod.build_datastore(model, warm, c=d.chunk_size, d_key=d.d_key,
                                   d_cache=d.d_cache, pca_sample=d.pca_sample, seed=cfg.seed)
    index = make_index(ds, d.index, d.n_clusters, d.nprobe, cfg.seed)
    report = run_stream(model, ds, index, cfg.decode_config(), rest, scfg)
    for b in report.blocks:
        emit({"command": "onthefly", "block_start": b.start, "block_end": b.end,
              "bleu": b.bleu})
    emit({"command": "onthefly", "summary": True, "warm": len(warm), "stream": len(rest),
          "bleu": report.bleu, "updates": report.updates,
          "update_time": report.update_time, "inference_time": report.inference_time,
          "total_time": report.total_time})


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "train-model": cmd_train_model,
    "build-datastore": cmd_build_datastore,
    "translate": cmd_translate,
    "bench": cmd_bench,
    "onthefly": cmd_onthefly,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ChunkstoreError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
