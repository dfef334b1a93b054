"""Decode throughput against a large flat-index datastore.

Builds a synthetic long-output corpus (about 1M datastore entries by default)
and times vanilla kNN-MT, maintain-order and the cache strategy under several
retrieval schedules on one batch of 20-token sources.

    python scripts/bench_throughput.py [--sentences 2900] [--batch 8]
"""

import argparse
import json
import time

from chunkstore import (DecodeConfig, ScheduleConfig, Strategy, build_datastore, train_toy)
from chunkstore.evalbench import bench, format_table, machine_descriptor
from chunkstore.index import FlatIndex
from chunkstore.synth import cycle_corpus


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--sentences", type=int, default=2900)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--max-len", type=int, default=52)
    args = ap.parse_args()

    start = time.perf_counter()
    train, vocab_size = cycle_corpus(args.sentences, seed=5)
    model = train_toy(train, seed=0, vocab_size=vocab_size)
    ds = build_datastore(model, train, c=16)
    index = FlatIndex(ds.keys)
    print(f"built {ds.entry_count} entries in {time.perf_counter() - start:.1f} s")
    test, _ = cycle_corpus(args.batch, seed=6)
    sources = [p.source for p in test]

    def cfg(strategy, schedule=ScheduleConfig.geometric(2, 16)):
        return DecodeConfig(strategy=strategy, schedule=schedule, max_len=args.max_len,
                            batch_size=args.batch)

    configs = [cfg(Strategy.VANILLA_KNN),
               cfg(Strategy.MAINTAIN_ORDER),
               cfg(Strategy.CACHE, ScheduleConfig.fixed(8)),
               cfg(Strategy.CACHE, ScheduleConfig.geometric(2, 8)),
               cfg(Strategy.CACHE),
               cfg(Strategy.CACHE, ScheduleConfig.geometric(2, 32))]
    rows = [row for row, _ in bench(model, ds, index, configs, sources)]
    for row in rows:
        print(json.dumps({**row.as_dict(), "entries": ds.entry_count}))
    print(format_table(rows))
    base = rows[0].tokens_per_sec
    for row in rows[1:]:
        print(f"{row.label}: {row.tokens_per_sec / base:.2f}x vanilla")
    print(json.dumps(machine_descriptor()))


if __name__ == "__main__":
    main()
