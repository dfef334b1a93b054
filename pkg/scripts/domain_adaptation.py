"""BLEU of every decoding strategy on the held-out in-domain test set.

The parametric model is trained out of domain; the datastore holds in-domain
training pairs. Mixing parameters default to the validation-tuned values
from scripts/tune_cache.py.

    python scripts/domain_adaptation.py [--chunk-size 6] [--interval 6]
"""

import argparse
import time

from chunkstore import (CacheScope, DecodeConfig, MixParams, ScheduleConfig, Strategy,
                        build_datastore, corpus_bleu, train_toy, translate_batch)
from chunkstore.index import FlatIndex
from chunkstore.synth import two_domain_corpus

ARMS = [
    ("base", Strategy.BASE, CacheScope.SINGLE_CHUNK, MixParams()),
    ("vanilla", Strategy.VANILLA_KNN, CacheScope.SINGLE_CHUNK, MixParams(0.7, 10.0)),
    ("maintain_order", Strategy.MAINTAIN_ORDER, CacheScope.SINGLE_CHUNK,
     MixParams(0.8, 10.0, 0.5, 1.0)),
    ("single_chunk", Strategy.CACHE, CacheScope.SINGLE_CHUNK, MixParams(0.6, 10.0, 0.6, 1.0)),
    ("beam_batch", Strategy.CACHE, CacheScope.BEAM_BATCH, MixParams(0.7, 10.0, 0.6, 1.0)),
    ("sentence_level", Strategy.CACHE, CacheScope.SENTENCE_LEVEL,
     MixParams(0.7, 10.0, 0.6, 1.0)),
]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--chunk-size", type=int, default=6)
    ap.add_argument("--interval", type=int, default=6)
    ap.add_argument("--beam", type=int, default=5)
    args = ap.parse_args()

    corpus = two_domain_corpus(seed=0, n_in_test=500)
    model = train_toy(corpus.out_domain, seed=0, vocab_size=len(corpus.vocab))
    ds = build_datastore(model, corpus.in_train, c=args.chunk_size)
    index = FlatIndex(ds.keys)
    sources = [p.source for p in corpus.in_test]
    refs = [list(p.target[:-1]) for p in corpus.in_test]
    schedule = ScheduleConfig.fixed(args.interval)
    print(f"{'arm':<16} {'BLEU':>7} {'BP':>6} {'srch/tok':>9} {'sec':>6}")
    for name, strategy, scope, mix in ARMS:
        cfg = DecodeConfig(beam_size=args.beam, strategy=strategy, cache_scope=scope,
                           schedule=schedule, mix=mix)
        start = time.perf_counter()
        out = translate_batch(model, ds, index, cfg, sources)
        elapsed = time.perf_counter() - start
        b = corpus_bleu([t.tokens for t in out], refs)
        tokens = sum(t.stats.tokens for t in out)
        searches = sum(t.stats.ds_searches for t in out)
        print(f"{name:<16} {b.score:>7.2f} {b.brevity_penalty:>6.3f} "
              f"{searches / tokens:>9.3f} {elapsed:>6.1f}")


if __name__ == "__main__":
    main()
