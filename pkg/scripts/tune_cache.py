"""Grid-search the mixing parameters of each strategy on a validation slice.

The held-out test set is the first 500 in-domain test sentences; validation
uses later, document-aligned sentences from the same generator, so nothing
here touches the test set.

    python scripts/tune_cache.py [--n-val 196] [--out results.jsonl]
"""

import argparse
import itertools
import json
import sys

from chunkstore import (CacheScope, DecodeConfig, MixParams, ScheduleConfig, Strategy,
                        build_datastore, corpus_bleu, train_toy, translate_batch)
from chunkstore.config import LAMBDA_CACHE_GRID, LAMBDA_GRID, TEMP_CACHE_GRID
from chunkstore.index import FlatIndex
from chunkstore.synth import two_domain_corpus

TEST_SIZE = 500
VAL_START = 504  # first document boundary after the test set (documents of 8)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-val", type=int, default=196)
    ap.add_argument("--chunk-size", type=int, default=6)
    ap.add_argument("--interval", type=int, default=6)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    corpus = two_domain_corpus(seed=0, n_in_test=VAL_START + args.n_val)
    # the test-set corpus must see the same vocabulary, or the model would differ
    assert len(corpus.vocab) == len(two_domain_corpus(seed=0, n_in_test=TEST_SIZE).vocab)
    val = corpus.in_test[VAL_START:]
    sources = [p.source for p in val]
    refs = [list(p.target[:-1]) for p in val]
    model = train_toy(corpus.out_domain, seed=0, vocab_size=len(corpus.vocab))
    ds = build_datastore(model, corpus.in_train, c=args.chunk_size)
    index = FlatIndex(ds.keys)
    schedule = ScheduleConfig.fixed(args.interval)

    arms = [("maintain_order", Strategy.MAINTAIN_ORDER, CacheScope.SINGLE_CHUNK),
            ("single_chunk", Strategy.CACHE, CacheScope.SINGLE_CHUNK),
            ("beam_batch", Strategy.CACHE, CacheScope.BEAM_BATCH),
            ("sentence_level", Strategy.CACHE, CacheScope.SENTENCE_LEVEL)]
    out = open(args.out, "w") if args.out else None
    best = {}
    for name, strategy, scope in arms:
        cache_grid = (itertools.product(LAMBDA_CACHE_GRID, TEMP_CACHE_GRID)
                      if strategy is Strategy.CACHE else [(0.5, 1.0)])
        for lam, (lam_c, temp_c) in itertools.product(LAMBDA_GRID, list(cache_grid)):
            cfg = DecodeConfig(strategy=strategy, cache_scope=scope, schedule=schedule,
                               mix=MixParams(lam, 10.0, lam_c, temp_c))
            hyps = [t.tokens for t in translate_batch(model, ds, index, cfg, sources)]
            score = corpus_bleu(hyps, refs).score
            rec = {"arm": name, "lambda": lam, "lambda_cache": lam_c, "temp_cache": temp_c,
                   "bleu": round(score, 3)}
            print(json.dumps(rec), file=out or sys.stdout, flush=True)
            if score > best.get(name, {"bleu": -1})["bleu"]:
                best[name] = rec
    for name, rec in best.items():
        print(f"best {name}: {rec}", file=sys.stderr)


if __name__ == "__main__":
    main()
