import math

import pytest

from chunkstore import datastore as dsmod
from chunkstore.decode import DecodeConfig, Strategy
from chunkstore.errors import EmptyCorpus, LengthMismatch
from chunkstore.evalbench import (StreamConfig, bench, corpus_bleu, format_table,
                                  machine_descriptor, run_stream, warm_split)
from chunkstore.index import FlatIndex
from chunkstore.schedule import ScheduleConfig

HYPS = ["a b c d".split(), "a b e".split(), "x y z w v".split()]
REFS = ["a b c d".split(), "a b c".split(), "x y z w".split()]


def test_bleu_hand_fixture():
    # matched/total n-grams: 1: 10/12, 2: 7/9, 3: 4/6, 4: 2/3; hyp 12 >= ref 11 so BP = 1
    r = corpus_bleu(HYPS, REFS)
    assert r.matches == [10, 7, 4, 2] and r.totals == [12, 9, 6, 3]
    assert r.brevity_penalty == 1.0
    assert r.score == pytest.approx(100 * (560 / 1944) ** 0.25, abs=1e-6)


def test_bleu_brevity_penalty():
    r = corpus_bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d", "e", "f"]])
    assert r.brevity_penalty == pytest.approx(math.exp(1 - 6 / 4))
    assert r.score == pytest.approx(100 * math.exp(1 - 6 / 4), abs=1e-9)


def test_bleu_identity_and_zero():
    assert corpus_bleu(REFS, REFS).score == 100.0
    assert corpus_bleu([["q"]], [["a"]]).score == 0.0
    assert corpus_bleu([[]], [["a"]]).score == 0.0
    with pytest.raises(LengthMismatch):
        corpus_bleu([["a"]], [])
    with pytest.raises(EmptyCorpus):
        corpus_bleu([], [])


def test_bleu_clips_repeated_ngrams():
    r = corpus_bleu([["the"] * 4], [["the", "cat"]])
    assert r.matches[0] == 1


def test_bench_rows_and_table(toy_model, small_ds, small_index, test_sources):
    configs = [DecodeConfig(strategy=Strategy.VANILLA_KNN, max_len=30),
               DecodeConfig(strategy=Strategy.CACHE, schedule=ScheduleConfig.geometric(2, 16),
                            max_len=30)]
    rows = bench(toy_model, small_ds, small_index, configs, test_sources[:8])
    (vanilla, _), (cache, results) = rows
    assert vanilla.searches_per_token == 1.0
    assert cache.searches_per_token < vanilla.searches_per_token
    assert cache.tokens == sum(r.stats.tokens for r in results)
    table = format_table([vanilla, cache])
    assert "vanilla" in table and "GEOMETRIC(2,16)" in table
    assert {"machine", "python", "cpus"} <= set(machine_descriptor())


def test_stream_appends_between_blocks(toy_model, small_corpus):
    stream = small_corpus.in_test[:30]
    warm, rest = warm_split(stream, 0.2)
    assert len(warm) == 6 and len(rest) == 24
    ds = dsmod.build_datastore(toy_model, warm, c=4, d_key=8, d_cache=8)
    rep = run_stream(toy_model, ds, FlatIndex(ds.keys), DecodeConfig(max_len=30), rest,
                     StreamConfig(0.2, update_block=10, report_block=12))
    assert rep.updates == 2  # after blocks 1 and 2, not after the last
    assert rep.appended_tokens == [sum(len(p.target) for p in rest[i:i + 10]) for i in (0, 10)]
    assert [(b.start, b.end) for b in rep.blocks] == [(0, 12), (12, 24)]
    assert len(rep.hypotheses) == 24
    assert rep.total_time == pytest.approx(rep.update_time + rep.inference_time)


def test_stream_config_validation():
    with pytest.raises(ValueError):
        StreamConfig(warm_fraction=1.0)
    with pytest.raises(ValueError):
        StreamConfig(update_block=0)
