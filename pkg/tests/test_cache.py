import numpy as np
import pytest

from chunkstore.cache import CacheScope, NeighborsCache, cache_search, insert_chunks, reset
from chunkstore.core import PAD
from chunkstore.datastore import SENTINEL, Chunk
from chunkstore.errors import DimensionMismatch, EmptyCache, SentinelDereference

STATES = np.arange(20, dtype=np.float32).reshape(10, 2)  # state i = (2i, 2i+1)
S = int(SENTINEL)


def rows(tokens, refs):
    return np.array(tokens), np.array(refs, dtype=np.uint64)


def test_insert_skips_pad_and_search_returns_tokens():
    cache = NeighborsCache(2, CacheScope.SINGLE_CHUNK)
    cache.insert_rows(*rows([[5, 6, PAD]], [[1, 2, S]]), STATES)
    assert len(cache) == 2
    assert cache.search(STATES[2], 2) == [(0.0, 6), (8.0, 5)]


def test_sentinel_on_real_token_is_an_error():
    cache = NeighborsCache(2)
    with pytest.raises(SentinelDereference):
        cache.insert_rows(*rows([[5, 6]], [[1, S]]), STATES)


def test_single_and_beam_scope_replace_sentence_level_accumulates():
    for scope, expect in [(CacheScope.SINGLE_CHUNK, 2), (CacheScope.BEAM_BATCH, 2),
                          (CacheScope.SENTENCE_LEVEL, 4)]:
        cache = NeighborsCache(2, scope)
        cache.insert_rows(*rows([[5, 6]], [[1, 2]]), STATES)
        cache.insert_rows(*rows([[7, 8]], [[3, 4]]), STATES)
        assert len(cache) == expect, scope


def test_beam_batch_keeps_other_owners():
    cache = NeighborsCache(2, CacheScope.BEAM_BATCH)
    cache.insert_rows(*rows([[5]], [[1]]), STATES, owner=0)
    cache.insert_rows(*rows([[6]], [[2]]), STATES, owner=1)
    cache.insert_rows(*rows([[7]], [[3]]), STATES, owner=0)
    assert sorted(cache.values.tolist()) == [6, 7]


def test_ties_broken_by_insertion_order():
    cache = NeighborsCache(2, CacheScope.SENTENCE_LEVEL)
    cache.insert_rows(*rows([[9]], [[4]]), STATES)
    cache.insert_rows(*rows([[5]], [[4]]), STATES)
    assert [tok for _, tok in cache.search(STATES[4], 2)] == [9, 5]


def test_fifo_capacity_eviction():
    cache = NeighborsCache(2, CacheScope.SENTENCE_LEVEL, capacity=3)
    cache.insert_rows(*rows([[4, 5]], [[0, 1]]), STATES)
    cache.insert_rows(*rows([[6, 7]], [[2, 3]]), STATES)
    assert cache.values.tolist() == [5, 6, 7]


def test_empty_and_dimension_errors():
    cache = NeighborsCache(2)
    with pytest.raises(EmptyCache):
        cache.search(np.zeros(2), 1)
    cache.insert_rows(*rows([[4]], [[0]]), STATES)
    with pytest.raises(DimensionMismatch):
        cache.search(np.zeros(3), 1)
    with pytest.raises(DimensionMismatch):
        NeighborsCache(3).insert_rows(*rows([[4]], [[0]]), STATES)


def test_module_level_helpers():
    cache = NeighborsCache(2, CacheScope.SINGLE_CHUNK)
    insert_chunks(cache, [Chunk((5, PAD), (3, S))], STATES)
    assert cache_search(cache, STATES[3], 4) == [(0.0, 5)]
    assert len(reset(cache)) == 0
