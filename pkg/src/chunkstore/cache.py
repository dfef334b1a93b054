"""The neighbors' cache: a small exact-search memory of retrieved chunks' tokens.

Each entry pairs the cache-space state of a chunk position with the token at
that position. Scopes differ only in when entries are dropped:

* ``SINGLE_CHUNK``: one cache per beam hypothesis, replaced at every retrieval.
* ``BEAM_BATCH``: one cache per batch; each sentence's segment is replaced
  when that sentence retrieves, so the cache always holds the latest chunks
  of every sentence (with synchronized schedules this is a plain reset).
* ``SENTENCE_LEVEL``: one cache per batch, accumulating until the batch ends.
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .core import PAD
from .datastore import SENTINEL, Chunk
from .errors import DimensionMismatch, EmptyCache, SentinelDereference
from .index import _order, exact_sq_dists


class CacheScope(enum.Enum):
    SINGLE_CHUNK = "single"
    BEAM_BATCH = "beam_batch"
    SENTENCE_LEVEL = "sentence"


class NeighborsCache:
    def __init__(self, d_cache: int, scope: CacheScope = CacheScope.SENTENCE_LEVEL,
                 capacity: int | None = None):
        self.d_cache = d_cache
        self.scope = scope
        self.capacity = capacity
        # owner -> list of (keys, values) blocks, in insertion order
        self._segments: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        self._order: list[int] = []  # owners by first insertion
        self._cached = None

    def __len__(self) -> int:
        return sum(v.size for blocks in self._segments.values() for _, v in blocks)

    def _arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self._cached is None:
            blocks = [b for owner in self._order for b in self._segments.get(owner, [])]
            if blocks:
                keys = np.concatenate([k for k, _ in blocks])
                vals = np.concatenate([v for _, v in blocks])
            else:
                keys = np.empty((0, self.d_cache), dtype=np.float32)
                vals = np.empty(0, dtype=np.int64)
            self._cached = (keys, vals)
        return self._cached

    @property
    def keys(self) -> np.ndarray:
        return self._arrays()[0]

    @property
    def values(self) -> np.ndarray:
        return self._arrays()[1]

    def reset(self) -> "NeighborsCache":
        self._segments.clear()
        self._order.clear()
        self._cached = None
        return self

    def insert_rows(self, values: np.ndarray, refs: np.ndarray, state_array: np.ndarray,
                    owner: int = 0) -> "NeighborsCache":
        """Insert chunk rows given as (n_chunks, c) token and state-ref arrays."""
        values = np.atleast_2d(np.asarray(values))
        refs = np.asarray(refs, dtype=np.uint64).reshape(values.shape)
        mask = values != PAD
        if np.any(refs[mask] == SENTINEL):
            raise SentinelDereference("non-PAD chunk position carries the PAD state sentinel")
        keys = state_array[refs[mask].astype(np.int64)]
        if keys.shape[1] != self.d_cache:
            raise DimensionMismatch(f"state dim {keys.shape[1]} != cache dim {self.d_cache}")
        vals = values[mask].astype(np.int64)

        if self.scope is CacheScope.SENTENCE_LEVEL:
            self._segments.setdefault(owner, []).append((keys, vals))
        else:
            self._segments[owner] = [(keys, vals)]
        if owner not in self._order:
            self._order.append(owner)
        self._cached = None
        if self.capacity is not None:
            self._evict()
        return self

    def insert_chunks(self, chunks: Sequence[Chunk], state_array: np.ndarray,
                      owner: int = 0) -> "NeighborsCache":
        if not chunks:
            return self
        values = np.array([ch.tokens for ch in chunks])
        refs = np.array([ch.state_refs for ch in chunks], dtype=np.uint64)
        return self.insert_rows(values, refs, state_array, owner)

    def _evict(self) -> None:
        keys, vals = self._arrays()
        excess = vals.size - self.capacity
        if excess <= 0:
            return
        # oldest first: collapse into one segment and drop the head
        self._segments = {0: [(keys[excess:], vals[excess:])]}
        self._order = [0]
        self._cached = None

    def search_batch(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Exact top-min(k, size); ties broken by insertion order.

        Returns (distances, entry positions), each (n_queries, min(k, size)).
        """
        keys, _ = self._arrays()
        if keys.shape[0] == 0:
            raise EmptyCache("neighbors' cache is empty")
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float32))
        if queries.shape[1] != self.d_cache:
            raise DimensionMismatch(f"query dim {queries.shape[1]} != cache dim {self.d_cache}")
        kk = min(k, keys.shape[0])
        pos = np.arange(keys.shape[0])
        out_d = np.empty((queries.shape[0], kk))
        out_p = np.empty((queries.shape[0], kk), dtype=np.int64)
        for qi, q in enumerate(queries):
            out_d[qi], out_p[qi] = _order(exact_sq_dists(keys, q), pos, kk)
        return out_d, out_p

    def search(self, query, k: int) -> list[tuple[float, int]]:
        """(distance, token) pairs, nearest first."""
        d, p = self.search_batch(query, k)
        vals = self.values
        return [(float(x), int(vals[i])) for x, i in zip(d[0], p[0])]


def insert_chunks(cache: NeighborsCache, chunks: Sequence[Chunk], state_array,
                  owner: int = 0) -> NeighborsCache:
    return cache.insert_chunks(chunks, state_array, owner)


def cache_search(cache: NeighborsCache, query, k: int) -> list[tuple[float, int]]:
    return cache.search(query, k)


def reset(cache: NeighborsCache) -> NeighborsCache:
    return cache.reset()
