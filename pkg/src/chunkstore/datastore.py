"""Chunk-valued datastore with per-token decoder-state references.

Entry ``e`` corresponds to target position ``t`` of some training pair. Its key
is the key-space PCA of f(x, y_<t); its value is the window y[t : t+c] padded
with PAD; ``state_refs[e, i]`` points at the cache-space PCA of
f(x, y_<t+i) inside ``state_array`` (sentinel for PAD positions).

Because there is one decoder state per target position, state rows and entry
rows coincide: the state of entry ``e`` is ``state_array[e]``, so the
non-sentinel ref at offset ``i`` is ``e + i``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import PAD, SentencePair
from .errors import (
    BadMagic,
    ChunkSizeZero,
    DimensionMismatch,
    EmptyAppend,
    EmptyCorpus,
    ReducedDimExceedsFull,
    TooFewSamples,
    TruncatedFile,
    VersionMismatch,
)
from .model import ModelInterface

DS_MAGIC = b"CKDS"
DS_VERSION = 1
SENTINEL = np.uint64(2**64 - 1)
_HEADER = struct.Struct("<IIIIIQQI")


@dataclass(eq=False)
class PcaTransform:
    """Center then project; parameters are held in float32 as they are stored on disk."""

    mean: np.ndarray        # (d_full,) float32
    projection: np.ndarray  # (d_out, d_full) float32, orthonormal rows
    explained_variance: np.ndarray | None = field(default=None, repr=False)

    @property
    def d_in(self) -> int:
        return self.projection.shape[1]

    @property
    def d_out(self) -> int:
        return self.projection.shape[0]

    def apply(self, x) -> np.ndarray:
        """Project rows of ``x``; returns float32.

        einsum keeps each output row's arithmetic independent of the batch it
        is computed in, so a single query projects bit-identically to the same
        state projected during the build.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        if x2.shape[1] != self.d_in:
            raise DimensionMismatch(f"PCA expects dim {self.d_in}, got {x2.shape[1]}")
        centered = x2 - self.mean.astype(np.float64)
        out = np.einsum("ij,kj->ik", centered, self.projection.astype(np.float64))
        out = out.astype(np.float32)
        return out[0] if single else out

    def inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return y @ self.projection.astype(np.float64) + self.mean.astype(np.float64)

    def __eq__(self, other) -> bool:
        return (isinstance(other, PcaTransform)
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.projection, other.projection))


def fit_pca(samples, d_out: int) -> PcaTransform:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise DimensionMismatch("samples must be a 2-D array")
    n, d = samples.shape
    if d_out > d:
        raise ReducedDimExceedsFull(f"d_out={d_out} > d_full={d}")
    if n < d_out or n < 1:
        raise TooFewSamples(f"{n} samples for d_out={d_out}")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    # eigh is ascending; stable sort on -evals keeps lower component index first on ties
    order = np.argsort(-evals, kind="stable")[:d_out]
    comps = evecs[:, order].T
    # sign convention: largest-magnitude coordinate of each component is positive
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(d_out), pivots])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]
    return PcaTransform(mean.astype(np.float32), comps.astype(np.float32),
                        np.clip(evals[order], 0.0, None))


@dataclass(frozen=True)
class Chunk:
    tokens: tuple[int, ...]
    state_refs: tuple[int, ...]


@dataclass(eq=False)
class Datastore:
    c: int
    d_full: int
    keys: np.ndarray         # (E, d_key) float32
    values: np.ndarray       # (E, c) uint32
    state_refs: np.ndarray   # (E, c) uint64
    state_array: np.ndarray  # (S, d_cache) float32
    pca_key: PcaTransform
    pca_cache: PcaTransform
    epochs: list[int]        # start entry of each appended segment

    @property
    def entry_count(self) -> int:
        return self.keys.shape[0]

    @property
    def state_count(self) -> int:
        return self.state_array.shape[0]

    @property
    def d_key(self) -> int:
        return self.keys.shape[1]

    @property
    def d_cache(self) -> int:
        return self.state_array.shape[1]

    def chunk(self, entry: int) -> Chunk:
        return Chunk(tuple(int(v) for v in self.values[entry]),
                     tuple(int(r) for r in self.state_refs[entry]))

    def query_key(self, state) -> np.ndarray:
        return self.pca_key.apply(state)

    def query_cache(self, state) -> np.ndarray:
        return self.pca_cache.apply(state)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Datastore):
            return NotImplemented
        return (self.c == other.c and self.d_full == other.d_full
                and self.epochs == other.epochs
                and self.pca_key == other.pca_key and self.pca_cache == other.pca_cache
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("keys", "values", "state_refs", "state_array")))

    # -- serialization ---------------------------------------------------

    def to_bytes(self, trailer: bytes = b"") -> bytes:
        parts = [DS_MAGIC, _HEADER.pack(DS_VERSION, self.d_full, self.d_key, self.d_cache,
                                        self.c, self.entry_count, self.state_count,
                                        len(self.epochs))]
        for pca in (self.pca_key, self.pca_cache):
            parts.append(pca.mean.astype("<f4").tobytes())
            parts.append(pca.projection.astype("<f4").tobytes())
        parts.append(self.keys.astype("<f4").tobytes())
        parts.append(self.values.astype("<u4").tobytes())
        parts.append(self.state_refs.astype("<u8").tobytes())
        parts.append(self.state_array.astype("<f4").tobytes())
        parts.append(np.asarray(self.epochs, dtype="<u8").tobytes())
        parts.append(trailer)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple["Datastore", bytes]:
        """Parse a datastore; returns it together with any trailing bytes."""
        if len(data) < 4 or data[:4] != DS_MAGIC:
            raise BadMagic(f"expected {DS_MAGIC!r}, got {data[:4]!r}")
        if len(data) < 4 + _HEADER.size:
            raise TruncatedFile("datastore header")
        version, d_full, d_key, d_cache, c, n_entries, n_states, n_epochs = \
            _HEADER.unpack_from(data, 4)
        if version != DS_VERSION:
            raise VersionMismatch(f"datastore version {version}, expected {DS_VERSION}")
        reader = _Reader(data, 4 + _HEADER.size)
        pcas = []
        for d_out in (d_key, d_cache):
            mean = reader.take("<f4", d_full, "pca mean")
            proj = reader.take("<f4", d_out * d_full, "pca projection").reshape(d_out, d_full)
            pcas.append(PcaTransform(mean, proj))
        keys = reader.take("<f4", n_entries * d_key, "keys").reshape(n_entries, d_key)
        values = reader.take("<u4", n_entries * c, "values").reshape(n_entries, c)
        refs = reader.take("<u8", n_entries * c, "state refs").reshape(n_entries, c)
        states = reader.take("<f4", n_states * d_cache, "state array").reshape(n_states, d_cache)
        epochs = reader.take("<u8", n_epochs, "epoch table")
        ds = cls(c, d_full, keys, values, refs, states, pcas[0], pcas[1],
                 [int(e) for e in epochs])
        return ds, data[reader.offset:]


class _Reader:
    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.offset = offset

    def take(self, dtype: str, count: int, what: str) -> np.ndarray:
        nbytes = count * np.dtype(dtype).itemsize
        if self.offset + nbytes > len(self.data):
            raise TruncatedFile(f"file ends inside {what}")
        arr = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset)
        self.offset += nbytes
        # native-endian, writable copies
        return arr.astype(np.dtype(dtype).newbyteorder("="))


def save(ds: Datastore, path, trailer: bytes = b"") -> None:
    Path(path).write_bytes(ds.to_bytes(trailer))


def read(path) -> tuple[Datastore, bytes]:
    return Datastore.from_bytes(Path(path).read_bytes())


def load(path) -> Datastore:
    return read(path)[0]


# -- construction ------------------------------------------------------------


def _chunk_layout(targets: Sequence[Sequence[int]], c: int, base: int):
    """Values and state refs for the entries of ``targets``, first entry id ``base``."""
    lengths = np.array([len(t) for t in targets], dtype=np.int64)
    flat = np.concatenate([np.asarray(t, dtype=np.int64) for t in targets])
    n = flat.size
    starts = np.repeat(np.cumsum(lengths) - lengths, lengths)
    ends = starts + np.repeat(lengths, lengths)
    entry = np.arange(n)
    idx = entry[:, None] + np.arange(c)[None, :]
    valid = idx < ends[:, None]
    values = np.where(valid, flat[np.minimum(idx, n - 1)], PAD).astype(np.uint32)
    refs = np.where(valid, (idx + base).astype(np.uint64), SENTINEL).astype(np.uint64)
    return values, refs


def _project_corpus(model: ModelInterface, pairs: Sequence[SentencePair],
                    pca_key: PcaTransform, pca_cache: PcaTransform):
    keys, states = [], []
    for pair in pairs:
        raw = model.forced_states(model.encode(pair.source), pair.target)
        keys.append(pca_key.apply(raw))
        states.append(pca_cache.apply(raw))
    return np.concatenate(keys), np.concatenate(states)


def build_datastore(model: ModelInterface, corpus: Sequence[SentencePair], c: int = 16,
                    d_key: int = 32, d_cache: int = 16, pca_sample: int = 100_000,
                    seed: int = 0) -> Datastore:
    """Forced-decode every pair, fit both PCAs on a uniform state sample, then reduce."""
    if not corpus:
        raise EmptyCorpus("cannot build a datastore from an empty corpus")
    if c < 1:
        raise ChunkSizeZero(f"chunk size must be >= 1, got {c}")
    if d_key > model.d_full or d_cache > model.d_full:
        raise ReducedDimExceedsFull(
            f"d_key={d_key}, d_cache={d_cache} must not exceed d_full={model.d_full}")
    lengths = np.array([len(p.target) for p in corpus])
    total = int(lengths.sum())
    rng = np.random.default_rng(seed)
    n_sample = min(total, pca_sample)
    picks = np.sort(rng.choice(total, size=n_sample, replace=False))

    # pass 1: gather the PCA sample without holding every raw state in memory
    sample = np.empty((n_sample, model.d_full))
    offsets = np.cumsum(lengths) - lengths
    cursor = 0
    for pair, off, n in zip(corpus, offsets, lengths):
        lo = np.searchsorted(picks, off)
        hi = np.searchsorted(picks, off + n)
        if hi > lo:
            raw = model.forced_states(model.encode(pair.source), pair.target)
            sample[cursor:cursor + hi - lo] = raw[picks[lo:hi] - off]
            cursor += hi - lo
    pca_key = fit_pca(sample, d_key)
    pca_cache = fit_pca(sample, d_cache)

    # pass 2: reduce
    keys, states = _project_corpus(model, corpus, pca_key, pca_cache)
    values, refs = _chunk_layout([p.target for p in corpus], c, 0)
    return Datastore(c, model.d_full, keys, values, refs, states, pca_key, pca_cache, [0])


def append_examples(ds: Datastore, model: ModelInterface,
                    pairs: Sequence[SentencePair]) -> Datastore:
    """Return a new datastore with ``pairs`` appended as a fresh epoch (PCAs reused)."""
    if not pairs:
        raise EmptyAppend("nothing to append")
    keys, states = _project_corpus(model, pairs, ds.pca_key, ds.pca_cache)
    values, refs = _chunk_layout([p.target for p in pairs], ds.c, ds.state_count)
    return Datastore(
        ds.c, ds.d_full,
        np.concatenate([ds.keys, keys]),
        np.concatenate([ds.values, values]),
        np.concatenate([ds.state_refs, refs]),
        np.concatenate([ds.state_array, states]),
        ds.pca_key, ds.pca_cache,
        ds.epochs + [ds.entry_count],
    )
