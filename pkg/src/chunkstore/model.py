"""Parametric model interface and a deterministic count-based stand-in.

The toy model's decoder state is ``tanh`` of a fixed random projection of
``[source mean embedding | emb(y[t-1]) | emb(y[t-2]) | position encoding]``,
where the position encoding covers both the target position ``t`` and the
remaining source length ``|x| - t + 1`` (a crude coverage signal).
The projection is applied block-wise (each block projected once and cached),
so the state for a prefix is a sum of table lookups and is bit-identical
whether computed alone or as part of a forced-decoding batch.
"""

from __future__ import annotations

import abc
import io
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import BOS, EOS, ProbDist, SentencePair
from .errors import BadMagic, EmptyCorpus, PrefixMissingBOS, TruncatedFile, VersionMismatch

MODEL_MAGIC = b"CKNM"
MODEL_VERSION = 1

POS_DIM = 8
MAX_POS = 4096
# pre-activation gains per input block; large enough that tanh saturates and
# unrelated contexts land far apart in state space
SOURCE_GAIN = 2.0
HISTORY_GAIN = 1.5
POSITION_GAIN = 0.3
REMAINING_GAIN = 3.0
# states are scaled after the squash; at this scale an exact-match neighbor
# clearly dominates near misses under T ~ 10 while near misses still get mass
STATE_SCALE = 5.0


@dataclass(frozen=True)
class SourceContext:
    tokens: tuple[int, ...]
    mean_embedding: np.ndarray
    projected: np.ndarray  # source block already pushed through the projection
    cooc_dist: np.ndarray  # dense smoothed co-occurrence distribution


class ModelInterface(abc.ABC):
    d_full: int
    vocab_size: int

    @abc.abstractmethod
    def encode(self, source: Sequence[int]) -> SourceContext: ...

    @abc.abstractmethod
    def decoder_step(self, ctx: SourceContext, prefix: Sequence[int]) -> tuple[np.ndarray, ProbDist]: ...

    def step_dense(self, ctx: SourceContext, prefix: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Like :meth:`decoder_step` but returns p_NMT as a dense array."""
        state, dist = self.decoder_step(ctx, prefix)
        return state, dist.to_dense(self.vocab_size)

    def forced_states(self, ctx: SourceContext, target: Sequence[int]) -> np.ndarray:
        """Decoder states f(x, y_<t) for t = 1..len(target), BOS prepended."""
        prefix = [BOS]
        rows = []
        for tok in target:
            rows.append(self.decoder_step(ctx, prefix)[0])
            prefix.append(int(tok))
        return np.stack(rows)


def _position_encoding(positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64)[:, None]
    freqs = 1.0 / (10.0 ** (np.arange(POS_DIM // 2) * 2.0 / POS_DIM))
    angles = positions * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class ToyModel(ModelInterface):
    """Trigram + source co-occurrence model with random-projection states."""

    def __init__(self, vocab_size: int, d_full: int, alpha: float, seed: int,
                 trigram: dict, cooc: dict):
        self.vocab_size = int(vocab_size)
        self.d_full = int(d_full)
        self.alpha = float(alpha)
        self.seed = int(seed)
        # (a, b) -> (next ids, counts); s -> (target ids, counts)
        self.trigram = trigram
        self.cooc = cooc
        self._trigram_totals = {key: float(c.sum()) for key, (_, c) in trigram.items()}
        self._init_tables()

    def _init_tables(self) -> None:
        d, V = self.d_full, self.vocab_size
        rng = np.random.default_rng(self.seed)
        self.embeddings = rng.standard_normal((V, d))
        in_dim = 3 * d + 2 * POS_DIM
        w = rng.standard_normal((in_dim, d)) / np.sqrt(d)
        self._w_src = SOURCE_GAIN * w[:d]
        self._proj_prev1 = HISTORY_GAIN * (self.embeddings @ w[d:2 * d])
        self._proj_prev2 = HISTORY_GAIN * (self.embeddings @ w[2 * d:3 * d])
        pos = _position_encoding(np.arange(MAX_POS))
        self._proj_pos = POSITION_GAIN * (pos @ w[3 * d:3 * d + POS_DIM])
        self._proj_rem = REMAINING_GAIN * (pos @ w[3 * d + POS_DIM:])
        self._uniform = np.full(V, 1.0 / V)

    # -- distributions ---------------------------------------------------

    def trigram_dense(self, prev2: int, prev1: int) -> np.ndarray:
        V, a = self.vocab_size, self.alpha
        entry = self.trigram.get((prev2, prev1))
        if entry is None:
            return self._uniform.copy()
        ids, counts = entry
        out = np.full(V, a)
        out[ids] += counts
        return out / (self._trigram_totals[(prev2, prev1)] + a * V)

    def cooc_dense(self, source: Sequence[int]) -> np.ndarray:
        V, a = self.vocab_size, self.alpha
        out = np.zeros(V)
        for s in source:
            entry = self.cooc.get(int(s))
            if entry is not None:
                out[entry[0]] += entry[1]
        total = out.sum()
        return (out + a) / (total + a * V)

    # -- interface -------------------------------------------------------

    def encode(self, source: Sequence[int]) -> SourceContext:
        tokens = tuple(int(t) for t in source)
        mean = self.embeddings[list(tokens)].mean(axis=0)
        return SourceContext(tokens, mean, mean @ self._w_src, self.cooc_dense(tokens))

    def _history(self, prefix: Sequence[int]) -> tuple[int, int, int]:
        if not prefix or prefix[0] != BOS:
            raise PrefixMissingBOS(f"prefix must start with BOS, got {list(prefix)[:3]}")
        t = len(prefix)
        prev1 = int(prefix[-1])
        prev2 = int(prefix[-2]) if t >= 2 else BOS
        return prev2, prev1, t

    def _pos_rows(self, positions, src_len: int) -> np.ndarray:
        positions = np.asarray(positions)
        remaining = np.clip(src_len - positions + 1, 0, MAX_POS - 1)
        return self._proj_pos[np.minimum(positions, MAX_POS - 1)] + self._proj_rem[remaining]

    def state(self, ctx: SourceContext, prefix: Sequence[int]) -> np.ndarray:
        return self.step_dense(ctx, prefix)[0]

    def step_dense(self, ctx, prefix):
        prev2, prev1, t = self._history(prefix)
        state = STATE_SCALE * np.tanh(ctx.projected + self._proj_prev1[prev1]
                                      + self._proj_prev2[prev2]
                                      + self._pos_rows([t], len(ctx.tokens))[0])
        p = 0.5 * self.trigram_dense(prev2, prev1) + 0.5 * ctx.cooc_dist
        return state, p

    def decoder_step(self, ctx, prefix):
        state, p = self.step_dense(ctx, prefix)
        return state, ProbDist.from_dense(p, check=False)

    def forced_states(self, ctx, target):
        full = np.concatenate([[BOS, BOS], np.asarray(target, dtype=np.int64)])
        n = len(target)
        prev1 = full[1:n + 1]
        prev2 = full[0:n]
        positions = np.arange(1, n + 1)
        pre = (ctx.projected[None, :] + self._proj_prev1[prev1] + self._proj_prev2[prev2]
               + self._pos_rows(positions, len(ctx.tokens)))
        return STATE_SCALE * np.tanh(pre)

    # -- serialization ---------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MODEL_MAGIC)
        buf.write(struct.pack("<IqIdI", MODEL_VERSION, self.seed, self.d_full, self.alpha,
                              self.vocab_size))
        rows = [(a, b, v, c) for (a, b), (ids, cnt) in sorted(self.trigram.items())
                for v, c in zip(ids.tolist(), cnt.tolist())]
        _write_table(buf, rows, 4)
        rows = [(s, v, c) for s, (ids, cnt) in sorted(self.cooc.items())
                for v, c in zip(ids.tolist(), cnt.tolist())]
        _write_table(buf, rows, 3)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "ToyModel":
        if data[:4] != MODEL_MAGIC:
            raise BadMagic(f"expected {MODEL_MAGIC!r}, got {data[:4]!r}")
        header = struct.calcsize("<IqIdI")
        if len(data) < 4 + header:
            raise TruncatedFile("model header")
        version, seed, d_full, alpha, vocab_size = struct.unpack_from("<IqIdI", data, 4)
        if version != MODEL_VERSION:
            raise VersionMismatch(f"model version {version}, expected {MODEL_VERSION}")
        offset = 4 + header
        tri, offset = _read_table(data, offset, 4)
        cooc, offset = _read_table(data, offset, 3)
        trigram = _group(tri, 2)
        cooc_map = {k[0]: v for k, v in _group(cooc, 1).items()}
        return cls(vocab_size, d_full, alpha, seed, trigram, cooc_map)

    @classmethod
    def load(cls, path) -> "ToyModel":
        return cls.from_bytes(Path(path).read_bytes())


def _write_table(buf, rows, width: int) -> None:
    arr = np.asarray(rows, dtype="<u4").reshape(-1, width)
    buf.write(struct.pack("<Q", arr.shape[0]))
    buf.write(arr.tobytes())


def _read_table(data: bytes, offset: int, width: int):
    if len(data) < offset + 8:
        raise TruncatedFile("table length")
    (n,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    nbytes = n * width * 4
    if len(data) < offset + nbytes:
        raise TruncatedFile("table body")
    arr = np.frombuffer(data, dtype="<u4", count=n * width, offset=offset).reshape(n, width)
    return arr, offset + nbytes


def _group(table: np.ndarray, key_width: int) -> dict:
    out = {}
    if table.shape[0] == 0:
        return out
    keys = table[:, :key_width]
    # rows were written sorted by key, so equal keys are contiguous
    change = np.any(keys[1:] != keys[:-1], axis=1)
    starts = np.concatenate([[0], np.nonzero(change)[0] + 1, [table.shape[0]]])
    for lo, hi in zip(starts[:-1], starts[1:]):
        key = tuple(int(x) for x in keys[lo])
        out[key] = (table[lo:hi, key_width].astype(np.int64),
                    table[lo:hi, key_width + 1].astype(np.float64))
    return out


def train_toy(corpus: Sequence[SentencePair], seed: int = 0, alpha: float = 0.1,
              d_full: int = 64, vocab_size: int | None = None) -> ToyModel:
    """Count trigrams and source/target co-occurrences in one pass."""
    if not corpus:
        raise EmptyCorpus("cannot train on an empty corpus")
    tri_counts: dict = defaultdict(Counter)
    cooc_counts: dict = defaultdict(Counter)
    max_id = 3
    for pair in corpus:
        hist = [BOS, BOS]
        for tok in pair.target:
            tri_counts[(hist[-2], hist[-1])][tok] += 1
            hist.append(tok)
        # EOS is positional rather than lexical; only the trigram predicts it
        tgt = Counter(t for t in pair.target if t != EOS)
        for s in pair.source:
            cooc_counts[s].update(tgt)
        max_id = max(max_id, max(pair.source), max(pair.target))
    if vocab_size is None:
        vocab_size = max_id + 1
    trigram = {key: _counter_arrays(c) for key, c in tri_counts.items()}
    cooc = {s: _counter_arrays(c) for s, c in cooc_counts.items()}
    return ToyModel(vocab_size, d_full, alpha, seed, trigram, cooc)


def _counter_arrays(counter: Counter):
    ids = np.array(sorted(counter), dtype=np.int64)
    return ids, np.array([counter[i] for i in ids.tolist()], dtype=np.float64)
