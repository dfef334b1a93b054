"""Shared value types and the two distribution formulas every strategy uses.

``retrieval_distribution`` turns a neighbor list into a distribution over
token ids (softmax of negative distances, aggregated per value) and
``interpolate`` mixes it with the parametric model's distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyNeighborSet,
    InvalidVocab,
    LambdaOutOfRange,
    NonPositiveTemperature,
)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")


class Vocab:
    """Dense id <-> surface string map with the four reserved ids fixed at 0..3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise InvalidVocab(f"first four tokens must be {RESERVED}, got {tokens[:4]}")
        self.tokens = tokens
        self.index = {}
        for i, tok in enumerate(tokens):
            if tok in self.index:
                raise InvalidVocab(f"duplicate token {tok!r} at line {i}")
            self.index[tok] = i

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocab":
        """Reserved tokens first, then the rest in order of first appearance."""
        tokens = list(RESERVED)
        seen = set(tokens)
        for sent in sentences:
            for tok in sent:
                if tok not in seen:
                    seen.add(tok)
                    tokens.append(tok)
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self.index.get(w, UNK) for w in words]

    def decode(self, ids: Sequence[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip and i in (PAD, BOS, EOS):
                continue
            out.append(self.tokens[i])
        return out

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass(frozen=True)
class SentencePair:
    source: tuple[int, ...]
    target: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "source", tuple(int(t) for t in self.source))
        target = tuple(int(t) for t in self.target)
        if not target or target[-1] != EOS:
            target = target + (EOS,)
        object.__setattr__(self, "target", target)
        if not self.source:
            raise ValueError("empty source")
        if PAD in self.source or PAD in target:
            raise ValueError("PAD inside sentence pair")
        if EOS in target[:-1]:
            raise ValueError("EOS before end of target")


class ProbDist:
    """Sparse distribution: sorted unique ``ids`` with matching ``probs``.

    Absent ids have probability zero.
    """

    __slots__ = ("ids", "probs")

    def __init__(self, ids, probs, check: bool = True):
        ids = np.asarray(ids, dtype=np.int64)
        probs = np.asarray(probs, dtype=np.float64)
        if check:
            if ids.shape != probs.shape or ids.ndim != 1:
                raise ValueError("ids/probs shape mismatch")
            if ids.size and np.any(np.diff(ids) <= 0):
                order = np.argsort(ids, kind="stable")
                ids, probs = ids[order], probs[order]
                if np.any(np.diff(ids) == 0):
                    raise ValueError("duplicate ids in ProbDist")
            if np.any(probs < 0) or not np.all(np.isfinite(probs)):
                raise ValueError("negative or non-finite probability")
            if abs(probs.sum() - 1.0) > 1e-9:
                raise ValueError(f"probabilities sum to {probs.sum()!r}")
        self.ids = ids
        self.probs = probs

    @classmethod
    def from_dense(cls, dense, check: bool = True) -> "ProbDist":
        dense = np.asarray(dense, dtype=np.float64)
        return cls(np.arange(dense.size), dense, check=check)

    @classmethod
    def from_dict(cls, d: dict) -> "ProbDist":
        items = sorted(d.items())
        return cls([k for k, _ in items], [v for _, v in items])

    def to_dense(self, size: int) -> np.ndarray:
        out = np.zeros(size, dtype=np.float64)
        out[self.ids] = self.probs
        return out

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(p) for i, p in zip(self.ids, self.probs)}

    def __getitem__(self, token: int) -> float:
        pos = np.searchsorted(self.ids, token)
        if pos < self.ids.size and self.ids[pos] == token:
            return float(self.probs[pos])
        return 0.0

    def argmax(self) -> int:
        # np.argmax returns the first maximum, ids are sorted ascending
        return int(self.ids[int(np.argmax(self.probs))])

    def total(self) -> float:
        return float(self.probs.sum())

    def __repr__(self) -> str:
        return f"ProbDist({self.as_dict()})"


@dataclass(frozen=True)
class MixParams:
    lambda_ds: float = 0.7
    temp_ds: float = 10.0
    lambda_cache: float = 0.5
    temp_cache: float = 1.0
    k: int = 8

    def __post_init__(self):
        for name in ("lambda_ds", "lambda_cache"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise LambdaOutOfRange(f"{name}={v}")
        for name in ("temp_ds", "temp_cache"):
            if getattr(self, name) <= 0:
                raise NonPositiveTemperature(f"{name}={getattr(self, name)}")
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")


def sq_l2(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    diff = a - b
    return float(diff @ diff)


def retrieval_distribution_arrays(distances, tokens, temp: float) -> ProbDist:
    """Array form of :func:`retrieval_distribution`.

    Shifting by the minimum distance before exponentiating cancels in the
    normalization and keeps far neighbors from underflowing to an all-zero sum.
    """
    if temp <= 0:
        raise NonPositiveTemperature(f"temp={temp}")
    distances = np.asarray(distances, dtype=np.float64)
    tokens = np.asarray(tokens, dtype=np.int64)
    if distances.size == 0:
        raise EmptyNeighborSet("no neighbors")
    logits = -(distances - distances.min()) / temp
    weights = np.exp(logits)
    ids, inverse = np.unique(tokens, return_inverse=True)
    mass = np.bincount(inverse, weights=weights, minlength=ids.size)
    return ProbDist(ids, mass / mass.sum(), check=False)


def retrieval_distribution(neighbors: Sequence[tuple[float, int]], temp: float) -> ProbDist:
    """p(v) proportional to the sum of exp(-distance / temp) over neighbors valued v."""
    if not neighbors:
        if temp <= 0:
            raise NonPositiveTemperature(f"temp={temp}")
        raise EmptyNeighborSet("no neighbors")
    dists = [float(d) for d, _ in neighbors]
    toks = [int(v) for _, v in neighbors]
    return retrieval_distribution_arrays(dists, toks, temp)


def interpolate(p_model: ProbDist, p_retrieval: ProbDist, lam: float) -> ProbDist:
    """(1 - lam) * p_model + lam * p_retrieval over the union of supports."""
    if not 0.0 <= lam <= 1.0 or math.isnan(lam):
        raise LambdaOutOfRange(f"lambda={lam}")
    if lam == 0.0:
        return p_model
    if lam == 1.0:
        return p_retrieval
    ids = np.union1d(p_model.ids, p_retrieval.ids)
    probs = np.zeros(ids.size, dtype=np.float64)
    probs[np.searchsorted(ids, p_model.ids)] += (1.0 - lam) * p_model.probs
    probs[np.searchsorted(ids, p_retrieval.ids)] += lam * p_retrieval.probs
    return ProbDist(ids, probs, check=False)


def interpolate_dense(p_model: np.ndarray, p_retrieval: ProbDist, lam: float) -> np.ndarray:
    """Dense fast path used inside the decoder; same arithmetic as :func:`interpolate`."""
    if lam == 0.0:
        return p_model
    out = (1.0 - lam) * p_model
    out[p_retrieval.ids] += lam * p_retrieval.probs
    return out
