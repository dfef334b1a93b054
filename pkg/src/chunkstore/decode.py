"""Beam search with retrieval-augmented step distributions.

All sentences of a batch advance in lockstep, one target position per
iteration, which is what lets batch-scoped neighbors' caches be shared. Each
sentence keeps its own retrieval schedule; at a position where a sentence's
schedule fires, every live hypothesis of that sentence searches the datastore.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cache import CacheScope, NeighborsCache
from .core import BOS, EOS, PAD, MixParams
from .core import retrieval_distribution_arrays
from .datastore import Datastore
from .errors import DimensionMismatch, EmptyNeighborSet, SourceTooLong
from .model import ModelInterface
from .schedule import ScheduleConfig, ScheduleState, chunk_size_at


class Strategy(enum.Enum):
    BASE = "base"
    VANILLA_KNN = "vanilla"
    MAINTAIN_ORDER = "maintain_order"
    CACHE = "cache"


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    max_len: int = 100
    mix: MixParams = field(default_factory=MixParams)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    strategy: Strategy = Strategy.CACHE
    cache_scope: CacheScope = CacheScope.SENTENCE_LEVEL
    cache_capacity: int | None = None
    batch_size: int = 8
    max_src_len: int = 1024

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def label(self) -> str:
        if self.strategy is Strategy.CACHE:
            return f"cache[{self.cache_scope.value}]/{self.schedule.label()}"
        if self.strategy is Strategy.MAINTAIN_ORDER:
            return f"maintain_order/{self.schedule.label()}"
        return self.strategy.value


@dataclass
class DecodeStats:
    tokens: int = 0
    ds_searches: int = 0        # datastore searches along the emitted hypothesis' history
    cache_searches: int = 0     # cache searches along the emitted hypothesis' history
    ds_search_calls: int = 0    # every hypothesis-level datastore search for the sentence
    cache_search_calls: int = 0
    wall_time: float = 0.0

    @property
    def tokens_per_sec(self) -> float:
        return self.tokens / self.wall_time if self.wall_time > 0 else float("inf")


@dataclass
class Hypothesis:
    prefix: tuple[int, ...]
    score: float
    ds_searches: int = 0
    cache_searches: int = 0
    # maintain-order context: distances (k,) and chunk tokens (k, c_k) of the last retrieval
    mo_dists: np.ndarray | None = None
    mo_tokens: np.ndarray | None = None
    cache: NeighborsCache | None = None  # single-chunk scope only


@dataclass
class Translation:
    tokens: list[int]
    score: float
    stats: DecodeStats


# -- per-step distribution -----------------------------------------------------


def step_distribution(p_model: np.ndarray, distances, tokens, temp: float,
                      lam: float) -> np.ndarray:
    """Interpolate dense ``p_model`` with the softmax over neighbor tokens.

    PAD-valued neighbors are dropped from both numerator and denominator; if
    none survive the model distribution is returned unchanged.
    """
    if lam == 0.0:
        return p_model
    distances = np.asarray(distances, dtype=np.float64)
    tokens = np.asarray(tokens, dtype=np.int64)
    keep = tokens != PAD
    if not keep.any():
        return p_model
    p_ret = retrieval_distribution_arrays(distances[keep], tokens[keep], temp)
    out = (1.0 - lam) * p_model
    out[p_ret.ids] += lam * p_ret.probs
    return out


def query_vector(state, space: str, ds: Datastore) -> np.ndarray:
    """Reduce a full decoder state into key space ("key") or cache space ("cache")."""
    state = np.asarray(state)
    if state.shape[-1] != ds.d_full:
        raise DimensionMismatch(f"state dim {state.shape[-1]} != d_full {ds.d_full}")
    if space == "key":
        return ds.pca_key.apply(state)
    if space == "cache":
        return ds.pca_cache.apply(state)
    raise ValueError(f"unknown space {space!r}")


# -- beam search -----------------------------------------------------------------

StepHook = Callable[[dict], None]


@dataclass
class _Sentence:
    idx: int
    ctx: object
    schedule: ScheduleState
    live: list[Hypothesis]
    finished: list[Hypothesis] = field(default_factory=list)
    done: bool = False
    calls_ds: int = 0
    calls_cache: int = 0
    c_k: int = 1
    retrieval_t: int = 0


class Decoder:
    """Runs translate jobs against one model/datastore/index triple."""

    def __init__(self, model: ModelInterface, datastore: Datastore | None, index,
                 config: DecodeConfig, on_step: StepHook | None = None):
        if config.strategy is not Strategy.BASE and (datastore is None or index is None):
            raise ValueError(f"strategy {config.strategy.value} needs a datastore and index")
        self.model = model
        self.ds = datastore
        self.index = index
        self.config = config
        self.on_step = on_step

    def translate(self, sources: Sequence[Sequence[int]]) -> list[Translation]:
        out = []
        bs = self.config.batch_size
        for lo in range(0, len(sources), bs):
            out.extend(self._translate_batch(sources[lo:lo + bs], lo))
        return out

    # ---------------------------------------------------------------------------

    def _translate_batch(self, sources, base_idx: int) -> list[Translation]:
        cfg = self.config
        start = time.perf_counter()
        sents = []
        for j, src in enumerate(sources):
            if len(src) > cfg.max_src_len:
                raise SourceTooLong(f"source {base_idx + j} has {len(src)} tokens "
                                    f"(limit {cfg.max_src_len})")
            sents.append(_Sentence(base_idx + j, self.model.encode(src),
                                   ScheduleState(cfg.schedule, len(src)),
                                   [Hypothesis((BOS,), 0.0)]))
        shared = None
        if cfg.strategy is Strategy.CACHE and cfg.cache_scope is not CacheScope.SINGLE_CHUNK:
            shared = NeighborsCache(self.ds.d_cache, cfg.cache_scope, cfg.cache_capacity)

        for t in range(1, cfg.max_len + 1):
            active = [s for s in sents if not s.done]
            if not active:
                break
            probs = self._step(active, t, shared)
            for s, p in zip(active, probs):
                self._advance(s, p, t)
        elapsed = time.perf_counter() - start

        results = []
        for s in sents:
            best = max(s.finished, key=lambda h: h.score) if s.finished else \
                max(s.live, key=lambda h: h.score)
            tokens = list(best.prefix[1:])
            stats = DecodeStats(
                tokens=len(tokens), ds_searches=best.ds_searches,
                cache_searches=best.cache_searches, ds_search_calls=s.calls_ds,
                cache_search_calls=s.calls_cache, wall_time=elapsed / len(sents))
            if tokens and tokens[-1] == EOS:
                tokens = tokens[:-1]
            results.append(Translation(tokens, best.score, stats))
        return results

    def _step(self, active: list[_Sentence], t: int, shared: NeighborsCache | None):
        """Final per-hypothesis distributions (dense) for every active sentence."""
        cfg = self.config
        strat = cfg.strategy
        mix = cfg.mix
        states, p_models = [], []
        for s in active:
            st, pm = [], []
            for h in s.live:
                state, p = self.model.step_dense(s.ctx, h.prefix)
                st.append(state)
                pm.append(p)
            states.append(np.stack(st))
            p_models.append(pm)
        if strat is Strategy.BASE:
            self._emit(active, t, p_models, ["base"] * len(active))
            return p_models

        firing = []
        for s in active:
            fires = strat is Strategy.VANILLA_KNN or s.schedule.fires(t)
            if fires and strat is not Strategy.VANILLA_KNN:
                interval = s.schedule.advance(t)
                s.c_k = chunk_size_at(cfg.schedule, self.ds.c, interval)
                s.retrieval_t = t
            firing.append(fires)

        # one batched datastore search for every hypothesis of every firing sentence
        ret_rows = [(si, hi) for si, s in enumerate(active) if firing[si]
                    for hi in range(len(s.live))]
        ds_dist = ds_ids = None
        if ret_rows:
            q = np.concatenate([query_vector(states[si], "key", self.ds)
                                for si, s in enumerate(active) if firing[si]])
            ds_dist, ds_ids = self.index.search_batch(q, mix.k)

        out = [list(pm) for pm in p_models]
        kinds = []
        row = 0
        for si, s in enumerate(active):
            if not firing[si]:
                kinds.append(None)
                continue
            kinds.append("datastore")
            pending = []  # this sentence's chunk rows for a shared cache, inserted at once
            for hi, h in enumerate(s.live):
                d, ids = ds_dist[row], ds_ids[row]
                valid = ids >= 0
                d, ids = d[valid], ids[valid]
                row += 1
                h.ds_searches += 1
                s.calls_ds += 1
                first = self.ds.values[ids, 0]
                out[si][hi] = step_distribution(p_models[si][hi], d, first, mix.temp_ds,
                                                mix.lambda_ds)
                if strat is Strategy.MAINTAIN_ORDER:
                    h.mo_dists = d
                    h.mo_tokens = self.ds.values[ids, :s.c_k]
                elif strat is Strategy.CACHE:
                    vals = self.ds.values[ids, :s.c_k]
                    refs = self.ds.state_refs[ids, :s.c_k]
                    if cfg.cache_scope is CacheScope.SINGLE_CHUNK:
                        h.cache = NeighborsCache(self.ds.d_cache, cfg.cache_scope,
                                                 cfg.cache_capacity)
                        h.cache.insert_rows(vals, refs, self.ds.state_array)
                    else:
                        pending.append((vals, refs))
            if pending:
                shared.insert_rows(np.concatenate([v for v, _ in pending]),
                                   np.concatenate([r for _, r in pending]),
                                   self.ds.state_array, owner=s.idx)

        if strat is Strategy.MAINTAIN_ORDER:
            for si, s in enumerate(active):
                if firing[si]:
                    continue
                kinds[si] = "maintain_order"
                j = t - s.retrieval_t
                for hi, h in enumerate(s.live):
                    if h.mo_tokens is None or j >= h.mo_tokens.shape[1]:
                        continue
                    out[si][hi] = step_distribution(p_models[si][hi], h.mo_dists,
                                                    h.mo_tokens[:, j], mix.temp_ds,
                                                    mix.lambda_ds)
        elif strat is Strategy.CACHE:
            self._cache_steps(active, firing, states, p_models, out, kinds, shared)
        self._emit(active, t, out, kinds)
        return out

    def _cache_steps(self, active, firing, states, p_models, out, kinds, shared):
        mix = self.config.mix
        # group hypotheses by the cache object they read
        groups: dict[int, tuple[NeighborsCache, list]] = {}
        for si, s in enumerate(active):
            if firing[si]:
                continue
            kinds[si] = "cache"
            for hi, h in enumerate(s.live):
                cache = shared if shared is not None else h.cache
                if cache is None or len(cache) == 0:
                    continue
                groups.setdefault(id(cache), (cache, []))[1].append((si, hi))
        for cache, members in groups.values():
            states_rows = np.stack([states[si][hi] for si, hi in members])
            q = query_vector(states_rows, "cache", self.ds)
            dists, pos = cache.search_batch(q, mix.k)
            vals = cache.values
            for (si, hi), d, p in zip(members, dists, pos):
                h = active[si].live[hi]
                h.cache_searches += 1
                active[si].calls_cache += 1
                out[si][hi] = step_distribution(p_models[si][hi], d, vals[p], mix.temp_cache,
                                                mix.lambda_cache)

    def _emit(self, active, t, dists, kinds):
        if self.on_step is None:
            return
        for si, s in enumerate(active):
            for hi, h in enumerate(s.live):
                self.on_step({"sentence": s.idx, "t": t, "prefix": h.prefix,
                              "kind": kinds[si], "probs": dists[si][hi]})

    def _advance(self, s: _Sentence, probs: list[np.ndarray], t: int) -> None:
        beam = self.config.beam_size
        V = probs[0].shape[0]
        with np.errstate(divide="ignore"):
            logp = np.log(np.stack(probs))
        scores = logp + np.array([h.score for h in s.live])[:, None]
        flat = scores.ravel()
        n_cand = min(flat.size, 2 * beam)
        cand = np.argpartition(-flat, n_cand - 1)[:n_cand]
        # best score first; ties by hypothesis index, then smaller token id
        cand = cand[np.lexsort((cand, -flat[cand]))]
        new_live = []
        for rank, c in enumerate(cand):
            hi, tok = divmod(int(c), V)
            parent = s.live[hi]
            child = Hypothesis(parent.prefix + (tok,), float(flat[c]), parent.ds_searches,
                               parent.cache_searches, parent.mo_dists, parent.mo_tokens,
                               parent.cache)
            if tok == EOS:
                if rank < beam:
                    s.finished.append(child)
            elif len(new_live) < beam:
                new_live.append(child)
            if len(new_live) == beam:
                break
        s.live = new_live
        if t == self.config.max_len:
            s.finished.extend(s.live)
            s.done = True
        elif not s.live or len(s.finished) >= beam:
            s.done = True
        elif s.finished and max(h.score for h in s.finished) >= s.live[0].score:
            # scores only decrease, so no live hypothesis can overtake
            s.done = True


def translate_batch(model: ModelInterface, datastore: Datastore | None, index,
                    config: DecodeConfig, sources: Sequence[Sequence[int]],
                    on_step: StepHook | None = None) -> list[Translation]:
    return Decoder(model, datastore, index, config, on_step).translate(sources)
