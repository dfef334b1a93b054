"""Synthetic parallel corpora for desk-scale experiments.

A domain is a phrase table (source phrase -> target phrase of the same
length, 1-3 words from a domain-private word list) plus a sparse phrase-to-phrase transition
table, so in-domain targets have recurring local structure that a datastore
can capture and an out-of-domain model cannot. Sentences are monotone
concatenations of phrases. An optional shared inventory supplies phrases
common to every domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SentencePair, Vocab


@dataclass
class Domain:
    name: str
    phrases: list[tuple[tuple[str, ...], tuple[str, ...]]]
    successors: list[np.ndarray]
    start: np.ndarray


def make_domain(name: str, seed: int, n_phrases: int = 60, n_words: int = 80,
                branching: int = 3) -> Domain:
    rng = np.random.default_rng(seed)
    src_words = [f"{name}_s{i}" for i in range(n_words)]
    tgt_words = [f"{name}_t{i}" for i in range(n_words)]
    phrases = []
    seen = set()
    while len(phrases) < n_phrases:
        src = tuple(src_words[i] for i in rng.integers(0, n_words, rng.integers(1, 4)))
        if src in seen:
            continue
        seen.add(src)
        tgt = tuple(tgt_words[i] for i in rng.integers(0, n_words, len(src)))
        phrases.append((src, tgt))
    successors = [rng.choice(n_phrases, size=branching, replace=False)
                  for _ in range(n_phrases)]
    start = rng.choice(n_phrases, size=max(branching * 2, 1), replace=False)
    return Domain(name, phrases, successors, start)


def sample_sentences(domain: Domain, n: int, seed: int, min_phrases: int = 2,
                     max_phrases: int = 5, shared: Domain | None = None,
                     shared_rate: float = 0.0, doc_size: int | None = None,
                     topic_size: int = 12) -> list[tuple[list[str], list[str]]]:
    """Walk the phrase transition graph; optionally splice in shared phrases.

    With ``doc_size`` set, every run of ``doc_size`` consecutive sentences is a
    document: its walks prefer a random topic subset of ``topic_size`` phrases,
    so sentences of one document share material.
    """
    rng = np.random.default_rng(seed)
    n_phr = len(domain.phrases)
    out = []
    topic = None
    for j in range(n):
        if doc_size and j % doc_size == 0:
            topic = set(rng.choice(n_phr, size=min(topic_size, n_phr), replace=False).tolist())
        length = int(rng.integers(min_phrases, max_phrases + 1))
        if topic:
            starts = [p for p in domain.start.tolist() if p in topic] or sorted(topic)
            cur = int(rng.choice(starts))
        else:
            cur = int(rng.choice(domain.start))
        src, tgt = [], []
        for _ in range(length):
            if shared is not None and rng.random() < shared_rate:
                s, t = shared.phrases[int(rng.integers(len(shared.phrases)))]
            else:
                s, t = domain.phrases[cur]
                succ = domain.successors[cur].tolist()
                if topic:
                    succ = [p for p in succ if p in topic] or succ
                cur = int(rng.choice(succ))
            src.extend(s)
            tgt.extend(t)
        out.append((src, tgt))
    return out


def encode_pairs(vocab: Vocab, sentences) -> list[SentencePair]:
    return [SentencePair(vocab.encode(s), vocab.encode(t)) for s, t in sentences]


@dataclass
class TwoDomainCorpus:
    vocab: Vocab
    out_domain: list[SentencePair]   # trains the parametric model
    in_train: list[SentencePair]     # builds the datastore
    in_test: list[SentencePair]      # held out


def two_domain_corpus(seed: int = 0, n_out: int = 3000, n_in_train: int = 3000,
                      n_in_test: int = 500, shared_rate: float = 0.25,
                      doc_size: int | None = 8) -> TwoDomainCorpus:
    general = make_domain("gen", seed + 1, n_phrases=20, n_words=30)
    dom_a = make_domain("news", seed + 2)
    dom_b = make_domain("med", seed + 3)
    out = sample_sentences(dom_a, n_out, seed + 10, shared=general, shared_rate=shared_rate)
    # a sliver of in-domain text so the model is not blind to the domain's words
    out += sample_sentences(dom_b, n_out // 20, seed + 11, shared=general,
                            shared_rate=shared_rate)
    train = sample_sentences(dom_b, n_in_train, seed + 12, shared=general,
                             shared_rate=shared_rate, doc_size=doc_size)
    test = sample_sentences(dom_b, n_in_test, seed + 13, shared=general,
                            shared_rate=shared_rate, doc_size=doc_size)
    vocab = Vocab.build(s + t for s, t in out + train + test)
    return TwoDomainCorpus(vocab, encode_pairs(vocab, out), encode_pairs(vocab, train),
                           encode_pairs(vocab, test))


def random_corpus(n: int, vocab_size: int, seed: int, min_len: int = 3,
                  max_len: int = 20) -> list[SentencePair]:
    """Unstructured id sequences over ids 4..vocab_size-1."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        ls, lt = rng.integers(min_len, max_len + 1, size=2)
        pairs.append(SentencePair(rng.integers(4, vocab_size, ls).tolist(),
                                  rng.integers(4, vocab_size, lt).tolist()))
    return pairs


def cycle_corpus(n: int, seed: int, n_classes: int = 20, src_len: int = 20,
                 tgt_len: tuple[int, int] = (300, 400), cycle_len: tuple[int, int] = (5, 8),
                 words_per_class: int = 10) -> tuple[list[SentencePair], int]:
    """Long-output pairs for throughput work; returns (pairs, vocab size).

    Each class owns a few source words and a cycle of distinct target ids.
    A target walks its class cycle from a random phase, so the next token is
    determined by the previous two and EOS is rare in every context: decoders
    run to their length limit instead of stopping early.
    """
    rng = np.random.default_rng(seed)
    next_id = 4
    classes = []
    for _ in range(n_classes):
        src = np.arange(next_id, next_id + words_per_class)
        next_id += words_per_class
        clen = int(rng.integers(cycle_len[0], cycle_len[1] + 1))
        cyc = np.arange(next_id, next_id + clen)
        next_id += clen
        classes.append((src, cyc))
    pairs = []
    for _ in range(n):
        src, cyc = classes[int(rng.integers(n_classes))]
        length = int(rng.integers(tgt_len[0], tgt_len[1] + 1))
        phase = int(rng.integers(len(cyc)))
        target = cyc[(phase + np.arange(length)) % len(cyc)]
        pairs.append(SentencePair(rng.choice(src, size=src_len).tolist(), target.tolist()))
    return pairs, next_id
