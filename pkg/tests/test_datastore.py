import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkstore import datastore as dsmod
from chunkstore.core import EOS, PAD, SentencePair
from chunkstore.datastore import SENTINEL, _chunk_layout, build_datastore, fit_pca
from chunkstore.errors import (BadMagic, ChunkSizeZero, DimensionMismatch, EmptyAppend,
                               EmptyCorpus, ReducedDimExceedsFull, TooFewSamples, TruncatedFile,
                               VersionMismatch)

S = int(SENTINEL)


def test_chunk_layout_hand_example():
    values, refs = _chunk_layout([[10, 11, 12], [20, 21]], c=3, base=100)
    assert values.tolist() == [[10, 11, 12], [11, 12, PAD], [12, PAD, PAD],
                               [20, 21, PAD], [21, PAD, PAD]]
    assert refs.tolist() == [[100, 101, 102], [101, 102, S], [102, S, S],
                             [103, 104, S], [104, S, S]]


@given(st.lists(st.lists(st.integers(4, 50), min_size=1, max_size=9), min_size=1, max_size=6),
       st.integers(1, 6))
@settings(max_examples=100, deadline=None)
def test_chunk_layout_properties(targets, c):
    values, refs = _chunk_layout(targets, c, 0)
    flat = [t for tgt in targets for t in tgt]
    e = 0
    for tgt in targets:
        for pos in range(len(tgt)):
            window = tgt[pos:pos + c]
            assert values[e, :len(window)].tolist() == window
            assert np.all(values[e, len(window):] == PAD)
            assert refs[e, :len(window)].tolist() == list(range(e, e + len(window)))
            assert np.all(refs[e, len(window):] == SENTINEL)
            e += 1
    assert e == len(flat)
    # sliding-window overlap within a sentence
    assert values.shape == (len(flat), c)


# -- PCA ----------------------------------------------------------------------------

def _samples(n=400, d=12, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)) @ rng.standard_normal((d, d))


def test_pca_rows_orthonormal():
    pca = fit_pca(_samples(), 6)
    P = pca.projection.astype(np.float64)
    np.testing.assert_allclose(P @ P.T, np.eye(6), atol=1e-6)


def test_pca_spectrum_matches_dense_eigensolver():
    x = _samples()
    pca = fit_pca(x, 12)
    cov = np.cov(x, rowvar=False)
    ref = scipy.linalg.eigh(cov, eigvals_only=True)[::-1]
    np.testing.assert_allclose(pca.explained_variance, ref, rtol=1e-5, atol=1e-8)


def test_full_rank_pca_preserves_distance_order():
    x = _samples(60, 8, seed=2)
    pca = fit_pca(x, 8)
    y = pca.apply(x).astype(np.float64)
    q = x[0]
    d_full = ((x - q) ** 2).sum(1)
    d_red = ((y - y[0]) ** 2).sum(1)
    np.testing.assert_allclose(d_red, d_full, rtol=1e-4, atol=1e-3)
    assert np.array_equal(np.argsort(d_full, kind="stable")[:20],
                          np.argsort(d_red, kind="stable")[:20])


def test_pca_sign_convention_and_single_vs_batch():
    x = _samples()
    pca = fit_pca(x, 4)
    P = pca.projection
    pivots = np.argmax(np.abs(P), axis=1)
    assert np.all(P[np.arange(4), pivots] > 0)
    batch = pca.apply(x[:50])
    for i in range(50):
        assert np.array_equal(pca.apply(x[i]), batch[i])


def test_pca_errors():
    with pytest.raises(ReducedDimExceedsFull):
        fit_pca(_samples(d=4), 5)
    with pytest.raises(TooFewSamples):
        fit_pca(_samples(n=3), 4)
    with pytest.raises(DimensionMismatch):
        fit_pca(_samples(d=4), 2).apply(np.zeros(5))


# -- build / audit / io ------------------------------------------------------------------

def test_build_structure(small_ds, small_corpus):
    ds = small_ds
    total = sum(len(p.target) for p in small_corpus.in_train)
    assert ds.entry_count == ds.state_count == total
    assert ds.values.shape == (total, 4) and ds.keys.dtype == np.float32
    expect_vals, expect_refs = _chunk_layout([p.target for p in small_corpus.in_train], 4, 0)
    assert np.array_equal(ds.values, expect_vals)
    assert np.array_equal(ds.state_refs, expect_refs)
    # every sentence's last entry is its EOS followed by PAD
    assert np.all(ds.values[ds.values[:, 0] == EOS][:, 1:] == PAD)


def test_keys_recompute_from_model(small_ds, toy_model, small_corpus):
    ds = small_ds
    e = 0
    for pair in small_corpus.in_train[:20]:
        raw = toy_model.forced_states(toy_model.encode(pair.source), pair.target)
        n = len(pair.target)
        assert np.max(np.abs(ds.pca_key.apply(raw) - ds.keys[e:e + n])) <= 1e-6
        assert np.max(np.abs(ds.pca_cache.apply(raw) - ds.state_array[e:e + n])) <= 1e-6
        e += n


def test_save_load_roundtrip_bit_exact(small_ds, tmp_path):
    path = tmp_path / "ds.bin"
    dsmod.save(small_ds, path)
    back = dsmod.load(path)
    assert back == small_ds
    assert back.to_bytes() == small_ds.to_bytes() == path.read_bytes()


def test_corrupt_files(small_ds):
    data = small_ds.to_bytes()
    with pytest.raises(BadMagic):
        dsmod.Datastore.from_bytes(b"NOPE" + data[4:])
    with pytest.raises(TruncatedFile):
        dsmod.Datastore.from_bytes(data[:len(data) // 2])
    bumped = bytearray(data)
    bumped[4] = 99
    with pytest.raises(VersionMismatch):
        dsmod.Datastore.from_bytes(bytes(bumped))


def test_append_examples(small_ds, toy_model):
    extra = [SentencePair([4, 5, 6], [7, 8]), SentencePair([9], [10, 11, 12])]
    grown = dsmod.append_examples(small_ds, toy_model, extra)
    n0 = small_ds.entry_count
    assert grown.entry_count == n0 + 2 + 1 + 3 + 1
    assert grown.epochs == [0, n0]
    assert grown.pca_key == small_ds.pca_key
    assert np.array_equal(grown.keys[:n0], small_ds.keys)
    assert grown.values[n0].tolist() == [7, 8, EOS, PAD]
    assert grown.state_refs[n0].tolist() == [n0, n0 + 1, n0 + 2, S]
    assert small_ds.entry_count == n0  # original untouched
    with pytest.raises(EmptyAppend):
        dsmod.append_examples(small_ds, toy_model, [])


def test_build_errors(toy_model, small_corpus):
    with pytest.raises(EmptyCorpus):
        build_datastore(toy_model, [])
    with pytest.raises(ChunkSizeZero):
        build_datastore(toy_model, small_corpus.in_train[:5], c=0)
    with pytest.raises(ReducedDimExceedsFull):
        build_datastore(toy_model, small_corpus.in_train[:5], d_key=1000)
