import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkstore import datastore as dsmod
from chunkstore import index as ix
from chunkstore.core import SentencePair
from chunkstore.errors import BadMagic, DimensionMismatch, EmptyIndex, TooFewEntries
from chunkstore.index import FlatIndex, IvfIndex, build_ivf, kmeans


def naive_topk(keys, q, k):
    d = [(float(((keys[i].astype(np.float64) - q.astype(np.float64)) ** 2).sum()), i)
         for i in range(len(keys))]
    d.sort()
    return d[:k]


def test_flat_matches_naive_scan():
    rng = np.random.default_rng(0)
    keys = rng.standard_normal((500, 6)).astype(np.float32)
    idx = FlatIndex(keys)
    for q in rng.standard_normal((30, 6)).astype(np.float32):
        got = idx.search(q, 5)
        want = naive_topk(keys, q, 5)
        assert [n.id for n in got] == [i for _, i in want]
        assert [n.distance for n in got] == pytest.approx([d for d, _ in want], rel=1e-12)


def test_flat_large_path_matches_direct(monkeypatch):
    rng = np.random.default_rng(1)
    keys = rng.standard_normal((3000, 8)).astype(np.float32)
    q = rng.standard_normal((20, 8)).astype(np.float32)
    d_direct, i_direct = FlatIndex(keys).search_batch(q, 8)
    monkeypatch.setattr(ix, "_DIRECT_BUDGET", 0)
    d_big, i_big = FlatIndex(keys).search_batch(q, 8)
    assert np.array_equal(i_direct, i_big)
    assert np.array_equal(d_direct, d_big)


def test_ties_break_by_smaller_id():
    keys = np.array([[1, 0], [0, 1], [-1, 0], [0, -1], [5, 5]], dtype=np.float32)
    got = FlatIndex(keys).search(np.zeros(2, np.float32), 3)
    assert [n.id for n in got] == [0, 1, 2]


@given(st.integers(1, 40), st.integers(1, 12), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_flat_result_is_sorted_and_sized(n, k, seed):
    rng = np.random.default_rng(seed)
    keys = rng.integers(-2, 3, (n, 3)).astype(np.float32)  # many ties
    d, i = FlatIndex(keys).search_batch(rng.integers(-2, 3, 3), k)
    assert d.shape == i.shape == (1, min(k, n))
    pairs = list(zip(d[0].tolist(), i[0].tolist()))
    assert pairs == sorted(pairs)
    assert len(set(i[0].tolist())) == i.shape[1]


def test_flat_errors():
    with pytest.raises(EmptyIndex):
        FlatIndex(np.empty((0, 3), np.float32)).search(np.zeros(3), 1)
    with pytest.raises(DimensionMismatch):
        FlatIndex(np.zeros((4, 3), np.float32)).search(np.zeros(2), 1)


def test_kmeans_recovers_separated_blobs():
    rng = np.random.default_rng(0)
    centers = np.array([[0, 0], [20, 0], [0, 20]], dtype=np.float64)
    pts = np.concatenate([c + rng.standard_normal((100, 2)) for c in centers])
    found = kmeans(pts, 3, seed=0)
    for c in centers:
        assert np.min(((found - c) ** 2).sum(1)) < 1.0


def test_ivf_full_probe_equals_flat():
    rng = np.random.default_rng(3)
    keys = rng.standard_normal((2000, 8)).astype(np.float32)
    ivf = build_ivf(keys, n_clusters=20, seed=0)
    q = rng.standard_normal((50, 8)).astype(np.float32)
    fd, fi = FlatIndex(keys).search_batch(q, 8)
    vd, vi = ivf.search_batch(q, 8, nprobe=ivf.n_clusters)
    assert np.array_equal(fi, vi) and np.array_equal(fd, vd)
    assert sorted(np.concatenate(ivf.lists).tolist()) == list(range(2000))


def test_ivf_defaults_and_errors():
    assert ix.default_n_clusters(10_000) == 100
    assert ix.default_nprobe(100) == 10
    assert ix.default_nprobe(5) == 1
    with pytest.raises(TooFewEntries):
        build_ivf(np.zeros((3, 2), np.float32), n_clusters=5)


def test_ivf_serialization_roundtrip(tmp_path, small_ds):
    ivf = build_ivf(small_ds.keys, seed=0)
    path = tmp_path / "ds.bin"
    ix.save_with_index(small_ds, path, ivf)
    ds, back = ix.load_with_index(path, "ivf")
    assert ds == small_ds
    assert np.array_equal(back.centroids, ivf.centroids)
    assert all(np.array_equal(a, b) for a, b in zip(back.lists, ivf.lists))
    assert back.nprobe == ivf.nprobe
    with pytest.raises(BadMagic):
        IvfIndex.from_bytes(b"XXXX", small_ds.keys)


def test_refresh_makes_appended_entries_searchable(small_ds, toy_model):
    extra = [SentencePair([5, 6, 7], [8, 9, 10])]
    grown = dsmod.append_examples(small_ds, toy_model, extra)
    n0 = small_ds.entry_count
    for index in (FlatIndex(small_ds.keys), build_ivf(small_ds.keys, seed=0)):
        fresh = ix.refresh(index, grown)
        assert fresh.size == grown.entry_count
        q = grown.keys[n0 + 1]
        got = fresh.search(q, 1, **({"nprobe": fresh.n_clusters}
                                    if isinstance(fresh, IvfIndex) else {}))
        assert got[0].id == n0 + 1 and got[0].distance == 0.0
