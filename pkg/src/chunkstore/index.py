"""Top-k squared-L2 search over datastore keys: exact flat scan and an IVF index.

Both paths finish by recomputing candidate distances exactly in float64 from
the stored float32 keys and ordering by (distance, entry id), so an IVF that
probes every cluster returns exactly what the flat scan returns.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datastore as dsmod
from .errors import BadMagic, DimensionMismatch, EmptyIndex, TooFewEntries, TruncatedFile

IVF_MAGIC = b"CKIV"
_DIRECT_BUDGET = 20_000_000  # elements touched by a direct (difference-based) scan
_MARGIN = 32


@dataclass(frozen=True)
class Neighbor:
    id: int
    distance: float
    key: np.ndarray


def exact_sq_dists(keys: np.ndarray, query: np.ndarray) -> np.ndarray:
    diff = keys.astype(np.float64) - query.astype(np.float64)[None, :]
    return np.einsum("ij,ij->i", diff, diff)


def _order(dists: np.ndarray, ids: np.ndarray, k: int):
    if dists.size > k:
        # cheap pre-cut, keeping everything tied with the k-th distance
        kth = np.partition(dists, k - 1)[k - 1]
        keep = dists <= kth
        dists, ids = dists[keep], ids[keep]
    order = np.lexsort((ids, dists))[:k]
    return dists[order], ids[order]


def _check_query(queries: np.ndarray, d: int) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float32)
    if queries.ndim == 1:
        queries = queries[None, :]
    if queries.shape[1] != d:
        raise DimensionMismatch(f"query dim {queries.shape[1]} != key dim {d}")
    return queries


class FlatIndex:
    """Exact scan over every key."""

    def __init__(self, keys: np.ndarray):
        self.keys = keys
        self._norms = None

    @property
    def size(self) -> int:
        return self.keys.shape[0]

    @property
    def dim(self) -> int:
        return self.keys.shape[1]

    def _key_norms(self) -> np.ndarray:
        if self._norms is None or self._norms.shape[0] != self.size:
            k32 = self.keys.astype(np.float32)
            self._norms = np.einsum("ij,ij->i", k32, k32)
        return self._norms

    def search_batch(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Returns (distances, ids), each (n_queries, min(k, size)), ascending."""
        if self.size == 0:
            raise EmptyIndex("index holds no entries")
        if k < 1:
            raise ValueError("k must be >= 1")
        queries = _check_query(queries, self.dim)
        n, nq = self.size, queries.shape[0]
        kk = min(k, n)
        out_d = np.empty((nq, kk))
        out_i = np.empty((nq, kk), dtype=np.int64)
        all_ids = np.arange(n)
        if n * self.dim <= _DIRECT_BUDGET:
            for qi, q in enumerate(queries):
                out_d[qi], out_i[qi] = _order(exact_sq_dists(self.keys, q), all_ids, kk)
            return out_d, out_i
        # large index: float32 expansion to shortlist, exact float64 refinement
        approx = self._key_norms()[None, :] - 2.0 * (queries @ self.keys.T)
        m = min(n, kk + _MARGIN)
        cand = np.argpartition(approx, m - 1, axis=1)[:, :m]
        for qi, q in enumerate(queries):
            ids = cand[qi]
            out_d[qi], out_i[qi] = _order(exact_sq_dists(self.keys[ids], q), ids, kk)
        return out_d, out_i

    def search(self, query, k: int) -> list[Neighbor]:
        d, i = self.search_batch(query, k)
        return [Neighbor(int(e), float(x), self.keys[e]) for x, e in zip(d[0], i[0])]


class IvfIndex:
    """Inverted file: coarse k-means centroids, one id list per cluster."""

    def __init__(self, keys: np.ndarray, centroids: np.ndarray, lists: list[np.ndarray],
                 nprobe: int, seed: int = 0):
        self.keys = keys
        self.centroids = centroids.astype(np.float32)
        self.lists = lists
        self.nprobe = nprobe
        self.seed = seed

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def size(self) -> int:
        return int(sum(len(lst) for lst in self.lists))

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def probe_order(self, query: np.ndarray) -> np.ndarray:
        dists = exact_sq_dists(self.centroids, query)
        return np.lexsort((np.arange(self.n_clusters), dists))

    def search_batch(self, queries, k: int, nprobe: int | None = None):
        if self.size == 0:
            raise EmptyIndex("index holds no entries")
        if k < 1:
            raise ValueError("k must be >= 1")
        queries = _check_query(queries, self.dim)
        nprobe = min(nprobe or self.nprobe, self.n_clusters)
        rows_d, rows_i = [], []
        for q in queries:
            probed = self.probe_order(q)[:nprobe]
            ids = np.concatenate([self.lists[c] for c in probed])
            if ids.size == 0:
                rows_d.append(np.empty(0))
                rows_i.append(np.empty(0, dtype=np.int64))
                continue
            d, i = _order(exact_sq_dists(self.keys[ids], q), ids, min(k, ids.size))
            rows_d.append(d)
            rows_i.append(i)
        width = min(k, self.size)
        out_d = np.full((len(rows_d), width), np.inf)
        out_i = np.full((len(rows_d), width), -1, dtype=np.int64)
        for r, (d, i) in enumerate(zip(rows_d, rows_i)):
            out_d[r, :d.size] = d
            out_i[r, :i.size] = i
        return out_d, out_i

    def search(self, query, k: int, nprobe: int | None = None) -> list[Neighbor]:
        d, i = self.search_batch(query, k, nprobe)
        return [Neighbor(int(e), float(x), self.keys[e]) for x, e in zip(d[0], i[0]) if e >= 0]

    def to_bytes(self) -> bytes:
        parts = [IVF_MAGIC, struct.pack("<IIIQ", self.n_clusters, self.nprobe, self.dim,
                                        self.size),
                 self.centroids.astype("<f4").tobytes()]
        for lst in self.lists:
            parts.append(struct.pack("<Q", len(lst)))
            parts.append(np.asarray(lst, dtype="<u8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, keys: np.ndarray) -> "IvfIndex":
        if data[:4] != IVF_MAGIC:
            raise BadMagic(f"expected {IVF_MAGIC!r}, got {data[:4]!r}")
        head = struct.calcsize("<IIIQ")
        if len(data) < 4 + head:
            raise TruncatedFile("IVF header")
        n_clusters, nprobe, dim, _ = struct.unpack_from("<IIIQ", data, 4)
        off = 4 + head
        nbytes = n_clusters * dim * 4
        if len(data) < off + nbytes:
            raise TruncatedFile("IVF centroids")
        centroids = np.frombuffer(data, "<f4", n_clusters * dim, off).reshape(n_clusters, dim)
        off += nbytes
        lists = []
        for _ in range(n_clusters):
            if len(data) < off + 8:
                raise TruncatedFile("IVF list header")
            (n,) = struct.unpack_from("<Q", data, off)
            off += 8
            if len(data) < off + 8 * n:
                raise TruncatedFile("IVF list body")
            lists.append(np.frombuffer(data, "<u8", n, off).astype(np.int64))
            off += 8 * n
        return cls(keys, centroids.astype(np.float32), lists, nprobe)


def _sq_dists_to(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    p = points.astype(np.float64)
    c = centers.astype(np.float64)
    d = (p * p).sum(1)[:, None] - 2.0 * p @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _assign(points: np.ndarray, centers: np.ndarray, block: int = 65536):
    labels = np.empty(points.shape[0], dtype=np.int64)
    best = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], block):
        d = _sq_dists_to(points[lo:lo + block], centers)
        labels[lo:lo + block] = np.argmin(d, axis=1)
        best[lo:lo + block] = d[np.arange(d.shape[0]), labels[lo:lo + block]]
    return labels, best


def kmeans(points: np.ndarray, n_clusters: int, seed: int = 0, iters: int = 20) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; empty clusters take the farthest points."""
    rng = np.random.default_rng(seed)
    pts = points.astype(np.float64)
    n = pts.shape[0]
    centers = np.empty((n_clusters, pts.shape[1]))
    centers[0] = pts[rng.integers(n)]
    closest = ((pts - centers[0]) ** 2).sum(1)
    for j in range(1, n_clusters):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = pts[idx]
        closest = np.minimum(closest, ((pts - centers[j]) ** 2).sum(1))
    for _ in range(iters):
        labels, best = _assign(pts, centers)
        counts = np.bincount(labels, minlength=n_clusters)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, pts)
        new = centers.copy()
        nonempty = counts > 0
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.nonzero(~nonempty)[0]
        if empty.size:
            far = np.argsort(-best, kind="stable")[:empty.size]
            new[empty] = pts[far]
        if np.array_equal(new, centers):
            break
        centers = new
    return centers


def default_n_clusters(entry_count: int) -> int:
    return max(1, math.ceil(math.sqrt(entry_count)))


def default_nprobe(n_clusters: int) -> int:
    return max(1, n_clusters // 10)


def build_ivf(keys: np.ndarray, n_clusters: int | None = None, seed: int = 0,
              kmeans_iters: int = 20, nprobe: int | None = None,
              train_per_cluster: int = 256) -> IvfIndex:
    n = keys.shape[0]
    n_clusters = n_clusters or default_n_clusters(n)
    if n < n_clusters:
        raise TooFewEntries(f"{n} entries for {n_clusters} clusters")
    rng = np.random.default_rng(seed)
    train = keys
    cap = n_clusters * train_per_cluster
    if n > cap:
        train = keys[np.sort(rng.choice(n, size=cap, replace=False))]
    centroids = kmeans(train, n_clusters, seed=seed, iters=kmeans_iters).astype(np.float32)
    labels, _ = _assign(keys, centroids)
    lists = _bucket(labels, n_clusters, 0)
    return IvfIndex(keys, centroids, lists, nprobe or default_nprobe(n_clusters), seed)


def _bucket(labels: np.ndarray, n_clusters: int, base: int) -> list[np.ndarray]:
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n_clusters + 1))
    return [(order[bounds[c]:bounds[c + 1]] + base).astype(np.int64) for c in range(n_clusters)]


def refresh(index, ds: dsmod.Datastore):
    """Make entries appended to ``ds`` since the index was built searchable."""
    if isinstance(index, FlatIndex):
        if index.keys is ds.keys:
            return index
        return FlatIndex(ds.keys)
    covered = index.size
    if covered == ds.entry_count:
        return index
    new_keys = ds.keys[covered:]
    labels, _ = _assign(new_keys, index.centroids)
    extra = _bucket(labels, index.n_clusters, covered)
    lists = [np.concatenate([a, b]) for a, b in zip(index.lists, extra)]
    return IvfIndex(ds.keys, index.centroids, lists, index.nprobe, index.seed)


def make_index(ds: dsmod.Datastore, kind: str = "flat", n_clusters: int | None = None,
               nprobe: int | None = None, seed: int = 0):
    if kind == "flat":
        return FlatIndex(ds.keys)
    if kind == "ivf":
        return build_ivf(ds.keys, n_clusters, seed=seed, nprobe=nprobe)
    raise ValueError(f"unknown index kind {kind!r}")


def save_with_index(ds: dsmod.Datastore, path, index=None) -> None:
    trailer = index.to_bytes() if isinstance(index, IvfIndex) else b""
    dsmod.save(ds, path, trailer)


def load_with_index(path, kind: str = "flat", nprobe: int | None = None, seed: int = 0):
    """Load a datastore and an index over it.

    For ``kind="ivf"`` the persisted IVF section is used when present,
    otherwise one is built.
    """
    ds, trailer = dsmod.Datastore.from_bytes(Path(path).read_bytes())
    if kind == "flat":
        return ds, FlatIndex(ds.keys)
    if trailer[:4] == IVF_MAGIC:
        index = refresh(IvfIndex.from_bytes(trailer, ds.keys), ds)
    else:
        index = build_ivf(ds.keys, seed=seed)
    if nprobe:
        index.nprobe = nprobe
    return ds, index
