"""Forest of random-projection trees with an exhaustive overflow table.

Each internal node stores the indices of the two sampled points whose
perpendicular bisector is the split plane, so hyperplanes are derived from
the item matrix instead of being stored per node.  Search pops nodes from a
single priority queue shared by all trees; the budget counts pops.  Items
added after a build live in the overflow table and are scanned exhaustively
on every search, so they are visible immediately.  Candidate distances are
always recomputed exactly before the final ranking.
"""

from __future__ import annotations

import heapq
import io
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .snapio import read_blob, write_blob
from .vectors import Descriptor, DimensionMismatch, MetricMismatch, distances_to

DEFAULT_N_TREES = 100
DEFAULT_MAX_NODES = 1000
DEFAULT_LEAF_CAPACITY = 16

_SNAPSHOT_MAGIC = b"ANNF"
_SNAPSHOT_VERSION = 1


class AnnError(ValueError):
    """Base class for index errors."""


class EmptyIndex(AnnError):
    """build() was given no items."""


class EmptyStore(AnnError):
    """Neither the forest nor the overflow table holds any items."""


class HeterogeneousItems(AnnError):
    """Items do not share a dimension or metric."""


class DuplicateId(AnnError):
    """Item id already present in the store."""


@dataclass(frozen=True)
class RankedHit:
    prototype_id: int
    distance: float


class _Tree:
    """Flat-array projection tree over row positions of the item matrix."""

    __slots__ = ("point_a", "point_b", "offsets", "left", "right", "leaves")

    def __init__(self) -> None:
        self.point_a: list[int] = []
        self.point_b: list[int] = []
        self.offsets: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaves: list[np.ndarray] = []

    def node_count(self) -> int:
        return len(self.left)


def _grow(
    tree: _Tree,
    x: np.ndarray,
    sqnorms: np.ndarray,
    rows: np.ndarray,
    leaf_capacity: int,
    rng: np.random.Generator,
) -> int:
    """Recursively split ``rows``; returns the new node's index."""
    node = tree.node_count()
    tree.point_a.append(-1)
    tree.point_b.append(-1)
    tree.offsets.append(0.0)
    tree.left.append(-1)
    tree.right.append(-1)

    if rows.shape[0] > leaf_capacity:
        for _ in range(3):
            pick = rng.choice(rows.shape[0], size=2, replace=False)
            a, b = int(rows[pick[0]]), int(rows[pick[1]])
            normal = x[a] - x[b]
            if not normal.any():
                continue  # duplicate points, resample
            offset = 0.5 * (sqnorms[a] - sqnorms[b])
            side = x[rows] @ normal - offset
            left_rows = rows[side < 0]
            right_rows = rows[side > 0]
            on_plane = rows[side == 0]
            if on_plane.size:
                if left_rows.size <= right_rows.size:
                    left_rows = np.concatenate([left_rows, on_plane])
                else:
                    right_rows = np.concatenate([right_rows, on_plane])
            if left_rows.size and right_rows.size:
                tree.point_a[node] = a
                tree.point_b[node] = b
                tree.offsets[node] = float(offset)
                tree.left[node] = _grow(tree, x, sqnorms, left_rows, leaf_capacity, rng)
                tree.right[node] = _grow(tree, x, sqnorms, right_rows, leaf_capacity, rng)
                return node

    # Leaf: capacity reached, or the points are indistinguishable.
    tree.point_a[node] = -1
    tree.left[node] = -1
    tree.right[node] = -(len(tree.leaves) + 2)  # encoded leaf reference
    tree.leaves.append(np.sort(rows).astype(np.int32))
    return node


class AnnForest:
    """Immutable built forest over a fixed item matrix."""

    def __init__(
        self,
        ids: np.ndarray,
        items: np.ndarray,
        metric: str,
        trees: list[_Tree],
        n_trees: int,
        leaf_capacity: int,
        seed: int,
    ) -> None:
        self.ids = ids
        self.items = items
        self.metric = metric
        self.trees = trees
        self.n_trees = n_trees
        self.leaf_capacity = leaf_capacity
        self.seed = seed
        self.sqnorms = np.einsum("ij,ij->i", items, items)

    @property
    def dim(self) -> int:
        return int(self.items.shape[1])

    def __len__(self) -> int:
        return int(self.ids.shape[0])


def build(
    items: list[tuple[int, Descriptor]],
    n_trees: int = DEFAULT_N_TREES,
    leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
    seed: int = 0,
) -> AnnForest:
    """Build a deterministic forest over ``(id, descriptor)`` pairs."""
    if not items:
        raise EmptyIndex("cannot build a forest from zero items")
    if n_trees < 1 or leaf_capacity < 1:
        raise AnnError("n_trees and leaf_capacity must be positive")
    ids = np.array([i for i, _ in items], dtype=np.int64)
    if len(set(ids.tolist())) != ids.shape[0]:
        raise DuplicateId("duplicate prototype ids in build input")
    dims = {d.dim for _, d in items}
    metrics = {d.metric for _, d in items}
    if len(dims) != 1 or len(metrics) != 1:
        raise HeterogeneousItems(f"mixed dims {dims} or metrics {metrics}")
    x = np.stack([d.values for _, d in items]).astype(np.float64)
    sqnorms = np.einsum("ij,ij->i", x, x)
    metric = next(iter(metrics))

    rng = np.random.default_rng(seed)
    trees: list[_Tree] = []
    all_rows = np.arange(x.shape[0])
    for _ in range(n_trees):
        tree = _Tree()
        _grow(tree, x, sqnorms, all_rows, leaf_capacity, rng)
        trees.append(tree)
    return AnnForest(ids, x, metric, trees, n_trees, leaf_capacity, seed)


def _candidate_rows(forest: AnnForest, q: np.ndarray, max_nodes: int | None) -> np.ndarray:
    """Rows reachable by the budgeted priority traversal across all trees."""
    heap: list[tuple[float, int, int, int]] = []
    counter = 0
    for t in range(len(forest.trees)):
        heap.append((-np.inf, counter, t, 0))
        counter += 1
    heapq.heapify(heap)

    budget = np.inf if max_nodes is None else max_nodes
    rows: list[np.ndarray] = []
    trees = forest.trees
    items = forest.items
    while heap and budget > 0:
        neg_priority, _, t, node = heapq.heappop(heap)
        budget -= 1
        tree = trees[t]
        if tree.left[node] == -1:
            rows.append(tree.leaves[-tree.right[node] - 2])
            continue
        a = tree.point_a[node]
        b = tree.point_b[node]
        margin = float(q @ items[a] - q @ items[b]) - tree.offsets[node]
        parent = -neg_priority
        counter += 1
        heapq.heappush(heap, (-min(parent, -margin), counter, t, tree.left[node]))
        counter += 1
        heapq.heappush(heap, (-min(parent, margin), counter, t, tree.right[node]))
    if not rows:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(rows)).astype(np.int64)


class AnnIndex:
    """Forest plus overflow table with a single-writer concurrency contract.

    Readers (``search``) take atomic references to the current forest and an
    immutable overflow tuple; ``add``/``rebuild`` serialize on a lock and
    swap state only when fully constructed.
    """

    def __init__(
        self,
        dim: int,
        metric: str = "euclidean",
        n_trees: int = DEFAULT_N_TREES,
        max_nodes: int = DEFAULT_MAX_NODES,
        leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
        seed: int = 0,
    ) -> None:
        self.dim = dim
        self.metric = metric
        self.n_trees = n_trees
        self.max_nodes = max_nodes
        self.leaf_capacity = leaf_capacity
        self.seed = seed
        self._forest: AnnForest | None = None
        self._overflow: tuple[tuple[int, np.ndarray], ...] = ()
        self._known_ids: set[int] = set()
        # Reentrant: the recognition engine nests its writes around add().
        self._write_lock = threading.RLock()

    # -- construction ---------------------------------------------------

    @classmethod
    def from_items(
        cls,
        items: list[tuple[int, Descriptor]],
        n_trees: int = DEFAULT_N_TREES,
        max_nodes: int = DEFAULT_MAX_NODES,
        leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
        seed: int = 0,
    ) -> "AnnIndex":
        forest = build(items, n_trees=n_trees, leaf_capacity=leaf_capacity, seed=seed)
        index = cls(
            forest.dim,
            forest.metric,
            n_trees=n_trees,
            max_nodes=max_nodes,
            leaf_capacity=leaf_capacity,
            seed=seed,
        )
        index._forest = forest
        index._known_ids = set(forest.ids.tolist())
        return index

    # -- introspection ---------------------------------------------------

    def __len__(self) -> int:
        forest = self._forest
        return (len(forest) if forest else 0) + len(self._overflow)

    @property
    def indexed_ids(self) -> set[int]:
        forest = self._forest
        return set(forest.ids.tolist()) if forest else set()

    @property
    def overflow_size(self) -> int:
        return len(self._overflow)

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._known_ids

    # -- mutation ---------------------------------------------------------

    def _check_descriptor(self, d: Descriptor) -> None:
        if d.dim != self.dim:
            raise DimensionMismatch(f"expected dim {self.dim}, got {d.dim}")
        if d.metric != self.metric:
            raise MetricMismatch(f"expected metric {self.metric}, got {d.metric}")

    def add(self, item_id: int, d: Descriptor) -> None:
        """Append to the overflow table; immediately visible to search."""
        self._check_descriptor(d)
        with self._write_lock:
            if item_id in self._known_ids:
                raise DuplicateId(f"id {item_id} already stored")
            self._overflow = self._overflow + ((int(item_id), d.values),)
            self._known_ids.add(int(item_id))

    def rebuild(self, seed: int | None = None) -> int:
        """Fold the overflow into a fresh forest; returns drained item count."""
        with self._write_lock:
            forest = self._forest
            overflow = self._overflow
            if forest is None and not overflow:
                raise EmptyStore("nothing to rebuild")
            items: list[tuple[int, Descriptor]] = []
            if forest is not None:
                for row in range(len(forest)):
                    items.append(
                        (
                            int(forest.ids[row]),
                            Descriptor(forest.items[row], metric=self.metric),
                        )
                    )
            for item_id, values in overflow:
                items.append((item_id, Descriptor(values, metric=self.metric)))
            if seed is not None:
                self.seed = seed
            new_forest = build(
                items,
                n_trees=self.n_trees,
                leaf_capacity=self.leaf_capacity,
                seed=self.seed,
            )
            drained = len(overflow)
            self._forest = new_forest
            self._overflow = ()
            return drained

    # -- search -----------------------------------------------------------

    def search(
        self,
        q: Descriptor,
        k: int,
        max_nodes: int | None = -1,
    ) -> list[RankedHit]:
        """Top-k by true distance over forest candidates plus the overflow.

        ``max_nodes=-1`` uses the configured budget; ``None`` is unbounded.
        """
        if k < 1:
            raise AnnError("k must be at least 1")
        self._check_descriptor(q)
        if max_nodes == -1:
            max_nodes = self.max_nodes
        forest = self._forest
        overflow = self._overflow
        if (forest is None or len(forest) == 0) and not overflow:
            raise EmptyStore("no items to search")

        ids_parts: list[np.ndarray] = []
        dist_parts: list[np.ndarray] = []
        if forest is not None and len(forest) > 0:
            rows = _candidate_rows(forest, q.values, max_nodes)
            if rows.size:
                ids_parts.append(forest.ids[rows])
                dist_parts.append(distances_to(forest.items[rows], q.values, self.metric))
        if overflow:
            o_ids = np.array([i for i, _ in overflow], dtype=np.int64)
            o_mat = np.stack([v for _, v in overflow])
            ids_parts.append(o_ids)
            dist_parts.append(distances_to(o_mat, q.values, self.metric))

        if not ids_parts:
            return []  # budget too small to reach any leaf, and no overflow
        all_ids = np.concatenate(ids_parts)
        all_dists = np.concatenate(dist_parts)
        order = np.lexsort((all_ids, all_dists))
        top = order[:k]
        return [RankedHit(int(all_ids[i]), float(all_dists[i])) for i in top]

    # -- snapshots ----------------------------------------------------------

    def save_snapshot(self, path: str) -> None:
        forest = self._forest
        overflow = self._overflow
        buf = io.BytesIO()
        metric_bytes = self.metric.encode("utf-8")
        buf.write(
            struct.pack(
                "<IIB",
                self.dim,
                len(metric_bytes),
                1 if forest is not None else 0,
            )
        )
        buf.write(metric_bytes)
        buf.write(
            struct.pack(
                "<IIIq",
                self.n_trees,
                self.max_nodes,
                self.leaf_capacity,
                self.seed,
            )
        )
        if forest is not None:
            buf.write(struct.pack("<Q", len(forest)))
            buf.write(forest.ids.tobytes())
            buf.write(forest.items.tobytes())
            buf.write(struct.pack("<I", len(forest.trees)))
            for tree in forest.trees:
                n = tree.node_count()
                buf.write(struct.pack("<I", n))
                buf.write(np.asarray(tree.point_a, dtype=np.int32).tobytes())
                buf.write(np.asarray(tree.point_b, dtype=np.int32).tobytes())
                buf.write(np.asarray(tree.offsets, dtype=np.float64).tobytes())
                buf.write(np.asarray(tree.left, dtype=np.int32).tobytes())
                buf.write(np.asarray(tree.right, dtype=np.int32).tobytes())
                buf.write(struct.pack("<I", len(tree.leaves)))
                for leaf in tree.leaves:
                    buf.write(struct.pack("<I", leaf.shape[0]))
                    buf.write(leaf.astype(np.int32).tobytes())
        buf.write(struct.pack("<Q", len(overflow)))
        for item_id, values in overflow:
            buf.write(struct.pack("<q", item_id))
            buf.write(np.asarray(values, dtype=np.float64).tobytes())
        write_blob(path, _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION, buf.getvalue())

    @classmethod
    def load_snapshot(cls, path: str) -> "AnnIndex":
        payload = read_blob(path, _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION)
        view = memoryview(payload)
        pos = 0

        def take(fmt: str) -> tuple:
            nonlocal pos
            s = struct.Struct(fmt)
            out = s.unpack_from(view, pos)
            pos += s.size
            return out

        def take_array(dtype: np.dtype, count: int) -> np.ndarray:
            nonlocal pos
            nbytes = int(np.dtype(dtype).itemsize) * count
            arr = np.frombuffer(view[pos : pos + nbytes], dtype=dtype).copy()
            pos += nbytes
            return arr

        dim, metric_len, has_forest = take("<IIB")
        metric = bytes(view[pos : pos + metric_len]).decode("utf-8")
        pos += metric_len
        n_trees, max_nodes, leaf_capacity, seed = take("<IIIq")
        index = cls(
            dim,
            metric,
            n_trees=n_trees,
            max_nodes=max_nodes,
            leaf_capacity=leaf_capacity,
            seed=seed,
        )
        if has_forest:
            (count,) = take("<Q")
            ids = take_array(np.int64, count)
            items = take_array(np.float64, count * dim).reshape(count, dim)
            (tree_count,) = take("<I")
            trees: list[_Tree] = []
            for _ in range(tree_count):
                (n,) = take("<I")
                tree = _Tree()
                tree.point_a = take_array(np.int32, n).tolist()
                tree.point_b = take_array(np.int32, n).tolist()
                tree.offsets = take_array(np.float64, n).tolist()
                tree.left = take_array(np.int32, n).tolist()
                tree.right = take_array(np.int32, n).tolist()
                (leaf_count,) = take("<I")
                for _ in range(leaf_count):
                    (leaf_len,) = take("<I")
                    tree.leaves.append(take_array(np.int32, leaf_len))
                trees.append(tree)
            index._forest = AnnForest(
                ids, items, metric, trees, n_trees, leaf_capacity, seed
            )
            index._known_ids = set(ids.tolist())
        (overflow_count,) = take("<Q")
        overflow = []
        for _ in range(overflow_count):
            (item_id,) = take("<q")
            values = take_array(np.float64, dim)
            overflow.append((int(item_id), values))
            index._known_ids.add(int(item_id))
        index._overflow = tuple(overflow)
        return index
