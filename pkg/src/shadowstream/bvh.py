"""Median-split bounding volume hierarchy over triangles, flattened to
plain arrays so the numba kernels can traverse it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAF_SIZE = 4


@dataclass
class Bvh:
    """Flat BVH in preorder. For an internal node ``i`` (``count[i] == -1``)
    the left child is ``i + 1`` and ``link[i]`` is the right child index.
    For a leaf (``count[i] >= 0``), ``link[i]`` is the first slot in the
    permuted triangle order and ``count[i]`` the triangle count. ``perm``
    maps permuted slots back to the caller's triangle order."""

    node_min: np.ndarray  # (N, 3) float64
    node_max: np.ndarray  # (N, 3) float64
    link: np.ndarray      # (N,) int32
    count: np.ndarray     # (N,) int32
    perm: np.ndarray      # (M,) int64
    depth: int = field(default=0)


def build_bvh(v0: np.ndarray, v1: np.ndarray, v2: np.ndarray) -> Bvh:
    """Build a median-split BVH. Deterministic for identical input."""
    m = len(v0)
    if m == 0:
        return Bvh(
            node_min=np.full((1, 3), np.inf),
            node_max=np.full((1, 3), -np.inf),
            link=np.zeros(1, dtype=np.int32),
            count=np.zeros(1, dtype=np.int32),
            perm=np.zeros(0, dtype=np.int64),
        )

    tri_min = np.minimum(np.minimum(v0, v1), v2)
    tri_max = np.maximum(np.maximum(v0, v1), v2)
    centroids = (v0 + v1 + v2) / 3.0

    node_min: list[np.ndarray] = []
    node_max: list[np.ndarray] = []
    link: list[int] = []
    count: list[int] = []
    order: list[int] = []
    max_depth = 0

    def rec(idx: np.ndarray, depth: int) -> int:
        nonlocal max_depth
        max_depth = max(max_depth, depth)
        ni = len(link)
        node_min.append(tri_min[idx].min(axis=0))
        node_max.append(tri_max[idx].max(axis=0))
        link.append(0)
        count.append(0)

        halves = None
        if len(idx) > LEAF_SIZE:
            cent = centroids[idx]
            extent = cent.max(axis=0) - cent.min(axis=0)
            axis = int(np.argmax(extent))
            if extent[axis] > 0.0:
                sorted_idx = idx[np.argsort(cent[:, axis], kind="stable")]
                mid = len(sorted_idx) // 2
                halves = (sorted_idx[:mid], sorted_idx[mid:])

        if halves is None:
            # leaf (small, or all centroids coincide)
            link[ni] = len(order)
            count[ni] = len(idx)
            order.extend(int(i) for i in idx)
        else:
            count[ni] = -1
            rec(halves[0], depth + 1)  # left child lands at ni + 1
            link[ni] = rec(halves[1], depth + 1)
        return ni

    rec(np.arange(m, dtype=np.int64), 1)
    return Bvh(
        node_min=np.asarray(node_min, dtype=np.float64),
        node_max=np.asarray(node_max, dtype=np.float64),
        link=np.asarray(link, dtype=np.int32),
        count=np.asarray(count, dtype=np.int32),
        perm=np.asarray(order, dtype=np.int64),
        depth=max_depth,
    )
