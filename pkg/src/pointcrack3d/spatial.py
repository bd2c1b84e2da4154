"""
Uniform-grid spatial hash

Points are binned into cubic cells of edge `cell_size`; any two points closer
than `cell_size` lie in the same or adjacent cells, so radius queries only look
at the 27 cells around a point.
"""

import itertools
import logging
from typing import Dict, Tuple

import numpy as np

logger = logging.getLogger(__name__)

NEIGHBOUR_OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)


class SpatialHash:
    """Cell index -> point rows lookup over an (N, 3) array"""

    def __init__(self, positions: np.ndarray, cell_size: float):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        self.cell_size = float(cell_size)
        self.keys = np.floor(self.positions / self.cell_size).astype(np.int64)
        self.cells: Dict[Tuple[int, int, int], np.ndarray] = {}

        if len(self.positions):
            unique, inverse = np.unique(self.keys, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            order = np.argsort(inverse, kind="stable")
            bounds = np.searchsorted(inverse[order], np.arange(len(unique) + 1))
            for k, key in enumerate(map(tuple, unique.tolist())):
                self.cells[key] = order[bounds[k]:bounds[k + 1]]
        logger.debug(f"Spatial hash: {len(self.positions)} points in {len(self.cells)} cells")

    def _neighbourhood(self, key: Tuple[int, int, int]) -> np.ndarray:
        rows = [self.cells.get((key[0] + dx, key[1] + dy, key[2] + dz))
                for dx, dy, dz in NEIGHBOUR_OFFSETS.tolist()]
        rows = [r for r in rows if r is not None]
        if not rows:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(rows)

    def pairs_within(self, radius: float, strict: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        """All row pairs (i < j) with distance < radius (<= when strict is False)

        radius must not exceed the cell size.
        """
        if radius > self.cell_size:
            raise ValueError("radius larger than cell size")
        limit = radius * radius
        first, second = [], []
        for key, members in self.cells.items():
            candidates = self._neighbourhood(key)
            delta = self.positions[members][:, None, :] - self.positions[candidates][None, :, :]
            dist2 = np.einsum("ijk,ijk->ij", delta, delta)
            close = dist2 < limit if strict else dist2 <= limit
            i, j = np.nonzero(close)
            a, b = members[i], candidates[j]
            keep = a < b
            first.append(a[keep])
            second.append(b[keep])
        if not first:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate(first), np.concatenate(second)

    def any_within(self, queries: np.ndarray, radius: float) -> np.ndarray:
        """Boolean mask: does each query point have a hashed point at distance <= radius"""
        if radius > self.cell_size:
            raise ValueError("radius larger than cell size")
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        hit = np.zeros(len(queries), dtype=bool)
        if not len(queries) or not self.cells:
            return hit
        limit = radius * radius
        query_hash = SpatialHash(queries, self.cell_size)
        for key, rows in query_hash.cells.items():
            candidates = self._neighbourhood(key)
            if not len(candidates):
                continue
            delta = queries[rows][:, None, :] - self.positions[candidates][None, :, :]
            dist2 = np.einsum("ijk,ijk->ij", delta, delta)
            hit[rows] = np.any(dist2 <= limit, axis=1)
        return hit
