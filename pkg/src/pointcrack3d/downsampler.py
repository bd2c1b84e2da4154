"""
Modified voxel grid sampling

Reduces a voxel's points to exactly n while keeping sparse structure:
the bounding box is split into grid^3 cells, the grid is refined until at
least n cells are occupied, surplus cells are merged into random neighbours,
and each remaining cell contributes the point nearest to its centroid.
Surplus cells are drawn from cells with an occupied neighbour first, so a
point alone in an isolated cell is kept.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from pointcrack3d.errors import InsufficientDistinctPointsError, InsufficientPointsError

logger = logging.getLogger(__name__)

Cell = Tuple[int, int, int]

NEIGHBOUR_OFFSETS = np.array([o for o in itertools.product((-1, 0, 1), repeat=3) if any(o)],
                             dtype=np.int64)


@dataclass
class CellGroup:
    """Occupied grid cell, possibly grown by absorbing neighbouring cells"""
    cell: Cell
    member_ids: np.ndarray
    merged_from: List[Cell] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.member_ids)


def integer_cube_root(n: int) -> int:
    """floor(n ** (1/3)) without floating point surprises"""
    root = int(round(n ** (1.0 / 3.0)))
    while root ** 3 > n:
        root -= 1
    while (root + 1) ** 3 <= n:
        root += 1
    return root


def cell_indices(positions: np.ndarray, grid: int) -> np.ndarray:
    """Per-axis cell index of each point for a grid x grid x grid split of the bounding box"""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    low = positions.min(axis=0)
    extent = positions.max(axis=0) - low
    scale = np.divide(grid, extent, out=np.zeros(3), where=extent > 0)
    index = np.floor((positions - low) * scale).astype(np.int64)
    return np.clip(index, 0, grid - 1)


def cell_partition(positions: np.ndarray, ids: np.ndarray, grid: int) -> List[CellGroup]:
    """One CellGroup per occupied cell, ordered by cell index; members sorted by id"""
    if grid < 1:
        raise ValueError("grid must be >= 1")
    ids = np.asarray(ids, dtype=np.int64)
    if not len(ids):
        raise ValueError("cell_partition needs at least one point")

    index = cell_indices(positions, grid)
    cells, inverse = np.unique(index, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.lexsort((ids, inverse))
    bounds = np.searchsorted(inverse[order], np.arange(len(cells) + 1))
    return [
        CellGroup(tuple(cell), ids[order[bounds[k]:bounds[k + 1]]])
        for k, cell in enumerate(cells.tolist())
    ]


def has_occupied_neighbour(groups: Sequence[CellGroup]) -> np.ndarray:
    """Per group: is any of its 26 lattice neighbours occupied"""
    cells = np.array([g.cell for g in groups], dtype=np.int64).reshape(-1, 3) + 1
    base = int(cells.max()) + 2

    def encode(c: np.ndarray) -> np.ndarray:
        return (c[..., 0] * base + c[..., 1]) * base + c[..., 2]

    around = encode(cells[:, None, :] + NEIGHBOUR_OFFSETS[None, :, :])
    return np.isin(around, encode(cells)).any(axis=1)


def _choose_surplus(groups: List[CellGroup], surplus: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Surplus groups drawn uniformly from those with an occupied neighbour; isolated
    groups are drawn only once every crowded group is taken"""
    crowded = has_occupied_neighbour(groups)
    dense, lonely = np.flatnonzero(crowded), np.flatnonzero(~crowded)
    if surplus <= len(dense):
        return rng.choice(dense, size=surplus, replace=False)
    extra = rng.choice(lonely, size=surplus - len(dense), replace=False)
    return np.concatenate([dense, extra])


def _merge_surplus(groups: List[CellGroup], n: int, rng: np.random.Generator) -> List[CellGroup]:
    """Merge (len(groups) - n) randomly chosen groups into random eligible neighbours"""
    surplus = len(groups) - n
    selected = _choose_surplus(groups, surplus, rng)
    selected_mask = np.zeros(len(groups), dtype=bool)
    selected_mask[selected] = True

    targets = np.flatnonzero(~selected_mask)
    target_cells = np.array([groups[t].cell for t in targets], dtype=np.int64)
    absorbed: dict = {int(t): [] for t in targets}

    for s in selected.tolist():
        # Nearest Chebyshev ring holding any non-selected group
        ring = np.max(np.abs(target_cells - np.array(groups[s].cell)), axis=1)
        candidates = targets[ring == ring.min()]
        chosen = int(candidates[rng.integers(len(candidates))])
        absorbed[chosen].append(s)

    merged = []
    for t in targets.tolist():
        base = groups[t]
        if not absorbed[t]:
            merged.append(base)
            continue
        members = np.concatenate([base.member_ids] + [groups[s].member_ids for s in absorbed[t]])
        merged.append(CellGroup(base.cell, np.sort(members),
                                [groups[s].cell for s in absorbed[t]]))
    logger.debug(f"Merged {surplus} surplus cells into {len(merged)} groups")
    return merged


def downsample_groups(positions: np.ndarray, ids: np.ndarray, n: int,
                      seed: Optional[int] = None) -> List[CellGroup]:
    """Grid refinement and merge phases; returns exactly n groups"""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) < n:
        raise InsufficientPointsError(f"Need {n} points, got {len(ids)}")
    distinct = len(np.unique(positions, axis=0))
    if distinct < n:
        raise InsufficientDistinctPointsError(f"Need {n} distinct positions, got {distinct}")

    grid = max(1, integer_cube_root(n))
    groups = cell_partition(positions, ids, grid)
    while len(groups) < n:
        grid += 1
        groups = cell_partition(positions, ids, grid)

    if len(groups) > n:
        groups = _merge_surplus(groups, n, np.random.default_rng(seed))
    return groups


def centroid_nearest(positions: np.ndarray, ids: np.ndarray, group: CellGroup) -> int:
    """Member closest to the group centroid; ties go to the lowest id"""
    rows = np.searchsorted(ids, group.member_ids)
    points = positions[rows]
    centroid = points.mean(axis=0)
    dist2 = np.sum((points - centroid) ** 2, axis=1)
    best = np.lexsort((group.member_ids, dist2))[0]
    return int(group.member_ids[best])


def downsample(positions: np.ndarray, ids: Sequence[int], n: int,
               seed: Optional[int] = None) -> np.ndarray:
    """Crack-preserving reduction to exactly n point ids (sorted ascending)"""
    ids = np.asarray(ids, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    order = np.argsort(ids, kind="stable")
    ids, positions = ids[order], positions[order]

    groups = downsample_groups(positions, ids, n, seed)
    chosen = np.array([centroid_nearest(positions, ids, g) for g in groups], dtype=np.int64)
    return np.sort(chosen)
