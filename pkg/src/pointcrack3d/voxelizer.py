"""
Sliding cubic windows over a cloud

Voxel origins sit on the lattice bbox_min + k * s (per axis). Membership is
computed in lattice units u = (p - bbox_min) / s, where voxel k holds
k <= u < k + d / s; for s = d this is exactly floor(u) == k, so windows
partition the cloud.
"""

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from pointcrack3d.cloud_io import AnnotationLayer
from pointcrack3d.core_model import PointCloud, VoxelizationConfig
from pointcrack3d.downsampler import downsample
from pointcrack3d.errors import InsufficientDistinctPointsError, IntegrityError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Voxel:
    """Window of edge d anchored at a lattice position"""
    index: Tuple[int, int, int]
    anchor: Tuple[float, float, float]
    size: float
    stride: float
    member_ids: np.ndarray
    tag: str = ""

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.anchor) + np.asarray(self.index) * self.stride

    def __len__(self) -> int:
        return len(self.member_ids)

    def contains(self, positions: np.ndarray) -> np.ndarray:
        """Half-open containment mask in lattice units"""
        u = (np.asarray(positions, dtype=np.float64) - np.asarray(self.anchor)) / self.stride
        k = np.asarray(self.index, dtype=np.float64)
        span = self.size / self.stride
        return np.all((u >= k) & (u < k + span), axis=1)


@dataclass(frozen=True)
class ScoredVoxel:
    """Per-member confidences for one voxel (aligned with voxel.member_ids)"""
    voxel: Voxel
    confidence: np.ndarray


def lattice_anchor(positions: np.ndarray, stride: float,
                   anchor: Optional[Sequence[float]] = None) -> np.ndarray:
    """Lattice origin: the bounding-box minimum, or `anchor` stepped back by whole
    strides until no point lies below it"""
    lowest = positions.min(axis=0)
    if anchor is None:
        return lowest
    anchor = np.asarray(anchor, dtype=np.float64).reshape(3)
    behind = np.maximum(anchor - lowest, 0.0)
    steps = np.floor(behind / stride) + (behind > 0)
    return anchor - steps * stride


def build_grid(cloud: PointCloud, config: VoxelizationConfig,
               anchor: Optional[Sequence[float]] = None) -> List[Voxel]:
    """Every non-empty window of the lattice covering the cloud's bounding box

    By default the lattice starts at the cloud's own minimum. Passing the anchor of
    another cloud keeps that cloud's windows fixed, so a translated copy lands on
    shifted window content.
    """
    if not len(cloud):
        raise ValueError("build_grid needs a non-empty cloud")
    positions = cloud.positions
    anchor = lattice_anchor(positions, config.s, anchor)
    u = (positions - anchor) / config.s
    span = config.d / config.s
    reach = int(np.ceil(span)) + 1

    # Candidate k per axis: floor(u - span) .. floor(u), padded by one and filtered exactly
    lowest = np.floor(u - span).astype(np.int64)
    entries_ids, entries_keys = [], []
    for offsets in itertools.product(range(reach + 1), repeat=3):
        k = lowest + np.asarray(offsets, dtype=np.int64)
        inside = np.all((k >= 0) & (u >= k) & (u < k + span), axis=1)
        if np.any(inside):
            entries_ids.append(np.flatnonzero(inside))
            entries_keys.append(k[inside])

    ids = np.concatenate(entries_ids)
    keys = np.concatenate(entries_keys)
    cells, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.lexsort((ids, inverse))
    bounds = np.searchsorted(inverse[order], np.arange(len(cells) + 1))

    anchor_t = tuple(float(a) for a in anchor)
    voxels = [
        Voxel(tuple(cell), anchor_t, float(config.d), float(config.s),
              ids[order[bounds[v]:bounds[v + 1]]], cloud.tag)
        for v, cell in enumerate(cells.tolist())
    ]
    logger.info(f"{cloud.tag or 'cloud'}: {len(voxels)} non-empty voxels "
                f"(d={config.d}, s={config.s})")
    return voxels


def voxel_seed(seed: Optional[int], voxel: Voxel) -> np.random.SeedSequence:
    """Per-voxel random stream, independent of iteration order"""
    entropy = [0 if seed is None else int(seed)] + [i + 2**31 for i in voxel.index]
    return np.random.SeedSequence(entropy)


def filter_and_fill(voxels: Iterable[Voxel], cloud: PointCloud, n: int,
                    seed: Optional[int] = None) -> List[Voxel]:
    """Drop voxels with fewer than n points; downsample larger ones to exactly n"""
    positions = cloud.positions
    kept, dropped, reduced = [], 0, 0
    for voxel in voxels:
        if len(voxel) < n:
            dropped += 1
            continue
        if len(voxel) == n:
            kept.append(voxel)
            continue
        try:
            stream = voxel_seed(seed, voxel)
            members = downsample(positions[voxel.member_ids], voxel.member_ids, n,
                                 seed=int(stream.generate_state(1)[0]))
        except InsufficientDistinctPointsError as e:
            logger.warning(f"Voxel {voxel.index} discarded: {e}")
            dropped += 1
            continue
        kept.append(replace(voxel, member_ids=members))
        reduced += 1
    logger.info(f"Kept {len(kept)} voxels ({reduced} downsampled), discarded {dropped} "
                f"with fewer than {n} points")
    return kept


def reconstruct(cloud: PointCloud, scored: Sequence[ScoredVoxel]) -> AnnotationLayer:
    """Per-point maximum confidence over all voxels that scored the point"""
    count = len(cloud)
    confidence = np.zeros(count, dtype=np.float64)
    classified = np.zeros(count, dtype=bool)
    for item in scored:
        ids = np.asarray(item.voxel.member_ids, dtype=np.int64)
        if len(ids) and (ids.min() < 0 or ids.max() >= count):
            raise IntegrityError(f"Voxel {item.voxel.index} refers to ids outside the cloud")
        values = np.asarray(item.confidence, dtype=np.float64)
        if len(values) != len(ids):
            raise IntegrityError(f"Voxel {item.voxel.index}: {len(values)} confidences for "
                                 f"{len(ids)} members")
        np.maximum.at(confidence, ids, values)
        classified[ids] = True

    unclassified = int(np.count_nonzero(~classified))
    if unclassified:
        logger.info(f"{cloud.tag or 'cloud'}: {unclassified} of {count} points unclassified")
    return AnnotationLayer(confidence, classified=classified)
