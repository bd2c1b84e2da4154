"""
Shared domain types for the crack detection pipeline

Points are stored column-wise in numpy arrays; a point's id is its row index,
assigned in file order when the cloud is loaded.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np

from pointcrack3d.errors import ContractError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledPoint:
    """Single point view of a cloud row"""
    x: float
    y: float
    z: float
    r: int
    g: int
    b: int
    intensity: float
    label: int
    id: int
    instance: int = 0


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable labeled colored point cloud

    xyz is float32 (the PLY storage precision) so clouds round-trip exactly.
    `instance` holds the ground-truth crack instance id (0 for non-crack points).
    """
    xyz: np.ndarray
    rgb: Optional[np.ndarray] = None
    intensity: Optional[np.ndarray] = None
    label: Optional[np.ndarray] = None
    instance: Optional[np.ndarray] = None
    tag: str = ""

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float32).reshape(-1, 3)
        count = len(xyz)
        if not np.all(np.isfinite(xyz)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(xyz), axis=1))[0])
            raise ContractError(f"Non-finite coordinate at point {bad}")

        rgb = np.zeros((count, 3), np.uint8) if self.rgb is None else self.rgb
        rgb = np.asarray(rgb)
        if rgb.dtype != np.uint8:
            rgb = np.clip(np.rint(rgb), 0, 255)
        rgb = rgb.astype(np.uint8).reshape(-1, 3)

        def column(values, dtype):
            if values is None:
                return np.zeros(count, dtype)
            return np.array(values, dtype=dtype).reshape(-1)

        intensity = column(self.intensity, np.float32)
        label = column(self.label, np.uint8)
        instance = column(self.instance, np.int32)

        for name, values in (("rgb", rgb), ("intensity", intensity), ("label", label),
                             ("instance", instance)):
            if len(values) != count:
                raise ContractError(f"{name} has {len(values)} rows, expected {count}")
        if np.any(label > 1):
            raise ContractError("Labels must be 0 or 1")

        object.__setattr__(self, "xyz", _frozen(xyz))
        object.__setattr__(self, "rgb", _frozen(rgb))
        object.__setattr__(self, "intensity", _frozen(intensity))
        object.__setattr__(self, "label", _frozen(label))
        object.__setattr__(self, "instance", _frozen(instance))

    def __len__(self) -> int:
        return len(self.xyz)

    def __iter__(self) -> Iterator[LabeledPoint]:
        for i in range(len(self)):
            yield self.point(i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            self.tag == other.tag
            and np.array_equal(self.xyz.view(np.uint32), other.xyz.view(np.uint32))
            and np.array_equal(self.rgb, other.rgb)
            and np.array_equal(self.intensity.view(np.uint32), other.intensity.view(np.uint32))
            and np.array_equal(self.label, other.label)
            and np.array_equal(self.instance, other.instance)
        )

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self), dtype=np.int64)

    @property
    def positions(self) -> np.ndarray:
        """Coordinates widened to float64 for geometry"""
        return self.xyz.astype(np.float64)

    @property
    def crack_ids(self) -> np.ndarray:
        return np.flatnonzero(self.label == 1)

    @property
    def crack_instances(self) -> np.ndarray:
        """Distinct ground-truth instance ids carried by crack points"""
        values = np.unique(self.instance[self.label == 1])
        return values[values > 0]

    def point(self, i: int) -> LabeledPoint:
        x, y, z = (float(v) for v in self.xyz[i])
        r, g, b = (int(v) for v in self.rgb[i])
        return LabeledPoint(x, y, z, r, g, b, float(self.intensity[i]), int(self.label[i]), i,
                            int(self.instance[i]))

    def subset(self, ids: np.ndarray, tag: Optional[str] = None) -> "PointCloud":
        """New cloud holding the given points in ascending id order (ids are renumbered)"""
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        return PointCloud(self.xyz[ids], self.rgb[ids], self.intensity[ids], self.label[ids],
                          self.instance[ids], self.tag if tag is None else tag)

    def translated(self, offset, tag: Optional[str] = None) -> "PointCloud":
        offset = np.asarray(offset, dtype=np.float32).reshape(1, 3)
        return PointCloud(self.xyz + offset, self.rgb, self.intensity, self.label,
                          self.instance, self.tag if tag is None else tag)

    def with_colors(self, rgb: np.ndarray) -> "PointCloud":
        return PointCloud(self.xyz, rgb, self.intensity, self.label, self.instance, self.tag)


@dataclass(frozen=True)
class VoxelizationConfig:
    """[d, n, s]: voxel edge (m), points per voxel, stride (m)"""
    d: float
    n: int
    s: float

    def violations(self) -> List[str]:
        problems = []
        if not (math.isfinite(self.d) and self.d > 0):
            problems.append("d must be > 0")
        if int(self.n) != self.n or self.n < 8:
            problems.append("n must be an integer >= 8")
        if not (math.isfinite(self.s) and self.s > 0):
            problems.append("s must be > 0")
        elif self.s > self.d:
            problems.append("s > d")
        return problems


@dataclass(frozen=True)
class ClusteringConfig:
    """Post-processing thresholds (Delta_H, Delta_r, Delta_n)"""
    confidence_threshold: float
    link_distance: float
    min_cluster_size: int

    def violations(self) -> List[str]:
        problems = []
        if not 0 < self.confidence_threshold <= 1:
            problems.append("confidence threshold must lie in (0, 1]")
        if not (math.isfinite(self.link_distance) and self.link_distance > 0):
            problems.append("link distance must be > 0")
        if int(self.min_cluster_size) != self.min_cluster_size or self.min_cluster_size < 1:
            problems.append("min cluster size must be a positive integer")
        return problems


@dataclass(frozen=True)
class MatchConfig:
    """Fraction of a predicted instance that must intersect a real crack"""
    fraction: float = 0.5

    def violations(self) -> List[str]:
        if not 0 < self.fraction <= 1:
            return ["match fraction must lie in (0, 1]"]
        return []


def validate_config(voxel_config: VoxelizationConfig,
                    clustering_config: ClusteringConfig,
                    match_config: MatchConfig) -> List[str]:
    """Return every violated invariant; an empty list means all three configs are valid"""
    report = []
    for config in (voxel_config, clustering_config, match_config):
        report.extend(config.violations())
    for problem in report:
        logger.debug(f"Config violation: {problem}")
    return report
