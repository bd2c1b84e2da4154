"""
Training / validation / test set construction

- negative band: crack points plus surface points within 15 cm of them
- crack-wise split: 2/3 of the cracks to a training pool (split 2:1 into
  train and val), the rest and all remaining surface points to test
- voxel normalization into [0, 1]^(n x m)
- coordinate perturbation and translation augmentation for training
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from pointcrack3d.config import (
    AUGMENT_COPIES,
    AUGMENT_MAX_OFFSET,
    COORDINATE_MODE,
    NEGATIVE_BAND,
    PERTURB_LIMIT,
    PERTURB_SCALE,
)
from pointcrack3d.core_model import PointCloud, VoxelizationConfig
from pointcrack3d.errors import ConfigError, ContractError, EmptySelectionError, SplitError
from pointcrack3d.spatial import SpatialHash
from pointcrack3d.voxelizer import Voxel, build_grid, filter_and_fill

logger = logging.getLogger(__name__)

FEATURE_CHANNELS = ("r", "g", "b", "intensity")
FEATURE_SETS: Dict[str, Tuple[str, ...]] = {
    "xyz": (),
    "xyz+i": ("intensity",),
    "xyz+rgb": ("r", "g", "b"),
    "xyz+rgb+i": ("r", "g", "b", "intensity"),
}


def parse_features(name: str) -> Tuple[str, ...]:
    """Feature set name ('xyz', 'xyz+i', 'xyz+rgb', 'xyz+rgb+i') -> selected channels"""
    key = name.replace(" ", "").lower()
    if key not in FEATURE_SETS:
        raise ConfigError(f"Unknown feature set '{name}' (choose from {sorted(FEATURE_SETS)})")
    return FEATURE_SETS[key]


def channel_values(cloud: PointCloud, channel: str,
                   rows: Optional[np.ndarray] = None) -> np.ndarray:
    rows = slice(None) if rows is None else rows
    if channel == "intensity":
        return cloud.intensity[rows].astype(np.float64)
    return cloud.rgb[rows, "rgb".index(channel)].astype(np.float64)


@dataclass(frozen=True)
class NormalizationStats:
    """Training-set min/max per feature channel, plus coordinate scaling"""
    feature_min: Dict[str, float]
    feature_max: Dict[str, float]
    voxel_size: float
    coordinate_mode: str = COORDINATE_MODE
    coordinate_min: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    coordinate_max: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for channel in self.feature_min:
            if self.feature_max[channel] < self.feature_min[channel]:
                raise ContractError(f"max < min for feature '{channel}'")
        if self.coordinate_mode not in ("local", "global"):
            raise ConfigError(f"Unknown coordinate mode '{self.coordinate_mode}'")

    @property
    def constant_features(self) -> List[str]:
        return [c for c in self.feature_min if self.feature_max[c] == self.feature_min[c]]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NormalizationStats":
        data = json.loads(text)
        data["coordinate_min"] = tuple(data["coordinate_min"])
        data["coordinate_max"] = tuple(data["coordinate_max"])
        return cls(**data)


@dataclass(frozen=True)
class DatasetStats:
    """Class counts of the training set"""
    n_pos: int
    n_neg: int

    def __post_init__(self):
        if self.n_pos < 0 or self.n_neg < 0:
            raise ContractError("Class counts must be non-negative")

    @property
    def total(self) -> int:
        return self.n_pos + self.n_neg

    @property
    def prior(self) -> float:
        return self.n_pos / self.total if self.total else 0.0


@dataclass(frozen=True, eq=False)
class VoxelSample:
    """One scoring unit: normalized inputs plus the raw values the scorer needs"""
    voxel: Voxel
    inputs: np.ndarray
    rgb: np.ndarray
    labels: np.ndarray

    @property
    def member_ids(self) -> np.ndarray:
        return self.voxel.member_ids


@dataclass
class DatasetSplit:
    """Crack-wise partition of a set of clouds"""
    train: List[PointCloud]
    val: List[PointCloud]
    test: List[PointCloud]
    assignments: pd.DataFrame = field(default_factory=pd.DataFrame)

    def as_tuple(self) -> Tuple[List[PointCloud], List[PointCloud], List[PointCloud]]:
        return self.train, self.val, self.test


def compute_normalization_stats(clouds: Sequence[PointCloud], voxel_size: float,
                                coordinate_mode: str = COORDINATE_MODE) -> NormalizationStats:
    """Per-channel min/max over the training clouds"""
    clouds = [c for c in clouds if len(c)]
    if not clouds:
        raise EmptySelectionError("No training points to compute normalization stats from")
    feature_min, feature_max = {}, {}
    for channel in FEATURE_CHANNELS:
        values = np.concatenate([channel_values(c, channel) for c in clouds])
        feature_min[channel] = float(values.min())
        feature_max[channel] = float(values.max())
    xyz = np.concatenate([c.positions for c in clouds])
    stats = NormalizationStats(feature_min, feature_max, float(voxel_size), coordinate_mode,
                               tuple(float(v) for v in xyz.min(axis=0)),
                               tuple(float(v) for v in xyz.max(axis=0)))
    for channel in stats.constant_features:
        logger.warning(f"Feature '{channel}' is constant over the training set; emitted as 0.5")
    return stats


def dataset_stats(samples: Iterable[VoxelSample]) -> DatasetStats:
    """Crack / non-crack counts over the points the scorer is trained on"""
    n_pos = n_neg = 0
    for sample in samples:
        positives = int(np.count_nonzero(sample.labels == 1))
        n_pos += positives
        n_neg += len(sample.labels) - positives
    return DatasetStats(n_pos, n_neg)


def negative_band(cloud: PointCloud, band_width: float = NEGATIVE_BAND,
                  crack_ids: Optional[np.ndarray] = None, exclude: Optional[np.ndarray] = None,
                  tag: Optional[str] = None, return_ids: bool = False):
    """Crack points plus surface points within band_width of the nearest crack point

    crack_ids restricts the crack points used (defaults to every labeled crack point);
    surface points flagged in the boolean mask `exclude` are never selected. With
    return_ids the sorted selected point ids are returned alongside the subset.
    """
    crack_ids = cloud.crack_ids if crack_ids is None else np.asarray(crack_ids, dtype=np.int64)
    if not len(crack_ids):
        raise EmptySelectionError(f"{cloud.tag or 'cloud'}: no crack points for negative band")
    positions = cloud.positions
    eligible = cloud.label == 0
    if exclude is not None:
        eligible &= ~np.asarray(exclude, dtype=bool)
    surface = np.flatnonzero(eligible)
    near = SpatialHash(positions[crack_ids], band_width).any_within(positions[surface],
                                                                    band_width)
    selected = np.sort(np.concatenate([crack_ids, surface[near]]))
    subset = cloud.subset(selected, tag=tag)
    logger.debug(f"{cloud.tag}: band keeps {len(subset)} of {len(cloud)} points "
                 f"({len(crack_ids)} crack)")
    return (subset, selected) if return_ids else subset


def split_by_crack(clouds: Sequence[PointCloud], seed: Optional[int] = None,
                   band_width: float = NEGATIVE_BAND) -> DatasetSplit:
    """Assign whole cracks to train / val / test

    Two thirds of all cracks (floor) form the training pool, which is split 2:1
    into train and val; each keeps its cracks plus their negative band. The
    remaining cracks and every surface point not used by train/val go to test.
    """
    instances = [(c, int(i)) for c, cloud in enumerate(clouds) for i in cloud.crack_instances]
    unassigned = sum(int(np.count_nonzero((cloud.label == 1) & (cloud.instance <= 0)))
                     for cloud in clouds)
    if unassigned:
        raise SplitError(f"{unassigned} crack points carry no instance id")
    if len(instances) < 3:
        raise SplitError(f"Need at least 3 crack instances to split, got {len(instances)}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(instances))
    pool_size = 2 * len(instances) // 3
    train_size = max(1, 2 * pool_size // 3)
    partition = {}
    for rank, k in enumerate(order.tolist()):
        if rank < train_size:
            partition[instances[k]] = "train"
        elif rank < pool_size:
            partition[instances[k]] = "val"
        else:
            partition[instances[k]] = "test"

    split = DatasetSplit([], [], [])
    for c, cloud in enumerate(clouds):
        used = np.zeros(len(cloud), dtype=bool)
        for name, bucket in (("train", split.train), ("val", split.val)):
            ids = [i for (cc, i), p in partition.items() if cc == c and p == name]
            crack_ids = np.flatnonzero((cloud.label == 1) & np.isin(cloud.instance, ids))
            if not len(crack_ids):
                continue
            part, members = negative_band(cloud, band_width, crack_ids, exclude=used,
                                          tag=f"{cloud.tag}.{name}", return_ids=True)
            used[members] = True
            bucket.append(part)
        remaining = np.flatnonzero(~used)
        if len(remaining):
            split.test.append(cloud.subset(remaining, tag=f"{cloud.tag}.test"))

    rows = [{"cloud": clouds[c].tag, "instance": i, "partition": p}
            for (c, i), p in sorted(partition.items())]
    split.assignments = pd.DataFrame(rows, columns=["cloud", "instance", "partition"])
    counts = split.assignments["partition"].value_counts().to_dict()
    logger.info(f"Split {len(instances)} cracks: train={counts.get('train', 0)} "
                f"val={counts.get('val', 0)} test={counts.get('test', 0)}")
    return split


def normalize_voxel(voxel: Voxel, cloud: PointCloud, stats: NormalizationStats,
                    features: Sequence[str] = ()) -> np.ndarray:
    """n x (3 + len(features)) matrix with every entry in [0, 1]"""
    ids = voxel.member_ids
    positions = cloud.positions[ids]
    if stats.coordinate_mode == "global":
        low = np.asarray(stats.coordinate_min)
        span = np.asarray(stats.coordinate_max) - low
        coords = np.divide(positions - low, span, out=np.full_like(positions, 0.5),
                           where=span > 0)
    else:
        coords = (positions - voxel.origin) / stats.voxel_size
    columns = [np.clip(coords, 0.0, 1.0)]

    for channel in features:
        low, high = stats.feature_min[channel], stats.feature_max[channel]
        if high == low:
            logger.debug(f"Constant feature '{channel}' emitted as 0.5")
            columns.append(np.full((len(ids), 1), 0.5))
            continue
        values = (channel_values(cloud, channel, ids) - low) / (high - low)
        columns.append(np.clip(values, 0.0, 1.0)[:, None])
    return np.hstack(columns)


def make_samples(cloud: PointCloud, voxels: Sequence[Voxel], stats: NormalizationStats,
                 features: Sequence[str] = ()) -> List[VoxelSample]:
    return [
        VoxelSample(voxel, normalize_voxel(voxel, cloud, stats, features),
                    cloud.rgb[voxel.member_ids], cloud.label[voxel.member_ids].astype(np.int64))
        for voxel in voxels
    ]


def prepare_voxels(cloud: PointCloud, config: VoxelizationConfig,
                   seed: Optional[int] = None,
                   anchor: Optional[Sequence[float]] = None) -> List[Voxel]:
    """build_grid followed by filter_and_fill"""
    if not len(cloud):
        return []
    return filter_and_fill(build_grid(cloud, config, anchor), cloud, config.n, seed)


def perturb(inputs: np.ndarray, seed, voxel_size: float, scale: float = PERTURB_SCALE,
            limit: float = PERTURB_LIMIT) -> np.ndarray:
    """Jitter normalized coordinates by clip(scale * N(0,1), +-limit) meters, scaled by 1/d

    seed may be an int or a numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    offsets = np.clip(scale * rng.standard_normal((len(inputs), 3)), -limit, limit)
    jittered = np.array(inputs, dtype=np.float64, copy=True)
    jittered[:, :3] = np.clip(jittered[:, :3] + offsets / voxel_size, 0.0, 1.0)
    return jittered


def translate_augment(cloud: PointCloud, copies: int = AUGMENT_COPIES,
                      max_offset: float = AUGMENT_MAX_OFFSET,
                      seed: Optional[int] = None) -> List[PointCloud]:
    """Copies shifted along one random axis by a uniform offset in [0, max_offset]

    Voxelize the copies on the source cloud's lattice (`prepare_voxels(..., anchor=)`);
    a lattice re-anchored at each copy's own minimum cancels the shift.
    """
    rng = np.random.default_rng(seed)
    augmented = []
    for k in range(copies):
        axis = int(rng.integers(3))
        offset = np.zeros(3)
        offset[axis] = rng.uniform(0.0, max_offset)
        augmented.append(cloud.translated(offset, tag=f"{cloud.tag}+t{k}"))
    return augmented


def write_split_manifest(split: DatasetSplit, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    split.assignments.to_csv(path, index=False)
