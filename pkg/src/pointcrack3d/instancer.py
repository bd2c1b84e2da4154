"""
Post-processing: confidences -> crack instances

1. reconstruct per-point confidence from the scored voxels
2. keep points with confidence >= Delta_H
3. link candidates closer than Delta_r and take connected components
4. drop clusters with fewer than Delta_n points; number the rest 1..K
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from tqdm import tqdm

from pointcrack3d.cloud_io import AnnotationLayer
from pointcrack3d.core_model import ClusteringConfig, PointCloud, VoxelizationConfig
from pointcrack3d.dataset_prep import make_samples, prepare_voxels
from pointcrack3d.errors import ContractError
from pointcrack3d.scorer import ScorerModel, predict_sample
from pointcrack3d.spatial import SpatialHash
from pointcrack3d.voxelizer import ScoredVoxel, reconstruct

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CrackInstance:
    """Detected (or ground-truth) crack: a set of point ids with a positive id"""
    instance_id: int
    member_ids: np.ndarray
    centroid: Tuple[float, float, float]
    bbox_min: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    bbox_max: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def point_count(self) -> int:
        return len(self.member_ids)

    def __len__(self) -> int:
        return len(self.member_ids)

    @classmethod
    def from_members(cls, instance_id: int, member_ids: np.ndarray,
                     positions: np.ndarray) -> "CrackInstance":
        members = np.sort(np.asarray(member_ids, dtype=np.int64))
        if not len(members):
            raise ContractError(f"Instance {instance_id} has no members")
        points = positions[members]
        return cls(int(instance_id), members,
                   tuple(float(v) for v in points.mean(axis=0)),
                   tuple(float(v) for v in points.min(axis=0)),
                   tuple(float(v) for v in points.max(axis=0)))


def threshold_points(annotations: AnnotationLayer, confidence_threshold: float) -> np.ndarray:
    """Sorted ids whose confidence is >= the threshold"""
    # Confidences are stored as float32; compare at that precision so 0.59 selects 0.59
    limit = np.float32(confidence_threshold)
    return np.flatnonzero(annotations.confidence >= limit).astype(np.int64)


def cluster(positions: np.ndarray, candidate_ids: Sequence[int],
            link_distance: float) -> List[np.ndarray]:
    """Connected components of the graph linking candidates closer than link_distance

    Each component is a sorted id array; components are ordered by their smallest id.
    """
    if link_distance <= 0:
        raise ContractError("link distance must be positive")
    ids = np.unique(np.asarray(candidate_ids, dtype=np.int64))
    if not len(ids):
        return []
    points = np.asarray(positions, dtype=np.float64)[ids]

    first, second = SpatialHash(points, link_distance).pairs_within(link_distance, strict=True)
    graph = coo_matrix((np.ones(len(first), dtype=np.int8), (first, second)),
                       shape=(len(ids), len(ids)))
    count, labels = connected_components(graph, directed=False)

    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(count + 1))
    components = [ids[order[bounds[c]:bounds[c + 1]]] for c in range(count)]
    components.sort(key=lambda members: int(members[0]))
    logger.debug(f"{len(ids)} candidates linked into {count} clusters")
    return components


def filter_clusters(clusters: Sequence[np.ndarray], min_cluster_size: int,
                    positions: np.ndarray) -> List[CrackInstance]:
    """Drop clusters with fewer than min_cluster_size points; number survivors 1..K"""
    if min_cluster_size < 1:
        raise ContractError("minimum cluster size must be >= 1")
    survivors = [c for c in clusters if len(c) >= min_cluster_size]
    rejected = len(clusters) - len(survivors)
    if rejected:
        logger.debug(f"Rejected {rejected} clusters smaller than {min_cluster_size}")
    positions = np.asarray(positions, dtype=np.float64)
    return [CrackInstance.from_members(k, members, positions)
            for k, members in enumerate(survivors, start=1)]


def annotate(annotations: AnnotationLayer, instances: Sequence[CrackInstance]) -> AnnotationLayer:
    """Predicted label 1 and cluster id for instance members, 0 / -1 elsewhere"""
    prediction = np.zeros(len(annotations), dtype=np.uint8)
    cluster_id = np.full(len(annotations), -1, dtype=np.int32)
    for instance in instances:
        if np.any(cluster_id[instance.member_ids] != -1):
            raise ContractError(f"Instance {instance.instance_id} overlaps another instance")
        prediction[instance.member_ids] = 1
        cluster_id[instance.member_ids] = instance.instance_id
    return AnnotationLayer(annotations.confidence, prediction, cluster_id, annotations.classified)


def instances_from_layer(annotations: AnnotationLayer, positions: np.ndarray,
                         clustering: ClusteringConfig) -> List[CrackInstance]:
    """Threshold, cluster and filter an existing confidence layer"""
    candidates = threshold_points(annotations, clustering.confidence_threshold)
    clusters = cluster(positions, candidates, clustering.link_distance)
    return filter_clusters(clusters, clustering.min_cluster_size, positions)


def score_cloud(cloud: PointCloud, model: ScorerModel, voxel_config: VoxelizationConfig,
                seed: Optional[int] = None) -> AnnotationLayer:
    """Voxelize, normalize, predict and reconstruct per-point confidence"""
    if model.normalization is None:
        raise ContractError("Model carries no normalization statistics")
    if not len(cloud):
        return AnnotationLayer.empty(0)
    voxels = prepare_voxels(cloud, voxel_config, seed)
    samples = make_samples(cloud, voxels, model.normalization, model.features)
    scored = [ScoredVoxel(sample.voxel, predict_sample(model, sample))
              for sample in tqdm(samples, desc=f"Scoring {cloud.tag or 'cloud'}", disable=None)]
    return reconstruct(cloud, scored)


def detect(cloud: PointCloud, model: ScorerModel, voxel_config: VoxelizationConfig,
           clustering: ClusteringConfig,
           seed: Optional[int] = None) -> Tuple[AnnotationLayer, List[CrackInstance]]:
    """Full detection pipeline for one cloud"""
    layer = score_cloud(cloud, model, voxel_config, seed)
    instances = instances_from_layer(layer, cloud.positions, clustering)
    logger.info(f"{cloud.tag or 'cloud'}: {len(instances)} crack instances "
                f"(Delta_H={clustering.confidence_threshold}, Delta_r={clustering.link_distance}, "
                f"Delta_n={clustering.min_cluster_size})")
    return annotate(layer, instances), instances


def ground_truth_instances(cloud: PointCloud, link_distance: float) -> List[CrackInstance]:
    """Real crack instances: carried instance ids when present, else clustered labels"""
    positions = cloud.positions
    crack = cloud.crack_ids
    if not len(crack):
        return []
    carried = cloud.instance[crack]
    if np.all(carried > 0):
        # carried ids stay as they are so they still match the crack manifest
        groups = sorted(((int(value), crack[carried == value]) for value in np.unique(carried)),
                        key=lambda item: int(item[1][0]))
    else:
        groups = list(enumerate(cluster(positions, crack, link_distance), start=1))
    return [CrackInstance.from_members(k, members, positions) for k, members in groups]


def instance_summary(instances: Sequence[CrackInstance]) -> pd.DataFrame:
    """One row per instance: id, point count, centroid and bounding box"""
    columns = ["instance_id", "point_count", "centroid_x", "centroid_y", "centroid_z",
               "min_x", "min_y", "min_z", "max_x", "max_y", "max_z"]
    rows = [
        [i.instance_id, i.point_count, *i.centroid, *i.bbox_min, *i.bbox_max]
        for i in instances
    ]
    return pd.DataFrame(rows, columns=columns)
