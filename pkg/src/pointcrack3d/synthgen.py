"""
Synthetic labeled surfaces with carved cracks

Surfaces are rough height fields (multi-octave gradient noise) sampled
uniformly in xy. Cracks are polylines with a width profile: points inside the
footprint are thinned, pushed down into a walls-plus-floor trench and darkened.
Everything is deterministic per seed.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from pointcrack3d.config import (
    SYNTH_CRACK_KEEP,
    SYNTH_CRACK_LENGTH,
    SYNTH_CRACKS_PER_SURFACE,
    SYNTH_DARKENING,
    SYNTH_DENSITY,
    SYNTH_DEPTH_RATIO,
    SYNTH_EXTENT,
    SYNTH_FEATURE_SCALE,
    SYNTH_GAIN,
    SYNTH_MAX_WIDTH,
    SYNTH_MIN_WIDTH,
    SYNTH_NOISE_SIGMA,
    SYNTH_OCTAVES,
    SYNTH_ROUGHNESS,
    SYNTH_SURFACES,
)
from pointcrack3d.core_model import PointCloud
from pointcrack3d.errors import ConfigError, GeometryError

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["crack_id", "tag", "instance_id", "min_width", "mean_width", "max_width",
                    "length", "point_count"]

# Fraction of the half width occupied by the flat trench floor; the rest is wall
FLOOR_FRACTION = 0.6


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6 - 15) + 10)


def gradient_noise(x: np.ndarray, y: np.ndarray, rng: np.random.Generator,
                   table_size: int = 256) -> np.ndarray:
    """2D lattice gradient noise in roughly [-1, 1], vectorised over points"""
    perm = rng.permutation(table_size)
    perm = np.concatenate([perm, perm])
    angles = rng.uniform(0.0, 2 * np.pi, table_size)
    gradients = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    xf, yf = x - xi, y - yi
    xi, yi = xi % table_size, yi % table_size

    def corner(dx, dy):
        g = gradients[perm[perm[(xi + dx) % table_size] + (yi + dy) % table_size]]
        return g[:, 0] * (xf - dx) + g[:, 1] * (yf - dy)

    u, v = _fade(xf), _fade(yf)
    bottom = corner(0, 0) + u * (corner(1, 0) - corner(0, 0))
    top = corner(0, 1) + u * (corner(1, 1) - corner(0, 1))
    return np.sqrt(2.0) * (bottom + v * (top - bottom))


def fractal_noise(xy: np.ndarray, octaves: int, rng: np.random.Generator,
                  feature_scale: float = SYNTH_FEATURE_SCALE, gain: float = SYNTH_GAIN,
                  lacunarity: float = 2.0) -> np.ndarray:
    """Sum of octaves normalised by total amplitude"""
    xy = np.asarray(xy, dtype=np.float64)
    total = np.zeros(len(xy))
    frequency, amplitude, norm = 1.0 / feature_scale, 1.0, 0.0
    for _ in range(octaves):
        total += amplitude * gradient_noise(xy[:, 0] * frequency, xy[:, 1] * frequency, rng)
        norm += amplitude
        frequency *= lacunarity
        amplitude *= gain
    return total / norm if norm else total


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurfaceSpec:
    """Rough rectangular patch in the z = 0 plane"""
    extent: Tuple[float, float] = SYNTH_EXTENT
    density: float = SYNTH_DENSITY
    roughness: float = SYNTH_ROUGHNESS
    octaves: int = SYNTH_OCTAVES
    gain: float = SYNTH_GAIN
    feature_scale: float = SYNTH_FEATURE_SCALE
    base_color: Tuple[float, float, float] = (150.0, 140.0, 125.0)
    color_sigma: float = 12.0
    noise_sigma: float = SYNTH_NOISE_SIGMA
    seed: int = 0
    tag: str = "surface"

    def violations(self) -> List[str]:
        problems = []
        if len(self.extent) != 2 or min(self.extent) <= 0:
            problems.append("extent must be two positive lengths")
        if self.density <= 0:
            problems.append("density must be positive")
        if self.roughness < 0 or self.noise_sigma < 0 or self.color_sigma < 0:
            problems.append("roughness and noise levels must be >= 0")
        if self.octaves < 1 or self.feature_scale <= 0:
            problems.append("octaves and feature scale must be positive")
        return problems


@dataclass(frozen=True, eq=False)
class CrackSpec:
    """Polyline crack with a per-waypoint width profile"""
    path: np.ndarray
    widths: np.ndarray
    depth: float
    darkening: float = SYNTH_DARKENING
    keep: float = SYNTH_CRACK_KEEP

    def __post_init__(self):
        object.__setattr__(self, "path", np.asarray(self.path, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "widths", np.asarray(self.widths, dtype=np.float64).reshape(-1))
        if len(self.path) < 2 or len(self.widths) != len(self.path):
            raise GeometryError("A crack needs >= 2 waypoints and one width per waypoint")
        if np.any(self.widths <= 0):
            raise GeometryError("Crack widths must be positive")
        if self.length <= 0:
            raise GeometryError("Crack path has zero length")
        if not 0 <= self.darkening <= 1 or not 0 < self.keep <= 1 or self.depth < 0:
            raise GeometryError("darkening in [0, 1], keep in (0, 1] and depth >= 0 required")

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.path[:, :2], axis=0), axis=1)))

    def describe(self) -> Dict[str, float]:
        return {"min_width": float(self.widths.min()), "mean_width": float(self.widths.mean()),
                "max_width": float(self.widths.max()), "length": self.length}


@dataclass(frozen=True)
class DatasetSpec:
    surfaces: int = SYNTH_SURFACES
    cracks_per_surface: int = SYNTH_CRACKS_PER_SURFACE
    surface: SurfaceSpec = field(default_factory=SurfaceSpec)
    min_width: float = SYNTH_MIN_WIDTH
    max_width: float = SYNTH_MAX_WIDTH
    crack_length: Tuple[float, float] = SYNTH_CRACK_LENGTH
    depth_ratio: float = SYNTH_DEPTH_RATIO
    darkening: float = SYNTH_DARKENING
    keep: float = SYNTH_CRACK_KEEP
    seed: int = 0
    tag_prefix: str = "surface"

    def violations(self) -> List[str]:
        problems = list(self.surface.violations())
        if self.surfaces < 1 or self.cracks_per_surface < 0:
            problems.append("need >= 1 surface and >= 0 cracks per surface")
        if not 0 < self.min_width <= self.max_width:
            problems.append("widths must satisfy 0 < min <= max")
        if not 0 < self.crack_length[0] <= self.crack_length[1]:
            problems.append("crack length range must be positive and ordered")
        if not 0 <= self.darkening <= 1 or not 0 < self.keep <= 1:
            problems.append("darkening in [0, 1] and keep in (0, 1] required")
        if self.cracks_per_surface and not problems:
            strip = self.surface.extent[1] / self.cracks_per_surface
            if strip <= self.max_width + 0.02:
                problems.append("cracks per surface too many for the extent and max width")
            if self.crack_length[0] + 2 * self.max_width >= self.surface.extent[0]:
                problems.append("cracks longer than the surface")
        return problems


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def generate_surface(spec: SurfaceSpec) -> PointCloud:
    """Uniform xy samples on a fractal height field; all labels 0"""
    problems = spec.violations()
    if problems:
        raise ConfigError("; ".join(problems))
    rng = np.random.default_rng(spec.seed)
    width, height = spec.extent
    count = int(round(spec.density * width * height))

    xy = rng.uniform((0.0, 0.0), (width, height), size=(count, 2))
    z = np.zeros(count)
    if spec.roughness > 0:
        z += spec.roughness * fractal_noise(xy, spec.octaves, rng, spec.feature_scale, spec.gain)
    z += rng.normal(0.0, spec.noise_sigma, count) if spec.noise_sigma > 0 else 0.0

    shade = rng.normal(0.0, spec.color_sigma, count)
    rgb = np.asarray(spec.base_color)[None, :] + shade[:, None] + rng.normal(0.0, 3.0, (count, 3))
    rgb = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    intensity = 0.6 * rgb.mean(axis=1) / 255.0 + rng.normal(0.0, 0.02, count)

    logger.debug(f"{spec.tag}: {count} surface points over {width} x {height} m")
    return PointCloud(np.column_stack([xy, z]), rgb, intensity, tag=spec.tag)


def polyline_distance(xy: np.ndarray, path: np.ndarray,
                      widths: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """xy distance of each point to the polyline, and the width interpolated at the nearest spot"""
    xy = np.asarray(xy, dtype=np.float64)
    best = np.full(len(xy), np.inf)
    width_at = np.zeros(len(xy))
    for k in range(len(path) - 1):
        a, b = path[k, :2], path[k + 1, :2]
        segment = b - a
        span = float(segment @ segment)
        t = np.clip(((xy - a) @ segment) / span, 0.0, 1.0) if span > 0 else np.zeros(len(xy))
        dist = np.linalg.norm(xy - (a + t[:, None] * segment), axis=1)
        closer = dist < best
        best[closer] = dist[closer]
        width_at[closer] = widths[k] + t[closer] * (widths[k + 1] - widths[k])
    return best, width_at


def carve_crack(cloud: PointCloud, crack: CrackSpec, instance_id: int,
                seed: Optional[int] = None) -> PointCloud:
    """Thin, sink and darken the surface points under the crack footprint"""
    if instance_id < 1:
        raise GeometryError("Crack instance ids start at 1")
    if not len(cloud):
        raise GeometryError("Cannot carve into an empty cloud")
    positions = cloud.positions
    low, high = positions[:, :2].min(axis=0), positions[:, :2].max(axis=0)
    reach = crack.widths.max() / 2
    if np.any(crack.path[:, :2] - reach < low) or np.any(crack.path[:, :2] + reach > high):
        raise GeometryError(f"Crack footprint leaves the extent of {cloud.tag or 'the cloud'}")

    rng = np.random.default_rng(seed)
    dist, width_at = polyline_distance(positions[:, :2], crack.path, crack.widths)
    half = width_at / 2
    inside = np.flatnonzero((dist <= half) & (cloud.label == 0))
    kept = inside[rng.random(len(inside)) < crack.keep]
    dropped = np.setdiff1d(inside, kept)

    xyz = positions.copy()
    relative = dist[kept] / half[kept]
    wall = (1.0 - relative) / (1.0 - FLOOR_FRACTION)
    xyz[kept, 2] -= crack.depth * np.minimum(wall, 1.0)

    shade = 1.0 - crack.darkening
    rgb = cloud.rgb.astype(np.float64)
    rgb[kept] *= shade
    intensity = cloud.intensity.astype(np.float64)
    intensity[kept] *= shade
    label = cloud.label.copy()
    label[kept] = 1
    instance = cloud.instance.copy()
    instance[kept] = instance_id

    carved = PointCloud(xyz, rgb, intensity, label, instance, cloud.tag)
    survivors = np.setdiff1d(cloud.ids, dropped)
    logger.debug(f"{cloud.tag}: crack {instance_id} keeps {len(kept)} of {len(inside)} points")
    return carved.subset(survivors)


def _place_crack(spec: DatasetSpec, slot: int, max_width: float,
                 rng: np.random.Generator, waypoints: int = 5) -> CrackSpec:
    width, height = spec.surface.extent
    strip = height / spec.cracks_per_surface
    margin = max_width + 0.02
    length = min(rng.uniform(*spec.crack_length), width - 2 * margin)
    start = rng.uniform(margin, width - margin - length)
    x = np.linspace(start, start + length, waypoints)
    wiggle = max(0.0, strip / 2 - max_width / 2 - 0.02) * 0.5
    y = (slot + 0.5) * strip + rng.uniform(-wiggle, wiggle, waypoints)
    taper = np.array([0.5, 0.8, 1.0, 0.8, 0.5]) if waypoints == 5 else np.ones(waypoints)
    widths = np.maximum(max_width * taper, spec.min_width)
    return CrackSpec(np.column_stack([x, y, np.zeros(waypoints)]), widths,
                     depth=spec.depth_ratio * max_width, darkening=spec.darkening, keep=spec.keep)


def generate_dataset(spec: DatasetSpec) -> Tuple[List[PointCloud], pd.DataFrame]:
    """Surfaces with cracks whose max widths span [min_width, max_width] geometrically"""
    problems = spec.violations()
    if problems:
        raise ConfigError("; ".join(problems))
    root = np.random.SeedSequence(spec.seed)
    surface_seeds = root.spawn(spec.surfaces)
    total = spec.surfaces * spec.cracks_per_surface
    max_widths = np.random.default_rng(root.spawn(1)[0]).permutation(
        np.geomspace(spec.min_width, spec.max_width, total)) if total else np.zeros(0)

    clouds, rows, crack_id = [], [], 0
    for s, seed_seq in enumerate(tqdm(surface_seeds, desc="Synthesising", disable=None)):
        surface_seed, crack_seed = seed_seq.spawn(2)
        surface_spec = replace(spec.surface, seed=int(surface_seed.generate_state(1)[0]),
                               tag=f"{spec.tag_prefix}{s:02d}")
        cloud = generate_surface(surface_spec)
        rng = np.random.default_rng(crack_seed)
        for k in range(spec.cracks_per_surface):
            crack = _place_crack(spec, k, float(max_widths[crack_id]), rng)
            cloud = carve_crack(cloud, crack, k + 1, int(rng.integers(2**31)))
            crack_id += 1
            rows.append({"crack_id": crack_id, "tag": cloud.tag, "instance_id": k + 1,
                         **crack.describe(),
                         "point_count": int(np.count_nonzero(cloud.instance == k + 1))})
        clouds.append(cloud)

    manifest = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    logger.info(f"Generated {len(clouds)} surfaces with {len(manifest)} cracks; "
                f"crack-point fraction {crack_fraction(clouds):.4%}")
    return clouds, manifest


def crack_fraction(clouds: List[PointCloud]) -> float:
    points = sum(len(c) for c in clouds)
    return sum(len(c.crack_ids) for c in clouds) / points if points else 0.0


def width_lookup(manifest: pd.DataFrame) -> Dict[str, Dict[int, float]]:
    """tag -> {instance id -> max width} from a crack manifest"""
    lookup: Dict[str, Dict[int, float]] = {}
    for row in manifest.itertuples(index=False):
        lookup.setdefault(str(row.tag), {})[int(row.instance_id)] = float(row.max_width)
    return lookup
