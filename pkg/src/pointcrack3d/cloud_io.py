"""
PLY reading and writing for labeled colored clouds

Vertex properties are written in a fixed order:
x, y, z (float32), red, green, blue (uchar), intensity (float32), label (uchar),
instance (int32), then - when an annotation layer is attached - confidence (float32),
prediction (uchar), cluster_id (int32), classified (uchar).
Both ascii and binary_little_endian bodies are supported; big-endian files are read too.
"""

import glob
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from pointcrack3d.config import FN_COLOR, FP_COLOR, TP_COLOR
from pointcrack3d.core_model import PointCloud
from pointcrack3d.errors import ContractError, PlyDataError, PlyParseError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# PLY type names -> numpy dtype codes
PLY_DTYPES: Dict[str, str] = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

FORMAT_ENDIAN = {"ascii": "<", "binary_little_endian": "<", "binary_big_endian": ">"}

CLOUD_PROPERTIES: List[Tuple[str, str]] = [
    ("x", "float"), ("y", "float"), ("z", "float"),
    ("red", "uchar"), ("green", "uchar"), ("blue", "uchar"),
    ("intensity", "float"),
    ("label", "uchar"),
    ("instance", "int"),
]

ANNOTATION_PROPERTIES: List[Tuple[str, str]] = [
    ("confidence", "float"),
    ("prediction", "uchar"),
    ("cluster_id", "int"),
    ("classified", "uchar"),
]

ASCII_FORMATS = {"f4": "%.9g", "f8": "%.17g"}


@dataclass(frozen=True, eq=False)
class AnnotationLayer:
    """Per-point classification output aligned with a cloud

    confidence is kept at float32 so annotations round-trip through PLY exactly.
    `classified` is False for points that were never scored (outside every retained voxel).
    """
    confidence: np.ndarray
    prediction: Optional[np.ndarray] = None
    cluster_id: Optional[np.ndarray] = None
    classified: Optional[np.ndarray] = None

    def __post_init__(self):
        confidence = np.array(self.confidence, dtype=np.float32).reshape(-1)
        count = len(confidence)
        prediction = (np.zeros(count, np.uint8) if self.prediction is None
                      else np.array(self.prediction, dtype=np.uint8).reshape(-1))
        cluster_id = (np.full(count, -1, np.int32) if self.cluster_id is None
                      else np.array(self.cluster_id, dtype=np.int32).reshape(-1))
        classified = (np.ones(count, bool) if self.classified is None
                      else np.array(self.classified, dtype=bool).reshape(-1))
        if not (len(prediction) == len(cluster_id) == len(classified) == count):
            raise ContractError("Annotation columns differ in length")
        if np.any(cluster_id < -1):
            raise ContractError("cluster_id must be >= -1")
        for name, values in (("confidence", confidence), ("prediction", prediction),
                             ("cluster_id", cluster_id), ("classified", classified)):
            values.setflags(write=False)
            object.__setattr__(self, name, values)

    def __len__(self) -> int:
        return len(self.confidence)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotationLayer):
            return NotImplemented
        return (np.array_equal(self.confidence.view(np.uint32), other.confidence.view(np.uint32))
                and np.array_equal(self.prediction, other.prediction)
                and np.array_equal(self.cluster_id, other.cluster_id)
                and np.array_equal(self.classified, other.classified))

    @classmethod
    def empty(cls, count: int) -> "AnnotationLayer":
        return cls(np.zeros(count, np.float32), classified=np.zeros(count, bool))


def expand_paths(patterns: Union[str, Sequence[str]]) -> List[Path]:
    """Expand comma-separated glob patterns, lexicographically sorted and de-duplicated"""
    if isinstance(patterns, str):
        patterns = [p.strip() for p in patterns.split(",") if p.strip()]
    found = set()
    for pattern in patterns:
        matches = glob.glob(str(pattern))
        if not matches and Path(pattern).exists():
            matches = [str(pattern)]
        found.update(matches)
    return [Path(p) for p in sorted(found)]


def _parse_header(handle) -> Tuple[str, int, List[Tuple[str, str]], Dict[str, str]]:
    """Parse a PLY header; returns (format, vertex count, numpy fields, comments)"""
    first = handle.readline().decode("ascii", errors="replace").strip()
    if first != "ply":
        raise PlyParseError("File does not start with 'ply'", first)

    fmt = None
    vertex_count = None
    fields: List[Tuple[str, str]] = []
    comments: Dict[str, str] = {}
    current = None

    while True:
        raw = handle.readline()
        if not raw:
            raise PlyParseError("Header ended before end_header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line:
            continue
        tokens = line.split()
        keyword = tokens[0]

        if keyword == "end_header":
            break
        if keyword in ("comment", "obj_info"):
            if len(tokens) >= 2:
                comments[tokens[1]] = " ".join(tokens[2:])
            continue
        if keyword == "format":
            if len(tokens) != 3 or tokens[1] not in FORMAT_ENDIAN:
                raise PlyParseError("Unsupported format line", line)
            fmt = tokens[1]
        elif keyword == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise PlyParseError("Malformed element line", line)
            current = tokens[1]
            if current == "vertex":
                vertex_count = int(tokens[2])
            elif int(tokens[2]) > 0:
                raise PlyParseError("Only vertex elements are supported", line)
        elif keyword == "property":
            if current != "vertex":
                continue
            if len(tokens) != 3 or tokens[1] not in PLY_DTYPES:
                raise PlyParseError("Unsupported vertex property", line)
            fields.append((tokens[2], PLY_DTYPES[tokens[1]]))
        else:
            raise PlyParseError("Unknown header keyword", line)

    if fmt is None:
        raise PlyParseError("Missing format line")
    if vertex_count is None:
        raise PlyParseError("Missing vertex element")
    return fmt, vertex_count, fields, comments


def _read_body(handle, fmt: str, count: int, fields: List[Tuple[str, str]]) -> np.ndarray:
    endian = FORMAT_ENDIAN[fmt]
    dtype = np.dtype([(name, endian + code) for name, code in fields])
    if count == 0:
        return np.zeros(0, dtype=dtype)
    if fmt != "ascii":
        data = handle.read(dtype.itemsize * count)
        if len(data) < dtype.itemsize * count:
            raise PlyDataError(f"Body truncated: expected {count} vertices")
        return np.frombuffer(data, dtype=dtype, count=count)

    table = np.zeros(count, dtype=dtype)
    for index in range(count):
        raw = handle.readline()
        tokens = raw.split()
        if len(tokens) < len(fields):
            raise PlyDataError("Too few values in ascii row", index)
        try:
            table[index] = tuple(float(t) for t in tokens[: len(fields)])
        except ValueError as e:
            raise PlyDataError(f"Unparseable ascii row: {e}", index) from e
    return table


def read_cloud_with_annotations(path: PathLike) -> Tuple[PointCloud, Optional[AnnotationLayer]]:
    """Read a PLY file into a cloud plus the annotation layer when one was stored"""
    path = Path(path)
    with open(path, "rb") as handle:
        fmt, count, fields, comments = _parse_header(handle)
        table = _read_body(handle, fmt, count, fields)

    names = {name for name, _ in fields}
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise PlyParseError(f"Missing required property '{axis}'")

    xyz = np.stack([table[axis].astype(np.float32) for axis in ("x", "y", "z")], axis=1)
    finite = np.all(np.isfinite(xyz), axis=1)
    if not np.all(finite):
        raise PlyDataError("Non-finite coordinate", int(np.flatnonzero(~finite)[0]))

    def optional(name, dtype, default=0):
        if name in names:
            return table[name].astype(dtype)
        return np.full(count, default, dtype)

    if {"red", "green", "blue"} <= names:
        rgb = np.stack([table[c].astype(np.uint8) for c in ("red", "green", "blue")], axis=1)
    else:
        rgb = np.zeros((count, 3), np.uint8)
    if "intensity" not in names:
        logger.warning(f"{path.name}: no intensity property, defaulting to 0")
    if "label" not in names:
        logger.warning(f"{path.name}: no label property, all points labeled non-crack")

    label = optional("label", np.uint8)
    if np.any(label > 1):
        raise PlyDataError("Label outside {0,1}", int(np.flatnonzero(label > 1)[0]))

    cloud = PointCloud(xyz, rgb, optional("intensity", np.float32), label,
                       optional("instance", np.int32), comments.get("tag", path.stem))

    layer = None
    if "confidence" in names:
        layer = AnnotationLayer(
            confidence=table["confidence"].astype(np.float32),
            prediction=optional("prediction", np.uint8),
            cluster_id=optional("cluster_id", np.int32, -1),
            classified=optional("classified", np.uint8, 1).astype(bool),
        )
    logger.debug(f"Read {count} vertices from {path}")
    return cloud, layer


def read_cloud(path: PathLike) -> PointCloud:
    """Read a PLY file; ids follow file order"""
    cloud, _ = read_cloud_with_annotations(path)
    return cloud


def write_cloud(cloud: PointCloud, annotations: Optional[AnnotationLayer], path: PathLike,
                binary: bool = True) -> None:
    """Write a cloud (and optionally its annotation layer) as PLY"""
    if annotations is not None and len(annotations) != len(cloud):
        raise ContractError(
            f"Annotation layer has {len(annotations)} rows, cloud has {len(cloud)}")

    properties = list(CLOUD_PROPERTIES)
    if annotations is not None:
        properties += ANNOTATION_PROPERTIES
    dtype = np.dtype([(name, "<" + PLY_DTYPES[kind]) for name, kind in properties])

    table = np.zeros(len(cloud), dtype=dtype)
    table["x"], table["y"], table["z"] = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
    table["red"], table["green"], table["blue"] = cloud.rgb[:, 0], cloud.rgb[:, 1], cloud.rgb[:, 2]
    table["intensity"] = cloud.intensity
    table["label"] = cloud.label
    table["instance"] = cloud.instance
    if annotations is not None:
        table["confidence"] = annotations.confidence
        table["prediction"] = annotations.prediction
        table["cluster_id"] = annotations.cluster_id
        table["classified"] = annotations.classified.astype(np.uint8)

    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0"]
    if cloud.tag:
        header.append(f"comment tag {cloud.tag}")
    header.append(f"element vertex {len(cloud)}")
    header += [f"property {kind} {name}" for name, kind in properties]
    header.append("end_header")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            handle.write(table.tobytes())
        else:
            formats = [ASCII_FORMATS.get(dtype[name].str[1:], "%d") for name, _ in properties]
            rows = "".join(
                " ".join(fmt % value for fmt, value in zip(formats, row.tolist())) + "\n"
                for row in table
            )
            handle.write(rows.encode("ascii"))
    logger.debug(f"Wrote {len(cloud)} vertices to {path}")


def classification_colors(cloud: PointCloud, annotations: AnnotationLayer) -> np.ndarray:
    """Colour points TP blue, FN red, FP cyan; true negatives keep their colour"""
    truth = cloud.label == 1
    predicted = annotations.prediction == 1
    rgb = cloud.rgb.copy()
    rgb[truth & predicted] = TP_COLOR
    rgb[truth & ~predicted] = FN_COLOR
    rgb[~truth & predicted] = FP_COLOR
    return rgb


def write_classified(cloud: PointCloud, annotations: AnnotationLayer, path: PathLike,
                     binary: bool = True) -> None:
    """Export with TP/FN/FP colour overrides"""
    write_cloud(cloud.with_colors(classification_colors(cloud, annotations)), annotations, path,
                binary=binary)
