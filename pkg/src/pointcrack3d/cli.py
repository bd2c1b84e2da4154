"""
pointcrack3d command line

Subcommands share one flat configuration: defaults, then a `key = value`
config file (--config), then --key-name flags. Every command works inside a
run directory (--output-dir, default $POINTCRACK3D_RUN_DIR or ./runs):

  synth/        generated clouds + crack_manifest.csv
  prepared/     train/val/test clouds, split manifest, normalization stats
  model.pc3d    trained scorer (+ history.csv, training_summary.json)
  detect/       annotated test clouds + instance summaries
  metrics.*     evaluation reports
  viz/          TP/FN/FP coloured clouds
"""

import argparse
import json
import logging
import shutil
import sys
import tempfile
import typing
import zlib
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from pointcrack3d import config as defaults
from pointcrack3d.cloud_io import (
    AnnotationLayer,
    expand_paths,
    read_cloud,
    read_cloud_with_annotations,
    write_classified,
    write_cloud,
)
from pointcrack3d.core_model import (
    ClusteringConfig,
    MatchConfig,
    PointCloud,
    VoxelizationConfig,
    validate_config,
)
from pointcrack3d.dataset_prep import (
    NormalizationStats,
    VoxelSample,
    compute_normalization_stats,
    dataset_stats,
    make_samples,
    parse_features,
    prepare_voxels,
    split_by_crack,
    translate_augment,
    write_split_manifest,
)
from pointcrack3d.errors import (
    ConfigError,
    EmptySelectionError,
    PointCrackError,
    TrainingDivergenceError,
)
from pointcrack3d.instancer import (
    annotate,
    detect,
    ground_truth_instances,
    instance_summary,
    instances_from_layer,
)
from pointcrack3d.metrics import (
    evaluate,
    size_summary,
    threshold_sweep,
    tune_threshold,
)
from pointcrack3d.reports import (
    comparison_frame,
    comparison_row,
    export_frame,
    format_table,
    metrics_sections,
    write_text,
)
from pointcrack3d.scorer import (
    DESCRIPTOR_NAMES,
    TrainingConfig,
    init_model,
    load_model,
    predict_sample,
    save_model,
    sweep_focal,
    train,
)
from pointcrack3d.synthgen import DatasetSpec, SurfaceSpec, generate_dataset, width_lookup

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

# Candidate thresholds for validation tuning and the point-wise sweep report
TUNING_GRID = tuple(round(t, 2) for t in np.arange(0.05, 0.96, 0.01))
SWEEP_GRID = tuple(round(t, 2) for t in np.arange(0.0, 1.0001, 0.05))


@dataclass(frozen=True)
class PipelineConfig:
    """Every setting of every command; keys double as config-file keys and flags"""
    # paths
    input: str = ""
    output_dir: str = str(defaults.DEFAULT_RUN_DIR)
    model_path: str = ""
    manifest_path: str = ""
    # voxelization
    voxel_size: float = defaults.VOXEL_SIZE
    points_per_voxel: int = defaults.POINTS_PER_VOXEL
    strides: Tuple[float, ...] = defaults.STRIDES
    # dataset
    features: str = defaults.FEATURES
    coordinate_mode: str = defaults.COORDINATE_MODE
    negative_band: float = defaults.NEGATIVE_BAND
    augment_copies: int = defaults.AUGMENT_COPIES
    augment_max_offset: float = defaults.AUGMENT_MAX_OFFSET
    # training
    gamma: float = defaults.FOCAL_GAMMA
    alpha: float = defaults.FOCAL_ALPHA
    epochs: int = defaults.EPOCHS
    learning_rate: float = defaults.LEARNING_RATE
    lr_decay: float = defaults.LR_DECAY
    lr_decay_every: int = defaults.LR_DECAY_EVERY
    batch_size: int = defaults.BATCH_SIZE
    hidden_widths: Tuple[int, ...] = defaults.HIDDEN_WIDTHS
    dropout: float = defaults.DROPOUT
    sweep: bool = False
    gamma_grid: Tuple[float, ...] = defaults.FOCAL_GAMMA_GRID
    alpha_grid: Tuple[float, ...] = defaults.FOCAL_ALPHA_GRID
    # post-processing and evaluation
    confidence_threshold: float = defaults.CONFIDENCE_THRESHOLD
    link_distance: float = defaults.LINK_DISTANCE
    min_cluster_size: int = defaults.MIN_CLUSTER_SIZE
    use_tuned_threshold: bool = False
    thresholds: Tuple[float, ...] = defaults.THRESHOLD_SWEEP
    link_distances: Tuple[float, ...] = ()
    min_cluster_sizes: Tuple[int, ...] = ()
    match_fraction: float = defaults.MATCH_FRACTION
    continuity_mode: str = defaults.CONTINUITY_MODE
    # synthetic data
    synth_surfaces: int = defaults.SYNTH_SURFACES
    synth_cracks_per_surface: int = defaults.SYNTH_CRACKS_PER_SURFACE
    synth_extent: Tuple[float, ...] = defaults.SYNTH_EXTENT
    synth_density: float = defaults.SYNTH_DENSITY
    synth_roughness: float = defaults.SYNTH_ROUGHNESS
    synth_octaves: int = defaults.SYNTH_OCTAVES
    synth_gain: float = defaults.SYNTH_GAIN
    synth_feature_scale: float = defaults.SYNTH_FEATURE_SCALE
    synth_noise_sigma: float = defaults.SYNTH_NOISE_SIGMA
    synth_min_width: float = defaults.SYNTH_MIN_WIDTH
    synth_max_width: float = defaults.SYNTH_MAX_WIDTH
    synth_crack_length: Tuple[float, ...] = defaults.SYNTH_CRACK_LENGTH
    synth_darkening: float = defaults.SYNTH_DARKENING
    synth_crack_keep: float = defaults.SYNTH_CRACK_KEEP
    synth_depth_ratio: float = defaults.SYNTH_DEPTH_RATIO
    seed: int = 0

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir)

    @property
    def model_file(self) -> Path:
        return Path(self.model_path) if self.model_path else self.run_dir / "model.pc3d"

    def voxel_config(self, stride_multiple: float = 1.0) -> VoxelizationConfig:
        return VoxelizationConfig(self.voxel_size, self.points_per_voxel,
                                  self.voxel_size * stride_multiple)

    def clustering_config(self, confidence_threshold: Optional[float] = None,
                          link_distance: Optional[float] = None,
                          min_cluster_size: Optional[int] = None) -> ClusteringConfig:
        return ClusteringConfig(
            self.confidence_threshold if confidence_threshold is None else confidence_threshold,
            self.link_distance if link_distance is None else link_distance,
            self.min_cluster_size if min_cluster_size is None else min_cluster_size)

    def match_config(self) -> MatchConfig:
        return MatchConfig(self.match_fraction)

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            gamma=self.gamma, alpha=self.alpha, epochs=self.epochs,
            learning_rate=self.learning_rate, lr_decay=self.lr_decay,
            lr_decay_every=self.lr_decay_every, batch_size=self.batch_size,
            hidden_widths=tuple(self.hidden_widths), dropout=self.dropout,
            seed=stage_seed(self.seed, "train"))

    def dataset_spec(self) -> DatasetSpec:
        surface = SurfaceSpec(
            extent=tuple(self.synth_extent), density=self.synth_density,
            roughness=self.synth_roughness, octaves=self.synth_octaves, gain=self.synth_gain,
            feature_scale=self.synth_feature_scale, noise_sigma=self.synth_noise_sigma)
        return DatasetSpec(
            surfaces=self.synth_surfaces, cracks_per_surface=self.synth_cracks_per_surface,
            surface=surface, min_width=self.synth_min_width, max_width=self.synth_max_width,
            crack_length=tuple(self.synth_crack_length), depth_ratio=self.synth_depth_ratio,
            darkening=self.synth_darkening, keep=self.synth_crack_keep, seed=self.seed)

    def violations(self) -> List[str]:
        problems = validate_config(self.voxel_config(), self.clustering_config(),
                                   self.match_config())
        if not self.strides or any(not 0 < m <= 1 for m in self.strides):
            problems.append("strides must be multiples of d in (0, 1]")
        if self.coordinate_mode not in ("local", "global"):
            problems.append("coordinate_mode must be local or global")
        if self.continuity_mode not in ("all", "detected"):
            problems.append("continuity_mode must be all or detected")
        for name, values in (("link_distances", self.link_distances),
                             ("min_cluster_sizes", self.min_cluster_sizes)):
            if values and len(values) != len(self.thresholds):
                problems.append(f"{name} must be empty or match thresholds in length")
        if len(self.synth_extent) != 2 or len(self.synth_crack_length) != 2:
            problems.append("synth_extent and synth_crack_length take two values")
        try:
            parse_features(self.features)
        except ConfigError as e:
            problems.append(str(e))
        return problems


def stage_seed(seed: int, stage: str) -> int:
    """Independent, reproducible seed per pipeline stage"""
    sequence = np.random.SeedSequence([int(seed), zlib.crc32(stage.encode("utf-8"))])
    return int(sequence.generate_state(1)[0])


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

FIELD_TYPES = typing.get_type_hints(PipelineConfig)
TRUE_WORDS, FALSE_WORDS = ("true", "yes", "on", "1"), ("false", "no", "off", "0")


def parse_value(key: str, text: str):
    hint = FIELD_TYPES[key]
    text = text.strip()
    try:
        if typing.get_origin(hint) is tuple:
            item = typing.get_args(hint)[0]
            return tuple(item(part.strip()) for part in text.split(",") if part.strip())
        if hint is bool:
            word = text.lower()
            if word not in TRUE_WORDS + FALSE_WORDS:
                raise ValueError(text)
            return word in TRUE_WORDS
        return hint(text)
    except ValueError:
        raise ConfigError(f"Bad value for '{key}': {text!r}")


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_config_text(text: str, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Flat `key = value` lines; '#' starts a comment"""
    values: Dict[str, object] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"Line {number}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ConfigError(f"Line {number}: unknown key '{key}'")
        values[key] = parse_value(key, value)
    return replace(base or PipelineConfig(), **values)


def load_config(path, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), base)


def format_config(config: PipelineConfig) -> str:
    return "\n".join(f"{f.name} = {format_value(getattr(config, f.name))}"
                     for f in fields(config)) + "\n"


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _read_clouds(pattern: str) -> List[PointCloud]:
    paths = expand_paths(pattern)
    if not paths:
        raise EmptySelectionError(f"No clouds match '{pattern}'")
    return [read_cloud(p) for p in tqdm(paths, desc="Reading clouds", disable=None)]


def _replace_dir(staging: Path, target: Path) -> None:
    if target.exists():
        shutil.rmtree(target)
    staging.rename(target)


def _staging_dir(config: PipelineConfig, name: str) -> Path:
    config.run_dir.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{name}-", dir=config.run_dir))


def _samples(clouds: Sequence[PointCloud], config: PipelineConfig, stats: NormalizationStats,
             strides: Sequence[float], seed: int,
             anchors: Optional[Sequence[Optional[np.ndarray]]] = None) -> List[VoxelSample]:
    features = parse_features(config.features)
    anchors = anchors if anchors is not None else [None] * len(clouds)
    samples = []
    for cloud, anchor in zip(clouds, anchors):
        for multiple in strides:
            voxels = prepare_voxels(cloud, config.voxel_config(multiple), seed, anchor)
            samples.extend(make_samples(cloud, voxels, stats, features))
    return samples


def _read_summary(config: PipelineConfig) -> Dict[str, object]:
    path = config.model_file.with_name("training_summary.json")
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}


def _threshold(config: PipelineConfig) -> float:
    if config.use_tuned_threshold:
        tuned = _read_summary(config).get("tuned_threshold")
        if tuned is None:
            raise ConfigError("use_tuned_threshold set but no tuned threshold was recorded")
        return float(tuned)
    return config.confidence_threshold


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(config: PipelineConfig) -> Path:
    """Generate the synthetic dataset into <run>/synth atomically"""
    clouds, manifest = generate_dataset(config.dataset_spec())
    staging = _staging_dir(config, "synth")
    try:
        for cloud in clouds:
            write_cloud(cloud, None, staging / f"{cloud.tag}.ply")
        export_frame(manifest, staging / "crack_manifest.csv")
        target = config.run_dir / "synth"
        _replace_dir(staging, target)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info(f"Wrote {len(clouds)} clouds and {len(manifest)} crack rows to {target}")
    return target


def cmd_prepare(config: PipelineConfig) -> Path:
    """Crack-wise split, normalization stats and voxel tables"""
    pattern = config.input or str(config.run_dir / "synth" / "*.ply")
    clouds = _read_clouds(pattern)
    split = split_by_crack(clouds, stage_seed(config.seed, "split"), config.negative_band)
    stats = compute_normalization_stats(split.train, config.voxel_size, config.coordinate_mode)
    for channel in stats.constant_features:
        logger.warning(f"Feature '{channel}' is constant over the training split")

    staging = _staging_dir(config, "prepared")
    try:
        for partition, members in zip(("train", "val", "test"), split.as_tuple()):
            for cloud in members:
                write_cloud(cloud, None, staging / partition / f"{cloud.tag}.ply")
        write_split_manifest(split, staging / "split_manifest.csv")
        (staging / "normalization.json").write_text(stats.to_json(), encoding="utf-8")

        seed = stage_seed(config.seed, "voxels")
        rows = []
        plans = (("train", config.strides), ("val", (1.0,)), ("test", (1.0,)))
        for (partition, strides), members in zip(plans, split.as_tuple()):
            for cloud in members:
                for multiple in strides:
                    for voxel in prepare_voxels(cloud, config.voxel_config(multiple), seed):
                        rows.append({"partition": partition, "tag": cloud.tag,
                                     "stride": config.voxel_size * multiple,
                                     "index": "_".join(map(str, voxel.index)),
                                     "crack_points": int(cloud.label[voxel.member_ids].sum())})
        voxels = pd.DataFrame(rows, columns=["partition", "tag", "stride", "index",
                                             "crack_points"])
        export_frame(voxels, staging / "voxels.csv")
        summary = voxels.groupby(["partition", "stride"]).size().reset_index(name="voxels")
        logger.info("\n" + format_table(summary, "VOXELS PER PARTITION"))
        target = config.run_dir / "prepared"
        _replace_dir(staging, target)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return target


def cmd_train(config: PipelineConfig) -> Path:
    """Train (or sweep) the scorer on the prepared split"""
    prepared = config.run_dir / "prepared"
    stats_path = prepared / "normalization.json"
    if not stats_path.exists():
        raise EmptySelectionError(f"{stats_path} missing; run prepare first")
    normalization = NormalizationStats.from_json(stats_path.read_text(encoding="utf-8"))
    features = parse_features(config.features)

    train_clouds = _read_clouds(str(prepared / "train" / "*.ply"))
    val_clouds = _read_clouds(str(prepared / "val" / "*.ply"))
    augment_seed = stage_seed(config.seed, "augment")
    augmented, anchors = [], []
    for k, cloud in enumerate(train_clouds):
        copies = translate_augment(cloud, config.augment_copies, config.augment_max_offset,
                                   augment_seed + k)
        augmented.extend([cloud, *copies])
        # copies share the source lattice so the shift moves content across windows
        anchors.extend([cloud.positions.min(axis=0)] * (len(copies) + 1))

    voxel_seed = stage_seed(config.seed, "voxels")
    train_samples = _samples(augmented, config, normalization, config.strides, voxel_seed,
                             anchors)
    val_samples = _samples(val_clouds, config, normalization, (1.0,), voxel_seed)
    if not train_samples or not val_samples:
        raise EmptySelectionError("No voxel holds enough points to train on")
    stats = dataset_stats(train_samples)
    input_dim = 3 + len(features) + len(DESCRIPTOR_NAMES)
    logger.info(f"{len(train_samples)} training voxels, {len(val_samples)} validation voxels, "
                f"N_pos={stats.n_pos} N_neg={stats.n_neg}")

    training = config.training_config()
    run_dir = config.model_file.parent
    if config.sweep:
        cells = sweep_focal(train_samples, val_samples, training, stats, input_dim,
                            config.gamma_grid, config.alpha_grid, features, normalization)
        summary_rows = []
        for cell in cells:
            name = f"history_g{cell.gamma:g}_a{cell.alpha:g}"
            export_frame(cell.history.to_frame(), run_dir / "sweep" / name)
            summary_rows.append({"gamma": cell.gamma, "alpha": cell.alpha,
                                 "best_val_f1": cell.best_f1,
                                 "best_epoch": cell.history.best_epoch})
        summary = pd.DataFrame(summary_rows).sort_values(
            ["best_val_f1", "gamma", "alpha"], ascending=[False, True, True], kind="stable")
        export_frame(summary, run_dir / "sweep" / "summary")
        logger.info("\n" + format_table(summary, "FOCAL LOSS SWEEP"))
        best = max(cells, key=lambda c: c.best_f1)
        model, history = best.model, best.history
    else:
        model = init_model(training, stats, input_dim, features=features,
                           normalization=normalization)
        model, history = train(model, train_samples, val_samples, training)

    confidences = np.concatenate([predict_sample(model, s) for s in val_samples])
    truth = np.concatenate([s.labels for s in val_samples])
    tuned = tune_threshold([AnnotationLayer(confidences)], [truth], TUNING_GRID)

    save_model(model, config.model_file)
    export_frame(history.to_frame(), run_dir / "history")
    summary = {"best_epoch": history.best_epoch,
               "best_val_f1": max(history.val_f1) if len(history) else 0.0,
               "tuned_threshold": tuned, "gamma": model.config.gamma,
               "alpha": model.config.alpha, "seed": config.seed}
    (run_dir / "training_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True),
                                                   encoding="utf-8")
    return config.model_file


def cmd_detect(config: PipelineConfig) -> Path:
    """Score and cluster every input cloud; test clouds always use s = d"""
    model = load_model(config.model_file)
    clustering = config.clustering_config(confidence_threshold=_threshold(config))
    clouds = _read_clouds(config.input or str(config.run_dir / "prepared" / "test" / "*.ply"))
    out_dir = config.run_dir / "detect"
    seed = stage_seed(config.seed, "detect")
    sections = []
    for cloud in clouds:
        layer, instances = detect(cloud, model, config.voxel_config(1.0), clustering, seed)
        write_cloud(cloud, layer, out_dir / f"{cloud.tag}.ply")
        summary = instance_summary(instances)
        export_frame(summary, out_dir / f"{cloud.tag}_instances")
        sections.append(format_table(summary, f"{cloud.tag}: {len(instances)} instances"))
    write_text(sections, out_dir / "instances.txt")
    return out_dir


def _evaluation_inputs(config: PipelineConfig):
    pattern = config.input or str(config.run_dir / "detect" / "*.ply")
    paths = expand_paths(pattern)
    if not paths:
        raise EmptySelectionError(f"No annotated clouds match '{pattern}'")
    loaded = []
    for path in paths:
        cloud, layer = read_cloud_with_annotations(path)
        if layer is None:
            raise EmptySelectionError(f"{path} carries no confidence annotations")
        loaded.append((cloud, layer))
    return loaded


def cmd_evaluate(config: PipelineConfig) -> Path:
    """Point-wise and crack-wise metrics for each post-processing configuration"""
    loaded = _evaluation_inputs(config)
    manifest_path = (Path(config.manifest_path) if config.manifest_path
                     else config.run_dir / "synth" / "crack_manifest.csv")
    widths = width_lookup(pd.read_csv(manifest_path)) if manifest_path.exists() else {}

    primary = config.clustering_config(confidence_threshold=_threshold(config))
    configurations = [primary]
    for k, threshold in enumerate(config.thresholds):
        configurations.append(config.clustering_config(
            threshold,
            config.link_distances[k] if config.link_distances else None,
            config.min_cluster_sizes[k] if config.min_cluster_sizes else None))

    clouds = [cloud for cloud, _ in loaded]
    tags = [cloud.tag for cloud in clouds]
    truths = [cloud.label for cloud in clouds]
    # split clouds are tagged "<surface>.<partition>"; the manifest uses the surface tag
    cloud_widths = [widths.get(t, widths.get(t.rsplit(".", 1)[0])) for t in tags]
    rows, primary_report = [], None
    for clustering in configurations:
        real = [ground_truth_instances(c, clustering.link_distance) for c in clouds]
        layers, predicted = [], []
        for cloud, layer in loaded:
            instances = instances_from_layer(layer, cloud.positions, clustering)
            layers.append(annotate(layer, instances))
            predicted.append(instances)
        report = evaluate(truths, layers, predicted, real, tags, config.match_fraction,
                          config.continuity_mode, cloud_widths)
        primary_report = primary_report or report
        rows.append(comparison_row(report, clustering.confidence_threshold,
                                   clustering.link_distance, clustering.min_cluster_size))

    comparison = comparison_frame(rows)
    sweep = threshold_sweep([layer for _, layer in loaded], truths, SWEEP_GRID)
    by_size = primary_report.by_size
    summaries = [("primary configuration", size_summary(by_size))]

    export_frame(comparison, config.run_dir / "metrics")
    export_frame(sweep, config.run_dir / "sweep")
    export_frame(by_size, config.run_dir / "detection_by_size")
    return write_text(metrics_sections(comparison, summaries, sweep),
                      config.run_dir / "metrics.txt")


def cmd_export_viz(config: PipelineConfig) -> Path:
    """Colour detections TP blue, FN red, FP cyan"""
    out_dir = config.run_dir / "viz"
    for cloud, layer in _evaluation_inputs(config):
        write_classified(cloud, layer, out_dir / f"{cloud.tag}.ply")
    return out_dir


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "export-viz": cmd_export_viz,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="Flat key = value config file")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    for f in fields(PipelineConfig):
        common.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None,
                            metavar="VALUE", help=f"(default: {format_value(f.default)})")

    parser = argparse.ArgumentParser(
        prog="pointcrack3d",
        description="Crack instance detection on coloured LIDAR point clouds",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  pointcrack3d synth --output-dir runs/demo --seed 7
  pointcrack3d prepare --output-dir runs/demo --strides 1.0,0.5
  pointcrack3d train --output-dir runs/demo --epochs 30
  pointcrack3d train --output-dir runs/demo --sweep true
  pointcrack3d detect --output-dir runs/demo --use-tuned-threshold true
  pointcrack3d evaluate --output-dir runs/demo --thresholds 0.50,0.59,0.65
  pointcrack3d export-viz --output-dir runs/demo
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, command in COMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=command.__doc__)
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {f.name: parse_value(f.name, getattr(args, f.name))
                 for f in fields(PipelineConfig) if getattr(args, f.name) is not None}
    config = replace(config, **overrides)
    problems = config.violations()
    if problems:
        raise ConfigError("; ".join(problems))
    return config


def setup_logging(run_dir: Path, verbose: bool) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, defaults.LOG_LEVEL),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(run_dir / defaults.LOG_FILE_NAME),
            logging.StreamHandler(),
        ],
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    try:
        config = resolve_config(args)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE

    setup_logging(config.run_dir, args.verbose)
    logger.info(f"pointcrack3d {args.command} (seed {config.seed})")
    logger.info("Resolved configuration:\n" + format_config(config))
    try:
        result = COMMANDS[args.command](config)
    except TrainingDivergenceError as e:
        logger.error(f"Training diverged: {e}")
        return EXIT_DIVERGED
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (PointCrackError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    logger.info(f"{args.command} finished: {result}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
