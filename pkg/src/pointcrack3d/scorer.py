"""
Per-point crack confidence scorer

A compact stand-in for a point convolution backbone: each point is described by
its normalized inputs plus local neighbourhood descriptors, then scored by a
fully connected stack with a sigmoid output. Training uses focal loss, Adam and
a step learning-rate schedule; gradients are derived by hand.

Scorer contract: (normalized voxel, raw colours) in, n confidences in [0, 1] out.
"""

import copy
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.neighbors import KDTree
from tqdm import tqdm

from pointcrack3d.config import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPSILON,
    BATCH_SIZE,
    DROPOUT,
    EPOCHS,
    FOCAL_ALPHA,
    FOCAL_GAMMA,
    HIDDEN_WIDTHS,
    LEARNING_RATE,
    LR_DECAY,
    LR_DECAY_EVERY,
    NEIGHBOURHOOD_RADIUS,
    PROBABILITY_CLAMP,
)
from pointcrack3d.dataset_prep import DatasetStats, NormalizationStats, VoxelSample, perturb
from pointcrack3d.errors import (
    ConfigError,
    ContractError,
    DegenerateClassError,
    ModelFormatError,
    TrainingDivergenceError,
)
from pointcrack3d.metrics import pointwise

logger = logging.getLogger(__name__)

DESCRIPTOR_NAMES = (
    "linearity",
    "planarity",
    "sphericity",
    "neighbour_count",
    "mean_neighbour_distance",
    "darkness_contrast",
)

MODEL_MAGIC = b"PC3DMODL"
MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def local_descriptors(coords: np.ndarray, rgb: np.ndarray,
                      radius: float = NEIGHBOURHOOD_RADIUS) -> np.ndarray:
    """Neighbourhood shape, density and darkness descriptors, one row per point

    Columns follow DESCRIPTOR_NAMES. Points with fewer than two neighbours get zeros.
    """
    coords = np.asarray(coords, dtype=np.float64)
    count = len(coords)
    if count == 0:
        return np.zeros((0, len(DESCRIPTOR_NAMES)))

    neighbours, distances = KDTree(coords).query_radius(coords, r=radius, return_distance=True)
    sizes = np.array([len(nb) for nb in neighbours], dtype=np.int64)  # includes the point
    rows = np.repeat(np.arange(count), sizes)
    cols = np.concatenate(neighbours).astype(np.int64)
    dists = np.concatenate(distances)

    def gather(values: np.ndarray) -> np.ndarray:
        return np.bincount(rows, weights=values, minlength=count)

    mean = np.stack([gather(coords[cols, a]) for a in range(3)], axis=1) / sizes[:, None]
    cov = np.empty((count, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            second = gather(coords[cols, a] * coords[cols, b]) / sizes
            cov[:, a, b] = cov[:, b, a] = second - mean[:, a] * mean[:, b]
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)  # ascending
    l3, l2, l1 = eig[:, 0], eig[:, 1], eig[:, 2]

    others = sizes - 1
    shaped = (sizes >= 3) & (l1 > 1e-15)
    safe_l1 = np.where(shaped, l1, 1.0)
    linearity = np.where(shaped, (l1 - l2) / safe_l1, 0.0)
    planarity = np.where(shaped, (l2 - l3) / safe_l1, 0.0)
    sphericity = np.where(shaped, l3 / safe_l1, 0.0)

    has_others = others > 0
    safe_others = np.maximum(others, 1)
    density = others / count
    spacing = np.where(has_others, gather(dists) / safe_others / radius, 0.0)

    brightness = np.asarray(rgb, dtype=np.float64).mean(axis=1) / 255.0
    around = (gather(brightness[cols]) - brightness) / safe_others
    contrast = np.where(has_others, brightness - around, 0.0)

    return np.stack([linearity, planarity, sphericity, density, spacing, contrast], axis=1)


def extract_features(inputs: np.ndarray, rgb: np.ndarray,
                     radius: float = NEIGHBOURHOOD_RADIUS) -> np.ndarray:
    """Normalized inputs followed by the local descriptors of their coordinates"""
    inputs = np.asarray(inputs, dtype=np.float64)
    return np.hstack([inputs, local_descriptors(inputs[:, :3], rgb, radius)])


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def sigmoid_confidence(z):
    """1 / (1 + exp(-z)), saturating without overflow"""
    return expit(z)


def _focal_terms(confidences, labels, alpha):
    p = np.asarray(confidences, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if len(p) != len(y):
        raise ContractError(f"{len(p)} confidences for {len(y)} labels")
    if not 0 < alpha < 1:
        raise ContractError("focal alpha must lie in (0, 1)")
    p = np.clip(p, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    positive = y == 1
    p_t = np.where(positive, p, 1.0 - p)
    alpha_t = np.where(positive, alpha, 1.0 - alpha)
    return p_t, alpha_t, positive


def focal_loss(confidences, labels, gamma: float, alpha: float) -> float:
    """Mean of -alpha_t (1 - p_t)^gamma log(p_t)"""
    p_t, alpha_t, _ = _focal_terms(confidences, labels, alpha)
    if not len(p_t):
        return 0.0
    return float(np.mean(-alpha_t * (1.0 - p_t) ** gamma * np.log(p_t)))


def focal_loss_gradient(confidences, labels, gamma: float, alpha: float) -> np.ndarray:
    """d(mean focal loss)/d(logit) for each point

    Uses the clamped p_t, so saturated wrong predictions keep a gradient of
    about -/+ alpha_t / N.
    """
    p_t, alpha_t, positive = _focal_terms(confidences, labels, alpha)
    if not len(p_t):
        return np.zeros(0)
    sign = np.where(positive, 1.0, -1.0)
    q = 1.0 - p_t
    grad = sign * alpha_t * (gamma * q ** gamma * p_t * np.log(p_t) - q ** (gamma + 1.0))
    return grad / len(p_t)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingConfig:
    """Optimisation schedule and focal loss parameters"""
    gamma: float = FOCAL_GAMMA
    alpha: float = FOCAL_ALPHA
    epochs: int = EPOCHS
    learning_rate: float = LEARNING_RATE
    lr_decay: float = LR_DECAY
    lr_decay_every: int = LR_DECAY_EVERY
    batch_size: int = BATCH_SIZE
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    hidden_widths: Tuple[int, ...] = HIDDEN_WIDTHS
    dropout: float = DROPOUT
    perturb: bool = True
    eval_threshold: float = 0.5
    seed: Optional[int] = None

    def __post_init__(self):
        problems = []
        if self.gamma < 0:
            problems.append("gamma must be >= 0")
        if not 0 < self.alpha < 1:
            problems.append("focal alpha must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.lr_decay_every < 1:
            problems.append("epochs, batch size and decay interval must be positive")
        if self.learning_rate <= 0 or self.lr_decay <= 0 or self.epsilon <= 0:
            problems.append("rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append("Adam betas must lie in [0, 1)")
        if not 0 <= self.dropout < 1:
            problems.append("dropout must lie in [0, 1)")
        if problems:
            raise ConfigError("; ".join(problems))

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)


@dataclass
class TrainingHistory:
    """Per-epoch losses and validation scores"""
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_precision: List[float] = field(default_factory=list)
    val_recall: List[float] = field(default_factory=list)
    val_f1: List[float] = field(default_factory=list)
    learning_rate: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_frame(self, include_timing: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame({
            "epoch": np.arange(len(self)),
            "learning_rate": self.learning_rate,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_precision": self.val_precision,
            "val_recall": self.val_recall,
            "val_f1": self.val_f1,
        })
        if include_timing:
            frame["seconds"] = self.seconds
        return frame


@dataclass
class ScorerModel:
    """Fully connected stack over per-point feature vectors"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    features: Tuple[str, ...] = ()
    dropout: float = DROPOUT
    radius: float = NEIGHBOURHOOD_RADIUS
    config: TrainingConfig = field(default_factory=TrainingConfig)
    normalization: Optional[NormalizationStats] = None
    dataset: Optional[DatasetStats] = None

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def parameters(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, features: np.ndarray,
                rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, list]:
        """Logits plus the cache backward() needs; dropout is active only when rng is given"""
        h = np.asarray(features, dtype=np.float64)
        if h.shape[1] != self.input_dim:
            raise ContractError(f"Expected {self.input_dim} features, got {h.shape[1]}")
        hidden = len(self.weights) - 1
        cache = []
        for k in range(hidden):
            z = h @ self.weights[k] + self.biases[k]
            a = np.maximum(z, 0.0)
            mask = None
            if rng is not None and self.dropout > 0 and k == hidden - 2:
                keep = 1.0 - self.dropout
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            cache.append((h, z, mask))
            h = a
        logits = (h @ self.weights[-1] + self.biases[-1]).reshape(-1)
        cache.append((h, None, None))
        return logits, cache

    def backward(self, cache: list,
                 dlogits: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """Parameter gradients given d(loss)/d(logit)"""
        grad_w: List[np.ndarray] = [None] * len(self.weights)
        grad_b: List[np.ndarray] = [None] * len(self.biases)
        h, _, _ = cache[-1]
        delta = np.asarray(dlogits, dtype=np.float64).reshape(-1, 1)
        grad_w[-1] = h.T @ delta
        grad_b[-1] = delta.sum(axis=0)
        dh = delta @ self.weights[-1].T
        for k in reversed(range(len(self.weights) - 1)):
            h_in, z, mask = cache[k]
            if mask is not None:
                dh = dh * mask
            dz = dh * (z > 0)
            grad_w[k] = h_in.T @ dz
            grad_b[k] = dz.sum(axis=0)
            dh = dz @ self.weights[k].T
        return grad_w, grad_b

    def score_features(self, features: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(features)
        return sigmoid_confidence(logits)


def init_model(config: TrainingConfig, stats: DatasetStats, input_dim: int,
               seed: Optional[int] = None, features: Sequence[str] = (),
               normalization: Optional[NormalizationStats] = None,
               radius: float = NEIGHBOURHOOD_RADIUS) -> ScorerModel:
    """Scaled-uniform hidden weights, zero output weights, output bias log(N_pos / N_neg)"""
    if stats.n_pos <= 0 or stats.n_neg <= 0:
        raise DegenerateClassError(
            f"Both classes needed to initialise (N_pos={stats.n_pos}, N_neg={stats.n_neg})")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    widths = [input_dim, *config.hidden_widths]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    weights.append(np.zeros((widths[-1], 1)))
    biases.append(np.array([np.log(stats.n_pos / stats.n_neg)]))
    logger.info(f"Initialised scorer {widths + [1]} with prior {stats.prior:.5f}")
    return ScorerModel(weights, biases, tuple(features), config.dropout, radius, config,
                       normalization, stats)


def predict(model: ScorerModel, inputs: np.ndarray, rgb: np.ndarray) -> np.ndarray:
    """Confidence per point of one normalized voxel"""
    return model.score_features(extract_features(inputs, rgb, model.radius))


def predict_sample(model: ScorerModel, sample: VoxelSample) -> np.ndarray:
    return predict(model, sample.inputs, sample.rgb)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class AdamOptimizer:
    """Adam with bias correction over a list of parameter arrays"""

    def __init__(self, parameters: List[np.ndarray], beta1: float, beta2: float, epsilon: float):
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.m = [np.zeros_like(p) for p in parameters]
        self.v = [np.zeros_like(p) for p in parameters]
        self.t = 0

    def step(self, parameters: List[np.ndarray], gradients: List[np.ndarray], lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(parameters, gradients, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)


def _evaluate(model: ScorerModel, features: List[np.ndarray], labels: List[np.ndarray],
              config: TrainingConfig) -> Tuple[float, float, float, float]:
    confidences = np.concatenate([model.score_features(f) for f in features])
    truth = np.concatenate(labels)
    loss = focal_loss(confidences, truth, config.gamma, config.alpha)
    scores = pointwise((confidences >= config.eval_threshold).astype(np.int64), truth)
    return loss, scores.precision, scores.recall, scores.f1


def train(model: ScorerModel, train_samples: Sequence[VoxelSample],
          val_samples: Sequence[VoxelSample],
          config: Optional[TrainingConfig] = None) -> Tuple[ScorerModel, TrainingHistory]:
    """Focal-loss training; returns the best-validation-F1 snapshot and the history"""
    config = config or model.config
    if not train_samples or not val_samples:
        raise ContractError("Training and validation sets must be non-empty")

    model = copy.deepcopy(model)
    model.config = config
    model.dropout = config.dropout
    rng = np.random.default_rng(config.seed)

    train_desc = [local_descriptors(s.inputs[:, :3], s.rgb, model.radius) for s in train_samples]
    train_labels = [s.labels for s in train_samples]
    val_features = [extract_features(s.inputs, s.rgb, model.radius) for s in val_samples]
    val_labels = [s.labels for s in val_samples]

    optimizer = AdamOptimizer(model.parameters, config.beta1, config.beta2, config.epsilon)
    history = TrainingHistory()
    best_model, best_f1 = copy.deepcopy(model), -1.0

    for epoch in tqdm(range(config.epochs), desc="Training", disable=None):
        started = time.perf_counter()
        lr = config.learning_rate_at(epoch)
        order = rng.permutation(len(train_samples))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size].tolist()
            blocks = []
            for i in batch:
                inputs = train_samples[i].inputs
                if config.perturb:
                    inputs = perturb(inputs, rng, train_samples[i].voxel.size)
                blocks.append(np.hstack([inputs, train_desc[i]]))
            features = np.vstack(blocks)
            labels = np.concatenate([train_labels[i] for i in batch])

            logits, cache = model.forward(features, rng)
            confidences = sigmoid_confidence(logits)
            loss = focal_loss(confidences, labels, config.gamma, config.alpha)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(epoch, loss)
            grad_w, grad_b = model.backward(
                cache, focal_loss_gradient(confidences, labels, config.gamma, config.alpha))
            gradients = [g for pair in zip(grad_w, grad_b) for g in pair]
            optimizer.step(model.parameters, gradients, lr)
            batch_losses.append(loss)

        train_loss = float(np.mean(batch_losses))
        val_loss, precision, recall, f1 = _evaluate(model, val_features, val_labels, config)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergenceError(epoch, train_loss)

        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.val_precision.append(precision)
        history.val_recall.append(recall)
        history.val_f1.append(f1)
        history.learning_rate.append(lr)
        history.seconds.append(time.perf_counter() - started)
        if f1 > best_f1:
            best_f1, best_model = f1, copy.deepcopy(model)
            history.best_epoch = epoch
        logger.info(f"Epoch {epoch}: lr={lr:.2e} train_loss={train_loss:.5f} "
                    f"val_loss={val_loss:.5f} P={precision:.3f} R={recall:.3f} F1={f1:.3f} "
                    f"({history.seconds[-1]:.1f}s)")

    logger.info(f"Best validation F1 {best_f1:.3f} at epoch {history.best_epoch}")
    return best_model, history


@dataclass
class SweepCell:
    gamma: float
    alpha: float
    model: ScorerModel
    history: TrainingHistory

    @property
    def best_f1(self) -> float:
        return max(self.history.val_f1) if len(self.history) else 0.0


def sweep_focal(train_samples: Sequence[VoxelSample], val_samples: Sequence[VoxelSample],
                config: TrainingConfig, stats: DatasetStats, input_dim: int,
                gammas: Sequence[float], alphas: Sequence[float],
                features: Sequence[str] = (),
                normalization: Optional[NormalizationStats] = None) -> List[SweepCell]:
    """Train one scorer per (gamma, focal alpha) cell, all from the same seed"""
    cells = []
    grid = [(g, a) for g in gammas for a in alphas]
    for gamma, alpha in tqdm(grid, desc="Focal sweep", disable=None):
        cell_config = replace(config, gamma=float(gamma), alpha=float(alpha))
        logger.info(f"Sweep cell gamma={gamma} alpha={alpha}")
        model = init_model(cell_config, stats, input_dim, features=features,
                           normalization=normalization)
        trained, history = train(model, train_samples, val_samples, cell_config)
        cells.append(SweepCell(float(gamma), float(alpha), trained, history))
    return cells


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def save_model(model: ScorerModel, path: Union[str, Path]) -> None:
    """Versioned container: magic, version, JSON header, little-endian float64 arrays"""
    header = {
        "layers": [list(w.shape) for w in model.weights],
        "features": list(model.features),
        "dropout": model.dropout,
        "radius": model.radius,
        "training_config": asdict(model.config),
        "normalization": asdict(model.normalization) if model.normalization else None,
        "dataset": asdict(model.dataset) if model.dataset else None,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(MODEL_MAGIC)
        handle.write(struct.pack("<II", MODEL_FORMAT_VERSION, len(encoded)))
        handle.write(encoded)
        for w, b in zip(model.weights, model.biases):
            handle.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            handle.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    logger.info(f"Saved scorer to {path}")


def load_model(path: Union[str, Path]) -> ScorerModel:
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(MODEL_MAGIC):
        raise ModelFormatError(f"{path} is not a scorer model file")
    offset = len(MODEL_MAGIC)
    version, length = struct.unpack_from("<II", data, offset)
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"Unsupported model format version {version}")
    offset += 8
    header = json.loads(data[offset:offset + length].decode("utf-8"))
    offset += length

    weights, biases = [], []
    for rows, cols in header["layers"]:
        size = rows * cols * 8
        weights.append(np.frombuffer(data, "<f8", rows * cols, offset).reshape(rows, cols).copy())
        offset += size
        biases.append(np.frombuffer(data, "<f8", cols, offset).copy())
        offset += cols * 8
    if offset != len(data):
        raise ModelFormatError(f"{path}: {len(data) - offset} trailing bytes")

    config_data = dict(header["training_config"])
    config_data["hidden_widths"] = tuple(config_data["hidden_widths"])
    normalization = None
    if header["normalization"]:
        normalization = NormalizationStats.from_json(json.dumps(header["normalization"]))
    dataset = DatasetStats(**header["dataset"]) if header["dataset"] else None
    return ScorerModel(weights, biases, tuple(header["features"]), header["dropout"],
                       header["radius"], TrainingConfig(**config_data), normalization, dataset)
