"""
Point-wise and crack-wise evaluation

Point-wise: precision, recall, specificity and F1 from the confusion counts.
Crack-wise: a predicted instance p matches a real instance r when
|p & r| >= match_fraction * |p|; each prediction matches at most one real crack
(largest intersection, ties to the lowest real id). From the match table:

- cr_det: fraction of real cracks matched at least once
- cr_con: mean over real cracks of 1 / (number of matching predictions)
- cr_pre: fraction of predictions that match a real crack
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from pointcrack3d.config import (
    CONTINUITY_MODE,
    LARGE_CRACK_POINTS,
    MATCH_FRACTION,
    WIDE_CRACK_WIDTH,
)
from pointcrack3d.errors import ContractError, UndefinedMetricError

if TYPE_CHECKING:
    from pointcrack3d.cloud_io import AnnotationLayer
    from pointcrack3d.instancer import CrackInstance

logger = logging.getLogger(__name__)

CONTINUITY_MODES = ("all", "detected")
MATCH_COLUMNS = ["tag", "predicted_id", "real_id", "intersection", "predicted_size"]


@dataclass(frozen=True)
class PointwiseScores:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    specificity: float
    f1: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def rates(self) -> Tuple[float, float, float, float]:
        return self.precision, self.recall, self.specificity, self.f1


def _ratio(numerator: int, denominator: int, empty: float) -> float:
    return float(Fraction(numerator, denominator)) if denominator else empty


def scores_from_counts(tp: int, fp: int, tn: int, fn: int) -> PointwiseScores:
    precision = _ratio(tp, tp + fp, 0.0)
    recall = _ratio(tp, tp + fn, 0.0)
    specificity = _ratio(tn, tn + fp, 1.0)
    # F1 = 2TP / (2TP + FP + FN), the harmonic mean of precision and recall
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, 0.0)
    return PointwiseScores(tp, fp, tn, fn, precision, recall, specificity, f1)


def pointwise(predicted, truth) -> PointwiseScores:
    """Confusion counts and rates; unclassified points must be passed as predicted 0"""
    predicted = np.asarray(predicted).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if len(predicted) != len(truth):
        raise ContractError(f"{len(predicted)} predictions for {len(truth)} labels")
    if not len(truth):
        return scores_from_counts(0, 0, 0, 0)
    tn, fp, fn, tp = confusion_matrix(truth, predicted, labels=[0, 1]).ravel()
    return scores_from_counts(int(tp), int(fp), int(tn), int(fn))


# ---------------------------------------------------------------------------
# Crack-wise
# ---------------------------------------------------------------------------

@dataclass
class MatchTable:
    """Matched (predicted, real) pairs plus the instance counts on each side"""
    pairs: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=MATCH_COLUMNS))
    n_predicted: int = 0
    n_real: int = 0

    @classmethod
    def combine(cls, tables: Sequence["MatchTable"]) -> "MatchTable":
        frames = [t.pairs for t in tables if len(t.pairs)]
        pairs = (pd.concat(frames, ignore_index=True) if frames
                 else pd.DataFrame(columns=MATCH_COLUMNS))
        return cls(pairs, sum(t.n_predicted for t in tables), sum(t.n_real for t in tables))

    def matches_per_real(self) -> Dict[Tuple[str, int], int]:
        if not len(self.pairs):
            return {}
        counts = self.pairs.groupby(["tag", "real_id"]).size()
        return {(str(tag), int(real)): int(n) for (tag, real), n in counts.items()}


def match_instances(predicted: Sequence["CrackInstance"], real: Sequence["CrackInstance"],
                    match_fraction: float = MATCH_FRACTION, tag: str = "") -> MatchTable:
    """Pair each predicted instance with at most one real instance"""
    if not 0 < match_fraction <= 1:
        raise ContractError("match fraction must lie in (0, 1]")
    rows = []
    if predicted and real:
        real_members = np.concatenate([r.member_ids for r in real])
        real_owner = np.concatenate([np.full(len(r), r.instance_id, np.int64) for r in real])
        if len(np.unique(real_members)) != len(real_members):
            raise ContractError("Real instances overlap")
        order = np.argsort(real_members)
        real_members, real_owner = real_members[order], real_owner[order]

        for p in predicted:
            slot = np.searchsorted(real_members, p.member_ids)
            slot = np.minimum(slot, len(real_members) - 1)
            hit = real_members[slot] == p.member_ids
            if not np.any(hit):
                continue
            owners, counts = np.unique(real_owner[slot[hit]], return_counts=True)
            best = int(np.lexsort((owners, -counts))[0])
            intersection = int(counts[best])
            if intersection >= match_fraction * len(p):
                rows.append([tag, p.instance_id, int(owners[best]), intersection, len(p)])
    pairs = pd.DataFrame(rows, columns=MATCH_COLUMNS)
    return MatchTable(pairs, len(predicted), len(real))


def crack_detection_rate(table: MatchTable, n_real: Optional[int] = None) -> float:
    n_real = table.n_real if n_real is None else n_real
    if n_real < 1:
        raise UndefinedMetricError("cr_det is undefined without real cracks")
    return float(Fraction(len(table.matches_per_real()), n_real))


def crack_continuity(table: MatchTable, n_real: Optional[int] = None,
                     mode: str = CONTINUITY_MODE) -> float:
    """Mean inverse fragmentation; undetected cracks count 0 ('all') or are skipped ('detected')"""
    if mode not in CONTINUITY_MODES:
        raise ContractError(f"continuity mode must be one of {CONTINUITY_MODES}")
    n_real = table.n_real if n_real is None else n_real
    if n_real < 1:
        raise UndefinedMetricError("cr_con is undefined without real cracks")
    per_real = table.matches_per_real()
    total = sum((Fraction(1, k) for k in per_real.values()), Fraction(0))
    denominator = n_real if mode == "all" else len(per_real)
    return float(total / denominator) if denominator else 0.0


def crack_precision(table: MatchTable, n_predicted: Optional[int] = None) -> float:
    n_predicted = table.n_predicted if n_predicted is None else n_predicted
    if n_predicted < 1:
        raise UndefinedMetricError("cr_pre is undefined without predicted instances")
    return float(Fraction(len(table.pairs), n_predicted))


def detection_by_size(table: MatchTable, real: Sequence["CrackInstance"], tag: str = "",
                      widths: Optional[Dict[int, float]] = None) -> pd.DataFrame:
    """One row per real instance (id, point count, detected flag, max width), sorted by size"""
    detected = {real_id for (t, real_id) in table.matches_per_real() if t == tag}
    frame = pd.DataFrame({
        "tag": [tag] * len(real),
        "instance_id": [r.instance_id for r in real],
        "point_count": [r.point_count for r in real],
        "detected": [r.instance_id in detected for r in real],
    })
    if widths is not None:
        frame["max_width"] = [widths.get(r.instance_id, np.nan) for r in real]
    return frame.sort_values(["point_count", "instance_id"], kind="stable").reset_index(drop=True)


def size_summary(records: pd.DataFrame, large_points: int = LARGE_CRACK_POINTS,
                 wide_width: float = WIDE_CRACK_WIDTH) -> pd.DataFrame:
    """Detection rate per point-count bin and, when widths are known, per width bin"""
    bins = [
        (f"<= {large_points} points", records["point_count"] <= large_points),
        (f"> {large_points} points", records["point_count"] > large_points),
    ]
    if "max_width" in records and records["max_width"].notna().any():
        bins += [
            (f"width < {wide_width} m", records["max_width"] < wide_width),
            (f"width >= {wide_width} m", records["max_width"] >= wide_width),
        ]
    rows = []
    for name, mask in bins:
        cracks = int(mask.sum())
        found = int(records.loc[mask, "detected"].sum())
        rows.append({"bin": name, "cracks": cracks, "detected": found,
                     "rate": _ratio(found, cracks, float("nan"))})
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Threshold sweeps
# ---------------------------------------------------------------------------

def predicted_labels(layer: "AnnotationLayer", confidence_threshold: float) -> np.ndarray:
    """Raw per-point decision at a threshold; unclassified points are 0"""
    selected = layer.confidence >= np.float32(confidence_threshold)
    return (selected & layer.classified).astype(np.int64)


def threshold_sweep(layers: Sequence["AnnotationLayer"], truths: Sequence[np.ndarray],
                    thresholds: Sequence[float]) -> pd.DataFrame:
    """Point-wise scores of the raw confidences at each threshold, all layers pooled"""
    thresholds = [float(t) for t in thresholds]
    if thresholds != sorted(thresholds) or any(not 0 <= t <= 1 for t in thresholds):
        raise ContractError("thresholds must be ascending within [0, 1]")
    if len(layers) != len(truths):
        raise ContractError(f"{len(layers)} layers for {len(truths)} label sets")
    truth = (np.concatenate([np.asarray(t).reshape(-1) for t in truths])
             if truths else np.zeros(0, np.int64))
    rows = []
    for threshold in thresholds:
        predicted = (np.concatenate([predicted_labels(layer, threshold) for layer in layers])
                     if layers else np.zeros(0, np.int64))
        s = pointwise(predicted, truth)
        rows.append({"threshold": threshold, "precision": s.precision, "recall": s.recall,
                     "specificity": s.specificity, "f1": s.f1,
                     "tp": s.tp, "fp": s.fp, "tn": s.tn, "fn": s.fn})
    return pd.DataFrame(rows)


def tune_threshold(layers: Sequence["AnnotationLayer"], truths: Sequence[np.ndarray],
                   thresholds: Sequence[float]) -> float:
    """Threshold with the best pooled F1; ties go to the lowest threshold"""
    curve = threshold_sweep(layers, truths, sorted(thresholds))
    best = curve.loc[curve["f1"].idxmax()]
    logger.info(f"Tuned Delta_H={best['threshold']:.3f} (F1={best['f1']:.3f})")
    return float(best["threshold"])


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """All point-wise and crack-wise scores of one evaluation"""
    pointwise: PointwiseScores
    cr_det: float
    cr_con: float
    cr_pre: float
    n_real: int
    n_predicted: int
    matches: MatchTable
    by_size: pd.DataFrame = field(default_factory=pd.DataFrame)

    def as_row(self) -> Dict[str, float]:
        s = self.pointwise
        return {
            "tp": s.tp, "fp": s.fp, "tn": s.tn, "fn": s.fn,
            "precision": s.precision, "recall": s.recall, "specificity": s.specificity,
            "f1": s.f1, "cr_det": self.cr_det, "cr_con": self.cr_con, "cr_pre": self.cr_pre,
            "n_cr": self.n_real, "n_pred": self.n_predicted,
        }


def evaluate(truths: Sequence[np.ndarray], layers: Sequence["AnnotationLayer"],
             predicted: Sequence[Sequence["CrackInstance"]],
             real: Sequence[Sequence["CrackInstance"]], tags: Sequence[str],
             match_fraction: float = MATCH_FRACTION, continuity_mode: str = CONTINUITY_MODE,
             widths: Optional[Sequence[Optional[Dict[int, float]]]] = None) -> MetricsReport:
    """Pool several evaluated clouds into one report

    Point-wise scores use the final labels (after clustering and filtering).
    """
    if not (len(truths) == len(layers) == len(predicted) == len(real) == len(tags)):
        raise ContractError("evaluate needs one truth, layer, prediction and tag per cloud")
    widths = widths or [None] * len(tags)

    truth = np.concatenate([np.asarray(t).reshape(-1) for t in truths])
    labels = np.concatenate([layer.prediction.astype(np.int64) for layer in layers])
    scores = pointwise(labels, truth)

    tables: List[MatchTable] = []
    records = []
    for tag, cloud_pred, cloud_real, cloud_widths in zip(tags, predicted, real, widths):
        table = match_instances(cloud_pred, cloud_real, match_fraction, tag)
        tables.append(table)
        records.append(detection_by_size(table, cloud_real, tag, cloud_widths))
    matches = MatchTable.combine(tables)

    cr_det = crack_detection_rate(matches)
    cr_con = crack_continuity(matches, mode=continuity_mode)
    if matches.n_predicted:
        cr_pre = crack_precision(matches)
    else:
        logger.warning("No predicted instances: cr_pre reported as 0")
        cr_pre = 0.0
    by_size = pd.concat(records, ignore_index=True) if records else pd.DataFrame()
    report = MetricsReport(scores, cr_det, cr_con, cr_pre, matches.n_real, matches.n_predicted,
                           matches, by_size)
    logger.info(f"P={scores.precision:.3f} R={scores.recall:.3f} S={scores.specificity:.4f} "
                f"F1={scores.f1:.3f} cr_det={cr_det:.3f} cr_con={cr_con:.3f} cr_pre={cr_pre:.3f}")
    return report
