#!/usr/bin/env python3
"""
Tests for point-wise scores, instance matching and the crack-wise rates
"""

import logging
from fractions import Fraction

import numpy as np
import pytest

from pointcrack3d.cloud_io import AnnotationLayer
from pointcrack3d.errors import ContractError, UndefinedMetricError
from pointcrack3d.instancer import CrackInstance
from pointcrack3d.metrics import (
    MatchTable,
    crack_continuity,
    crack_detection_rate,
    crack_precision,
    detection_by_size,
    evaluate,
    match_instances,
    pointwise,
    predicted_labels,
    scores_from_counts,
    size_summary,
    threshold_sweep,
    tune_threshold,
)

UNIVERSE = np.zeros((2000, 3))


def instances(groups, start=1):
    return [CrackInstance.from_members(k, members, UNIVERSE)
            for k, members in enumerate(groups, start=start)]


def random_groups(rng, count, universe=300, max_groups=10):
    """Disjoint random id groups"""
    ids = rng.permutation(universe)[:count]
    groups = int(rng.integers(0, max_groups + 1))
    if not groups:
        return []
    cuts = np.sort(rng.choice(np.arange(1, count), size=min(groups - 1, count - 1), replace=False))
    return [g for g in np.split(ids, cuts) if len(g)]


def brute_force_matches(predicted, real, fraction):
    matches = {}
    for p in predicted:
        best_id, best = None, 0
        for r in real:
            overlap = len(set(p.member_ids.tolist()) & set(r.member_ids.tolist()))
            if overlap > best or (overlap == best and overlap and r.instance_id < best_id):
                best_id, best = r.instance_id, overlap
        if best and best >= fraction * len(p):
            matches[p.instance_id] = best_id
    return matches


# ---------------------------------------------------------------------------
# Point-wise
# ---------------------------------------------------------------------------

def test_pointwise_formula_example():
    predicted = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0]
    truth = [1, 1, 0, 0, 1, 1, 0, 0, 0, 0]
    s = pointwise(predicted, truth)
    assert (s.tp, s.fp, s.tn, s.fn) == (2, 2, 4, 2)
    assert s.precision == 0.5
    assert s.recall == 0.5
    assert s.specificity == pytest.approx(2 / 3, abs=0)
    assert s.f1 == 0.5
    assert s.total == 10


def test_pointwise_perfect_and_degenerate():
    assert pointwise([1, 0, 1], [1, 0, 1]).rates == (1.0, 1.0, 1.0, 1.0)
    none = scores_from_counts(0, 0, 5, 3)
    assert (none.precision, none.recall, none.f1) == (0.0, 0.0, 0.0)
    assert scores_from_counts(2, 0, 0, 0).specificity == 1.0
    with pytest.raises(ContractError):
        pointwise([1, 0], [1])


def test_pointwise_matches_counting_oracle(rng):
    for _ in range(20):
        predicted = rng.integers(0, 2, 500)
        truth = rng.integers(0, 2, 500)
        s = pointwise(predicted, truth)
        assert s.tp == int(np.sum((predicted == 1) & (truth == 1)))
        assert s.fp == int(np.sum((predicted == 1) & (truth == 0)))
        assert s.tn == int(np.sum((predicted == 0) & (truth == 0)))
        assert s.fn == int(np.sum((predicted == 0) & (truth == 1)))
        assert s.total == 500
        harmonic = 2 * s.precision * s.recall / (s.precision + s.recall)
        assert s.f1 == pytest.approx(harmonic, rel=1e-12)


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def test_contained_prediction_always_matches():
    real = instances([np.arange(100)])
    predicted = instances([np.arange(10, 20)])
    for fraction in (0.01, 0.5, 1.0):
        table = match_instances(predicted, real, fraction)
        assert table.pairs[["predicted_id", "real_id"]].values.tolist() == [[1, 1]]


def test_partial_overlap_below_fraction():
    real = instances([np.arange(4)])
    predicted = instances([np.arange(10)])
    assert len(match_instances(predicted, real, 0.5).pairs) == 0
    assert len(match_instances(predicted, real, 0.4).pairs) == 1


def test_prediction_spanning_two_cracks_matches_the_larger():
    real = instances([np.arange(0, 10), np.arange(10, 20)])
    wide = instances([np.r_[np.arange(6, 10), np.arange(10, 16)]])
    assert match_instances(wide, real, 0.3).pairs["real_id"].tolist() == [2]
    even = instances([np.arange(5, 15)])
    assert match_instances(even, real, 0.5).pairs["real_id"].tolist() == [1]


def test_overlapping_real_instances_rejected():
    real = instances([np.arange(5), np.arange(3, 8)])
    with pytest.raises(ContractError):
        match_instances(instances([np.arange(5)]), real)
    with pytest.raises(ContractError):
        match_instances([], [], 0.0)


def test_crack_rates_match_brute_force():
    master = np.random.default_rng(42)
    for _ in range(200):
        real = instances(random_groups(master, int(master.integers(2, 150))))
        predicted = instances(random_groups(master, int(master.integers(2, 150))))
        fraction = float(master.choice([0.25, 0.5, 0.75, 1.0]))
        expected = brute_force_matches(predicted, real, fraction)

        table = match_instances(predicted, real, fraction, tag="cloud")
        got = dict(zip(table.pairs["predicted_id"].tolist(), table.pairs["real_id"].tolist()))
        assert got == expected

        per_real = {}
        for real_id in expected.values():
            per_real[real_id] = per_real.get(real_id, 0) + 1
        inverse = sum((Fraction(1, k) for k in per_real.values()), Fraction(0))

        if real:
            assert crack_detection_rate(table) == float(Fraction(len(per_real), len(real)))
            assert crack_continuity(table, mode="all") == float(inverse / len(real))
            detected = float(inverse / len(per_real)) if per_real else 0.0
            assert crack_continuity(table, mode="detected") == detected
            assert crack_continuity(table) <= crack_detection_rate(table)
        else:
            with pytest.raises(UndefinedMetricError):
                crack_detection_rate(table)
        if predicted:
            assert crack_precision(table) == float(Fraction(len(expected), len(predicted)))
        else:
            with pytest.raises(UndefinedMetricError):
                crack_precision(table)


def test_detection_rate_examples():
    real = instances([np.arange(10), np.arange(10, 20)])
    table = match_instances(instances([np.arange(5)]), real)
    assert crack_detection_rate(table) == 0.5
    table = match_instances(instances([np.arange(5), np.arange(12, 18)]), real)
    assert crack_detection_rate(table) == 1.0


def test_continuity_mixed_fragmentation():
    real = instances([np.arange(0, 30), np.arange(30, 60), np.arange(60, 90)])
    predicted = instances([np.arange(0, 30), np.arange(30, 40), np.arange(40, 50),
                           np.arange(50, 60)])
    table = match_instances(predicted, real)
    assert crack_continuity(table) == pytest.approx((1 + 1 / 3 + 0) / 3, rel=1e-15)
    assert crack_continuity(table, mode="detected") == pytest.approx((1 + 1 / 3) / 2, rel=1e-15)
    assert crack_detection_rate(table) == pytest.approx(2 / 3, rel=1e-15)
    with pytest.raises(ContractError):
        crack_continuity(table, mode="median")

    halves = match_instances(instances([np.arange(0, 15), np.arange(15, 30)]), real[:1])
    assert crack_continuity(halves) == 0.5


def test_precision_two_of_three():
    real = instances([np.arange(0, 10), np.arange(10, 20)])
    predicted = instances([np.arange(0, 10), np.arange(10, 20), np.arange(100, 110)])
    assert crack_precision(match_instances(predicted, real)) == pytest.approx(2 / 3, rel=1e-15)
    assert crack_precision(match_instances(predicted[:2], real)) == 1.0


def test_combined_tables_keep_clouds_apart():
    real = instances([np.arange(10)])
    first = match_instances(instances([np.arange(5)]), real, tag="a")
    second = match_instances(instances([np.arange(50, 60)]), real, tag="b")
    combined = MatchTable.combine([first, second])
    assert (combined.n_predicted, combined.n_real) == (2, 2)
    assert combined.matches_per_real() == {("a", 1): 1}
    assert crack_detection_rate(combined) == 0.5


# ---------------------------------------------------------------------------
# Size breakdown
# ---------------------------------------------------------------------------

def test_detection_by_size_bins():
    real = instances([np.arange(600), np.arange(600, 700)])
    table = match_instances(instances([np.arange(0, 600)]), real, tag="s")
    records = detection_by_size(table, real, "s", widths={1: 0.05, 2: 0.01})
    assert records["point_count"].tolist() == [100, 600]
    assert records["detected"].tolist() == [False, True]
    assert records["max_width"].tolist() == [0.01, 0.05]

    summary = size_summary(records).set_index("bin")
    assert summary.loc["<= 500 points", "rate"] == 0.0
    assert summary.loc["> 500 points", "rate"] == 1.0
    assert summary.loc["width < 0.03 m", "rate"] == 0.0
    assert summary.loc["width >= 0.03 m", "rate"] == 1.0


def test_size_summary_without_widths_or_cracks():
    real = instances([np.arange(50)])
    records = detection_by_size(MatchTable(n_real=1), real)
    summary = size_summary(records)
    assert summary["bin"].tolist() == ["<= 500 points", "> 500 points"]
    assert summary.loc[0, "rate"] == 0.0
    assert np.isnan(summary.loc[1, "rate"])
    everything = detection_by_size(match_instances(instances([np.arange(50)]), real), real)
    assert everything["detected"].all()


# ---------------------------------------------------------------------------
# Threshold sweeps
# ---------------------------------------------------------------------------

def random_layer(rng, count=400):
    truth = (rng.uniform(0, 1, count) < 0.2).astype(np.int64)
    confidence = np.clip(0.35 * truth + rng.uniform(0, 0.7, count), 1e-7, 1 - 1e-7)
    classified = rng.uniform(0, 1, count) > 0.05
    return AnnotationLayer(np.where(classified, confidence, 0.0), classified=classified), truth


def test_sweep_is_monotone(rng):
    pairs = [random_layer(rng) for _ in range(50)]
    layers, truths = zip(*pairs)
    thresholds = np.round(np.arange(0.0, 1.0001, 0.05), 2)
    curve = threshold_sweep(layers, truths, thresholds)
    assert curve["threshold"].tolist() == thresholds.tolist()
    assert np.all(np.diff(curve["recall"]) <= 0)
    assert np.all(np.diff(curve["specificity"]) >= 0)
    assert (curve[["tp", "fp", "tn", "fn"]].sum(axis=1) == 50 * 400).all()


def test_sweep_consistent_with_direct_scores(rng):
    layer, truth = random_layer(rng)
    row = threshold_sweep([layer], [truth], [0.5]).iloc[0]
    direct = pointwise(predicted_labels(layer, 0.5), truth)
    assert (row["tp"], row["fp"], row["tn"], row["fn"]) == (direct.tp, direct.fp, direct.tn,
                                                            direct.fn)
    assert row["f1"] == direct.f1


def test_zero_threshold_selects_every_scored_point():
    layer = AnnotationLayer([1e-7, 0.3, 0.9, 0.0], classified=[True, True, True, False])
    assert predicted_labels(layer, 0.0).tolist() == [1, 1, 1, 0]
    row = threshold_sweep([layer], [np.array([1, 0, 1, 0])], [0.0]).iloc[0]
    assert row["recall"] == 1.0


def test_sweep_rejects_unordered_thresholds():
    layer = AnnotationLayer([0.5])
    with pytest.raises(ContractError):
        threshold_sweep([layer], [np.array([1])], [0.5, 0.2])
    with pytest.raises(ContractError):
        threshold_sweep([layer], [np.array([1])], [1.5])


def test_tune_threshold_prefers_lowest_on_ties():
    layer = AnnotationLayer([0.2, 0.3, 0.8, 0.9])
    truth = np.array([0, 0, 1, 1])
    assert tune_threshold([layer], [truth], [0.9, 0.4, 0.5, 0.1]) == 0.4


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def test_evaluate_pools_clouds():
    truth_a = np.r_[np.ones(20), np.zeros(30)].astype(np.int64)
    truth_b = np.r_[np.zeros(10), np.ones(10)].astype(np.int64)
    real_a, real_b = instances([np.arange(20)]), instances([np.arange(10, 20)])
    pred_a = instances([np.arange(0, 15), np.arange(40, 45)])
    pred_b = []
    layer_a = AnnotationLayer(np.zeros(50), prediction=np.isin(np.arange(50), np.r_[0:15, 40:45]))
    layer_b = AnnotationLayer(np.zeros(20))

    report = evaluate([truth_a, truth_b], [layer_a, layer_b], [pred_a, pred_b],
                      [real_a, real_b], ["a", "b"], widths=[{1: 0.02}, None])
    s = report.pointwise
    assert (s.tp, s.fp, s.tn, s.fn) == (15, 5, 35, 15)
    assert report.cr_det == 0.5
    assert report.cr_con == 0.5
    assert report.cr_pre == 0.5
    assert (report.n_real, report.n_predicted) == (2, 2)
    assert report.by_size["tag"].tolist() == ["a", "b"]
    row = report.as_row()
    assert row["n_cr"] == 2 and row["cr_pre"] == 0.5


def test_evaluate_without_predictions_warns(caplog):
    truth = np.r_[np.ones(5), np.zeros(5)].astype(np.int64)
    with caplog.at_level(logging.WARNING):
        report = evaluate([truth], [AnnotationLayer(np.zeros(10))], [[]],
                          [instances([np.arange(5)])], ["only"])
    assert report.cr_pre == 0.0
    assert report.cr_det == 0.0
    assert "cr_pre reported as 0" in caplog.text
