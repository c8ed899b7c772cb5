"""
Tests for reasonable-setup matching, the MR-FPPI curve, log-average miss rate and AP.
"""
import numpy as np
import pytest

from data.scene import SamplePair
from evaluation.metrics import (FP, IGNORED, TP, ImageMatch, average_precision, is_reasonable,
                                log_average_miss_rate, match_detections, miss_rate_curve, sample_miss_rates,
                                split_report)
from model.detector import BoundingBox, Detection
from utils.config import EvalConfig
from utils.errors import NoGroundTruthError


def ped(x, y, height, occlusion=0.0):
    return BoundingBox(x, y, x + height * 0.4, y + height, occlusion)


def det(box, score):
    return Detection(box=box, score=score)


def frame(boxes, time_of_day="day"):
    return SamplePair(rgb=np.zeros((3, 4, 4), dtype=np.float32), thermal=np.zeros((1, 4, 4), dtype=np.float32),
                      boxes=list(boxes), time_of_day=time_of_day)


def brute_force_mr(matches, references):
    """Explicit threshold sweep, one operating point per distinct score."""
    n_gt = sum(m.n_gt for m in matches)
    pairs = [(s, l) for m in matches for s, l in zip(m.scores, m.labels) if l != IGNORED]
    points = [(0.0, 1.0)]
    for t in sorted({s for s, _ in pairs}, reverse=True):
        kept = [l for s, l in pairs if s >= t]
        points.append((kept.count(FP) / len(matches), 1.0 - kept.count(TP) / n_gt))
    sampled = []
    for ref in references:
        above = [p for p in points if p[0] >= ref]
        if above:
            lowest = min(f for f, _ in above)
            sampled.append(min(m for f, m in above if f == lowest))
        else:
            sampled.append(points[-1][1])
    return float(np.exp(np.mean([np.log(max(v, 1e-6)) for v in sampled])))


def brute_force_ap(matches):
    """Each true positive contributes 1/n_gt times the best precision at its rank or later."""
    n_gt = sum(m.n_gt for m in matches)
    pairs = sorted(((s, l) for m in matches for s, l in zip(m.scores, m.labels) if l != IGNORED),
                   key=lambda p: -p[0])
    precisions, tp = [], 0
    for rank, (_, label) in enumerate(pairs, start=1):
        tp += label == TP
        precisions.append(tp / rank)
    total = 0.0
    for k, (_, label) in enumerate(pairs):
        if label == TP:
            total += max(precisions[k:])
    return total / n_gt


def random_matches(rng, tied=False):
    matches = []
    for _ in range(int(rng.integers(1, 5))):
        n_gt = int(rng.integers(0, 4))
        n_det = int(rng.integers(0, 6))
        scores = rng.random(n_det)
        if tied:
            scores = np.round(scores, 1)
        scores = np.sort(scores)[::-1]
        labels = rng.choice([TP, FP, IGNORED], size=n_det, p=[0.4, 0.45, 0.15])
        # no image can have more true positives than ground truth
        extra = np.nonzero(labels == TP)[0][n_gt:]
        labels[extra] = FP
        matches.append(ImageMatch(scores, labels.astype(np.int64), n_gt))
    if sum(m.n_gt for m in matches) == 0:
        matches[0].n_gt = 1
    return matches


class TestMatchDetections:
    def test_exact_hit_is_true_positive(self):
        gt = ped(10, 10, 60)
        match = match_detections([det(gt, 0.9)], [gt], EvalConfig())
        assert match.labels.tolist() == [TP]
        assert match.n_gt == 1

    def test_small_ground_truth_becomes_ignore_region(self):
        gt = ped(10, 10, 30)
        match = match_detections([det(gt, 0.9)], [gt], EvalConfig())
        assert match.labels.tolist() == [IGNORED]
        assert (match.n_gt, match.n_ignored_gt) == (0, 1)

    def test_occluded_ground_truth_becomes_ignore_region(self):
        gt = ped(10, 10, 80, occlusion=0.6)
        assert not is_reasonable(gt, EvalConfig())
        assert match_detections([det(gt, 0.9)], [gt], EvalConfig()).labels.tolist() == [IGNORED]

    def test_duplicate_detection_is_false_positive(self):
        gt = ped(10, 10, 60)
        shifted = BoundingBox(gt.x_t + 1, gt.y_t, gt.x_b + 1, gt.y_b)
        match = match_detections([det(shifted, 0.4), det(gt, 0.9)], [gt], EvalConfig())
        np.testing.assert_array_equal(match.scores, [0.9, 0.4])
        assert match.labels.tolist() == [TP, FP]

    def test_low_overlap_is_false_positive(self):
        gt = ped(10, 10, 60)
        far = BoundingBox(gt.x_t + 20, gt.y_t, gt.x_b + 20, gt.y_b)
        assert match_detections([det(far, 0.9)], [gt], EvalConfig()).labels.tolist() == [FP]

    def test_best_overlap_wins(self):
        a, b = ped(0, 0, 60), ped(12, 0, 60)
        near_b = BoundingBox(b.x_t + 1, b.y_t, b.x_b + 1, b.y_b)
        match = match_detections([det(near_b, 0.9), det(a, 0.5)], [a, b], EvalConfig())
        assert match.labels.tolist() == [TP, TP]

    def test_no_detections(self):
        match = match_detections([], [ped(0, 0, 60), ped(50, 0, 20)], EvalConfig())
        assert match.scores.size == 0
        assert (match.n_gt, match.n_ignored_gt) == (1, 1)


class TestMissRateCurve:
    def test_hand_computed_curve(self):
        match = ImageMatch(np.array([0.9, 0.8, 0.7]), np.array([TP, FP, TP]), n_gt=2)
        fppi, miss = miss_rate_curve([match])
        np.testing.assert_allclose(fppi, [0.0, 0.0, 1.0, 1.0])
        np.testing.assert_allclose(miss, [1.0, 0.5, 0.5, 0.0])

    def test_tied_scores_form_one_point(self):
        match = ImageMatch(np.array([0.5, 0.5]), np.array([TP, FP]), n_gt=1)
        fppi, miss = miss_rate_curve([match])
        np.testing.assert_allclose(fppi, [0.0, 1.0])
        np.testing.assert_allclose(miss, [1.0, 0.0])

    def test_ignored_detections_do_not_count(self):
        match = ImageMatch(np.array([0.9, 0.8]), np.array([IGNORED, TP]), n_gt=1)
        fppi, miss = miss_rate_curve([match])
        np.testing.assert_allclose(fppi, [0.0, 0.0])
        np.testing.assert_allclose(miss, [1.0, 0.0])

    def test_no_ground_truth(self):
        with pytest.raises(NoGroundTruthError):
            miss_rate_curve([ImageMatch(np.array([0.9]), np.array([FP]), n_gt=0)])

    def test_sampling_takes_lowest_fppi_above_reference(self):
        fppi = np.array([0.0, 0.5, 0.5, 2.0])
        miss = np.array([1.0, 0.6, 0.4, 0.1])
        np.testing.assert_allclose(sample_miss_rates(fppi, miss, [0.1, 0.5, 1.0, 3.0]), [0.4, 0.4, 0.1, 0.1])

    def test_reference_points(self):
        refs = EvalConfig().reference_fppi()
        assert len(refs) == 9
        assert refs[0] == pytest.approx(0.01)
        assert refs[-1] == pytest.approx(1.0)
        assert refs[4] == pytest.approx(0.1)


class TestSummaryMetrics:
    def test_perfect_detector(self):
        gts = [ped(0, 0, 60), ped(40, 0, 70)]
        matches = [match_detections([det(g, 0.9 - 0.1 * i) for i, g in enumerate(gts)], gts, EvalConfig())]
        assert log_average_miss_rate(matches, EvalConfig()) == pytest.approx(1e-6)
        assert average_precision(matches, EvalConfig()) == pytest.approx(1.0)

    def test_empty_detection_set(self):
        matches = [match_detections([], [ped(0, 0, 60)], EvalConfig())]
        assert log_average_miss_rate(matches, EvalConfig()) == pytest.approx(1.0)
        assert average_precision(matches, EvalConfig()) == 0.0

    def test_hand_computed_average_precision(self):
        match = ImageMatch(np.array([0.9, 0.8, 0.7]), np.array([TP, FP, TP]), n_gt=2)
        assert average_precision([match], EvalConfig()) == pytest.approx(0.5 + 0.5 * 2 / 3)

    def test_average_precision_needs_ground_truth(self):
        with pytest.raises(NoGroundTruthError):
            average_precision([ImageMatch(np.zeros(0), np.zeros(0, dtype=np.int64), n_gt=0)], EvalConfig())

    @pytest.mark.parametrize("tied", [False, True])
    def test_miss_rate_matches_threshold_sweep(self, rng, tied):
        cfg = EvalConfig()
        for _ in range(120):
            matches = random_matches(rng, tied)
            assert log_average_miss_rate(matches, cfg) == pytest.approx(
                brute_force_mr(matches, cfg.reference_fppi()), abs=1e-9)

    def test_average_precision_matches_rank_sum(self, rng):
        for _ in range(120):
            matches = random_matches(rng)
            assert average_precision(matches, EvalConfig()) == pytest.approx(brute_force_ap(matches), abs=1e-9)

    def test_small_ignore_region_changes_nothing(self, rng):
        cfg = EvalConfig()
        for _ in range(20):
            gts = [ped(float(x), 0, float(h)) for x, h in zip(rng.uniform(0, 200, 3), rng.uniform(50, 90, 3))]
            dets = [det(BoundingBox(g.x_t + dx, g.y_t, g.x_b + dx, g.y_b), float(s))
                    for g, dx, s in zip(gts, rng.uniform(-8, 8, 3), rng.random(3))]
            dets.append(det(ped(300, 0, 60), float(rng.random())))
            base = [match_detections(dets, gts, cfg)]
            padded = [match_detections(dets, gts + [ped(600, 600, 30)], cfg)]
            assert log_average_miss_rate(padded, cfg) == log_average_miss_rate(base, cfg)
            assert average_precision(padded, cfg) == average_precision(base, cfg)

    def test_monotone_score_relabeling(self, rng):
        cfg = EvalConfig()
        for _ in range(20):
            matches = random_matches(rng, tied=True)
            relabeled = [ImageMatch(np.exp(3 * m.scores) - 7, m.labels, m.n_gt) for m in matches]
            assert log_average_miss_rate(relabeled, cfg) == log_average_miss_rate(matches, cfg)
            assert average_precision(relabeled, cfg) == average_precision(matches, cfg)


class TestSplitReport:
    def dataset(self):
        frames = [frame([ped(0, 0, 60)], "day"), frame([ped(0, 0, 80)], "day"),
                  frame([ped(0, 0, 60), ped(50, 0, 20)], "night")]
        outputs = [[det(ped(0, 0, 60), 0.9)], [], [det(ped(100, 0, 60), 0.7)]]
        return frames, outputs

    def test_all_day_dataset_has_no_night_split(self):
        frames = [frame([ped(0, 0, 60)], "day")]
        report = split_report(frames, [[det(ped(0, 0, 60), 0.9)]], EvalConfig())
        assert report.splits["night"] is None
        assert report.splits["day"] is not None
        assert "night: absent" in report.to_text()

    def test_splits_partition_all_frames(self):
        frames, outputs = self.dataset()
        splits = split_report(frames, outputs, EvalConfig()).splits
        assert splits["day"].n_images + splits["night"].n_images == splits["all"].n_images == 3
        assert splits["day"].n_gt + splits["night"].n_gt == splits["all"].n_gt == 3
        assert splits["all"].n_ignored_gt == 1
        assert splits["all"].n_detections == 2

    def test_splits_are_evaluated_from_their_own_frames(self):
        frames, outputs = self.dataset()
        splits = split_report(frames, outputs, EvalConfig()).splits
        assert splits["day"].average_precision == pytest.approx(0.5)
        assert splits["night"].average_precision == 0.0
        assert splits["all"].average_precision == pytest.approx(1 / 3)

    def test_split_without_reasonable_ground_truth_is_absent(self):
        frames = [frame([ped(0, 0, 60)], "day"), frame([ped(0, 0, 20)], "night")]
        report = split_report(frames, [[], []], EvalConfig())
        assert report.splits["night"] is None

    def test_no_reasonable_ground_truth(self):
        with pytest.raises(NoGroundTruthError):
            split_report([frame([ped(0, 0, 20)])], [[]], EvalConfig())

    def test_misaligned_outputs(self):
        with pytest.raises(ValueError):
            split_report([frame([ped(0, 0, 60)])], [], EvalConfig())

    def test_text_layout(self):
        frames, outputs = self.dataset()
        text = split_report(frames, outputs, EvalConfig(), mode="rgb").to_text()
        lines = text.splitlines()
        assert lines[0] == "protocol: reasonable min_height=50 max_occlusion=0.5 match_iou=0.5"
        assert lines[1] == "fppi_points: 9 log-uniform in [0.01, 1]"
        assert lines[2] == "ap_convention: all-point interpolated"
        assert lines[3] == "mode: rgb"
        assert "all.images: 3" in lines
        assert "night.ignored_gt: 1" in lines
        assert any(line.startswith("day.mr: ") for line in lines)

    def test_curve_csv(self):
        frames, outputs = self.dataset()
        rows = split_report(frames, outputs, EvalConfig()).curve_csv().splitlines()
        assert rows[0] == "split,fppi,miss_rate"
        assert rows[1] == "all,0.0,1.0"
        assert {row.split(",")[0] for row in rows[1:]} == {"all", "day", "night"}
