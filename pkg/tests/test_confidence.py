"""
Tests for the confidence head, its training target and the binned report.
"""
import numpy as np
import pytest

from autograd import Tensor, paused
from data.scene import generate_scene
from evaluation.confidence_bins import BIN_EDGES, ConfidenceBins, bin_index, confidence_report
from model import build_model, model_inputs
from model.checkpoint import checkpoint_digest
from model.confidence import attach_confidence, build_confidence_head, tcp_target, train_confidence
from model.detector import BoundingBox, DenseOutput, Detection
from training.inference import confidence_samples, detect_frames
from utils.config import EvalConfig, SceneSpec
from utils.errors import MissingConfidenceError, ShapeError


def maps(pred, gt):
    zeros = Tensor(np.zeros((1, 4, 1, len(pred))))
    shape = (1, 1, 1, len(pred))
    return (DenseOutput(score=Tensor(np.reshape(pred, shape)), geometry=zeros, stride=1),
            DenseOutput(score=Tensor(np.reshape(gt, shape).astype(np.float64)), geometry=zeros, stride=1))


def brute_force_bins(detections, gt, iou_match):
    tp, fp = [0] * 5, [0] * 5
    used = set()
    for det in sorted(detections, key=lambda d: -d.score):
        best, best_iou = None, -1.0
        for j, g in enumerate(gt):
            if j in used:
                continue
            iou = det.box.iou(g)
            if iou > best_iou:
                best, best_iou = j, iou
        b = min(int(det.confidence / 0.2), 4)
        if best is not None and best_iou >= iou_match:
            used.add(best)
            tp[b] += 1
        else:
            fp[b] += 1
    return tp, fp


@pytest.fixture
def frames():
    spec = SceneSpec(height=16, width=16, min_ped_height=8.0, max_ped_height=14.0)
    return [generate_scene(spec, seed=s) for s in range(3)]


class TestTcpTarget:
    def test_examples(self):
        pred, gt = maps(np.array([1.0, 0.7, 0.5, 0.5]), np.array([1, 0, 1, 0]))
        np.testing.assert_allclose(tcp_target(pred, gt).data.reshape(-1), [1.0, 0.3, 0.5, 0.5])

    def test_range(self, rng):
        pred, gt = maps(rng.random(50), rng.random(50) > 0.5)
        target = tcp_target(pred, gt).data
        assert np.all((target >= 0) & (target <= 1))

    def test_shape_mismatch(self):
        pred, _ = maps(np.array([0.5, 0.5]), np.array([1, 0]))
        _, gt = maps(np.array([0.5]), np.array([1]))
        with pytest.raises(ShapeError):
            tcp_target(pred, gt)


class TestTrainConfidence:
    def test_detector_stays_frozen(self, tiny_model_config, frames):
        model = build_model(tiny_model_config, seed=0)
        before = checkpoint_digest(model.state_dict())
        head = build_confidence_head(model, 4)
        train_confidence(head, model, confidence_samples(model, frames), epochs=2)
        assert checkpoint_digest(model.state_dict()) == before
        assert all(p.grad is None for p in model.parameters())

    def test_loss_goes_down(self, tiny_model_config, frames):
        model = build_model(tiny_model_config, seed=0)
        head = build_confidence_head(model, 4)
        history = train_confidence(head, model, confidence_samples(model, frames), epochs=6, lr=0.05)
        assert len(history) == 6
        assert history[-1] < history[0]

    def test_head_matches_score_resolution(self, tiny_model_config, frames):
        model = build_model(tiny_model_config, seed=0)
        head = build_confidence_head(model, 4)
        rgb, thermal = model_inputs(frames[0].rgb, frames[0].thermal)
        with paused():
            dense, fused = model(rgb, thermal)
            cmap = head(fused)
        assert cmap.shape == dense.score.shape
        assert np.all((cmap.data > 0) & (cmap.data < 1))

    def test_cancel_before_first_epoch(self, tiny_model_config, frames):
        model = build_model(tiny_model_config, seed=0)
        head = build_confidence_head(model, 4)
        assert train_confidence(head, model, confidence_samples(model, frames), 3, cancel_check=lambda: True) == []

    def test_detections_gain_confidence(self, tiny_model_config, frames):
        model = build_model(tiny_model_config, seed=0)
        head = build_confidence_head(model, 4)
        results, fps = detect_frames(model, frames, EvalConfig(score_thresh=0.01), head=head)
        assert fps > 0
        dets = [d for frame in results for d in frame]
        assert dets
        assert all(d.confidence is not None and 0.0 <= d.confidence <= 1.0 for d in dets)

    def test_attach_reads_source_pixel(self):
        cmap = Tensor(np.arange(6, dtype=np.float32).reshape(1, 1, 2, 3) / 10)
        det = Detection(box=BoundingBox(0, 0, 1, 1), score=0.9, source=(1, 2))
        attach_confidence([det], cmap)
        assert det.confidence == pytest.approx(0.5)

    def test_attach_needs_source(self):
        with pytest.raises(ShapeError):
            attach_confidence([Detection(box=BoundingBox(0, 0, 1, 1), score=0.9)], Tensor(np.zeros((1, 1, 2, 2))))


class TestConfidenceReport:
    def test_bin_edges(self):
        assert BIN_EDGES == (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
        assert [bin_index(v) for v in (0.0, 0.19, 0.2, 0.59, 0.8, 0.99, 1.0)] == [0, 0, 1, 2, 4, 4, 4]

    def test_all_correct_high_confidence(self):
        gt = [BoundingBox(10 * i, 0, 10 * i + 5, 10) for i in range(4)]
        dets = [Detection(box=g, score=0.5 + 0.1 * i, confidence=0.9) for i, g in enumerate(gt)]
        bins = confidence_report(dets, gt, 0.5)
        assert bins.tp_counts == [0, 0, 0, 0, 4]
        assert bins.tp_rate(4) == 1.0
        assert all(bins.tp_rate(i) is None for i in range(4))

    def test_all_false_low_confidence(self):
        dets = [Detection(box=BoundingBox(50, 50, 60, 60), score=0.8, confidence=0.1)]
        bins = confidence_report(dets, [BoundingBox(0, 0, 5, 5)], 0.5)
        assert bins.fp_counts[0] == 1
        assert bins.fp_rate(0) == 1.0

    def test_no_ground_truth_makes_everything_false(self):
        dets = [Detection(box=BoundingBox(0, 0, 5, 5), score=0.8, confidence=0.5)]
        assert confidence_report(dets, [], 0.5).fp_counts == [0, 0, 1, 0, 0]

    def test_mixed_case_matches_brute_force(self, rng):
        gt = [BoundingBox(12 * i, 0, 12 * i + 8, 20) for i in range(8)]
        dets = []
        for k in range(20):
            g = gt[k % 8]
            jitter = rng.uniform(-3, 3)
            if k % 5 == 4:
                box = BoundingBox(200 + k, 200, 210 + k, 220)
            else:
                box = BoundingBox(g.x_t + jitter, g.y_t, g.x_b + jitter, g.y_b)
            dets.append(Detection(box=box, score=float(rng.random()), confidence=float(rng.random())))
        bins = confidence_report(dets, gt, 0.5)
        tp, fp = brute_force_bins(dets, gt, 0.5)
        assert bins.tp_counts == tp
        assert bins.fp_counts == fp
        assert bins.total == 20

    def test_missing_confidence(self):
        with pytest.raises(MissingConfidenceError):
            confidence_report([Detection(box=BoundingBox(0, 0, 1, 1), score=0.5)], [], 0.5)

    def test_table_layout(self):
        bins = ConfidenceBins([0, 1, 0, 0, 3], [0, 1, 0, 2, 1])
        lines = bins.to_table().splitlines()
        assert len(lines) == 7
        assert lines[1] == "bin_lo bin_hi tp_count fp_count tp_rate fp_rate"
        assert lines[2] == "0.0 0.2 0 0 - -"
        assert lines[3] == "0.2 0.4 1 1 0.5000 0.5000"
        assert lines[6] == "0.8 1.0 3 1 0.7500 0.2500"

    def test_merge(self):
        merged = ConfidenceBins([1, 0, 0, 0, 0], [0, 0, 2, 0, 0]).merge(ConfidenceBins([0, 0, 0, 0, 1], [1] * 5))
        assert merged.tp_counts == [1, 0, 0, 0, 1]
        assert merged.fp_counts == [1, 1, 3, 1, 1]
        assert merged.total == 8
