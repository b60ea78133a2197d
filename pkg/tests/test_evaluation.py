import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skelwatch.evaluation import (
    GroundTruthInterval, accuracy, ap_from_hits, average_precision, evaluate_clip_predictions,
    evaluate_stream, format_ground_truth, format_report, match_detections, read_ground_truth,
)
from skelwatch.streaming import DetectionEvent


def det(c, score, s, e):
    return DetectionEvent(c, score, s, e, e)


def gt(c, s, e):
    return GroundTruthInterval(c, s, e)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_two_thirds(self):
        assert accuracy([1, 2, 4], [1, 2, 3]) == pytest.approx(2 / 3)

    def test_permutation_invariant(self, rng):
        p, l_ = rng.integers(0, 4, 30), rng.integers(0, 4, 30)
        perm = rng.permutation(30)
        assert accuracy(p, l_) == accuracy(p[perm], l_[perm])

    def test_errors(self):
        with pytest.raises(ValueError):
            accuracy([1], [1, 2])
        with pytest.raises(ValueError):
            accuracy([], [])


class TestMatching:
    def test_exact(self):
        res = match_detections([det(1, 0.9, 0, 10)], [gt(1, 0, 10)])
        assert res.matches == [(0, 0, 1.0)]

    def test_disjoint(self):
        res = match_detections([det(1, 0.9, 0, 10)], [gt(1, 100, 110)])
        assert res.matches == [] and res.unmatched_detections == [0] and res.unmatched_ground_truth == [0]

    def test_low_iou(self):
        assert match_detections([det(1, 0.9, 0, 10)], [gt(1, 5, 15)]).matches == []

    def test_never_cross_class_or_double_book(self):
        res = match_detections([det(1, 0.9, 0, 10), det(1, 0.8, 0, 10), det(2, 0.7, 0, 10)], [gt(1, 0, 10)])
        assert res.matches == [(0, 0, 1.0)] and res.unmatched_detections == [1, 2]


class TestAP:
    def test_single_hit(self):
        assert average_precision([det(1, 0.9, 0, 10)], [gt(1, 0, 10)], 1) == 1.0

    def test_wrong_then_right(self):
        dets = [det(1, 0.9, 50, 60), det(1, 0.5, 0, 10)]
        assert average_precision(dets, [gt(1, 0, 10)], 1) == 0.5

    def test_no_detections(self):
        assert average_precision([], [gt(1, 0, 10)], 1) == 0.0

    def test_class_without_truth(self):
        assert average_precision([det(2, 0.9, 0, 10)], [gt(1, 0, 10)], 2) is None

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.booleans(), max_size=30), st.integers(1, 10))
    def test_bounds_and_top_hit_monotonicity(self, hits, extra_pos):
        npos = sum(hits) + extra_pos
        ap = ap_from_hits(hits, npos)
        assert 0.0 <= ap <= 1.0
        assert ap_from_hits([True] + hits, npos) >= ap - 1e-12


class TestStream:
    # hand-built fixture; expected values worked out on paper:
    # class 1 hits (T, F, T) with 2 positives -> P = 1, 1/2, 2/3 at R = .5, .5, 1 -> AP = .5 + .5 * 2/3 = 5/6
    # class 2 hits (F, T) with 1 positive      -> AP = 1/2
    # class 3 no detections                    -> AP = 0
    # class 4 has no ground truth              -> excluded; mAP = (5/6 + 1/2 + 0) / 3 = 4/9
    TRUTH = [gt(1, 0, 100), gt(1, 200, 300), gt(2, 400, 500), gt(3, 600, 700)]
    DETS = [det(1, 0.9, 0, 100), det(1, 0.8, 500, 600), det(1, 0.7, 210, 300),
            det(2, 0.6, 450, 550), det(2, 0.4, 400, 490), det(4, 0.99, 0, 100)]

    def test_mixed_fixture(self):
        rep = evaluate_stream(self.DETS, self.TRUTH)
        assert rep.per_class_ap == pytest.approx({1: 5 / 6, 2: 0.5, 3: 0.0})
        assert rep.map == pytest.approx(4 / 9)

    def test_perfect(self):
        rep = evaluate_stream([det(g.class_id, 0.9, g.start_raw_frame, g.end_raw_frame) for g in self.TRUTH],
                              self.TRUTH)
        assert rep.map == 1.0

    def test_empty_log(self):
        assert evaluate_stream([], self.TRUTH).map == 0.0

    def test_alarm_lines_ignored(self):
        pairs = [("DETECTION", d) for d in self.DETS] + [("ALARM", det(2, 1.0, 900, 1000))]
        assert evaluate_stream(pairs, self.TRUTH).map == pytest.approx(4 / 9)

    def test_latency(self):
        rep = evaluate_stream([DetectionEvent(1, 0.9, 0, 100, 200)], [gt(1, 0, 100)], fps=20.0)
        assert rep.mean_decision_latency_s == pytest.approx(10.0)

    def test_ground_truth_round_trip(self):
        text = format_ground_truth(self.TRUTH)
        assert read_ground_truth(text.splitlines(keepends=True)) == self.TRUTH
        with pytest.raises(ValueError):
            read_ground_truth(["1\t10\t5\n"])

    def test_report_mentions_every_class(self):
        text = format_report(evaluate_stream(self.DETS, self.TRUTH))
        assert "map\t0.444444" in text
        for c in ("1", "2", "3"):
            assert any(line.startswith(c + "\t") for line in text.splitlines())


class TestClipEval:
    def test_confusion_and_accuracy(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
        rep = evaluate_clip_predictions(probs, [8, 43, 43], (8, 43))
        assert rep.accuracy == pytest.approx(2 / 3)
        assert rep.confusion == {(8, 8): 1, (43, 43): 1, (43, 8): 1}
