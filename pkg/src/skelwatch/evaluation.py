"""Clip accuracy, event matching by temporal IoU, and average precision."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .dataset import action_name
from .streaming import DetectionEvent, temporal_iou


@dataclass(frozen=True)
class GroundTruthInterval:
    class_id: int
    start_raw_frame: int
    end_raw_frame: int

    def __post_init__(self):
        if not self.start_raw_frame < self.end_raw_frame:
            raise ValueError(f"ground truth needs start < end, got {self}")


@dataclass
class EvalReport:
    accuracy: Optional[float] = None
    per_class_ap: dict = field(default_factory=dict)
    map: Optional[float] = None
    confusion: dict = field(default_factory=dict)
    mean_decision_latency_s: Optional[float] = None


def accuracy(predictions: Sequence, labels: Sequence) -> float:
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return sum(int(p == l) for p, l in zip(predictions, labels)) / len(labels)


@dataclass
class MatchResult:
    matches: list             # (detection index, ground-truth index, iou)
    unmatched_detections: list
    unmatched_ground_truth: list


def match_detections(detections: Sequence[DetectionEvent], ground_truth: Sequence[GroundTruthInterval],
                     iou_threshold: float = 0.5) -> MatchResult:
    """Greedy matching in the given (score-descending) order.

    Each detection takes the free same-class interval with the highest IoU,
    provided it reaches ``iou_threshold``; ties go to the earlier interval.
    """
    taken = [False] * len(ground_truth)
    matches, unmatched = [], []
    for i, det in enumerate(detections):
        best, best_iou = -1, -1.0
        span = (det.start_raw_frame, det.end_raw_frame)
        for j, gt in enumerate(ground_truth):
            if taken[j] or gt.class_id != det.class_id:
                continue
            iou = temporal_iou(span, (gt.start_raw_frame, gt.end_raw_frame))
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= iou_threshold:
            taken[best] = True
            matches.append((i, best, best_iou))
        else:
            unmatched.append(i)
    return MatchResult(matches, unmatched, [j for j, t in enumerate(taken) if not t])


def ap_from_hits(hits: Sequence[bool], num_positives: int) -> float:
    """All-point interpolated area under the precision-recall curve."""
    if num_positives <= 0:
        raise ValueError("AP needs at least one positive")
    hits = np.asarray(hits, dtype=bool)
    if hits.size == 0:
        return 0.0
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    recall = tp / num_positives
    precision = tp / (tp + fp)
    # monotone precision envelope, then sum over recall steps
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def _sort_by_score(dets):
    return sorted(dets, key=lambda d: -d.score)


def average_precision(detections: Sequence[DetectionEvent], ground_truth: Sequence[GroundTruthInterval],
                      class_id: int, iou_threshold: float = 0.5) -> Optional[float]:
    """Event-level AP for one class; None when the class has no ground truth."""
    gts = [g for g in ground_truth if g.class_id == class_id]
    if not gts:
        return None
    dets = _sort_by_score([d for d in detections if d.class_id == class_id])
    res = match_detections(dets, gts, iou_threshold)
    hit = set(i for i, _, _ in res.matches)
    return ap_from_hits([i in hit for i in range(len(dets))], len(gts))


def evaluate_stream(events: Iterable, ground_truth: Sequence[GroundTruthInterval],
                    iou_threshold: float = 0.5, fps: float = 30.0) -> EvalReport:
    """Per-class AP and mAP over detection events.

    ``events`` may mix ``DetectionEvent`` and ``("DETECTION"|"ALARM", event)``
    pairs as read from an event log; alarm lines duplicate detections and are
    ignored.
    """
    dets = []
    for ev in events:
        if isinstance(ev, tuple):
            kind, ev = ev
            if kind != "DETECTION":
                continue
        if isinstance(ev, DetectionEvent):
            dets.append(ev)
    report = EvalReport()
    classes = sorted({g.class_id for g in ground_truth})
    for c in classes:
        report.per_class_ap[c] = average_precision(dets, ground_truth, c, iou_threshold)
    for c in sorted({g.class_id for g in ground_truth} | {d.class_id for d in dets}):
        cd = _sort_by_score([d for d in dets if d.class_id == c])
        cg = [g for g in ground_truth if g.class_id == c]
        res = match_detections(cd, cg, iou_threshold)
        report.confusion[c] = {"gt": len(cg), "tp": len(res.matches), "fp": len(res.unmatched_detections),
                               "fn": len(res.unmatched_ground_truth)}
    if report.per_class_ap:
        report.map = float(np.mean(list(report.per_class_ap.values())))
    if dets:
        report.mean_decision_latency_s = float(np.mean([d.decision_raw_frame - d.start_raw_frame
                                                        for d in dets])) / fps
    return report


def evaluate_clip_predictions(probabilities: np.ndarray, labels: Sequence[int],
                              class_labels: Sequence[int]) -> EvalReport:
    """Accuracy, per-class ranking AP and a confusion matrix for trimmed clips.

    ``probabilities`` is ``(N, C)`` over ``class_labels``; ``labels`` are
    action ids.  Ties in the argmax go to the lower class index.
    """
    probs = np.asarray(probabilities)
    labels = [int(l) for l in labels]
    pred = [class_labels[i] for i in np.argmax(probs, axis=1)]
    report = EvalReport(accuracy=accuracy(pred, labels))
    for k, c in enumerate(class_labels):
        positives = sum(l == c for l in labels)
        if positives == 0:
            continue
        order = np.argsort(-probs[:, k], kind="stable")
        report.per_class_ap[c] = ap_from_hits([labels[i] == c for i in order], positives)
    if report.per_class_ap:
        report.map = float(np.mean(list(report.per_class_ap.values())))
    for t, p in zip(labels, pred):
        report.confusion[(t, p)] = report.confusion.get((t, p), 0) + 1
    return report


# --- files -------------------------------------------------------------------

def read_ground_truth(lines: Iterable[str]) -> list[GroundTruthInterval]:
    out = []
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"ground truth line {n}: expected class_id, start, end")
        try:
            out.append(GroundTruthInterval(*(int(p) for p in parts)))
        except ValueError as exc:
            raise ValueError(f"ground truth line {n}: {exc}") from None
    return out


def format_ground_truth(intervals: Iterable[GroundTruthInterval]) -> str:
    return "".join(f"{g.class_id}\t{g.start_raw_frame}\t{g.end_raw_frame}\n" for g in intervals)


def _fmt(v) -> str:
    return "nan" if v is None else f"{v:.6f}"


def format_report(report: EvalReport, per_class: bool = True) -> str:
    lines = []
    if report.accuracy is not None:
        lines.append(f"accuracy\t{_fmt(report.accuracy)}")
    lines.append(f"map\t{_fmt(report.map)}")
    lines.append(f"classes_evaluated\t{len(report.per_class_ap)}")
    if report.mean_decision_latency_s is not None:
        lines.append(f"mean_decision_latency_s\t{_fmt(report.mean_decision_latency_s)}")
    if per_class:
        lines.append("")
        lines.append("class_id\tclass_name\tap")
        for c, ap in sorted(report.per_class_ap.items()):
            lines.append(f"{c}\t{action_name(c)}\t{_fmt(ap)}")
        if report.confusion and all(isinstance(k, int) for k in report.confusion):
            lines.append("")
            lines.append("class_id\tgt\ttp\tfp\tfn")
            for c, v in sorted(report.confusion.items()):
                lines.append(f"{c}\t{v['gt']}\t{v['tp']}\t{v['fp']}\t{v['fn']}")
        elif report.confusion:
            lines.append("")
            lines.append("true_class\tpredicted_class\tcount")
            for (t, p), n in sorted(report.confusion.items()):
                lines.append(f"{t}\t{p}\t{n}")
    return "\n".join(lines) + "\n"
