"""Detection over continuous skeleton streams.

Raw frames are sampled every ``sample_stride`` frames, grouped into
overlapping windows of ``window_len`` sampled frames, classified, and every
``nms_group`` consecutive windows are merged into at most one detection.
Detections of medical-condition classes raise alarms.

Frame spans are half-open raw-frame intervals ``[start, end)``: a sampled
frame at raw index ``r`` stands for raw frames ``r .. r + stride - 1``.
"""
from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .dataset import action_name
from .indrnn import IndRNNModel, network_forward
from .skeleton import (DEFAULT_REFERENCE_HALFSPINE, DegenerateSkeleton, NUM_JOINTS, ScaleFactor,
                       SkeletonError, SkeletonFrame, build_clip_features, compute_scale)

log = logging.getLogger(__name__)

ALARM_CLASSES = {
    41: "Sneeze/Cough", 42: "Staggering", 43: "Falling Down", 44: "Headache", 45: "Chest Pain",
    46: "Back Pain", 47: "Neck Pain", 48: "Nausea/Vomiting", 49: "Fan Self",
}


@dataclass(frozen=True)
class StreamConfig:
    sample_stride: int = 5
    window_len: int = 20
    window_hop: int = 5
    nms_group: int = 5
    score_threshold: float = 0.5
    fps: float = 30.0
    nms: str = "group"
    iou_threshold: float = 0.5
    scale_mode: str = "reference-normalized"
    reference_halfspine: float = DEFAULT_REFERENCE_HALFSPINE
    queue_size: int = 256
    # one alarm per incident: skip re-alarming a class the previous group already reported
    alarm_refractory: bool = True

    def __post_init__(self):
        for name in ("sample_stride", "window_len", "window_hop", "nms_group", "queue_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.window_hop > self.window_len:
            raise ValueError("window_hop must not exceed window_len")
        if not 0 <= self.score_threshold <= 1:
            raise ValueError("score_threshold must lie in [0, 1]")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.nms not in ("group", "iou"):
            raise ValueError("nms must be 'group' or 'iou'")

    @property
    def overlap(self) -> float:
        return (self.window_len - self.window_hop) / self.window_len

    @property
    def decision_delay(self) -> int:
        """Raw frames from a group's first window start to its decision."""
        return (self.window_len + (self.nms_group - 1) * self.window_hop) * self.sample_stride


@dataclass
class Window:
    index: int
    frames: list
    start_raw_frame: int
    end_raw_frame: int


@dataclass
class WindowPrediction:
    probabilities: np.ndarray
    start_raw_frame: int
    end_raw_frame: int
    index: int = 0


@dataclass(frozen=True)
class DetectionEvent:
    class_id: int
    score: float
    start_raw_frame: int
    end_raw_frame: int
    decision_raw_frame: int

    def __post_init__(self):
        if not self.start_raw_frame < self.end_raw_frame <= self.decision_raw_frame:
            raise ValueError(f"need start < end <= decision, got {self}")


@dataclass(frozen=True)
class AlarmEvent:
    detection: DetectionEvent
    alarm_class_name: str
    wall_time: float


@dataclass
class MalformedFrame:
    reason: str


def sample_stream(frames: Iterable[SkeletonFrame], stride: int) -> Iterator[SkeletonFrame]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    for frame in frames:
        if frame.frame_index % stride == 0:
            yield frame


def window_stream(sampled: Iterable[SkeletonFrame], config: StreamConfig) -> Iterator[Window]:
    """Window ``k`` covers sampled frames ``[k*hop, k*hop + len)`` and is
    yielded as soon as its last frame arrives."""
    buf = deque(maxlen=config.window_len)
    n = 0
    for frame in sampled:
        buf.append(frame)
        n += 1
        first = n - config.window_len
        if first >= 0 and first % config.window_hop == 0:
            frames = list(buf)
            yield Window(first // config.window_hop, frames, frames[0].frame_index,
                         frames[-1].frame_index + config.sample_stride)


def window_spans(num_sampled: int, config: StreamConfig) -> list[tuple[int, int]]:
    """Sampled-index spans ``[start, end)`` in closed form."""
    if num_sampled < config.window_len:
        return []
    count = (num_sampled - config.window_len) // config.window_hop + 1
    return [(k * config.window_hop, k * config.window_hop + config.window_len) for k in range(count)]


def classify_window(window: Window, model: IndRNNModel, config: StreamConfig,
                    fallback_scale: Optional[ScaleFactor] = None) -> WindowPrediction:
    if len(window.frames) != config.window_len:
        raise ValueError(f"window has {len(window.frames)} frames, expected {config.window_len}")
    clip = build_clip_features(window.frames, config.reference_halfspine, config.scale_mode,
                               fallback_scale=fallback_scale)
    probs = network_forward(clip, model, "eval")
    return WindowPrediction(probs, window.start_raw_frame, window.end_raw_frame, window.index)


def nms_consolidate(group: Sequence[WindowPrediction], config: StreamConfig,
                    class_labels: Optional[Sequence[int]] = None) -> Optional[DetectionEvent]:
    """Mean class probability over one disjoint group of windows.

    The argmax class (lowest index on ties) is reported when its mean reaches
    ``score_threshold``.  The decision is available once the group's last
    window is complete.
    """
    if len(group) != config.nms_group:
        raise ValueError(f"NMS group needs {config.nms_group} windows, got {len(group)}")
    mean = np.mean([p.probabilities for p in group], axis=0)
    idx = int(np.argmax(mean))
    score = float(mean[idx])
    if score < config.score_threshold:
        return None
    label = class_labels[idx] if class_labels is not None else idx
    return DetectionEvent(int(label), score, group[0].start_raw_frame, group[-1].end_raw_frame,
                          group[-1].end_raw_frame)


def temporal_iou(a: tuple, b: tuple) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def iou_suppress(predictions: Sequence[WindowPrediction], config: StreamConfig,
                 class_labels: Optional[Sequence[int]] = None) -> list[DetectionEvent]:
    """Offline alternative: every confident window is a candidate; greedily
    drop lower-scored same-class candidates overlapping a kept one by more
    than ``iou_threshold``."""
    cands = []
    for p in predictions:
        idx = int(np.argmax(p.probabilities))
        score = float(p.probabilities[idx])
        if score >= config.score_threshold:
            label = class_labels[idx] if class_labels is not None else idx
            cands.append(DetectionEvent(int(label), score, p.start_raw_frame, p.end_raw_frame, p.end_raw_frame))
    cands.sort(key=lambda e: (-e.score, e.start_raw_frame))
    kept = []
    for c in cands:
        if all(k.class_id != c.class_id or
               temporal_iou((k.start_raw_frame, k.end_raw_frame), (c.start_raw_frame, c.end_raw_frame))
               <= config.iou_threshold for k in kept):
            kept.append(c)
    return sorted(kept, key=lambda e: (e.decision_raw_frame, e.start_raw_frame))


def alarm_policy(event: DetectionEvent, alarm_classes: Optional[dict] = None,
                 clock: Callable[[], float] = time.time) -> Optional[AlarmEvent]:
    classes = ALARM_CLASSES if alarm_classes is None else alarm_classes
    name = classes.get(event.class_id)
    if name is None:
        return None
    return AlarmEvent(event, name, clock())


# --- event log ---------------------------------------------------------------

def format_event(event) -> str:
    if isinstance(event, AlarmEvent):
        kind, det, name = "ALARM", event.detection, event.alarm_class_name
    else:
        kind, det, name = "DETECTION", event, action_name(event.class_id)
    return (f"{kind}\t{det.class_id}\t{name}\t{det.score:.6f}\t"
            f"{det.start_raw_frame}\t{det.end_raw_frame}\t{det.decision_raw_frame}")


def parse_event_log(lines: Iterable[str]) -> list[tuple[str, DetectionEvent]]:
    out = []
    for n, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            raise ValueError(f"event log line {n}: expected 7 tab-separated fields, got {len(parts)}")
        kind = parts[0]
        if kind not in ("DETECTION", "ALARM"):
            raise ValueError(f"event log line {n}: unknown event type {kind!r}")
        try:
            det = DetectionEvent(int(parts[1]), float(parts[3]), int(parts[4]), int(parts[5]), int(parts[6]))
        except ValueError as exc:
            raise ValueError(f"event log line {n}: {exc}") from None
        out.append((kind, det))
    return out


class EventLogWriter:
    """Sink writing one tab-separated line per event, flushed immediately."""

    def __init__(self, fh):
        self.fh = fh

    def __call__(self, event):
        self.fh.write(format_event(event) + "\n")
        self.fh.flush()


# --- SKW1 frames and sources -------------------------------------------------------

SKW1_MAGIC = b"SKW1"
_SKW1 = struct.Struct("<4sI60f")
SKW1_FRAME_SIZE = _SKW1.size  # 248


def encode_frame(frame: SkeletonFrame) -> bytes:
    return _SKW1.pack(SKW1_MAGIC, frame.frame_index, *frame.joints.astype(np.float32).ravel())


def decode_frame(data: bytes):
    """``SkeletonFrame`` for a well-formed record, ``MalformedFrame`` otherwise."""
    if len(data) != SKW1_FRAME_SIZE:
        return MalformedFrame(f"short frame ({len(data)} bytes)")
    magic, index = struct.unpack_from("<4sI", data)
    if magic != SKW1_MAGIC:
        return MalformedFrame(f"bad magic {magic!r}")
    coords = np.frombuffer(data, "<f4", 3 * NUM_JOINTS, 8).astype(np.float64).reshape(NUM_JOINTS, 3)
    try:
        return SkeletonFrame(coords, index)
    except SkeletonError as exc:
        return MalformedFrame(str(exc))


def write_replay(path, frames: Iterable[SkeletonFrame]) -> int:
    n = 0
    with open(path, "wb") as fh:
        for frame in frames:
            fh.write(encode_frame(frame))
            n += 1
    return n


def iter_frames(read: Callable[[int], bytes], chunk: int = 1 << 16) -> Iterator:
    """Decode SKW1 records from a byte reader, resynchronising on bad magic."""
    buf = bytearray()
    eof = False
    while True:
        while len(buf) < SKW1_FRAME_SIZE and not eof:
            data = read(chunk)
            if not data:
                eof = True
            buf += data
        if len(buf) < SKW1_FRAME_SIZE:
            if buf:
                yield MalformedFrame(f"truncated trailing frame ({len(buf)} bytes)")
            return
        if buf[:4] != SKW1_MAGIC:
            nxt = buf.find(SKW1_MAGIC, 1)
            dropped = len(buf) if nxt < 0 else nxt
            if nxt < 0:
                # keep a possible partial magic at the tail
                dropped = max(len(buf) - 3, 1)
            del buf[:dropped]
            yield MalformedFrame(f"bad magic, skipped {dropped} bytes")
            continue
        rec = bytes(buf[:SKW1_FRAME_SIZE])
        del buf[:SKW1_FRAME_SIZE]
        yield decode_frame(rec)


def replay_source(path) -> Iterator:
    # opened eagerly so a missing file fails here rather than mid-pipeline
    fh = open(path, "rb")

    def frames():
        with fh:
            yield from iter_frames(fh.read)
    return frames()


def tcp_source(host: str, port: int, connect_timeout: float = 10.0) -> Iterator:
    """Frames from a TCP peer sending SKW1 records; ends when the peer closes."""
    sock = socket.create_connection((host, port), timeout=connect_timeout)
    sock.settimeout(None)

    def read(n):
        try:
            return sock.recv(n)
        except OSError:
            return b""

    def frames():
        with sock:
            yield from iter_frames(read)
    return frames()


def parse_source(spec: str):
    """``file:<path>`` or ``tcp:<host>:<port>`` -> (iterator, is_live)."""
    if spec.startswith("file:"):
        return replay_source(spec[5:]), False
    if spec.startswith("tcp:"):
        host, _, port = spec[4:].rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad tcp source {spec!r}; expected tcp:<host>:<port>")
        return tcp_source(host, int(port)), True
    raise ValueError(f"unknown source {spec!r}; expected file:<path> or tcp:<host>:<port>")


# --- pipeline ----------------------------------------------------------------

@dataclass
class PipelineStats:
    frames_in: int = 0
    frames_sampled: int = 0
    malformed: int = 0
    dropped: int = 0
    windows: int = 0
    groups: int = 0
    detections: int = 0
    alarms: int = 0
    decision_delays: list = field(default_factory=list)   # raw frames, group start -> decision
    compute_seconds: list = field(default_factory=list)   # per group

    def summary(self, fps: float) -> dict:
        delays = self.decision_delays
        return {
            "frames_in": self.frames_in, "frames_sampled": self.frames_sampled,
            "malformed": self.malformed, "dropped": self.dropped, "windows": self.windows,
            "groups": self.groups, "detections": self.detections, "alarms": self.alarms,
            "mean_decision_delay_frames": float(np.mean(delays)) if delays else float("nan"),
            "mean_decision_delay_s": float(np.mean(delays)) / fps if delays else float("nan"),
            "mean_compute_s": float(np.mean(self.compute_seconds)) if self.compute_seconds else float("nan"),
        }


@dataclass
class PipelineResult:
    events: list
    stats: PipelineStats
    predictions: list


class Detector:
    """Incremental sample -> window -> classify -> group stage."""

    def __init__(self, model: IndRNNModel, config: StreamConfig, alarm_classes=None,
                 clock: Callable[[], float] = time.time):
        self.model = model
        self.config = config
        self.alarm_classes = ALARM_CLASSES if alarm_classes is None else alarm_classes
        self.clock = clock
        self.stats = PipelineStats()
        self.predictions: list[WindowPrediction] = []
        self._group: list[WindowPrediction] = []
        self._group_compute = 0.0
        self._buf: deque = deque(maxlen=config.window_len)
        self._n_sampled = 0
        self._last_index = -1
        self._scale: Optional[ScaleFactor] = None
        self._prev_group_class: Optional[int] = None

    def push(self, item) -> list:
        cfg = self.config
        if isinstance(item, MalformedFrame):
            self.stats.malformed += 1
            log.debug("malformed frame: %s", item.reason)
            return []
        if item.frame_index <= self._last_index:
            self.stats.malformed += 1
            log.debug("out-of-order frame %d after %d", item.frame_index, self._last_index)
            return []
        self._last_index = item.frame_index
        self.stats.frames_in += 1
        if item.frame_index % cfg.sample_stride:
            return []
        self.stats.frames_sampled += 1
        self._buf.append(item)
        self._n_sampled += 1
        first = self._n_sampled - cfg.window_len
        if first < 0 or first % cfg.window_hop:
            return []
        frames = list(self._buf)
        window = Window(first // cfg.window_hop, frames, frames[0].frame_index,
                        frames[-1].frame_index + cfg.sample_stride)
        t0 = time.perf_counter()
        try:
            pred = classify_window(window, self.model, cfg, self._scale)
        except DegenerateSkeleton:
            self.stats.malformed += 1
            return []
        self._remember_scale(frames)
        self._group_compute += time.perf_counter() - t0
        self.stats.windows += 1
        self.predictions.append(pred)
        if cfg.nms != "group":
            return []
        self._group.append(pred)
        if len(self._group) < cfg.nms_group:
            return []
        group, self._group = self._group, []
        self.stats.groups += 1
        self.stats.compute_seconds.append(self._group_compute)
        self._group_compute = 0.0
        det = nms_consolidate(group, cfg, self.model.class_labels)
        prev, self._prev_group_class = self._prev_group_class, (det.class_id if det else None)
        if det is None:
            return []
        return self._emit(det, allow_alarm=not (cfg.alarm_refractory and prev == det.class_id))

    def _remember_scale(self, frames):
        for f in reversed(frames):
            try:
                self._scale = compute_scale(f, self.config.reference_halfspine, self.config.scale_mode)
                return
            except DegenerateSkeleton:
                continue

    def _emit(self, det: DetectionEvent, allow_alarm: bool = True) -> list:
        self.stats.detections += 1
        self.stats.decision_delays.append(det.decision_raw_frame - det.start_raw_frame)
        out = [det]
        alarm = alarm_policy(det, self.alarm_classes, self.clock) if allow_alarm else None
        if alarm:
            self.stats.alarms += 1
            out.append(alarm)
        return out

    def finish(self) -> list:
        if self.config.nms != "iou":
            return []
        out = []
        for det in iou_suppress(self.predictions, self.config, self.model.class_labels):
            out += self._emit(det)
        return out


_DONE = object()


def run_pipeline(source: Iterable, model: IndRNNModel, config: StreamConfig,
                 sinks: Sequence[Callable] = (), threaded: bool = False, live: bool = False,
                 alarm_classes: Optional[dict] = None,
                 clock: Callable[[], float] = time.time) -> PipelineResult:
    """Run detection over a frame source and feed every event to ``sinks``.

    ``threaded`` splits ingestion, inference and emission across threads
    joined by bounded queues.  Replay sources block on a full queue; live
    sources (``live=True``) drop the oldest queued frame instead.  The
    single-threaded path is the reference and yields the same events.
    """
    detector = Detector(model, config, alarm_classes, clock)
    events = []

    def emit(ev):
        events.append(ev)
        for sink in sinks:
            sink(ev)

    if not threaded:
        try:
            for item in source:
                for ev in detector.push(item):
                    emit(ev)
        except (ConnectionError, OSError) as exc:
            log.warning("source disconnected: %s", exc)
        for ev in detector.finish():
            emit(ev)
        return PipelineResult(events, detector.stats, detector.predictions)

    frames_q: queue.Queue = queue.Queue(maxsize=config.queue_size)
    events_q: queue.Queue = queue.Queue(maxsize=config.queue_size)
    errors = []
    drop_lock = threading.Lock()

    def ingest():
        try:
            for item in source:
                if live:
                    with drop_lock:
                        while True:
                            try:
                                frames_q.put_nowait(item)
                                break
                            except queue.Full:
                                try:
                                    frames_q.get_nowait()
                                    detector.stats.dropped += 1
                                except queue.Empty:
                                    pass
                else:
                    frames_q.put(item)
        except (ConnectionError, OSError) as exc:
            log.warning("source disconnected: %s", exc)
        except BaseException as exc:  # surfaced to the caller after join
            errors.append(exc)
        finally:
            frames_q.put(_DONE)

    def infer():
        try:
            while True:
                item = frames_q.get()
                if item is _DONE:
                    break
                for ev in detector.push(item):
                    events_q.put(ev)
            for ev in detector.finish():
                events_q.put(ev)
        except BaseException as exc:
            errors.append(exc)
        finally:
            events_q.put(_DONE)

    threads = [threading.Thread(target=ingest, name="ingest", daemon=True),
               threading.Thread(target=infer, name="infer", daemon=True)]
    for t in threads:
        t.start()
    while True:
        ev = events_q.get()
        if ev is _DONE:
            break
        emit(ev)
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return PipelineResult(events, detector.stats, detector.predictions)
