"""Skeleton recordings: NTU ``.skeleton`` parsing, class filtering, splits,
manifests, and synthetic desk-scale datasets.
"""
from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .skeleton import NUM_JOINTS, SkeletonFrame

log = logging.getLogger(__name__)

RAW_JOINTS = 25
MAX_TRAINING_LABEL = 49  # labels 50..60 are two-person interactions
NUM_SUBJECTS = 40
NUM_CAMERAS = 3
# standard NTU RGB+D 60 cross-subject training performers
CROSS_SUBJECT_TRAIN = frozenset({1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38})
CROSS_VIEW_TRAIN = frozenset({2, 3})

NTU_ACTIONS = {
    1: "drink water", 2: "eat meal/snack", 3: "brushing teeth", 4: "brushing hair", 5: "drop",
    6: "pickup", 7: "throw", 8: "sitting down", 9: "standing up", 10: "clapping",
    11: "reading", 12: "writing", 13: "tear up paper", 14: "wear jacket", 15: "take off jacket",
    16: "wear a shoe", 17: "take off a shoe", 18: "wear on glasses", 19: "take off glasses",
    20: "put on a hat/cap", 21: "take off a hat/cap", 22: "cheer up", 23: "hand waving",
    24: "kicking something", 25: "reach into pocket", 26: "hopping", 27: "jump up",
    28: "make a phone call", 29: "playing with phone/tablet", 30: "typing on a keyboard",
    31: "pointing to something", 32: "taking a selfie", 33: "check time", 34: "rub two hands together",
    35: "nod head/bow", 36: "shake head", 37: "wipe face", 38: "salute", 39: "put the palms together",
    40: "cross hands in front",
    41: "Sneeze/Cough", 42: "Staggering", 43: "Falling Down", 44: "Headache", 45: "Chest Pain",
    46: "Back Pain", 47: "Neck Pain", 48: "Nausea/Vomiting", 49: "Fan Self",
    50: "punching/slapping other person", 51: "kicking other person", 52: "pushing other person",
    53: "pat on back of other person", 54: "point finger at the other person", 55: "hugging other person",
    56: "giving something to other person", 57: "touch other person's pocket", 58: "handshaking",
    59: "walking towards each other", 60: "walking apart from each other",
}


def action_name(label: int) -> str:
    return NTU_ACTIONS.get(int(label), f"class {label}")


class SkeletonParseError(ValueError):
    pass


@dataclass
class ActionClip:
    frames: list
    label: int
    subject_id: int
    camera_id: int
    setup_id: int = 0
    replication_id: int = 0
    name: str = ""
    rejected_frames: int = 0

    def __post_init__(self):
        if len(self.frames) < 1:
            raise SkeletonParseError("an action clip needs at least one frame")


_NAME_RE = re.compile(r"S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})")


def parse_filename(name: str) -> dict:
    """Metadata from an ``SsssCcccPpppRrrrAaaa`` file name."""
    m = _NAME_RE.search(Path(name).name)
    if not m:
        raise SkeletonParseError(f"file name {name!r} does not match SsssCcccPpppRrrrAaaa")
    s, c, p, r, a = (int(g) for g in m.groups())
    return {"setup_id": s, "camera_id": c, "subject_id": p, "replication_id": r, "label": a}


def select_20_joints(raw25) -> SkeletonFrame:
    """Keep joints 1..20; 21..25 (spine top, hand tips, thumbs) are dropped."""
    arr = np.asarray(raw25, dtype=np.float64)
    if arr.shape != (RAW_JOINTS, 3):
        raise SkeletonParseError(f"expected {RAW_JOINTS} joints x 3, got shape {arr.shape}")
    return SkeletonFrame(arr[:NUM_JOINTS])


class _Lines:
    def __init__(self, text: str):
        self.lines = [ln for ln in text.splitlines() if ln.strip()]
        self.pos = 0

    def next(self, what: str) -> list[str]:
        if self.pos >= len(self.lines):
            raise SkeletonParseError(f"unexpected end of file while reading {what}")
        fields = self.lines[self.pos].split()
        self.pos += 1
        return fields

    def count(self, what: str) -> int:
        fields = self.next(what)
        try:
            n = int(fields[0])
        except ValueError:
            raise SkeletonParseError(f"non-integer {what}: {fields[0]!r}") from None
        if n < 0 or len(fields) != 1:
            raise SkeletonParseError(f"malformed {what} line {' '.join(fields)!r}")
        return n


def _parse_bodies(text: str):
    """Per frame, a dict ``body_id -> (25, 3) array``."""
    src = _Lines(text)
    n_frames = src.count("frame count")
    frames = []
    for f in range(n_frames):
        n_bodies = src.count(f"body count (frame {f})")
        bodies = {}
        for b in range(n_bodies):
            meta = src.next(f"body metadata (frame {f})")
            body_id = meta[0]
            n_joints = src.count(f"joint count (frame {f})")
            if n_joints != RAW_JOINTS:
                raise SkeletonParseError(f"frame {f} body {b}: expected {RAW_JOINTS} joints, got {n_joints}")
            joints = np.empty((RAW_JOINTS, 3))
            for j in range(RAW_JOINTS):
                fields = src.next(f"joint {j + 1} (frame {f})")
                if len(fields) < 3:
                    raise SkeletonParseError(f"frame {f} joint {j + 1}: fewer than 3 fields")
                try:
                    joints[j] = [float(v) for v in fields[:3]]
                except ValueError:
                    raise SkeletonParseError(f"frame {f} joint {j + 1}: non-numeric coordinate") from None
            if not np.all(np.isfinite(joints)):
                raise SkeletonParseError(f"frame {f} body {b}: non-finite coordinate")
            bodies[body_id] = joints
        frames.append(bodies)
    if src.pos != len(src.lines):
        raise SkeletonParseError(f"{len(src.lines) - src.pos} trailing lines after {n_frames} frames")
    return frames


def _pick_body(frames) -> Optional[str]:
    """Body id with the largest summed squared frame-to-frame joint motion."""
    energy, last, order = {}, {}, []
    for bodies in frames:
        for bid, joints in bodies.items():
            if bid not in energy:
                energy[bid] = 0.0
                order.append(bid)
            elif bid in last:
                energy[bid] += float(np.sum((joints - last[bid]) ** 2))
            last[bid] = joints
        for bid in list(last):
            if bid not in bodies:
                del last[bid]
    if not order:
        return None
    # first-seen order breaks ties
    return max(order, key=lambda bid: energy[bid])


def parse_skeleton_file(text: str, filename: str) -> ActionClip:
    meta = parse_filename(filename)
    frames = _parse_bodies(text)
    body = _pick_body(frames)
    kept = []
    rejected = 0
    for i, bodies in enumerate(frames):
        if body not in bodies:
            rejected += 1
            continue
        frame = select_20_joints(bodies[body])
        kept.append(SkeletonFrame(frame.joints, frame_index=i))
    if not kept:
        raise SkeletonParseError(f"{filename}: no frame contains a body")
    if rejected:
        log.info("%s: skipped %d frame(s) without the tracked body", filename, rejected)
    return ActionClip(kept, name=Path(filename).stem, rejected_frames=rejected, **meta)


def read_skeleton_file(path) -> ActionClip:
    path = Path(path)
    return parse_skeleton_file(path.read_text(), path.name)


def format_skeleton_file(frames_25: Sequence[Sequence[np.ndarray]]) -> str:
    """Write NTU-layout text; ``frames_25[f]`` is a list of ``(25, 3)`` bodies."""
    out = [str(len(frames_25))]
    for bodies in frames_25:
        out.append(str(len(bodies)))
        for b, joints in enumerate(bodies):
            out.append(f"{72057594037930000 + b} 0 1 1 1 1 0 0.0 0.0 2")
            out.append(str(RAW_JOINTS))
            for x, y, z in np.asarray(joints, dtype=np.float64).tolist():
                out.append(f"{x!r} {y!r} {z!r} 0 0 0 0 0 0 0 0 2")
    return "\n".join(out) + "\n"


def filter_training_classes(clips: Iterable, max_label: int = MAX_TRAINING_LABEL) -> list:
    return [c for c in clips if 1 <= c.label <= max_label]


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "cross-subject"
    train_ids: frozenset = field(default=None)

    def __post_init__(self):
        if self.mode not in ("cross-subject", "cross-view"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.train_ids is None:
            default = CROSS_SUBJECT_TRAIN if self.mode == "cross-subject" else CROSS_VIEW_TRAIN
            object.__setattr__(self, "train_ids", default)
        else:
            object.__setattr__(self, "train_ids", frozenset(int(i) for i in self.train_ids))


def split(clips: Sequence, spec: SplitSpec):
    """Partition clips into ``(train, test)`` by subject or camera id."""
    train, test = [], []
    for clip in clips:
        if spec.mode == "cross-view":
            key, hi = clip.camera_id, NUM_CAMERAS
        else:
            key, hi = clip.subject_id, NUM_SUBJECTS
        if not 1 <= key <= hi:
            raise ValueError(f"{spec.mode} id {key} outside 1..{hi}")
        (train if key in spec.train_ids else test).append(clip)
    return train, test


# --- manifests ---------------------------------------------------------------

MANIFEST_FIELDS = ("filename", "label", "subject", "camera", "frames")


@dataclass(frozen=True)
class ManifestRow:
    filename: str
    label: int
    subject: int
    camera: int
    frames: int


def write_manifest(path, rows: Iterable[ManifestRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in rows:
            w.writerow([r.filename, r.label, r.subject, r.camera, r.frames])


def read_manifest(path) -> list[ManifestRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != MANIFEST_FIELDS:
            raise ValueError(f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)}")
        rows = []
        for n, rec in enumerate(reader, start=2):
            if len(rec) != len(MANIFEST_FIELDS):
                raise ValueError(f"{path}:{n}: expected {len(MANIFEST_FIELDS)} fields")
            try:
                rows.append(ManifestRow(rec[0], *(int(v) for v in rec[1:])))
            except ValueError:
                raise ValueError(f"{path}:{n}: non-integer field") from None
    return rows


# --- synthetic data ------------------------------------------------------------
#
# Body-frame poses are in metres with the hip center at the origin, y up and
# the person facing the camera (towards -z).  Each clip draws a body scale,
# a placement, and a per-class timing parameter, then adds Gaussian joint
# noise.  Time ``t`` is in raw frames at 30 fps.

SYNTH_FPS = 30.0

_STAND = np.array([
    [0.00, 0.00, 0.00],    # 1 hip center
    [0.00, 0.25, 0.00],    # 2 middle spine
    [0.00, 0.50, 0.00],    # 3 shoulder center
    [0.00, 0.66, 0.00],    # 4 head
    [-0.18, 0.48, 0.00],   # 5 left shoulder
    [-0.21, 0.20, 0.00],   # 6 left elbow
    [-0.22, -0.05, 0.00],  # 7 left wrist
    [-0.22, -0.13, 0.00],  # 8 left hand
    [0.18, 0.48, 0.00],    # 9 right shoulder
    [0.21, 0.20, 0.00],    # 10 right elbow
    [0.22, -0.05, 0.00],   # 11 right wrist
    [0.22, -0.13, 0.00],   # 12 right hand
    [-0.10, -0.05, 0.00],  # 13 left hip
    [-0.10, -0.47, 0.00],  # 14 left knee
    [-0.10, -0.88, 0.00],  # 15 left ankle
    [-0.10, -0.92, -0.10], # 16 left foot
    [0.10, -0.05, 0.00],   # 17 right hip
    [0.10, -0.47, 0.00],   # 18 right knee
    [0.10, -0.88, 0.00],   # 19 right ankle
    [0.10, -0.92, -0.10],  # 20 right foot
])

_SIT = _STAND.copy()
_SIT[[13, 17], :] = [[-0.10, -0.05, -0.42], [0.10, -0.05, -0.42]]   # knees forward at hip height
_SIT[[14, 18], :] = [[-0.10, -0.46, -0.42], [0.10, -0.46, -0.42]]   # ankles below knees
_SIT[[15, 19], :] = [[-0.10, -0.50, -0.52], [0.10, -0.50, -0.52]]
_SIT[[5, 9], :] = [[-0.20, 0.22, -0.06], [0.20, 0.22, -0.06]]       # forearms resting on thighs
_SIT[[6, 10], :] = [[-0.15, 0.02, -0.26], [0.15, 0.02, -0.26]]
_SIT[[7, 11], :] = [[-0.14, 0.00, -0.33], [0.14, 0.00, -0.33]]


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def pose_wave(t, phase):
    """Right forearm swings +-0.6 rad about vertical at 1.2 Hz, elbow held at shoulder height."""
    t = np.asarray(t, dtype=np.float64)
    poses = np.repeat(_STAND[None], t.size, axis=0)
    elbow = np.array([0.40, 0.52, 0.0])
    ang = 0.6 * np.sin(2 * np.pi * 1.2 * t / SYNTH_FPS + phase)
    direction = np.stack([np.sin(ang), np.cos(ang), np.zeros_like(ang)], axis=1)
    poses[:, 9] = elbow
    poses[:, 10] = elbow + 0.25 * direction
    poses[:, 11] = elbow + 0.33 * direction
    return poses


def pose_fall(t, onset):
    """Stand, then rotate 90 degrees sideways about the feet over one second; lie still after."""
    t = np.asarray(t, dtype=np.float64)
    theta = 0.5 * np.pi * _smoothstep((t - onset) / SYNTH_FPS)
    pivot = np.array([0.0, -0.92, 0.0])
    c, s = np.cos(theta), np.sin(theta)
    rel = _STAND - pivot
    out = np.empty((t.size, NUM_JOINTS, 3))
    out[:, :, 0] = c[:, None] * rel[:, 0] - s[:, None] * rel[:, 1]
    out[:, :, 1] = s[:, None] * rel[:, 0] + c[:, None] * rel[:, 1]
    out[:, :, 2] = rel[:, 2]
    return out + pivot


def pose_sit(t, phase):
    """Seated and still except a 5 mm breathing rise of the upper body at 0.25 Hz."""
    t = np.asarray(t, dtype=np.float64)
    poses = np.repeat(_SIT[None], t.size, axis=0)
    rise = 0.005 * np.sin(2 * np.pi * 0.25 * t / SYNTH_FPS + phase)
    poses[:, 2:12, 1] += rise[:, None]
    return poses


def pose_touch_head(t, phase):
    """Right hand held on the head with a slow 2 cm rubbing motion."""
    t = np.asarray(t, dtype=np.float64)
    poses = np.repeat(_STAND[None], t.size, axis=0)
    rub = 0.02 * np.sin(2 * np.pi * 0.8 * t / SYNTH_FPS + phase)
    poses[:, 9] = [0.25, 0.62, -0.08]
    poses[:, 10] = np.stack([0.10 + rub, np.full_like(t, 0.74), np.full_like(t, -0.05)], axis=1)
    poses[:, 11] = np.stack([0.05 + rub, np.full_like(t, 0.76), np.full_like(t, -0.03)], axis=1)
    return poses


def pose_touch_chest(t, phase):
    """Both hands pressed to the chest, rising and falling 1 cm."""
    t = np.asarray(t, dtype=np.float64)
    poses = np.repeat(_STAND[None], t.size, axis=0)
    bob = 0.01 * np.sin(2 * np.pi * 0.5 * t / SYNTH_FPS + phase)
    for side, (e, w, h) in ((-1, (5, 6, 7)), (1, (9, 10, 11))):
        poses[:, e] = [side * 0.22, 0.25, -0.12]
        poses[:, w] = np.stack([np.full_like(t, side * 0.06), 0.38 + bob, np.full_like(t, -0.12)], axis=1)
        poses[:, h] = np.stack([np.full_like(t, side * 0.02), 0.40 + bob, np.full_like(t, -0.11)], axis=1)
    return poses


@dataclass(frozen=True)
class SynthClass:
    label: int
    pose: object
    # per-clip timing parameter drawn uniformly from this range
    param_range: tuple


SYNTH_CLASSES = (
    SynthClass(23, pose_wave, (0.0, 2 * math.pi)),
    SynthClass(43, pose_fall, (-10.0, 50.0)),
    SynthClass(8, pose_sit, (0.0, 2 * math.pi)),
    SynthClass(44, pose_touch_head, (0.0, 2 * math.pi)),
    SynthClass(45, pose_touch_chest, (0.0, 2 * math.pi)),
)
IDLE_LABEL = 8


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 3
    clips_per_class: int = 200
    frames_per_clip: int = 100
    noise_stddev: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= len(SYNTH_CLASSES):
            raise ValueError(f"num_classes must lie in 1..{len(SYNTH_CLASSES)}")
        if self.clips_per_class < 1 or self.frames_per_clip < 1:
            raise ValueError("clips_per_class and frames_per_clip must be positive")
        if self.noise_stddev < 0:
            raise ValueError("noise_stddev must be non-negative")


@dataclass(frozen=True)
class Placement:
    scale: float
    hip: tuple

    @classmethod
    def draw(cls, rng) -> "Placement":
        return cls(float(rng.uniform(0.85, 1.15)),
                   (float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.2, 0.2)), float(rng.uniform(2.5, 3.5))))

    def apply(self, poses):
        return poses * self.scale + np.asarray(self.hip)


def render(cls: SynthClass, t, param, placement: Placement, noise: float, rng) -> np.ndarray:
    joints = placement.apply(cls.pose(t, param))
    if noise > 0:
        joints = joints + rng.normal(0.0, noise, size=joints.shape)
    return joints


def synth_classes(num_classes: int) -> tuple:
    return SYNTH_CLASSES[:num_classes]


def generate_synthetic(spec: SynthSpec) -> list[ActionClip]:
    """Deterministic labelled clips, class-major order.

    With zero noise the per-clip draws are skipped, so every clip of a class
    is the same canonical rendering.
    """
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.frames_per_clip, dtype=np.float64)
    clips = []
    n = 0
    for cls in synth_classes(spec.num_classes):
        for _ in range(spec.clips_per_class):
            if spec.noise_stddev > 0:
                placement = Placement.draw(rng)
                param = float(rng.uniform(*cls.param_range))
            else:
                placement = Placement(1.0, (0.0, 0.0, 3.0))
                param = float(np.mean(cls.param_range))
            joints = render(cls, t, param, placement, spec.noise_stddev, rng)
            frames = [SkeletonFrame(j, i) for i, j in enumerate(joints)]
            subject = 1 + n % 10
            camera = 1 + n % NUM_CAMERAS
            clips.append(ActionClip(frames, cls.label, subject, camera,
                                    name=f"synth_{n:05d}_A{cls.label:03d}"))
            n += 1
    return clips


@dataclass(frozen=True)
class StreamSegment:
    label: int
    start: int
    end: int
    is_action: bool


def splice_plan(spec: SynthSpec, instances: int = 5, instance_len: int = 250,
                gap_range: tuple = (250, 400), seed: Optional[int] = None) -> list[StreamSegment]:
    """Idle (seated) gaps alternating with action instances.

    The alarm-worthy fall template appears once, in the middle; the other
    instances cycle through the remaining non-idle classes.
    """
    rng = np.random.default_rng(spec.seed + 1 if seed is None else seed)
    labels = [c.label for c in synth_classes(spec.num_classes) if c.label != IDLE_LABEL]
    others = [lab for lab in labels if lab != 43] or labels
    seq = [others[i % len(others)] for i in range(instances)]
    if 43 in labels and instances:
        seq[instances // 2] = 43
    plan, pos = [], 0
    for lab in seq:
        gap = int(rng.integers(gap_range[0], gap_range[1] + 1))
        plan.append(StreamSegment(IDLE_LABEL, pos, pos + gap, False))
        pos += gap
        plan.append(StreamSegment(lab, pos, pos + instance_len, True))
        pos += instance_len
    gap = int(rng.integers(gap_range[0], gap_range[1] + 1))
    plan.append(StreamSegment(IDLE_LABEL, pos, pos + gap, False))
    return plan


def render_stream(spec: SynthSpec, plan: Sequence[StreamSegment], seed: Optional[int] = None) -> np.ndarray:
    """Raw ``(N, 20, 3)`` joints for a splice plan, one performer throughout."""
    rng = np.random.default_rng(spec.seed + 2 if seed is None else seed)
    by_label = {c.label: c for c in SYNTH_CLASSES}
    placement = Placement.draw(rng)
    chunks = []
    for seg in plan:
        cls = by_label[seg.label]
        t = np.arange(seg.end - seg.start, dtype=np.float64)
        if cls.label == 43:
            param = 20.0
        else:
            param = float(rng.uniform(*cls.param_range))
        chunks.append(render(cls, t, param, placement, spec.noise_stddev, rng))
    return np.concatenate(chunks)
