"""Skeleton domain types and the per-frame feature extraction.

Joint numbering follows the 20-joint Kinect layout (1-based labels)::

     1 hip center       6 left elbow      11 right wrist     16 left foot
     2 middle spine     7 left wrist      12 right hand      17 right hip
     3 shoulder center  8 left hand       13 left hip        18 right knee
     4 head             9 right shoulder  14 left knee       19 right ankle
     5 left shoulder   10 right elbow     15 left ankle      20 right foot

Internally a frame is a ``(20, 3)`` float64 array where row ``k - 1`` holds
joint label ``k``.  A feature frame is 57 values laid out axis-blocked:
``[dx_2..dx_20 | dy_2..dy_20 | dz_2..dz_20]``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

NUM_JOINTS = 20
NUM_OFFSETS = NUM_JOINTS - 1
FEATURE_DIM = 3 * NUM_OFFSETS  # 57
CLIP_LEN = 20

JOINT_NAMES = (
    "hip_center", "middle_spine", "shoulder_center", "head",
    "left_shoulder", "left_elbow", "left_wrist", "left_hand",
    "right_shoulder", "right_elbow", "right_wrist", "right_hand",
    "left_hip", "left_knee", "left_ankle", "left_foot",
    "right_hip", "right_knee", "right_ankle", "right_foot",
)

SCALE_MODES = ("reference-normalized", "paper-literal")
DEFAULT_REFERENCE_HALFSPINE = 0.25
DEFAULT_EPSILON = 1e-6


class SkeletonError(ValueError):
    """Invalid skeleton input."""


class DegenerateSkeleton(SkeletonError):
    """Hip center and middle spine coincide, so no scale can be derived."""


@dataclass(frozen=True)
class Joint3D:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(np.isfinite((self.x, self.y, self.z))):
            raise SkeletonError(f"non-finite joint coordinate {self!r}")


class SkeletonFrame:
    """One time step of 20 joints. ``joints[k - 1]`` is joint label ``k``."""

    __slots__ = ("joints", "frame_index")

    def __init__(self, joints, frame_index: int = 0):
        arr = np.array(joints, dtype=np.float64)
        if arr.shape != (NUM_JOINTS, 3):
            raise SkeletonError(f"expected {NUM_JOINTS} joints x 3 coords, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise SkeletonError("non-finite joint coordinates")
        if frame_index < 0:
            raise SkeletonError("frame_index must be non-negative")
        arr.setflags(write=False)
        self.joints = arr
        self.frame_index = int(frame_index)

    def joint(self, label: int) -> Joint3D:
        return Joint3D(*self.joints[label - 1])

    def translated(self, offset) -> "SkeletonFrame":
        return SkeletonFrame(self.joints + np.asarray(offset, dtype=np.float64), self.frame_index)

    def __eq__(self, other):
        if not isinstance(other, SkeletonFrame):
            return NotImplemented
        return self.frame_index == other.frame_index and np.array_equal(self.joints, other.joints)

    def __repr__(self):
        return f"SkeletonFrame(frame_index={self.frame_index}, hip={tuple(self.joints[0])})"


@dataclass(frozen=True)
class CenteredFrame:
    """Offsets of joints 2..20 from the hip center, shape ``(19, 3)``."""

    deltas: np.ndarray

    def __post_init__(self):
        if self.deltas.shape != (NUM_OFFSETS, 3):
            raise SkeletonError(f"expected (19, 3) deltas, got {self.deltas.shape}")


@dataclass(frozen=True)
class ScaleFactor:
    value: float

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value > 0):
            raise SkeletonError(f"scale must be positive and finite, got {self.value}")


@dataclass
class FeatureClip:
    """``frames`` is an ``(M, 57)`` array; ``label`` is an action id or None."""

    frames: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] != FEATURE_DIM:
            raise SkeletonError(f"feature clip must be (M>=1, {FEATURE_DIM}), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise SkeletonError("non-finite feature values")

    def __len__(self):
        return self.frames.shape[0]


def center_frame(frame: SkeletonFrame) -> CenteredFrame:
    joints = frame.joints
    return CenteredFrame(joints[1:] - joints[0])


def compute_scale(frame: SkeletonFrame,
                  reference_halfspine: float = DEFAULT_REFERENCE_HALFSPINE,
                  mode: str = "reference-normalized",
                  epsilon: float = DEFAULT_EPSILON) -> ScaleFactor:
    """Scale factor from the hip-to-middle-spine distance.

    ``reference-normalized`` maps every body onto the reference half-spine
    length (features become height invariant); ``paper-literal`` is the
    inverse ratio, which grows with body size.
    """
    if not reference_halfspine > 0:
        raise SkeletonError("reference_halfspine must be positive")
    dist = float(np.linalg.norm(frame.joints[1] - frame.joints[0]))
    if dist <= epsilon:
        raise DegenerateSkeleton(f"hip-to-spine distance {dist:.3g} m is below {epsilon:g}")
    if mode == "reference-normalized":
        return ScaleFactor(reference_halfspine / dist)
    if mode == "paper-literal":
        return ScaleFactor(dist / reference_halfspine)
    raise SkeletonError(f"unknown scale mode {mode!r}; expected one of {SCALE_MODES}")


def normalize_features(centered: CenteredFrame, scale: ScaleFactor) -> np.ndarray:
    # transpose -> rows are axes, so ravel gives the x | y | z blocks
    return centered.deltas.T.ravel() * scale.value


def build_clip_features(frames: Sequence[SkeletonFrame],
                        reference_halfspine: float = DEFAULT_REFERENCE_HALFSPINE,
                        mode: str = "reference-normalized",
                        epsilon: float = DEFAULT_EPSILON,
                        label: Optional[int] = None,
                        fallback_scale: Optional[ScaleFactor] = None) -> FeatureClip:
    """Center, scale and flatten every frame of a clip.

    A degenerate frame reuses the scale of the previous frame.  If the first
    frame is degenerate, ``fallback_scale`` is used when given, otherwise
    :class:`DegenerateSkeleton` propagates.
    """
    if len(frames) == 0:
        raise SkeletonError("cannot build features from an empty clip")
    out = np.empty((len(frames), FEATURE_DIM))
    last_scale = fallback_scale
    for m, frame in enumerate(frames):
        try:
            last_scale = compute_scale(frame, reference_halfspine, mode, epsilon)
        except DegenerateSkeleton:
            if last_scale is None:
                raise
        out[m] = normalize_features(center_frame(frame), last_scale)
    return FeatureClip(out, label)


def sample_indices(length: int, target_len: int = CLIP_LEN) -> list[int]:
    if length < 1:
        raise SkeletonError("cannot sample from an empty sequence")
    if target_len < 1:
        raise SkeletonError("target_len must be positive")
    if length >= target_len:
        return [i * length // target_len for i in range(target_len)]
    return list(range(length)) + [length - 1] * (target_len - length)


def sample_clip(frames: Sequence[SkeletonFrame], target_len: int = CLIP_LEN) -> list[SkeletonFrame]:
    """Pick ``target_len`` frames with uniform coverage; short inputs repeat the last frame."""
    return [frames[i] for i in sample_indices(len(frames), target_len)]


# --- SKF1 feature clip files ------------------------------------------------

SKF1_MAGIC = b"SKF1"
_SKF1_HEADER = struct.Struct("<4sIIi")


def encode_skf1(clip: FeatureClip) -> bytes:
    m, dim = clip.frames.shape
    label = -1 if clip.label is None else int(clip.label)
    header = _SKF1_HEADER.pack(SKF1_MAGIC, m, dim, label)
    return header + clip.frames.astype("<f4").tobytes(order="C")


def decode_skf1(data: bytes) -> FeatureClip:
    if len(data) < _SKF1_HEADER.size:
        raise SkeletonError("SKF1 data shorter than header")
    magic, m, dim, label = _SKF1_HEADER.unpack_from(data)
    if magic != SKF1_MAGIC:
        raise SkeletonError(f"bad SKF1 magic {magic!r}")
    expected = _SKF1_HEADER.size + 4 * m * dim
    if len(data) != expected:
        raise SkeletonError(f"SKF1 size mismatch: header says {expected} bytes, got {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_SKF1_HEADER.size).reshape(m, dim)
    return FeatureClip(values.astype(np.float64), None if label == -1 else label)


def write_skf1(path, clip: FeatureClip) -> int:
    data = encode_skf1(clip)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_skf1(path) -> FeatureClip:
    with open(path, "rb") as fh:
        return decode_skf1(fh.read())
