"""Pose-aligned concatenation of past LiDAR sweeps with the current sweep."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import ClipBox, PointCloud, clip
from .errors import EmptyCloud, FrameMismatch, SequenceOrder, SingularPose

POSE_TOL = 1e-6
DEFAULT_PAST = 2


def check_pose(pose) -> np.ndarray:
    """Validate a 4x4 frame-to-world transform and return it as float64."""
    m = np.array(pose, dtype=np.float64)
    if m.shape != (4, 4):
        raise SingularPose(f"pose has shape {m.shape}, expected (4, 4)")
    if not np.isfinite(m).all():
        raise SingularPose("pose contains NaN or Inf")
    r = m[:3, :3]
    if np.abs(r.T @ r - np.eye(3)).max() > POSE_TOL:
        raise SingularPose("rotation block is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > POSE_TOL:
        raise SingularPose("rotation block has determinant != +1")
    if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
        raise SingularPose("last row must be (0, 0, 0, 1)")
    return m


def invert_pose(pose) -> np.ndarray:
    m = check_pose(pose)
    inv = np.eye(4)
    inv[:3, :3] = m[:3, :3].T
    inv[:3, 3] = -m[:3, :3].T @ m[:3, 3]
    return inv


def transform_points(coords, transform) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    return coords @ transform[:3, :3].T + transform[:3, 3]


@dataclass(frozen=True, eq=False)
class Frame:
    cloud: PointCloud
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    timestamp: int = 0

    def __post_init__(self):
        pose = check_pose(self.pose)
        pose.setflags(write=False)
        object.__setattr__(self, "pose", pose)


def align(frame: Frame, target_pose) -> PointCloud:
    """Express ``frame`` in the coordinates of ``target_pose``."""
    target = check_pose(target_pose)
    if np.array_equal(target, frame.pose):
        return frame.cloud
    rel = invert_pose(target) @ frame.pose
    return frame.cloud.replace(coords=transform_points(frame.cloud.coords, rel))


def assemble(current: Frame, past=(), clip_box: ClipBox | None = None) -> PointCloud:
    """Concatenate the current sweep with aligned past sweeps.

    ``past`` is ordered most recent first and receives frame indices 1, 2, ...
    The current frame comes first with index 0. No clipping happens unless
    ``clip_box`` is given.
    """
    frames = [current, *past]
    for newer, older in zip(frames, frames[1:]):
        if not older.timestamp < newer.timestamp:
            raise SequenceOrder(
                f"timestamp {older.timestamp} does not precede {newer.timestamp}"
            )
    widths = {f.cloud.num_features for f in frames}
    if len(widths) != 1:
        raise FrameMismatch(f"frames disagree on feature width: {sorted(widths)}")
    labelled = {f.cloud.labels is not None for f in frames}
    if len(labelled) != 1:
        raise FrameMismatch("either every frame or no frame must carry labels")
    if len(frames) > 256:
        raise FrameMismatch("frame indices are limited to 8 bits")
    clouds = [current.cloud] + [align(f, current.pose) for f in past]
    merged = PointCloud(
        np.concatenate([c.coords for c in clouds]),
        np.concatenate([c.features for c in clouds]),
        np.concatenate([c.labels for c in clouds]) if labelled == {True} else None,
        np.concatenate([np.full(len(c), k, dtype=np.uint8) for k, c in enumerate(clouds)]),
        current.cloud.num_classes,
    )
    return merged if clip_box is None else clip(merged, clip_box)


@dataclass(frozen=True)
class RetentionReport:
    retained: float
    total: int
    kept: int
    per_frame: dict


def retention_report(cloud: PointCloud, box: ClipBox) -> RetentionReport:
    """Fraction of points a clip box would keep, overall and per frame index."""
    if len(cloud) == 0:
        raise EmptyCloud("retention of an empty cloud is undefined")
    inside = box.contains(cloud.coords)
    frame_index = (
        np.zeros(len(cloud), dtype=np.uint8) if cloud.frame_index is None else cloud.frame_index
    )
    per_frame = {}
    for k in np.unique(frame_index):
        sel = frame_index == k
        per_frame[int(k)] = float(inside[sel].mean())
    return RetentionReport(float(inside.mean()), len(cloud), int(inside.sum()), per_frame)
