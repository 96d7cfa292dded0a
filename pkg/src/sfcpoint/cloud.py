"""Point-cloud container, grid quantization, voxel downsampling and range clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloud, GridOverflow, InvalidBox, InvalidCloud

IGNORE = 2**32 - 1
DEFAULT_GRID = 0.05
DEFAULT_DEPTH = 16
MAX_DEPTH = 21

# Range box traditionally applied to Waymo sweeps: x0, y0, z0, x1, y1, z1.
WAYMO_CLIP = (-75.2, -75.2, -4.0, 75.2, 75.2, 2.0)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Columnar point store.

    ``coords`` is (N, 3) float64 meters, ``features`` (N, C) float64. ``labels``
    are uint32 class ids (``IGNORE`` for unlabeled points) and ``frame_index``
    is a uint8 temporal origin tag; both optional. Arrays are copied and made
    read-only on construction.
    """

    coords: np.ndarray
    features: np.ndarray = None
    labels: np.ndarray | None = None
    frame_index: np.ndarray | None = None
    num_classes: int | None = field(default=None, compare=False)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64).reshape(-1, 3)
        n = len(coords)
        if not np.isfinite(coords).all():
            raise InvalidCloud("coords contain NaN or Inf")
        if self.features is None:
            features = np.zeros((n, 0))
        else:
            features = np.array(self.features, dtype=np.float64)
            if features.ndim == 1:
                features = features.reshape(n, -1) if n else features.reshape(0, 0)
        if features.ndim != 2 or len(features) != n:
            raise InvalidCloud(f"features have shape {features.shape}, expected ({n}, C)")
        labels = None
        if self.labels is not None:
            raw = np.asarray(self.labels)
            if raw.shape != (n,):
                raise InvalidCloud(f"labels have shape {raw.shape}, expected ({n},)")
            if raw.size and (raw.min() < 0 or raw.max() > IGNORE):
                raise InvalidCloud("labels must be non-negative 32-bit ids")
            labels = raw.astype(np.uint32)
            if self.num_classes is not None:
                bad = (labels >= self.num_classes) & (labels != IGNORE)
                if bad.any():
                    raise InvalidCloud(
                        f"label {labels[bad][0]} outside [0, {self.num_classes}) and not IGNORE"
                    )
        frame_index = None
        if self.frame_index is not None:
            raw = np.asarray(self.frame_index)
            if raw.shape != (n,):
                raise InvalidCloud(f"frame_index has shape {raw.shape}, expected ({n},)")
            if raw.size and (raw.min() < 0 or raw.max() > 255):
                raise InvalidCloud("frame_index must fit in 8 bits")
            frame_index = raw.astype(np.uint8)
        for name, arr in (
            ("coords", coords),
            ("features", features),
            ("labels", labels),
            ("frame_index", frame_index),
        ):
            if arr is not None:
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.coords)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def take(self, index) -> PointCloud:
        """Select points (boolean mask or integer index) consistently across arrays."""
        return PointCloud(
            self.coords[index],
            self.features[index],
            None if self.labels is None else self.labels[index],
            None if self.frame_index is None else self.frame_index[index],
            self.num_classes,
        )

    def replace(self, **changes) -> PointCloud:
        fields = dict(
            coords=self.coords,
            features=self.features,
            labels=self.labels,
            frame_index=self.frame_index,
            num_classes=self.num_classes,
        )
        fields.update(changes)
        return PointCloud(**fields)


@dataclass(frozen=True)
class ClipBox:
    min: tuple
    max: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min)
        hi = tuple(float(v) for v in self.max)
        if len(lo) != 3 or len(hi) != 3:
            raise InvalidBox("box corners need three components")
        if not all(a < b for a, b in zip(lo, hi)):
            raise InvalidBox(f"min {lo} must be below max {hi} on every axis")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def from_flat(cls, values) -> ClipBox:
        values = [float(v) for v in values]
        if len(values) != 6:
            raise InvalidBox(f"expected 6 values x0,y0,z0,x1,y1,z1, got {len(values)}")
        return cls(values[:3], values[3:])

    def contains(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
        return np.all((coords >= self.min) & (coords <= self.max), axis=1)


WAYMO_BOX = ClipBox.from_flat(WAYMO_CLIP)


def _check_args(grid_size, depth):
    if grid_size <= 0:
        raise ValueError("grid_size must be positive")
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}]")


def _fit_depth(cells, depth):
    limit = 1 << depth
    top = cells.max(axis=0)
    for axis in range(3):
        if top[axis] > limit:
            raise GridOverflow(axis, int(top[axis]))
    return np.clip(cells, 0, limit - 1).astype(np.int64)


def _coords_of(cloud):
    coords = cloud.coords if isinstance(cloud, PointCloud) else np.asarray(cloud, np.float64)
    if len(coords) == 0:
        raise EmptyCloud("cannot quantize an empty cloud")
    return coords


def quantize(cloud: PointCloud, grid_size: float = DEFAULT_GRID, depth: int = DEFAULT_DEPTH):
    """Map coordinates to integer cells of a ``2**depth`` grid anchored at the cloud minimum.

    Returns ``(grid, origin)`` with ``grid`` an (N, 3) int64 array. A cell index
    equal to ``2**depth`` (one past the edge) is clamped; anything further raises
    :class:`GridOverflow`.
    """
    _check_args(grid_size, depth)
    coords = _coords_of(cloud)
    origin = coords.min(axis=0)
    return _fit_depth(np.floor((coords - origin) / grid_size), depth), origin


def voxel_cells(cloud: PointCloud, grid_size: float = DEFAULT_GRID, depth: int = DEFAULT_DEPTH):
    """Like :func:`quantize` but with cell boundaries on multiples of ``grid_size``.

    The origin is the lowest occupied world cell corner, so two points share a
    cell here exactly when :func:`voxel_downsample` would merge them.
    """
    _check_args(grid_size, depth)
    cells = np.floor(_coords_of(cloud) / grid_size)
    low = cells.min(axis=0)
    return _fit_depth(cells - low, depth), low * grid_size


def dequantize(grid, origin, grid_size: float = DEFAULT_GRID) -> np.ndarray:
    """Cell centres in world coordinates."""
    return np.asarray(origin) + (np.asarray(grid, dtype=np.float64) + 0.5) * grid_size


def voxel_downsample(cloud: PointCloud, grid_size: float = DEFAULT_GRID) -> PointCloud:
    """Keep the lowest-index point of every occupied cell, in original order.

    Cells are aligned to the world origin rather than the cloud minimum so that
    a second pass sees the same cells and removes nothing.
    """
    if grid_size <= 0:
        raise ValueError("grid_size must be positive")
    if len(cloud) == 0:
        raise EmptyCloud("cannot downsample an empty cloud")
    cells = np.floor(cloud.coords / grid_size).astype(np.int64)
    _, first = np.unique(cells, axis=0, return_index=True)
    return cloud.take(np.sort(first))


def clip(cloud: PointCloud, box: ClipBox) -> PointCloud:
    """Points inside the closed box, relative order preserved."""
    return cloud.take(box.contains(cloud.coords))
