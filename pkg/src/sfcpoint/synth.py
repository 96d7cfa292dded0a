"""Seeded synthetic scenes standing in for LiDAR sweeps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud

GENERATORS = ("uniform-box", "ring-road", "gaussian-clusters")

# Distant ring-road points sit beyond this radius, i.e. outside any box whose
# xy half-width is 75.2 m even along the diagonal.
DISTANT_MIN_RADIUS = 110.0
DISTANT_MAX_RADIUS = 250.0
NEAR_MAX_RADIUS = 70.0


@dataclass(frozen=True)
class SceneSpec:
    generator: str = "uniform-box"
    num_points: int = 10000
    seed: int = 0
    num_classes: int = 4
    num_features: int = 4
    extent: float = 10.0
    distant_fraction: float = 0.1
    num_clusters: int = 8

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        if self.num_points < 1 or self.num_classes < 1 or self.num_features < 0:
            raise ValueError("point, class and feature counts must be positive")
        if not 0.0 <= self.distant_fraction <= 1.0:
            raise ValueError("distant_fraction must lie in [0, 1]")


def _uniform_box(spec, rng):
    coords = rng.uniform(0.0, spec.extent, size=(spec.num_points, 3))
    labels = np.minimum((coords[:, 0] / spec.extent * spec.num_classes).astype(np.int64),
                        spec.num_classes - 1)
    return coords, labels


def _ring_road(spec, rng):
    n = spec.num_points
    n_far = int(round(n * spec.distant_fraction))
    n_near = n - n_far
    radius = np.concatenate([
        rng.uniform(2.0, NEAR_MAX_RADIUS, n_near),
        rng.uniform(DISTANT_MIN_RADIUS, DISTANT_MAX_RADIUS, n_far),
    ])
    theta = rng.uniform(0.0, 2 * np.pi, n)
    z = rng.uniform(-2.0, 1.0, n)
    coords = np.stack([radius * np.cos(theta), radius * np.sin(theta), z], axis=1)
    coords = coords[rng.permutation(n)]
    r = np.hypot(coords[:, 0], coords[:, 1])
    bands = (r / DISTANT_MAX_RADIUS * spec.num_classes).astype(np.int64)
    labels = np.minimum(bands, spec.num_classes - 1)
    return coords, labels


def _gaussian_clusters(spec, rng):
    centers = rng.uniform(-spec.extent, spec.extent, size=(spec.num_clusters, 3))
    member = rng.integers(0, spec.num_clusters, spec.num_points)
    coords = centers[member] + rng.normal(0.0, spec.extent / 20, size=(spec.num_points, 3))
    return coords, member % spec.num_classes


def generate(spec: SceneSpec) -> PointCloud:
    rng = np.random.default_rng(spec.seed)
    make = {
        "uniform-box": _uniform_box,
        "ring-road": _ring_road,
        "gaussian-clusters": _gaussian_clusters,
    }[spec.generator]
    coords, labels = make(spec, rng)
    features = rng.uniform(0.0, 1.0, size=(spec.num_points, spec.num_features))
    # Round through float32 so the in-memory cloud equals what an SPC file stores.
    return PointCloud(
        coords.astype(np.float32),
        features.astype(np.float32),
        labels,
        num_classes=spec.num_classes,
    )
