"""Patch grouping of a serialized sequence and per-layer pattern scheduling."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch
from .sfc import ALL_PATTERNS, Pattern, serialization_order

DEFAULT_PATCH = 1024

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class PatchPartition:
    """Serialized order plus a padded slot map whose length divides the patch size.

    ``padded_index[s]`` is the original point held by slot ``s``; ``pad_mask[s]``
    marks borrowed duplicates. ``slot_of[i]`` is the unique non-borrowed slot of
    point ``i`` and drives :func:`scatter`.
    """

    order: np.ndarray
    inverse: np.ndarray
    padded_index: np.ndarray
    pad_mask: np.ndarray
    slot_of: np.ndarray
    patch_size: int

    @property
    def num_points(self) -> int:
        return len(self.order)

    @property
    def num_patches(self) -> int:
        return len(self.padded_index) // self.patch_size

    def patches(self) -> np.ndarray:
        """Slot indices reshaped to (num_patches, patch_size)."""
        return self.padded_index.reshape(-1, self.patch_size)


def partition(codes, patch_size: int = DEFAULT_PATCH, order=None) -> PatchPartition:
    """Sort points by key and borrow-pad the tail to a multiple of ``patch_size``.

    With ``r = N % P`` nonzero, the last patch holds serialized positions
    ``N-P .. N-1``: the ``P-r`` points at ``[N-P, N-r)`` are duplicated ahead of
    the ``r`` trailing originals. Sequences shorter than one patch repeat their
    points cyclically instead. A precomputed ``order`` (the stable sort of
    ``codes``) may be passed to skip sorting.
    """
    codes = np.asarray(codes)
    n = len(codes)
    if n < 1:
        raise ValueError("partition needs at least one point")
    if patch_size < 1:
        raise ValueError("patch_size must be positive")
    p = patch_size
    if order is None:
        order = serialization_order(codes)
    else:
        order = np.array(order, dtype=np.int64)
        if order.shape != (n,):
            raise LengthMismatch(f"order of length {len(order)} for {n} codes")
    inverse = np.empty(n, dtype=np.int64)
    inverse[order] = np.arange(n)
    r = n % p
    if r == 0:
        positions = np.arange(n)
        borrowed = np.zeros(n, dtype=bool)
    elif n < p:
        positions = np.arange(p) % n
        borrowed = np.arange(p) >= n
    else:
        head = np.arange(n - r)
        positions = np.concatenate([head, np.arange(n - p, n - r), np.arange(n - r, n)])
        borrowed = np.concatenate(
            [np.zeros(n - r, bool), np.ones(p - r, bool), np.zeros(r, bool)]
        )
    padded_index = order[positions]
    slots = np.flatnonzero(~borrowed)
    slot_of = np.empty(n, dtype=np.int64)
    slot_of[padded_index[slots]] = slots
    for arr in (order, inverse, padded_index, borrowed, slot_of):
        arr.setflags(write=False)
    return PatchPartition(order, inverse, padded_index, borrowed, slot_of, p)


def gather(values, part: PatchPartition) -> np.ndarray:
    """Reorder (and duplicate) per-point rows into padded slot order."""
    values = np.asarray(values)
    if len(values) != part.num_points:
        raise LengthMismatch(f"{len(values)} rows for a partition of {part.num_points} points")
    return values[part.padded_index]


def scatter(values, part: PatchPartition) -> np.ndarray:
    """Inverse of :func:`gather`; borrowed slots are discarded."""
    values = np.asarray(values)
    if len(values) != len(part.padded_index):
        raise LengthMismatch(f"{len(values)} rows for {len(part.padded_index)} padded slots")
    return values[part.slot_of]


class ScheduleMode(enum.Enum):
    SHIFT = "shift"
    SHUFFLE = "shuffle"


@dataclass(frozen=True)
class OrderSchedule:
    mode: ScheduleMode = ScheduleMode.SHIFT
    patterns: tuple = ALL_PATTERNS
    seed: int = 0

    def __post_init__(self):
        patterns = tuple(Pattern(p) for p in self.patterns)
        if not patterns:
            raise ValueError("an order schedule needs at least one pattern")
        object.__setattr__(self, "patterns", patterns)
        object.__setattr__(self, "mode", ScheduleMode(self.mode))
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)


class SplitMix64:
    """SplitMix64 generator over Python ints (wraps modulo 2**64)."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


def shuffled_patterns(schedule: OrderSchedule, forward_id: int) -> tuple:
    """Fisher-Yates permutation of the schedule's patterns keyed by ``seed ^ forward_id``."""
    rng = SplitMix64(schedule.seed ^ (int(forward_id) & _MASK64))
    items = list(schedule.patterns)
    for i in range(len(items) - 1, 0, -1):
        j = rng.next() % (i + 1)
        items[i], items[j] = items[j], items[i]
    return tuple(items)


def pattern_for_layer(schedule: OrderSchedule, layer: int, forward_id: int = 0) -> Pattern:
    if layer < 0:
        raise ValueError("layer index must be non-negative")
    k = len(schedule.patterns)
    if schedule.mode is ScheduleMode.SHIFT:
        return schedule.patterns[layer % k]
    return shuffled_patterns(schedule, forward_id)[layer % k]
