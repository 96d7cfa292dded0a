"""Space-filling-curve codes for 3D grid cells.

Conventions: Z-order interleaves bits with x lowest (bit i of x goes to code bit
3i, y to 3i+1, z to 3i+2). The Hilbert curve uses Skilling's transpose
algorithm and starts at the origin. ``*_TRANS`` patterns swap x and y before
encoding. Packed serialization keys hold the batch id above the 3*depth curve
bits and must fit in 63 bits.
"""

from __future__ import annotations

import enum

import numpy as np

from .cloud import MAX_DEPTH
from .errors import BatchOverflow, CodeOutOfRange, LengthMismatch, TooFewPoints


class Pattern(enum.Enum):
    Z = "z"
    Z_TRANS = "z-trans"
    HILBERT = "hilbert"
    HILBERT_TRANS = "hilbert-trans"

    @property
    def transposed(self) -> bool:
        return self in (Pattern.Z_TRANS, Pattern.HILBERT_TRANS)


ALL_PATTERNS = (Pattern.Z, Pattern.Z_TRANS, Pattern.HILBERT, Pattern.HILBERT_TRANS)

_U = np.uint64


def _grid_array(grid, depth):
    g = np.asarray(grid)
    if g.shape[-1:] != (3,):
        raise ValueError(f"grid coordinates need a trailing axis of 3, got {g.shape}")
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}]")
    if g.size and (g.min() < 0 or g.max() >= (1 << depth)):
        raise ValueError(f"grid coordinates must lie in [0, {1 << depth})")
    return g.astype(_U)


def _code_array(code, depth):
    c = np.asarray(code)
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}]")
    if c.size and (c.min() < 0 or c.max() >= (1 << (3 * depth))):
        raise CodeOutOfRange(f"codes must lie in [0, 2**{3 * depth})")
    return c.astype(_U)


def _spread3(v):
    v = v & _U(0x1FFFFF)
    v = (v | (v << _U(32))) & _U(0x1F00000000FFFF)
    v = (v | (v << _U(16))) & _U(0x1F0000FF0000FF)
    v = (v | (v << _U(8))) & _U(0x100F00F00F00F00F)
    v = (v | (v << _U(4))) & _U(0x10C30C30C30C30C3)
    v = (v | (v << _U(2))) & _U(0x1249249249249249)
    return v


def _compact3(v):
    v = v & _U(0x1249249249249249)
    v = (v | (v >> _U(2))) & _U(0x10C30C30C30C30C3)
    v = (v | (v >> _U(4))) & _U(0x100F00F00F00F00F)
    v = (v | (v >> _U(8))) & _U(0x1F0000FF0000FF)
    v = (v | (v >> _U(16))) & _U(0x1F00000000FFFF)
    v = (v | (v >> _U(32))) & _U(0x1FFFFF)
    return v


def z_encode(grid, depth: int = MAX_DEPTH) -> np.ndarray:
    g = _grid_array(grid, depth)
    return _spread3(g[..., 0]) | (_spread3(g[..., 1]) << _U(1)) | (_spread3(g[..., 2]) << _U(2))


def z_decode(code, depth: int = MAX_DEPTH) -> np.ndarray:
    c = _code_array(code, depth)
    return np.stack([_compact3(c), _compact3(c >> _U(1)), _compact3(c >> _U(2))], axis=-1).astype(
        np.int64
    )


def _interleave_msb_first(x):
    # Transposed Hilbert form: within each bit plane axis 0 is the most significant.
    return (_spread3(x[0]) << _U(2)) | (_spread3(x[1]) << _U(1)) | _spread3(x[2])


def hilbert_encode(grid, depth: int) -> np.ndarray:
    g = _grid_array(grid, depth)
    x = [g[..., 0].copy(), g[..., 1].copy(), g[..., 2].copy()]
    zero = _U(0)
    q = 1 << (depth - 1)
    while q > 1:
        p = _U(q - 1)
        bit = _U(q)
        for i in range(3):
            hit = (x[i] & bit) != zero
            t = (x[0] ^ x[i]) & p
            if i:
                x[i] = np.where(hit, x[i], x[i] ^ t)
            x[0] = np.where(hit, x[0] ^ p, x[0] ^ t)
        q >>= 1
    x[1] ^= x[0]
    x[2] ^= x[1]
    t = np.zeros_like(x[2])
    q = 1 << (depth - 1)
    while q > 1:
        t = np.where((x[2] & _U(q)) != zero, t ^ _U(q - 1), t)
        q >>= 1
    x = [xi ^ t for xi in x]
    return _interleave_msb_first(x)


def hilbert_decode(code, depth: int) -> np.ndarray:
    c = _code_array(code, depth)
    x = [_compact3(c >> _U(2)), _compact3(c >> _U(1)), _compact3(c)]
    zero = _U(0)
    t = x[2] >> _U(1)
    x[2] ^= x[1]
    x[1] ^= x[0]
    x[0] ^= t
    q = 2
    while q != (1 << depth):
        p = _U(q - 1)
        bit = _U(q)
        for i in (2, 1, 0):
            hit = (x[i] & bit) != zero
            t = (x[0] ^ x[i]) & p
            if i:
                x[i] = np.where(hit, x[i], x[i] ^ t)
            x[0] = np.where(hit, x[0] ^ p, x[0] ^ t)
        q <<= 1
    return np.stack(x, axis=-1).astype(np.int64)


def apply_trans(grid) -> np.ndarray:
    """Swap the x and y components."""
    g = np.asarray(grid)
    return g[..., [1, 0, 2]]


def curve_code(grid, pattern: Pattern, depth: int) -> np.ndarray:
    pattern = Pattern(pattern)
    if pattern.transposed:
        grid = apply_trans(grid)
    if pattern in (Pattern.Z, Pattern.Z_TRANS):
        return z_encode(grid, depth)
    return hilbert_encode(grid, depth)


def serialize(grid, pattern: Pattern, depth: int, batch_id=0) -> np.ndarray:
    """Packed uint64 keys ``(batch_id << 3*depth) | curve_code`` for every cell."""
    codes = curve_code(grid, pattern, depth)
    batch = np.asarray(batch_id)
    limit = 1 << (63 - 3 * depth)
    if batch.size and (batch.min() < 0 or batch.max() >= limit):
        raise BatchOverflow(f"batch ids must be below 2**{63 - 3 * depth} at depth {depth}")
    if batch.ndim and batch.shape != codes.shape:
        raise LengthMismatch(f"{batch.shape[0]} batch ids for {codes.shape[0]} points")
    return (batch.astype(_U) << _U(3 * depth)) | codes


def serialization_order(codes) -> np.ndarray:
    """Sort by key; equal keys keep input order."""
    return np.argsort(np.asarray(codes), kind="stable")


def locality_score(coords, order=None) -> float:
    """Mean Euclidean distance between consecutive points of ``order``."""
    pts = np.asarray(coords, dtype=np.float64)
    if len(pts) < 2:
        raise TooFewPoints("locality needs at least two points")
    if order is not None:
        pts = pts[np.asarray(order)]
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).mean())
