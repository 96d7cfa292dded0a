"""Reference serialized-attention block.

Each layer applies a submanifold 3x3x3 convolution with a skip connection
(xCPE) over the active grid cells, then exact multi-head softmax attention
inside fixed-size patches of the serialized sequence. Features are row vectors;
projections are ``X @ W``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .cloud import DEFAULT_DEPTH, DEFAULT_GRID, PointCloud, voxel_cells
from .errors import DimensionMismatch, DuplicateCell, NonFinite
from .patch import DEFAULT_PATCH, OrderSchedule, gather, partition, pattern_for_layer, scatter
from .sfc import serialize

# Tap t covers offset OFFSETS[t]; dx varies slowest, dz fastest.
OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)
CENTER_TAP = 13


def tap_index(offset) -> int:
    dx, dy, dz = (int(v) for v in offset)
    if not all(-1 <= v <= 1 for v in (dx, dy, dz)):
        raise ValueError(f"offset {offset} lies outside the 3x3x3 neighbourhood")
    return (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1)


def _check_finite(name, arr):
    if not np.isfinite(arr).all():
        raise NonFinite(f"{name} contains NaN or Inf")


@dataclass(frozen=True, eq=False)
class AttentionParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    num_heads: int = 1

    def __post_init__(self):
        mats = [np.array(m, dtype=np.float64) for m in (self.wq, self.wk, self.wv, self.wo)]
        d = mats[0].shape[0]
        for name, m in zip(("wq", "wk", "wv", "wo"), mats):
            if m.shape != (d, d):
                raise DimensionMismatch(f"{name} has shape {m.shape}, expected ({d}, {d})")
            _check_finite(name, m)
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        if self.num_heads < 1 or d % self.num_heads:
            raise DimensionMismatch(f"{self.num_heads} heads do not divide width {d}")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]


@dataclass(frozen=True, eq=False)
class XCPEParams:
    """27 (d, d) taps; ``kernel[t] @ f`` is the contribution of a neighbour at ``OFFSETS[t]``."""

    kernel: np.ndarray

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64)
        if k.ndim != 3 or k.shape[0] != 27 or k.shape[1] != k.shape[2]:
            raise DimensionMismatch(f"kernel has shape {k.shape}, expected (27, d, d)")
        _check_finite("kernel", k)
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    @classmethod
    def zeros(cls, dim: int) -> XCPEParams:
        return cls(np.zeros((27, dim, dim)))

    @classmethod
    def from_taps(cls, taps: dict, dim: int) -> XCPEParams:
        """Build from ``{(dx, dy, dz): matrix}``; missing taps are zero."""
        k = np.zeros((27, dim, dim))
        for offset, mat in taps.items():
            k[tap_index(offset)] = mat
        return cls(k)

    @property
    def dim(self) -> int:
        return self.kernel.shape[1]


@dataclass(frozen=True, eq=False)
class LayerParams:
    attention: AttentionParams
    xcpe: XCPEParams

    def __post_init__(self):
        if self.attention.dim != self.xcpe.dim:
            raise DimensionMismatch(
                f"attention width {self.attention.dim} != xCPE width {self.xcpe.dim}"
            )


def random_layers(dim, num_heads, depth, seed=0, scale=None, kernel_scale=0.1):
    """Gaussian parameters for ``depth`` layers, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim) if scale is None else scale
    layers = []
    for _ in range(depth):
        w = rng.normal(0.0, scale, size=(4, dim, dim))
        kernel = rng.normal(0.0, kernel_scale * scale, size=(27, dim, dim))
        layers.append(LayerParams(AttentionParams(*w, num_heads=num_heads), XCPEParams(kernel)))
    return layers


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _heads(m, h):
    # (..., P, d) -> (..., h, P, d/h)
    *lead, p, d = m.shape
    return np.moveaxis(m.reshape(*lead, p, h, d // h), -2, -3)


def _merge_heads(m):
    *lead, h, p, dh = m.shape
    return np.moveaxis(m, -3, -2).reshape(*lead, p, h * dh)


def attention_weights(x, params: AttentionParams) -> np.ndarray:
    """Per-head attention matrices, shape (..., h, P, P)."""
    x = np.asarray(x, dtype=np.float64)
    h = params.num_heads
    q = _heads(x @ params.wq, h)
    k = _heads(x @ params.wk, h)
    scale = np.sqrt(params.dim // h)
    return _softmax(q @ np.swapaxes(k, -1, -2) / scale)


def _attend(x, params):
    a = attention_weights(x, params)
    v = _heads(x @ params.wv, params.num_heads)
    return _merge_heads(a @ v) @ params.wo


def patch_attention(x, params: AttentionParams) -> np.ndarray:
    """Multi-head softmax attention over the rows of one patch, shape (P, d) -> (P, d)."""
    x = np.asarray(x, dtype=np.float64)
    _check_finite("features", x)
    if x.ndim != 2 or x.shape[1] != params.dim:
        raise DimensionMismatch(f"features of shape {x.shape} for width {params.dim}")
    return _attend(x, params)


def attention_input_gradient(x, params: AttentionParams, upstream) -> np.ndarray:
    """Vector-Jacobian product of :func:`patch_attention` with respect to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    _check_finite("features", x)
    _check_finite("upstream", g)
    if x.ndim != 2 or x.shape[1] != params.dim or g.shape != x.shape:
        raise DimensionMismatch(f"features {x.shape} / upstream {g.shape} for width {params.dim}")
    h = params.num_heads
    dh = params.dim // h
    scale = np.sqrt(dh)
    grad = np.zeros_like(x)
    d_heads = g @ params.wo.T
    for i in range(h):
        cols = slice(i * dh, (i + 1) * dh)
        wq, wk, wv = params.wq[:, cols], params.wk[:, cols], params.wv[:, cols]
        q, k, v = x @ wq, x @ wk, x @ wv
        a = _softmax(q @ k.T / scale)
        d_out = d_heads[:, cols]
        d_a = d_out @ v.T
        d_v = a.T @ d_out
        d_s = a * (d_a - (d_a * a).sum(axis=1, keepdims=True)) / scale
        d_q = d_s @ k
        d_k = d_s.T @ q
        grad += d_q @ wq.T + d_k @ wk.T + d_v @ wv.T
    return grad


def _cell_keys(grid):
    # +1 keeps the -1 neighbour of cell 0 non-negative; 22 bits per axis.
    g = grid + 1
    return g[..., 0] | (g[..., 1] << 22) | (g[..., 2] << 44)


def xcpe(features, grid, params: XCPEParams) -> np.ndarray:
    """Submanifold 3x3x3 convolution over active cells plus the identity skip.

    ``out[i] = f[i] + sum_t kernel[t] @ f[j]`` for every active cell ``j`` at
    ``grid[i] + OFFSETS[t]``. Work is done in sorted-cell order so results do not
    depend on the input row order.
    """
    f = np.asarray(features, dtype=np.float64)
    g = np.asarray(grid, dtype=np.int64)
    _check_finite("features", f)
    if f.ndim != 2 or len(f) != len(g) or f.shape[1] != params.dim:
        raise DimensionMismatch(f"features {f.shape} for {len(g)} cells of width {params.dim}")
    keys = _cell_keys(g)
    sort = np.argsort(keys, kind="stable")
    table = keys[sort]
    dup = np.flatnonzero(table[1:] == table[:-1])
    if dup.size:
        i = sort[dup[0] + 1]
        raise DuplicateCell(f"cell {tuple(g[i])} holds more than one point")
    fs = f[sort]
    gs = g[sort]
    out = fs.copy()
    for t, offset in enumerate(OFFSETS):
        tap = params.kernel[t]
        if not tap.any():
            continue
        probe = _cell_keys(gs + offset)
        pos = np.minimum(np.searchsorted(table, probe), len(table) - 1)
        found = np.flatnonzero(table[pos] == probe)
        if found.size:
            out[found] += fs[pos[found]] @ tap.T
    result = np.empty_like(out)
    result[sort] = out
    return result


def block_forward(
    cloud: PointCloud,
    layers,
    schedule: OrderSchedule | None = None,
    patch_size: int = DEFAULT_PATCH,
    grid_size: float = DEFAULT_GRID,
    depth: int = DEFAULT_DEPTH,
    forward_id: int = 0,
    features=None,
) -> np.ndarray:
    """Run the layer stack and return features aligned to the input point order.

    Cells come from :func:`voxel_cells`, so any output of
    :func:`voxel_downsample` at the same ``grid_size`` is a valid input. Per
    layer: choose a pattern from the schedule, serialize and partition the
    cloud, apply xCPE, attend within each patch, scatter back. Borrowed slots
    act as keys and queries but their outputs are dropped.
    """
    schedule = schedule or OrderSchedule()
    feats = np.array(cloud.features if features is None else features, dtype=np.float64)
    if not layers:
        return feats
    grid, _ = voxel_cells(cloud, grid_size, depth)
    for li, layer in enumerate(layers):
        if feats.shape[1] != layer.attention.dim:
            raise DimensionMismatch(
                f"layer {li} expects width {layer.attention.dim}, features have {feats.shape[1]}"
            )
        pattern = pattern_for_layer(schedule, li, forward_id)
        part = partition(serialize(grid, pattern, depth), patch_size)
        x = xcpe(feats, grid, layer.xcpe)
        patched = gather(x, part).reshape(-1, patch_size, feats.shape[1])
        _check_finite("features", patched)
        y = _attend(patched, layer.attention).reshape(-1, feats.shape[1])
        feats = scatter(y, part)
    return feats
