"""Binary point-cloud, parameter and logits files plus the frame manifest.

All binary formats are little-endian with no padding between sections:

* SPC1: u32 N, u32 C, u8 has_labels, u8 has_frame_index, 16 f32 pose,
  N*3 f32 coords, N*C f32 features, [N u32 labels], [N u8 frame indices]
* SPW1: u32 d, u32 h, u32 depth, then per layer Wq, Wk, Wv, Wo (d*d f32 each)
  followed by 27 xCPE taps (d*d f32 each, ordered as ``attention.OFFSETS``)
* SPL1: u32 N, u32 K, N*K f32
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import AttentionParams, LayerParams, XCPEParams
from .cloud import PointCloud
from .errors import FormatError

SPC_MAGIC = b"SPC1"
SPW_MAGIC = b"SPW1"
SPL_MAGIC = b"SPL1"

_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")


def atomic_write(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, nbytes):
        if self.pos + nbytes > len(self.data):
            raise FormatError(f"{self.what} truncated at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count, shape=None):
        dtype = np.dtype(dtype)
        arr = np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype)
        return arr.reshape(shape) if shape is not None else arr

    def magic(self, expected):
        got = self.take(len(expected))
        if got != expected:
            raise FormatError(f"{self.what}: bad magic {got!r}, expected {expected!r}")

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")


def encode_spc(cloud: PointCloud, pose=None) -> bytes:
    n, c = len(cloud), cloud.num_features
    pose = np.eye(4) if pose is None else np.asarray(pose, dtype=np.float64)
    parts = [
        SPC_MAGIC,
        struct.pack("<IIBB", n, c, cloud.labels is not None, cloud.frame_index is not None),
        pose.astype(_F32).tobytes(),
        cloud.coords.astype(_F32).tobytes(),
        cloud.features.astype(_F32).tobytes(),
    ]
    if cloud.labels is not None:
        parts.append(cloud.labels.astype(_U32).tobytes())
    if cloud.frame_index is not None:
        parts.append(cloud.frame_index.astype(np.uint8).tobytes())
    return b"".join(parts)


def decode_spc(data: bytes, what="SPC file"):
    """Return ``(cloud, pose)``; coordinates and features are widened to float64."""
    r = _Reader(data, what)
    r.magic(SPC_MAGIC)
    n, c, has_labels, has_frames = r.unpack("<IIBB")
    if has_labels > 1 or has_frames > 1:
        raise FormatError(f"{what}: section flags must be 0 or 1")
    pose = r.array(_F32, 16, (4, 4)).astype(np.float64)
    coords = r.array(_F32, n * 3, (n, 3)).astype(np.float64)
    features = r.array(_F32, n * c, (n, c)).astype(np.float64)
    labels = r.array(_U32, n) if has_labels else None
    frames = r.array(np.uint8, n) if has_frames else None
    r.finish()
    return PointCloud(coords, features, labels, frames), pose


def write_spc(path, cloud: PointCloud, pose=None) -> None:
    atomic_write(path, encode_spc(cloud, pose))


def read_spc(path):
    return decode_spc(Path(path).read_bytes(), what=str(path))


def encode_spw(layers, num_heads=None) -> bytes:
    if not layers and num_heads is None:
        raise FormatError("an empty layer stack needs explicit width and heads")
    d = layers[0].attention.dim if layers else 0
    h = layers[0].attention.num_heads if layers else num_heads
    parts = [SPW_MAGIC, struct.pack("<III", d, h, len(layers))]
    for layer in layers:
        a = layer.attention
        if a.dim != d or a.num_heads != h:
            raise FormatError("every layer in one file must share width and head count")
        for m in (a.wq, a.wk, a.wv, a.wo, layer.xcpe.kernel):
            parts.append(np.ascontiguousarray(m, dtype=_F32).tobytes())
    return b"".join(parts)


@dataclass(frozen=True)
class ParamFile:
    dim: int
    num_heads: int
    layers: list


def decode_spw(data: bytes, what="SPW file") -> ParamFile:
    r = _Reader(data, what)
    r.magic(SPW_MAGIC)
    d, h, depth = r.unpack("<III")
    layers = []
    for _ in range(depth):
        w = [r.array(_F32, d * d, (d, d)).astype(np.float64) for _ in range(4)]
        kernel = r.array(_F32, 27 * d * d, (27, d, d)).astype(np.float64)
        layers.append(LayerParams(AttentionParams(*w, num_heads=h), XCPEParams(kernel)))
    r.finish()
    return ParamFile(d, h, layers)


def write_spw(path, layers, num_heads=None) -> None:
    atomic_write(path, encode_spw(layers, num_heads))


def read_spw(path) -> ParamFile:
    return decode_spw(Path(path).read_bytes(), what=str(path))


def encode_spl(logits) -> bytes:
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise FormatError(f"logits must be (N, K), got {logits.shape}")
    n, k = logits.shape
    return SPL_MAGIC + struct.pack("<II", n, k) + logits.astype(_F32).tobytes()


def decode_spl(data: bytes, what="SPL file") -> np.ndarray:
    r = _Reader(data, what)
    r.magic(SPL_MAGIC)
    n, k = r.unpack("<II")
    logits = r.array(_F32, n * k, (n, k)).astype(np.float64)
    r.finish()
    return logits


def write_spl(path, logits) -> None:
    atomic_write(path, encode_spl(logits))


def read_spl(path) -> np.ndarray:
    return decode_spl(Path(path).read_bytes(), what=str(path))


@dataclass(frozen=True, eq=False)
class ManifestEntry:
    path: Path
    pose: np.ndarray
    timestamp: int


def read_manifest(path) -> list:
    """Parse ``<spc path> <16 pose floats> <timestamp>`` lines, oldest first.

    Relative SPC paths resolve against the manifest's directory. Blank lines and
    ``#`` comments are skipped.
    """
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 18:
            raise FormatError(f"{path}:{lineno}: expected 18 fields, got {len(fields)}")
        try:
            pose = np.array([float(v) for v in fields[1:17]]).reshape(4, 4)
            stamp = int(fields[17])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        spc = Path(fields[0])
        if not spc.is_absolute():
            spc = path.parent / spc
        entries.append(ManifestEntry(spc, pose, stamp))
    return entries


def format_manifest_line(spc_path, pose, timestamp) -> str:
    pose = np.asarray(pose, dtype=np.float64).ravel()
    return " ".join([str(spc_path), *(repr(float(v)) for v in pose), str(int(timestamp))])
