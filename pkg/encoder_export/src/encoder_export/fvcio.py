"""Writers and readers for the two binary embedding formats.

Both formats are little-endian with no padding and no trailer, so a file is
fully determined by its payload; writing the same arrays twice yields
byte-identical files.

Embedding matrix (magic ``FVCE``)::

    magic    4 bytes  b"FVCE"
    version  u16      1
    kind     u8       0=frames_pre 1=sentence_pre 2=tokens_pre 3=projected
    reserved u8       0
    dim      u32      columns
    count    u32      rows
    data     count*dim float32, row-major

Projection checkpoint (magic ``FVCW``)::

    magic        4 bytes  b"FVCW"
    version      u16      1
    d_vision_in  u32
    d_text_in    u32
    d_out        u32
    W_v          d_out*d_vision_in float32, row-major
    W_t          d_out*d_text_in float32, row-major

A checkpoint at ``model.fvcw`` is accompanied by a JSON sidecar
``model.fvcw.meta.json`` holding free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

KIND_FRAMES_PRE = "frames_pre"
KIND_SENTENCE_PRE = "sentence_pre"
KIND_TOKENS_PRE = "tokens_pre"
KIND_PROJECTED = "projected"

KIND_CODES = {
    KIND_FRAMES_PRE: 0,
    KIND_SENTENCE_PRE: 1,
    KIND_TOKENS_PRE: 2,
    KIND_PROJECTED: 3,
}
KIND_NAMES = {code: name for name, code in KIND_CODES.items()}

_MATRIX_HEADER = struct.Struct("<4sHBBII")
_PROJECTION_HEADER = struct.Struct("<4sHIII")

MATRIX_MAGIC = b"FVCE"
PROJECTION_MAGIC = b"FVCW"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _as_matrix(array) -> np.ndarray:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise FormatError(f"embedding payload must be 2-D, got shape {arr.shape}")
    if arr.shape[1] == 0:
        raise FormatError("dim must be positive")
    return arr


def write_matrix_bytes(kind: str, array) -> bytes:
    if kind not in KIND_CODES:
        raise FormatError(f"unknown embedding kind '{kind}'")
    arr = _as_matrix(array)
    header = _MATRIX_HEADER.pack(
        MATRIX_MAGIC, FORMAT_VERSION, KIND_CODES[kind], 0, arr.shape[1], arr.shape[0]
    )
    return header + arr.tobytes(order="C")


def read_matrix_bytes(data: bytes) -> tuple[str, np.ndarray]:
    if len(data) < _MATRIX_HEADER.size:
        raise FormatError(
            f"truncated header: need {_MATRIX_HEADER.size} bytes, got {len(data)}"
        )
    magic, version, kind_code, reserved, dim, count = _MATRIX_HEADER.unpack_from(data, 0)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    if kind_code not in KIND_NAMES:
        raise FormatError(f"unknown kind code {kind_code}")
    if reserved != 0:
        raise FormatError(f"reserved byte must be 0, got {reserved}")
    if dim == 0:
        raise FormatError("dim must be positive")
    expected = count * dim * 4
    payload = len(data) - _MATRIX_HEADER.size
    if payload != expected:
        raise FormatError(
            f"payload size {payload} does not match {count} x {dim} float32 ({expected})"
        )
    flat = np.frombuffer(data, dtype="<f4", count=count * dim, offset=_MATRIX_HEADER.size)
    return KIND_NAMES[kind_code], flat.reshape(count, dim).copy()


def write_matrix(path: str | Path, kind: str, array):
    Path(path).write_bytes(write_matrix_bytes(kind, array))


def read_matrix(path: str | Path) -> tuple[str, np.ndarray]:
    path = Path(path)
    try:
        return read_matrix_bytes(path.read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_projection(path: str | Path, w_v, w_t, meta: dict | None = None):
    path = Path(path)
    w_v = np.ascontiguousarray(w_v, dtype="<f4")
    w_t = np.ascontiguousarray(w_t, dtype="<f4")
    if w_v.ndim != 2 or w_t.ndim != 2:
        raise FormatError("projection weights must be 2-D matrices")
    if w_v.shape[0] != w_t.shape[0]:
        raise FormatError(
            f"output dims differ: vision {w_v.shape[0]} vs text {w_t.shape[0]}"
        )
    header = _PROJECTION_HEADER.pack(
        PROJECTION_MAGIC, FORMAT_VERSION, w_v.shape[1], w_t.shape[1], w_v.shape[0]
    )
    path.write_bytes(header + w_v.tobytes(order="C") + w_t.tobytes(order="C"))
    sidecar = Path(str(path) + ".meta.json")
    sidecar.write_text(
        json.dumps(meta or {}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_projection(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _PROJECTION_HEADER.size:
        raise FormatError(
            f"{path}: truncated header: need {_PROJECTION_HEADER.size} bytes, got {len(data)}"
        )
    magic, version, d_vision, d_text, d_out = _PROJECTION_HEADER.unpack_from(data, 0)
    if magic != PROJECTION_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {PROJECTION_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    n_v = d_out * d_vision
    n_t = d_out * d_text
    expected = (n_v + n_t) * 4
    payload = len(data) - _PROJECTION_HEADER.size
    if payload != expected:
        raise FormatError(
            f"{path}: payload size {payload} does not match header dims ({expected})"
        )
    flat = np.frombuffer(data, dtype="<f4", count=n_v + n_t, offset=_PROJECTION_HEADER.size)
    w_v = flat[:n_v].reshape(d_out, d_vision).copy()
    w_t = flat[n_v:].reshape(d_out, d_text).copy()
    meta = {}
    sidecar = Path(str(path) + ".meta.json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    return w_v, w_t, meta
