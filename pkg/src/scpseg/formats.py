"""Binary tensor and label-map files.

Layout (all little-endian)::

    bytes 0-7    magic  b"SCPSEGT\\0"
    bytes 8-11   uint32 format version (1)
    bytes 12-15  uint32 dtype code: 0 = float32 tensor, 1 = uint32 labels
    then         uint32 H, W, C
    then         H*W*C values, row-major, channel fastest

Label maps use dtype code 1 and C = 1.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SCPSEGT\x00"
VERSION = 1
FLOAT32 = 0
UINT32 = 1
_HEADER = struct.Struct("<8sII")
_DIMS = struct.Struct("<III")


class FormatError(ValueError):
    pass


def _write(path: str | Path, data: np.ndarray, code: int) -> None:
    h, w, c = data.shape
    dtype = "<f4" if code == FLOAT32 else "<u4"
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, code))
        fh.write(_DIMS.pack(h, w, c))
        fh.write(np.ascontiguousarray(data, dtype=dtype).tobytes())


def _read(path: str | Path, expect_code: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + _DIMS.size:
        raise FormatError(f"{path}: file too short for header")
    magic, version, code = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code != expect_code:
        kind = {FLOAT32: "float tensor", UINT32: "label map"}.get(code, f"code {code}")
        raise FormatError(f"{path}: expected dtype code {expect_code}, file holds a {kind}")
    h, w, c = _DIMS.unpack_from(raw, _HEADER.size)
    body = raw[_HEADER.size + _DIMS.size:]
    if len(body) != 4 * h * w * c:
        raise FormatError(f"{path}: payload is {len(body)} bytes, header says {4 * h * w * c}")
    dtype = "<f4" if code == FLOAT32 else "<u4"
    return np.frombuffer(body, dtype=dtype).reshape(h, w, c).copy()


def write_tensor(path: str | Path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 3:
        raise FormatError(f"tensor must be H x W x C, got shape {values.shape}")
    _write(path, values, FLOAT32)


def read_tensor(path: str | Path) -> np.ndarray:
    return _read(path, FLOAT32)


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise FormatError(f"label map must be H x W, got shape {labels.shape}")
    if labels.size and labels.min() < 0:
        raise FormatError("label map holds negative labels")
    _write(path, labels[:, :, None], UINT32)


def read_labels(path: str | Path) -> np.ndarray:
    data = _read(path, UINT32)
    if data.shape[2] != 1:
        raise FormatError(f"{path}: label map must have C = 1, got {data.shape[2]}")
    return data[:, :, 0].astype(np.int64)
