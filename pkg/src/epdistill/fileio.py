"""Bit-exact binary file formats plus the keypoint CSV.

Matrix payloads are 32-bit little-endian IEEE-754, row-major, preceded by a
4-byte magic and two unsigned 32-bit little-endian size fields:

    descriptor matrix   "EPD1"  rows cols  float32 payload
    raster (logits etc) "EPF1"  height width  float32 payload
    binary heatmap      "EPB1"  height width  one byte per cell in {0, 1}

Keypoints travel as text CSV with header ``x,y,score`` and LF line endings.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

from .errors import MalformedFileError

DESCRIPTOR_MAGIC = b"EPD1"
RASTER_MAGIC = b"EPF1"
HEATMAP_MAGIC = b"EPB1"

_HEADER = struct.Struct("<4sII")


def _write_header(fh, magic: bytes, a: int, b: int):
    fh.write(_HEADER.pack(magic, a, b))


def _read_header(data: bytes, magic: bytes, path) -> tuple[int, int]:
    if len(data) < _HEADER.size:
        raise MalformedFileError(f"{path}: truncated header")
    got, a, b = _HEADER.unpack_from(data)
    if got != magic:
        raise MalformedFileError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if a < 1 or b < 1:
        raise MalformedFileError(f"{path}: sizes must be >= 1, got {a}x{b}")
    return a, b


def _read_f32_payload(data: bytes, rows: int, cols: int, path) -> np.ndarray:
    expected = 4 * rows * cols
    payload = data[_HEADER.size:]
    if len(payload) != expected:
        raise MalformedFileError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(float).reshape(rows, cols)
    if not np.all(np.isfinite(values)):
        raise MalformedFileError(f"{path}: payload contains non-finite values")
    return values


def write_matrix(path, matrix, magic: bytes = DESCRIPTOR_MAGIC):
    mat = np.asarray(matrix, dtype=float)
    if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
        raise ValueError(f"need a nonempty 2-D matrix, got shape {mat.shape}")
    with open(path, "wb") as fh:
        _write_header(fh, magic, mat.shape[0], mat.shape[1])
        fh.write(mat.astype("<f4").tobytes(order="C"))


def read_matrix(path, magic: bytes = DESCRIPTOR_MAGIC) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
    rows, cols = _read_header(data, magic, path)
    return _read_f32_payload(data, rows, cols, path)


def write_descriptor_file(path, matrix):
    """Write a rows x cols descriptor matrix ("EPD1")."""
    write_matrix(path, matrix, DESCRIPTOR_MAGIC)


def read_descriptor_file(path) -> np.ndarray:
    return read_matrix(path, DESCRIPTOR_MAGIC)


def write_raster_file(path, values):
    """Write an H x W float raster ("EPF1")."""
    write_matrix(path, values, RASTER_MAGIC)


def read_raster_file(path) -> np.ndarray:
    return read_matrix(path, RASTER_MAGIC)


def write_heatmap_file(path, values):
    """Write an H x W binary heatmap ("EPB1", one byte per cell)."""
    v = np.asarray(values)
    if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
        raise ValueError(f"need a nonempty 2-D heatmap, got shape {v.shape}")
    if not np.isin(v, (0, 1)).all():
        raise ValueError("heatmap values must be 0 or 1")
    with open(path, "wb") as fh:
        _write_header(fh, HEATMAP_MAGIC, v.shape[0], v.shape[1])
        fh.write(v.astype(np.uint8).tobytes(order="C"))


def read_heatmap_file(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
    h, w = _read_header(data, HEATMAP_MAGIC, path)
    payload = data[_HEADER.size:]
    if len(payload) != h * w:
        raise MalformedFileError(f"{path}: payload is {len(payload)} bytes, expected {h * w}")
    values = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    if not np.isin(values, (0, 1)).all():
        raise MalformedFileError(f"{path}: heatmap bytes must be 0 or 1")
    return values.copy()


def write_keypoint_csv(path, points):
    """Write keypoints as ``x,y,score`` CSV rows with LF endings."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"need (n, 3) keypoint data, got shape {pts.shape}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "score"])
        for x, y, s in pts:
            writer.writerow([f"{x:.10g}", f"{y:.10g}", f"{s:.10g}"])


def read_keypoint_csv(path) -> np.ndarray:
    """Read an ``x,y,score`` CSV back as an (n, 3) float array."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
    if not rows or rows[0] != ["x", "y", "score"]:
        raise MalformedFileError(f"{path}: missing 'x,y,score' header")
    try:
        pts = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    except (ValueError, IndexError) as exc:
        raise MalformedFileError(f"{path}: unparseable keypoint row") from exc
    if pts.size == 0:
        return np.empty((0, 3))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise MalformedFileError(f"{path}: rows must have exactly 3 fields")
    if not np.all(np.isfinite(pts)):
        raise MalformedFileError(f"{path}: non-finite keypoint values")
    return pts
