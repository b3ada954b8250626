#!/usr/bin/env python3
""" CVRAST01 raster container, PGM export and the text sidecars

Header (little-endian, 20 bytes): 8 byte magic b"CVRAST01", dtype code
(0 = u8, 1 = u16, 2 = f32), channel count, 2 reserved zero bytes, height and
width as u32. The payload follows row-major with channels stored as planes. """

import logging
import struct
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from cvnuclei.encoding import Centroid
from cvnuclei.raster import (
    check_binary_mask,
    check_label_map,
    check_vector_field,
    shape_of,
    VectorField,
)


HEADER = struct.Struct("<8sBBHII")
LOG = logging.getLogger(__name__)
MAGIC = b"CVRAST01"
MAX_LABEL = np.iinfo(np.uint16).max

Raster = Union[np.ndarray, VectorField]


class RasterFileError(ValueError):
    pass


class BadMagicError(RasterFileError):
    pass


class TruncatedRasterError(RasterFileError):
    pass


class RasterKindError(RasterFileError):
    pass


class LabelOverflowError(RasterFileError):
    pass


class RasterKind(Enum):
    BINARY = "binary mask"
    LABELS = "label map"
    SCALAR = "scalar field"
    VECTOR = "vector field"


# dtype code -> (numpy little-endian dtype, item size)
DTYPES: Dict[int, Tuple[str, int]] = {0: ("<u1", 1), 1: ("<u2", 2), 2: ("<f4", 4)}
KINDS: Dict[Tuple[int, int], RasterKind] = {
    (0, 1): RasterKind.BINARY,
    (1, 1): RasterKind.LABELS,
    (2, 1): RasterKind.SCALAR,
    (2, 2): RasterKind.VECTOR,
}


def kind_of(value: Raster) -> RasterKind:
    if isinstance(value, VectorField):
        return RasterKind.VECTOR
    if value.dtype == np.bool_:
        return RasterKind.BINARY
    if np.issubdtype(value.dtype, np.integer):
        return RasterKind.LABELS
    return RasterKind.SCALAR


def encode_raster(value: Raster) -> bytes:
    kind = kind_of(value)
    if kind is RasterKind.VECTOR:
        assert isinstance(value, VectorField)
        check_vector_field(value)
        planes = [value.dx.astype("<f4"), value.dy.astype("<f4")]
        dtype_code = 2
    else:
        assert isinstance(value, np.ndarray)
        if kind is RasterKind.BINARY:
            planes = [check_binary_mask(value).astype("<u1")]
            dtype_code = 0
        elif kind is RasterKind.LABELS:
            check_label_map(value)
            if value.size and value.max() > MAX_LABEL:
                raise LabelOverflowError(
                    f"Label {int(value.max())} does not fit in 16 bits"
                    + f" (max {MAX_LABEL})"
                )
            planes = [value.astype("<u2")]
            dtype_code = 1
        else:
            if not np.all(np.isfinite(value)):
                raise ValueError("Cannot write a scalar field with NaN or Inf values")
            planes = [value.astype("<f4")]
            dtype_code = 2

    height, width = shape_of(planes[0])
    header = HEADER.pack(MAGIC, dtype_code, len(planes), 0, height, width)
    return header + b"".join(plane.tobytes(order="C") for plane in planes)


def decode_raster(blob: bytes, expect: Optional[RasterKind] = None) -> Raster:
    if len(blob) < HEADER.size:
        raise TruncatedRasterError(
            f"Raster header needs {HEADER.size} bytes, got {len(blob)}"
        )
    magic, dtype_code, channels, _reserved, height, width = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"Bad raster magic {magic!r} (expected {MAGIC!r})")
    kind = KINDS.get((dtype_code, channels))
    if kind is None:
        raise RasterKindError(
            f"Unsupported dtype code {dtype_code} with {channels} channel(s)"
        )
    if expect is not None and kind is not expect:
        raise RasterKindError(f"Expected a {expect.value}, file holds a {kind.value}")
    if height < 1 or width < 1:
        raise RasterFileError(f"Invalid raster size {height}x{width}")

    dtype, item_size = DTYPES[dtype_code]
    payload_size = channels * height * width * item_size
    payload = blob[HEADER.size :]
    if len(payload) < payload_size:
        raise TruncatedRasterError(
            f"Raster payload needs {payload_size} bytes, got {len(payload)}"
        )
    if len(payload) > payload_size:
        trailing = len(payload) - payload_size
        raise RasterFileError(f"{trailing} trailing bytes after raster")

    planes = np.frombuffer(payload, dtype=dtype).reshape(channels, height, width)
    if kind is RasterKind.BINARY:
        return planes[0] != 0
    if kind is RasterKind.LABELS:
        return planes[0].astype(np.int64)
    if kind is RasterKind.SCALAR:
        return planes[0].astype(np.float64)
    return VectorField(planes[0].astype(np.float64), planes[1].astype(np.float64))


def read_raster(path: Path, expect: Optional[RasterKind] = None) -> Raster:
    value = decode_raster(path.read_bytes(), expect)
    LOG.debug(f"Read {kind_of(value).value} from {path}")
    return value


def write_raster(value: Raster, path: Path) -> None:
    blob = encode_raster(value)
    path.write_bytes(blob)
    LOG.debug(f"Wrote {kind_of(value).value} ({len(blob)} bytes) to {path}")


def read_probability_field(path: Path) -> np.ndarray:
    """A scalar field, or a binary mask read as 0.0 / 1.0"""
    value = read_raster(path)
    kind = kind_of(value)
    if kind is RasterKind.BINARY:
        assert isinstance(value, np.ndarray)
        return value.astype(np.float64)
    if kind is not RasterKind.SCALAR:
        raise RasterKindError(
            f"{path}: expected a mask or scalar field, got a {kind.value}"
        )
    assert isinstance(value, np.ndarray)
    return value


def write_pgm(labels: np.ndarray, path: Path) -> None:
    """16-bit binary PGM (P5) view of a label map; maxval covers every label"""
    check_label_map(labels)
    top = int(labels.max()) if labels.size else 0
    if top > MAX_LABEL:
        raise LabelOverflowError(f"Label {top} does not fit in a 16-bit PGM")
    # maxval above 255 forces two bytes per sample
    maxval = max(top, 256)
    height, width = labels.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    path.write_bytes(header + labels.astype(">u2").tobytes(order="C"))


def format_centroids(centroids: Sequence[Centroid]) -> str:
    return "".join(f"{c.instance_label} {c.cx!r} {c.cy!r}\n" for c in centroids)


def parse_centroids(text: str) -> List[Centroid]:
    centroids: List[Centroid] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            label, cx, cy = line.split()
            centroids.append(Centroid(int(label), float(cx), float(cy)))
        except ValueError:
            raise RasterFileError(f"Bad centroid line {line_number}: {line!r}")
    return centroids
