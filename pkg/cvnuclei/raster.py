#!/usr/bin/env python3
""" 2-D raster types and the classic pixel algorithms everything else uses """

import logging
from enum import Enum
from typing import NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage


LOG = logging.getLogger(__name__)
# Upper bound on the (points x labeled pixels) distance matrix built at once
NEAREST_CHUNK_ELEMENTS = 4_000_000

Pixel = Tuple[int, int]


class ShapeMismatchError(ValueError):
    pass


CONNECTIVITY_NAMES = {"four": 4, "4": 4, "eight": 8, "8": 8}


class Connectivity(Enum):
    FOUR = 4
    EIGHT = 8

    def structure(self) -> np.ndarray:
        reach = 1 if self is Connectivity.FOUR else 2
        return ndimage.generate_binary_structure(2, reach)

    def complement(self) -> "Connectivity":
        """Background connectivity dual to this foreground connectivity"""
        return Connectivity.FOUR if self is Connectivity.EIGHT else Connectivity.EIGHT

    @classmethod
    def parse(cls, value: str) -> "Connectivity":
        try:
            return cls(CONNECTIVITY_NAMES[value.strip().lower()])
        except KeyError:
            raise ValueError(f"{value!r} is not a connectivity (four or eight)")


class RasterShape(NamedTuple):
    height: int
    width: int

    def validate(self) -> "RasterShape":
        if self.height < 1 or self.width < 1:
            raise ValueError(f"Raster shape must be at least 1x1, got {self}")
        return self


class VectorField(NamedTuple):
    """Per-pixel displacement: dx is horizontal (columns), dy vertical (rows)"""

    dx: np.ndarray
    dy: np.ndarray

    @property
    def shape(self) -> RasterShape:
        return shape_of(self.dx)

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "VectorField":
        size = tuple(shape)
        return cls(np.zeros(size, dtype=np.float64), np.zeros(size, dtype=np.float64))


def shape_of(raster: np.ndarray) -> RasterShape:
    if raster.ndim != 2:
        raise ValueError(f"Expected a 2-D raster, got {raster.ndim} dimensions")
    return RasterShape(int(raster.shape[0]), int(raster.shape[1])).validate()


def check_binary_mask(mask: np.ndarray) -> np.ndarray:
    shape_of(mask)
    if mask.dtype != np.bool_:
        raise ValueError(f"BinaryMask must be boolean, got {mask.dtype}")
    return mask


def check_label_map(labels: np.ndarray) -> np.ndarray:
    shape_of(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"LabelMap must be integer, got {labels.dtype}")
    if labels.size and labels.min() < 0:
        raise ValueError("LabelMap labels must be >= 0")
    return labels


def check_scalar_field(field: np.ndarray) -> np.ndarray:
    shape_of(field)
    if not np.all(np.isfinite(field)):
        raise ValueError("ScalarField contains NaN or Inf values")
    return field


def check_vector_field(vectors: VectorField) -> VectorField:
    check_same_shape(vectors.dx, vectors.dy)
    check_scalar_field(vectors.dx)
    check_scalar_field(vectors.dy)
    return vectors


def check_same_shape(*rasters: np.ndarray) -> RasterShape:
    shapes = {shape_of(r) for r in rasters}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"Raster shapes do not match: {sorted(shapes)}")
    return shapes.pop()


def disk(radius: int) -> np.ndarray:
    """Euclidean disk {(a, b): a^2 + b^2 <= r^2} centred in a (2r+1)^2 box"""
    offsets = np.arange(-radius, radius + 1)
    return offsets[:, None] ** 2 + offsets[None, :] ** 2 <= radius * radius


def relabel_raster_order(labels: np.ndarray) -> np.ndarray:
    """Map the nonzero labels onto 1..K in raster-scan order of first pixel"""
    flat = labels.ravel()
    values, first_index = np.unique(flat, return_index=True)
    keep = values != 0
    values, first_index = values[keep], first_index[keep]
    ordered = values[np.argsort(first_index, kind="stable")]

    relabeled = np.zeros(flat.shape, dtype=np.int64)
    if ordered.size:
        lookup_index = np.searchsorted(values, flat)
        new_labels = np.zeros(values.size, dtype=np.int64)
        new_labels[np.searchsorted(values, ordered)] = np.arange(1, ordered.size + 1)
        nonzero = flat != 0
        relabeled[nonzero] = new_labels[lookup_index[nonzero]]
    return relabeled.reshape(labels.shape)


def connected_components(
    mask: np.ndarray, conn: Connectivity = Connectivity.EIGHT
) -> np.ndarray:
    check_binary_mask(mask)
    labels, count = ndimage.label(mask, structure=conn.structure())
    LOG.debug(f"Found {count} {conn.name.lower()}-connected components")
    return relabel_raster_order(labels)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Erode by a Euclidean disk; pixels beyond the raster border are background"""
    check_binary_mask(mask)
    if radius < 1:
        raise ValueError(f"Erosion radius must be >= 1, got {radius}")
    return ndimage.binary_erosion(mask, structure=disk(radius), border_value=0)


def squared_distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact integer squared distance from each foreground pixel to background

    The raster is padded with one ring of background so the border behaves as
    background one step outside the image."""
    check_binary_mask(mask)
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    # Feature transform: index of the nearest background pixel
    _, (rows, cols) = ndimage.distance_transform_edt(
        padded, return_distances=True, return_indices=True
    )
    grid_rows, grid_cols = np.indices(padded.shape)
    squared = (grid_rows - rows) ** 2 + (grid_cols - cols) ** 2
    return squared[1:-1, 1:-1].astype(np.int64)


def distance_transform(mask: np.ndarray) -> np.ndarray:
    return np.sqrt(squared_distance_transform(mask).astype(np.float64))


def nearest_labels(points: np.ndarray, regions: np.ndarray) -> np.ndarray:
    """Label of the nearest nonzero pixel for each (row, col) point

    Ties go to the smaller squared distance, then smaller row, then smaller
    column: np.nonzero is row-major and argmin keeps the first minimum."""
    check_label_map(regions)
    region_rows, region_cols = np.nonzero(regions)
    if region_rows.size == 0:
        raise ValueError("Cannot find the nearest label in an all-background map")
    region_labels = regions[region_rows, region_cols]

    points = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    result = np.zeros(points.shape[0], dtype=np.int64)
    chunk = max(1, NEAREST_CHUNK_ELEMENTS // region_rows.size)
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        d2 = (block[:, 0:1] - region_rows[None, :]) ** 2 + (
            block[:, 1:2] - region_cols[None, :]
        ) ** 2
        result[start : start + chunk] = region_labels[np.argmin(d2, axis=1)]
    return result


def nearest_label(point: Pixel, regions: np.ndarray) -> int:
    return int(nearest_labels(np.array([point]), regions)[0])


def fill_holes(mask: np.ndarray, conn: Connectivity = Connectivity.EIGHT) -> np.ndarray:
    """Fill background components that cannot reach the raster border

    Background is flooded with the complementary connectivity of `conn`."""
    check_binary_mask(mask)
    return ndimage.binary_fill_holes(mask, structure=conn.complement().structure())
