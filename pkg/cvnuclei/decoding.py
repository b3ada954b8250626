#!/usr/bin/env python3
""" Instance differentiation: predicted Inside Mask, Center Mask and
Center Vector -> instance LabelMap """

import logging
from typing import NamedTuple, Tuple

import numpy as np
from scipy import ndimage

from cvnuclei.raster import (
    check_binary_mask,
    check_label_map,
    check_same_shape,
    check_scalar_field,
    check_vector_field,
    connected_components,
    Connectivity,
    fill_holes,
    nearest_labels,
    relabel_raster_order,
    VectorField,
)


LOG = logging.getLogger(__name__)


class NoCenterRegionsError(ValueError):
    pass


class DecodeParams(NamedTuple):
    inside_threshold: float = 0.5
    center_threshold: float = 0.5
    connectivity: Connectivity = Connectivity.EIGHT
    min_instance_area: int = 0

    def validate(self) -> "DecodeParams":
        for name in ("inside_threshold", "center_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.min_instance_area < 0:
            raise ValueError(
                f"min_instance_area must be >= 0, got {self.min_instance_area}"
            )
        return self


class CenterRegions(NamedTuple):
    labels: np.ndarray
    count: int


class DecodeReport(NamedTuple):
    suppressed_components: int = 0
    fallback_pixels: int = 0
    holes_filled: int = 0

    def to_text(self) -> str:
        return "".join(f"{key}={value}\n" for key, value in self._asdict().items())


def binarize(field: np.ndarray, threshold: float) -> np.ndarray:
    check_scalar_field(field)
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"Threshold must be in [0, 1], got {threshold}")
    return field >= threshold


def _suppress(
    inside: np.ndarray, center: np.ndarray, conn: Connectivity
) -> Tuple[np.ndarray, int]:
    check_same_shape(check_binary_mask(inside), check_binary_mask(center))
    components = connected_components(inside, conn)
    total = int(components.max())
    keep = np.unique(components[center & (components > 0)])
    suppressed = total - int(keep.size)
    if suppressed:
        LOG.debug(f"Suppressed {suppressed} of {total} inside components")
    return np.isin(components, keep), suppressed


def suppress_false_positives(
    inside: np.ndarray,
    center: np.ndarray,
    conn: Connectivity = Connectivity.EIGHT,
) -> np.ndarray:
    """Drop inside components that hold no center pixel"""
    return _suppress(inside, center, conn)[0]


def extract_center_regions(
    center: np.ndarray, conn: Connectivity = Connectivity.EIGHT
) -> CenterRegions:
    labels = connected_components(center, conn)
    return CenterRegions(labels, int(labels.max()))


def round_half_away(values: np.ndarray) -> np.ndarray:
    return (np.sign(values) * np.floor(np.abs(values) + 0.5)).astype(np.int64)


def assign_pixels(
    inside: np.ndarray, regions: CenterRegions, vectors: VectorField
) -> Tuple[np.ndarray, DecodeReport]:
    """Center pixels keep their region; other inside pixels follow their
    vector to a region, or fall back to the nearest region"""
    check_same_shape(check_binary_mask(inside), regions.labels, vectors.dx, vectors.dy)
    check_vector_field(vectors)
    height, width = inside.shape
    instances = np.zeros(inside.shape, dtype=np.int64)
    rows, cols = np.nonzero(inside)
    if rows.size == 0:
        return instances, DecodeReport()
    if regions.count == 0:
        raise NoCenterRegionsError(
            f"{rows.size} inside pixels to assign but no center regions"
        )

    assigned = regions.labels[rows, cols].astype(np.int64)
    pending = np.flatnonzero(assigned == 0)
    prow, pcol = rows[pending], cols[pending]
    target_x = round_half_away(pcol - vectors.dx[prow, pcol])
    target_y = round_half_away(prow - vectors.dy[prow, pcol])
    in_bounds = (target_x >= 0) & (target_x < width) & (target_y >= 0)
    in_bounds &= target_y < height

    pointed = np.zeros(pending.size, dtype=np.int64)
    pointed[in_bounds] = regions.labels[target_y[in_bounds], target_x[in_bounds]]
    assigned[pending] = pointed

    fallback = pending[pointed == 0]
    if fallback.size:
        points = np.stack([rows[fallback], cols[fallback]], axis=1)
        assigned[fallback] = nearest_labels(points, regions.labels)
        LOG.debug(f"{fallback.size} pixels assigned to their nearest center region")

    instances[rows, cols] = assigned
    return instances, DecodeReport(fallback_pixels=int(fallback.size))


def _refine(
    instances: np.ndarray, params: DecodeParams, conn: Connectivity
) -> Tuple[np.ndarray, int]:
    check_label_map(instances)
    params.validate()
    refined = instances.copy()
    holes_filled = 0
    hole_structure = conn.complement().structure()

    for index, window in enumerate(ndimage.find_objects(instances)):
        if window is None:
            continue
        label = index + 1
        # One pixel margin keeps every outside pixel connected to the crop border
        window = tuple(
            slice(max(s.start - 1, 0), min(s.stop + 1, size))
            for s, size in zip(window, instances.shape)
        )
        owner = instances[window] == label
        holes = fill_holes(owner, conn) & ~owner
        if not holes.any():
            continue
        hole_labels, _ = ndimage.label(holes, structure=hole_structure)
        # A hole touching any other instance has no single owner
        shared = np.unique(hole_labels[(instances[window] != 0) & holes])
        fillable = holes & ~np.isin(hole_labels, shared)
        if fillable.any():
            refined[window][fillable] = label
            holes_filled += int(fillable.sum())

    if params.min_instance_area > 0:
        areas = np.bincount(refined.ravel())
        small = np.flatnonzero(areas < params.min_instance_area)
        small = small[small != 0]
        if small.size:
            LOG.debug(f"Dropping {small.size} instances below the minimum area")
            refined[np.isin(refined, small)] = 0

    return relabel_raster_order(refined), holes_filled


def refine(
    instances: np.ndarray,
    params: DecodeParams = DecodeParams(),
    conn: Connectivity = Connectivity.EIGHT,
) -> np.ndarray:
    """Fill holes owned by a single instance, drop small instances and
    relabel to 1..K in raster-scan order"""
    return _refine(instances, params, conn)[0]


def decode_instances(
    inside_prob: np.ndarray,
    center_prob: np.ndarray,
    vectors: VectorField,
    params: DecodeParams = DecodeParams(),
) -> Tuple[np.ndarray, DecodeReport]:
    params.validate()
    check_same_shape(inside_prob, center_prob, vectors.dx, vectors.dy)
    check_vector_field(vectors)
    inside = binarize(inside_prob, params.inside_threshold)
    center = binarize(center_prob, params.center_threshold)

    inside, suppressed = _suppress(inside, center, params.connectivity)
    if not inside.any():
        LOG.debug("Nothing survived false positive suppression")
        return (
            np.zeros(inside.shape, dtype=np.int64),
            DecodeReport(suppressed_components=suppressed),
        )

    regions = extract_center_regions(center, params.connectivity)
    instances, report = assign_pixels(inside, regions, vectors)
    instances, holes_filled = _refine(instances, params, params.connectivity)
    if report.fallback_pixels > inside.sum() // 10:
        LOG.warning(
            f"{report.fallback_pixels} of {int(inside.sum())} pixels needed the "
            + "nearest center fallback"
        )
    LOG.debug(f"Decoded {int(instances.max())} instances from {regions.count} regions")
    return instances, report._replace(
        suppressed_components=suppressed, holes_filled=holes_filled
    )
