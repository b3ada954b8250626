#!/usr/bin/env python3
""" Training targets from a ground-truth instance map: Inside Mask,
Center Mask and Center Vector """

import logging
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage

from cvnuclei.raster import (
    check_label_map,
    Connectivity,
    distance_transform,
    erode,
    VectorField,
)


LOG = logging.getLogger(__name__)


class EncodeParams(NamedTuple):
    """`connectivity` is validated and carried for config symmetry only:
    instances come from the label map, so encoding never reads it"""

    erosion_radius: int = 1
    center_distance_threshold: float = 2.0
    connectivity: Connectivity = Connectivity.EIGHT

    def validate(self) -> "EncodeParams":
        if self.erosion_radius < 1:
            raise ValueError(f"erosion_radius must be >= 1, got {self.erosion_radius}")
        if self.center_distance_threshold < 0:
            raise ValueError(
                "center_distance_threshold must be >= 0, got "
                + f"{self.center_distance_threshold}"
            )
        return self


class Centroid(NamedTuple):
    """Geometric center of one instance; cx is a column, cy a row"""

    instance_label: int
    cx: float
    cy: float


class CenterMask(NamedTuple):
    mask: np.ndarray
    # Instances whose center region vanished
    empty_labels: Tuple[int, ...]


class EncodedTargets(NamedTuple):
    inside: np.ndarray
    center: np.ndarray
    vectors: VectorField
    validity: np.ndarray
    centroids: List[Centroid]
    empty_labels: Tuple[int, ...] = ()


def make_inside_mask(gt: np.ndarray) -> np.ndarray:
    check_label_map(gt)
    return gt > 0


def make_boundary_mask(gt: np.ndarray) -> np.ndarray:
    """Instance pixels with a four-neighbour of a different label"""
    check_label_map(gt)
    cross = Connectivity.FOUR.structure()
    differs = ndimage.grey_dilation(gt, footprint=cross, mode="nearest") != (
        ndimage.grey_erosion(gt, footprint=cross, mode="nearest")
    )
    return differs & (gt > 0)


def make_center_mask(
    gt: np.ndarray, params: EncodeParams = EncodeParams()
) -> CenterMask:
    """Per instance: erode, distance transform, keep distance > threshold"""
    check_label_map(gt)
    params.validate()
    center = np.zeros(gt.shape, dtype=bool)
    empty: List[int] = []
    # Crop each instance with a one pixel margin; the ring is background so
    # erosion and distances are the same as on the full raster.
    for index, window in enumerate(ndimage.find_objects(gt)):
        if window is None:
            continue
        label = index + 1
        window = tuple(
            slice(max(s.start - 1, 0), min(s.stop + 1, size))
            for s, size in zip(window, gt.shape)
        )
        instance = gt[window] == label
        distances = distance_transform(erode(instance, params.erosion_radius))
        region = distances > params.center_distance_threshold
        if not region.any():
            empty.append(label)
            continue
        center[window] |= region

    if empty:
        LOG.warning(f"{len(empty)} instance(s) have no center region: {empty}")
    return CenterMask(center, tuple(empty))


def compute_centroids(gt: np.ndarray) -> List[Centroid]:
    check_label_map(gt)
    labels = np.unique(gt[gt > 0])
    if labels.size == 0:
        raise ValueError("Cannot compute centroids of an all-background map")
    centers = ndimage.center_of_mass(np.ones(gt.shape), gt, labels)
    return [
        Centroid(int(label), float(cx), float(cy))
        for label, (cy, cx) in zip(labels, centers)
    ]


def make_center_vector(gt: np.ndarray, centroids: Sequence[Centroid]) -> VectorField:
    """dx = x - cx, dy = y - cy on every instance pixel; background stays 0"""
    check_label_map(gt)
    by_label: Dict[int, Centroid] = {c.instance_label: c for c in centroids}
    labels = np.unique(gt[gt > 0])
    missing = [int(label) for label in labels if int(label) not in by_label]
    if missing:
        raise ValueError(f"No centroid for instance label(s) {missing}")

    vectors = VectorField.zeros(gt.shape)
    if labels.size == 0:
        return vectors

    cx_lookup = np.zeros(int(labels.max()) + 1, dtype=np.float64)
    cy_lookup = np.zeros_like(cx_lookup)
    for label in labels:
        cx_lookup[label] = by_label[int(label)].cx
        cy_lookup[label] = by_label[int(label)].cy

    rows, cols = np.nonzero(gt)
    pixel_labels = gt[rows, cols]
    vectors.dx[rows, cols] = cols - cx_lookup[pixel_labels]
    vectors.dy[rows, cols] = rows - cy_lookup[pixel_labels]
    return vectors


def encode_targets(
    gt: np.ndarray, params: EncodeParams = EncodeParams()
) -> EncodedTargets:
    inside = make_inside_mask(gt)
    center = make_center_mask(gt, params)
    centroids = compute_centroids(gt) if inside.any() else []
    vectors = make_center_vector(gt, centroids)
    LOG.debug(
        f"Encoded {len(centroids)} instances: {int(inside.sum())} inside pixels, "
        + f"{int(center.mask.sum())} center pixels"
    )
    return EncodedTargets(
        inside=inside,
        center=center.mask,
        vectors=vectors,
        validity=inside.copy(),
        centroids=centroids,
        empty_labels=center.empty_labels,
    )
