#!/usr/bin/env python3
""" Deterministic synthetic nuclei scenes and a prediction corruption model

Randomness comes from numpy.random.Generator(PCG64(seed)). generate_scene
draws, per placement attempt and in this order: semi-minor axis
(uniform in radius_range), eccentricity (uniform in [0, eccentricity_max]),
angle (uniform in [0, pi)), center column, center row (uniform over the
positions keeping the ellipse's bounding circle on the raster).
corrupt_targets draws inside noise, center noise, dx noise, dy noise. """

import logging
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage

from cvnuclei.encoding import EncodedTargets
from cvnuclei.raster import check_label_map, Connectivity, RasterShape, VectorField


LOG = logging.getLogger(__name__)
PLACEMENT_ATTEMPTS = 1000
PRNG_NAME = "PCG64"


class SceneGenerationError(RuntimeError):
    pass


class SynthParams(NamedTuple):
    seed: int = 0
    shape: RasterShape = RasterShape(256, 256)
    nucleus_count: int = 30
    radius_range: Tuple[float, float] = (5.0, 12.0)
    eccentricity_max: float = 0.6
    allow_touching: bool = True
    max_overlap_fraction: float = 0.05

    def validate(self) -> "SynthParams":
        self.shape.validate()
        low, high = self.radius_range
        if low < 5 or high < low:
            raise ValueError(
                f"radius_range needs 5 <= min <= max, got {self.radius_range}"
            )
        if self.nucleus_count < 1:
            raise ValueError(f"nucleus_count must be >= 1, got {self.nucleus_count}")
        if not 0.0 <= self.eccentricity_max < 1.0:
            raise ValueError(
                f"eccentricity_max must be in [0, 1), got {self.eccentricity_max}"
            )
        if not 0.0 <= self.max_overlap_fraction < 0.3:
            raise ValueError(
                "max_overlap_fraction must be in [0, 0.3), got "
                + f"{self.max_overlap_fraction}"
            )
        return self


class CorruptionParams(NamedTuple):
    seed: int = 0
    mask_noise_sigma: float = 0.0
    vector_noise_sigma: float = 0.0
    boundary_dilation: int = 0

    def validate(self) -> "CorruptionParams":
        if self.mask_noise_sigma < 0 or self.vector_noise_sigma < 0:
            raise ValueError(f"Noise sigmas must be >= 0, got {self}")
        if self.boundary_dilation < 0:
            raise ValueError(
                f"boundary_dilation must be >= 0, got {self.boundary_dilation}"
            )
        return self


class Ellipse(NamedTuple):
    cx: float
    cy: float
    semi_major: float
    semi_minor: float
    # Radians, measured from the column axis
    angle: float = 0.0


def rasterize_ellipse(shape: Sequence[int], ellipse: Ellipse) -> np.ndarray:
    rows, cols = np.indices(tuple(shape), dtype=np.float64)
    x, y = cols - ellipse.cx, rows - ellipse.cy
    cos, sin = np.cos(ellipse.angle), np.sin(ellipse.angle)
    along = (x * cos + y * sin) / ellipse.semi_major
    across = (-x * sin + y * cos) / ellipse.semi_minor
    return along * along + across * across <= 1.0


def render_ellipses(shape: Sequence[int], ellipses: Sequence[Ellipse]) -> np.ndarray:
    """Label ellipses 1..N in order; a later ellipse wins contested pixels"""
    labels = np.zeros(tuple(shape), dtype=np.int64)
    for label, ellipse in enumerate(ellipses, start=1):
        labels[rasterize_ellipse(shape, ellipse)] = label
    return labels


def _acceptable(
    candidate: np.ndarray, placed: List[np.ndarray], params: SynthParams
) -> bool:
    if not candidate.any():
        return False
    if not params.allow_touching:
        eight = Connectivity.EIGHT.structure()
        grown = ndimage.binary_dilation(candidate, structure=eight)
        return not any((grown & mask).any() for mask in placed)
    area = candidate.sum()
    for mask in placed:
        overlap = np.count_nonzero(candidate & mask)
        if overlap > params.max_overlap_fraction * min(area, mask.sum()):
            return False
    return True


def generate_ellipses(params: SynthParams) -> List[Ellipse]:
    params.validate()
    rng = np.random.Generator(np.random.PCG64(params.seed))
    height, width = params.shape
    low, high = params.radius_range
    ellipses: List[Ellipse] = []
    placed: List[np.ndarray] = []

    for index in range(params.nucleus_count):
        for _attempt in range(PLACEMENT_ATTEMPTS):
            semi_minor = rng.uniform(low, high)
            eccentricity = rng.uniform(0.0, params.eccentricity_max)
            angle = rng.uniform(0.0, np.pi)
            semi_major = semi_minor / np.sqrt(1.0 - eccentricity * eccentricity)
            margin = int(np.ceil(semi_major))
            if 2 * margin >= min(height, width):
                continue
            cx = rng.uniform(margin, width - 1 - margin)
            cy = rng.uniform(margin, height - 1 - margin)
            ellipse = Ellipse(cx, cy, semi_major, semi_minor, angle)
            candidate = rasterize_ellipse(params.shape, ellipse)
            if _acceptable(candidate, placed, params):
                ellipses.append(ellipse)
                placed.append(candidate)
                break
        else:
            raise SceneGenerationError(
                f"Could not place nucleus {index + 1} of {params.nucleus_count} "
                + f"after {PLACEMENT_ATTEMPTS} attempts"
            )

    LOG.debug(f"Placed {len(ellipses)} ellipses with seed {params.seed} ({PRNG_NAME})")
    return ellipses


def generate_scene(params: SynthParams = SynthParams()) -> np.ndarray:
    return render_ellipses(params.shape, generate_ellipses(params))


def perturb_annotation(gt: np.ndarray, dilation: int) -> np.ndarray:
    """Grow every instance into background by `dilation` four-connected steps;
    contested pixels take the largest neighbouring label"""
    check_label_map(gt)
    if dilation < 0:
        raise ValueError(f"dilation must be >= 0, got {dilation}")
    grown = gt.copy()
    cross = Connectivity.FOUR.structure()
    for _step in range(dilation):
        expanded = ndimage.grey_dilation(
            grown, footprint=cross, mode="constant", cval=0
        )
        grown = np.where(grown > 0, grown, expanded)
    return grown


def corrupt_targets(
    targets: EncodedTargets, params: CorruptionParams = CorruptionParams()
) -> Tuple[np.ndarray, np.ndarray, VectorField]:
    """Turn clean targets into noisy prediction fields

    Masks become probabilities (1 -> 1 - |n|, 0 -> |n|, clipped to [0, 1]);
    vector channels get additive Gaussian noise."""
    params.validate()
    rng = np.random.Generator(np.random.PCG64(params.seed))
    shape = targets.inside.shape

    def _probabilities(mask: np.ndarray) -> np.ndarray:
        noise = np.abs(rng.normal(0.0, params.mask_noise_sigma, size=shape))
        return np.clip(np.where(mask, 1.0 - noise, noise), 0.0, 1.0)

    inside = _probabilities(targets.inside)
    center = _probabilities(targets.center)
    dx = targets.vectors.dx + rng.normal(0.0, params.vector_noise_sigma, size=shape)
    dy = targets.vectors.dy + rng.normal(0.0, params.vector_noise_sigma, size=shape)
    return inside, center, VectorField(dx, dy)
