#!/usr/bin/env python3

from typing import Tuple

import numpy as np

from cvnuclei.encoding import EncodedTargets
from cvnuclei.raster import RasterShape, VectorField
from cvnuclei.synth import Ellipse, render_ellipses, SynthParams


SMALL_SYNTH = SynthParams(
    seed=7, shape=RasterShape(96, 96), nucleus_count=8, radius_range=(5.0, 9.0)
)
# Circle B is drawn last and bites into circle A
TOUCHING_CIRCLES = (
    Ellipse(cx=20.0, cy=20.0, semi_major=10.0, semi_minor=10.0),
    Ellipse(cx=32.0, cy=20.0, semi_major=6.0, semi_minor=6.0),
)


def square_map(
    shape: Tuple[int, int], top: int, left: int, side: int, label: int = 1
) -> np.ndarray:
    gt = np.zeros(shape, dtype=np.int64)
    gt[top : top + side, left : left + side] = label
    return gt


def two_touching_circles() -> np.ndarray:
    return render_ellipses((40, 48), TOUCHING_CIRCLES)


def random_label_map(
    rng: np.random.Generator, max_side: int = 10, max_instances: int = 4
) -> np.ndarray:
    height, width = rng.integers(1, max_side + 1, size=2)
    instances = int(rng.integers(1, max_instances + 1))
    return rng.integers(0, instances + 1, size=(height, width)).astype(np.int64)


def clean_prediction(
    targets: EncodedTargets,
) -> Tuple[np.ndarray, np.ndarray, VectorField]:
    """Targets as a perfect network would predict them"""
    return (
        targets.inside.astype(np.float64),
        targets.center.astype(np.float64),
        VectorField(targets.vectors.dx.copy(), targets.vectors.dy.copy()),
    )
