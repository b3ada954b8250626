#!/usr/bin/env python3
""" Training losses (cross entropy, soft IOU, mean square) with analytic
gradients with respect to the raw predictions """

import logging
from enum import Enum
from typing import NamedTuple, Optional, Tuple

import numpy as np

from cvnuclei.encoding import EncodedTargets
from cvnuclei.raster import check_same_shape, VectorField


EPSILON = 1e-7
LOG = logging.getLogger(__name__)


class MSReduction(Enum):
    SUM = "sum"
    MEAN = "mean"


class LossTensors(NamedTuple):
    targets: np.ndarray
    predictions: np.ndarray
    validity: np.ndarray

    @classmethod
    def unmasked(cls, targets: np.ndarray, predictions: np.ndarray) -> "LossTensors":
        return cls(targets, predictions, np.ones(np.shape(targets), dtype=bool))


class LossWeights(NamedTuple):
    alpha: float = 10.0
    beta: float = 10.0
    gamma: float = 1.0

    def validate(self) -> "LossWeights":
        if min(self) < 0:
            raise ValueError(f"Loss weights must be >= 0, got {self}")
        return self


class LossValueAndGrad(NamedTuple):
    value: float
    grad: np.ndarray


class TotalLoss(NamedTuple):
    value: float
    ce: float
    iou: float
    ms: float
    inside_grad: np.ndarray
    center_grad: np.ndarray
    cvx_grad: np.ndarray
    cvy_grad: np.ndarray


def _checked(t: LossTensors) -> LossTensors:
    targets = np.asarray(t.targets, dtype=np.float64)
    predictions = np.asarray(t.predictions, dtype=np.float64)
    validity = np.asarray(t.validity, dtype=bool)
    check_same_shape(
        np.atleast_2d(targets), np.atleast_2d(predictions), np.atleast_2d(validity)
    )
    if np.isnan(targets).any() or np.isnan(predictions).any():
        raise ValueError("Loss inputs contain NaN")
    return LossTensors(targets, predictions, validity)


def ce_loss(t: LossTensors) -> LossValueAndGrad:
    """Negated binary cross entropy, minimal at a perfect prediction"""
    y, p, valid = _checked(t)
    p = np.clip(p, EPSILON, 1.0 - EPSILON)
    per_pixel = y * np.log(p) + (1.0 - y) * np.log(1.0 - p)
    grad = np.where(valid, -(y / p - (1.0 - y) / (1.0 - p)), 0.0)
    return LossValueAndGrad(float(-per_pixel[valid].sum()), grad)


def iou_loss(t: LossTensors) -> LossValueAndGrad:
    """1 - I/U over the valid pixels of one mask"""
    y, p, valid = _checked(t)
    y_valid = np.where(valid, y, 0.0)
    p_valid = np.where(valid, p, 0.0)
    intersection = float((y_valid * p_valid).sum())
    union = max(float(y_valid.sum() + p_valid.sum()) - intersection, EPSILON)
    # dI/dp = y, dU/dp = 1 - y
    grad = -(y * union - intersection * (1.0 - y)) / (union * union)
    return LossValueAndGrad(1.0 - intersection / union, np.where(valid, grad, 0.0))


def ms_loss(
    t: LossTensors, reduction: MSReduction = MSReduction.SUM
) -> LossValueAndGrad:
    y, p, valid = _checked(t)
    diff = np.where(valid, p - y, 0.0)
    value = float((diff * diff).sum())
    grad = 2.0 * diff
    if reduction is MSReduction.MEAN:
        count = max(int(valid.sum()), 1)
        value /= count
        grad /= count
    return LossValueAndGrad(value, grad)


def total_loss(
    inside: LossTensors,
    center: LossTensors,
    cvx: LossTensors,
    cvy: LossTensors,
    w: LossWeights = LossWeights(),
    reduction: MSReduction = MSReduction.SUM,
) -> TotalLoss:
    """alpha * CE + beta * IOU + gamma * MS, summed over both masks and both
    vector channels; gradients are scaled per field"""
    w.validate()
    ce_inside, ce_center = ce_loss(inside), ce_loss(center)
    iou_inside, iou_center = iou_loss(inside), iou_loss(center)
    ms_x, ms_y = ms_loss(cvx, reduction), ms_loss(cvy, reduction)

    ce = ce_inside.value + ce_center.value
    iou = iou_inside.value + iou_center.value
    ms = ms_x.value + ms_y.value
    LOG.debug(f"Loss components: ce={ce} iou={iou} ms={ms}")
    return TotalLoss(
        value=w.alpha * ce + w.beta * iou + w.gamma * ms,
        ce=ce,
        iou=iou,
        ms=ms,
        inside_grad=w.alpha * ce_inside.grad + w.beta * iou_inside.grad,
        center_grad=w.alpha * ce_center.grad + w.beta * iou_center.grad,
        cvx_grad=w.gamma * ms_x.grad,
        cvy_grad=w.gamma * ms_y.grad,
    )


def targets_to_loss_tensors(
    targets: EncodedTargets,
    inside_pred: np.ndarray,
    center_pred: np.ndarray,
    vectors_pred: VectorField,
    validity: Optional[np.ndarray] = None,
) -> Tuple[LossTensors, LossTensors, LossTensors, LossTensors]:
    """Pair encoded targets with predictions; vectors count on inside pixels"""
    vector_validity = targets.validity if validity is None else validity
    return (
        LossTensors.unmasked(targets.inside.astype(np.float64), inside_pred),
        LossTensors.unmasked(targets.center.astype(np.float64), center_pred),
        LossTensors(targets.vectors.dx, vectors_pred.dx, vector_validity),
        LossTensors(targets.vectors.dy, vectors_pred.dy, vector_validity),
    )
