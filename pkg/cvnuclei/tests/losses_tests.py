#!/usr/bin/env python3

import unittest
from typing import Callable

import numpy as np

from cvnuclei.encoding import encode_targets
from cvnuclei.losses import (
    ce_loss,
    iou_loss,
    LossTensors,
    LossValueAndGrad,
    LossWeights,
    ms_loss,
    MSReduction,
    targets_to_loss_tensors,
    total_loss,
)
from cvnuclei.raster import VectorField
from cvnuclei.tests.scene_fixtures import square_map


FD_STEP = 1e-3
FD_CASES = 100
FD_TOLERANCE = 1e-4


def finite_difference_error(
    loss: Callable[[LossTensors], LossValueAndGrad], t: LossTensors
) -> float:
    """Relative error between the analytic gradient and central differences"""
    analytic = loss(t).grad
    numeric = np.zeros_like(t.predictions)
    for index in np.ndindex(t.predictions.shape):
        up, down = t.predictions.copy(), t.predictions.copy()
        up[index] += FD_STEP
        down[index] -= FD_STEP
        numeric[index] = (
            loss(t._replace(predictions=up)).value
            - loss(t._replace(predictions=down)).value
        ) / (2 * FD_STEP)
    scale = max(float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / scale


class LossesTests(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.Generator(np.random.PCG64(2019))

    def _random_mask_tensors(self) -> LossTensors:
        targets = (self.rng.random((6, 6)) < 0.5).astype(np.float64)
        predictions = self.rng.uniform(0.2, 0.8, size=(6, 6))
        validity = self.rng.random((6, 6)) < 0.8
        return LossTensors(targets, predictions, validity)

    def test_weights_validate(self) -> None:
        self.assertEqual(LossWeights(), LossWeights(10.0, 10.0, 1.0))
        with self.assertRaises(ValueError):
            LossWeights(gamma=-1.0).validate()

    def test_ce_loss(self) -> None:
        half = ce_loss(LossTensors.unmasked(np.ones((1, 1)), np.full((1, 1), 0.5)))
        self.assertAlmostEqual(half.value, np.log(2), places=12)
        self.assertAlmostEqual(float(half.grad[0, 0]), -2.0, places=12)

        targets = np.array([[0.0, 1.0]])
        perfect = ce_loss(LossTensors.unmasked(targets, targets.copy()))
        self.assertGreaterEqual(perfect.value, 0.0)
        self.assertLess(perfect.value, 1e-6)

    def test_ce_loss_masked(self) -> None:
        t = LossTensors(
            np.ones((1, 2)), np.array([[0.5, 0.1]]), np.array([[True, False]])
        )
        loss = ce_loss(t)
        self.assertAlmostEqual(loss.value, np.log(2), places=12)
        self.assertEqual(loss.grad[0, 1], 0.0)

    def test_iou_loss(self) -> None:
        targets = (self.rng.random((5, 5)) < 0.5).astype(np.float64)
        targets[0, 0] = 1.0
        self.assertAlmostEqual(
            iou_loss(LossTensors.unmasked(targets, targets.copy())).value, 0.0
        )
        ones = np.ones((3, 3))
        self.assertAlmostEqual(
            iou_loss(LossTensors.unmasked(ones, np.zeros((3, 3)))).value, 1.0
        )

    def test_ms_loss(self) -> None:
        targets = self.rng.normal(size=(4, 4))
        perfect = ms_loss(LossTensors.unmasked(targets, targets.copy()))
        self.assertEqual(perfect.value, 0.0)

        single = ms_loss(LossTensors.unmasked(np.ones((1, 1)), np.full((1, 1), 4.0)))
        self.assertEqual(single.value, 9.0)
        self.assertEqual(single.grad[0, 0], 6.0)

        masked = ms_loss(
            LossTensors(targets, targets + 5.0, np.zeros((4, 4), dtype=bool))
        )
        self.assertEqual(masked.value, 0.0)
        self.assertFalse(masked.grad.any())

    def test_ms_loss_mean(self) -> None:
        validity = np.array([[True, True, False]])
        t = LossTensors(np.zeros((1, 3)), np.array([[1.0, 3.0, 100.0]]), validity)
        self.assertEqual(ms_loss(t, MSReduction.SUM).value, 10.0)
        mean = ms_loss(t, MSReduction.MEAN)
        self.assertEqual(mean.value, 5.0)
        np.testing.assert_array_equal(mean.grad, np.array([[1.0, 3.0, 0.0]]))

    def test_masked_pixels_never_matter(self) -> None:
        t = self._random_mask_tensors()
        predictions = np.where(t.validity, t.predictions, 0.9)
        changed = t._replace(predictions=predictions)
        for loss in (ce_loss, iou_loss, ms_loss):
            self.assertAlmostEqual(loss(t).value, loss(changed).value, places=12)
            self.assertFalse(loss(t).grad[~t.validity].any())

    def test_nan_inputs(self) -> None:
        bad = LossTensors.unmasked(np.ones((2, 2)), np.full((2, 2), np.nan))
        for loss in (ce_loss, iou_loss, ms_loss):
            with self.assertRaises(ValueError):
                loss(bad)
        with self.assertRaises(ValueError):
            ce_loss(LossTensors.unmasked(np.ones((2, 2)), np.ones((2, 3))))

    def test_bounds(self) -> None:
        for _ in range(20):
            t = self._random_mask_tensors()
            self.assertGreaterEqual(ce_loss(t).value, 0.0)
            iou = iou_loss(t).value
            self.assertGreaterEqual(iou, 0.0)
            self.assertLessEqual(iou, 1.0)

    def test_permutation_invariant(self) -> None:
        t = self._random_mask_tensors()
        order = self.rng.permutation(36)
        shuffled = LossTensors(
            t.targets.ravel()[order].reshape(6, 6),
            t.predictions.ravel()[order].reshape(6, 6),
            t.validity.ravel()[order].reshape(6, 6),
        )
        for loss in (ce_loss, iou_loss, ms_loss):
            self.assertAlmostEqual(loss(t).value, loss(shuffled).value, places=10)

    def test_gradients_match_finite_differences(self) -> None:
        for _ in range(FD_CASES):
            t = self._random_mask_tensors()
            self.assertLessEqual(finite_difference_error(ce_loss, t), FD_TOLERANCE)
            self.assertLessEqual(finite_difference_error(iou_loss, t), FD_TOLERANCE)
            vectors = LossTensors(
                self.rng.normal(scale=5.0, size=(6, 6)),
                self.rng.normal(scale=5.0, size=(6, 6)),
                t.validity,
            )
            self.assertLessEqual(
                finite_difference_error(ms_loss, vectors), FD_TOLERANCE
            )

    def test_total_loss(self) -> None:
        inside, center = self._random_mask_tensors(), self._random_mask_tensors()
        cvx = LossTensors.unmasked(self.rng.normal(size=(6, 6)), np.zeros((6, 6)))
        cvy = LossTensors.unmasked(self.rng.normal(size=(6, 6)), np.zeros((6, 6)))
        total = total_loss(inside, center, cvx, cvy)
        ce = ce_loss(inside).value + ce_loss(center).value
        iou = iou_loss(inside).value + iou_loss(center).value
        ms = ms_loss(cvx).value + ms_loss(cvy).value
        self.assertEqual((total.ce, total.iou, total.ms), (ce, iou, ms))
        self.assertAlmostEqual(
            total.value, 10 * ce + 10 * iou + ms, delta=1e-12 * total.value
        )

        doubled = total_loss(inside, center, cvx, cvy, LossWeights(gamma=2.0))
        self.assertAlmostEqual(
            doubled.value - total.value, total.ms, delta=1e-12 * total.value
        )
        np.testing.assert_array_equal(doubled.cvx_grad, 2 * total.cvx_grad)
        np.testing.assert_array_equal(doubled.inside_grad, total.inside_grad)

    def test_total_loss_linear_in_weights(self) -> None:
        inside, center = self._random_mask_tensors(), self._random_mask_tensors()
        cvx = LossTensors.unmasked(self.rng.normal(size=(6, 6)), np.zeros((6, 6)))
        cvy = LossTensors.unmasked(self.rng.normal(size=(6, 6)), np.zeros((6, 6)))
        for _ in range(20):
            w = LossWeights(*self.rng.uniform(0.0, 20.0, size=3))
            total = total_loss(inside, center, cvx, cvy, w)
            expected = w.alpha * total.ce + w.beta * total.iou + w.gamma * total.ms
            self.assertAlmostEqual(total.value, expected, delta=1e-12 * expected)

    def test_total_loss_perfect_prediction(self) -> None:
        targets = encode_targets(square_map((16, 16), 2, 2, 11))
        tensors = targets_to_loss_tensors(
            targets,
            targets.inside.astype(np.float64),
            targets.center.astype(np.float64),
            VectorField(targets.vectors.dx.copy(), targets.vectors.dy.copy()),
        )
        total = total_loss(*tensors)
        self.assertLess(total.value, 1e-3)
        self.assertEqual(total.ms, 0.0)
        self.assertAlmostEqual(total.iou, 0.0, places=9)

    def test_targets_to_loss_tensors(self) -> None:
        targets = encode_targets(square_map((16, 16), 2, 2, 11))
        zeros = np.zeros((16, 16))
        inside, center, cvx, cvy = targets_to_loss_tensors(
            targets, zeros, zeros, VectorField.zeros((16, 16))
        )
        self.assertTrue(inside.validity.all())
        self.assertTrue(center.validity.all())
        np.testing.assert_array_equal(cvx.validity, targets.inside)
        np.testing.assert_array_equal(cvy.targets, targets.vectors.dy)
        self.assertEqual(inside.targets.dtype, np.float64)


if __name__ == "__main__":
    unittest.main()
