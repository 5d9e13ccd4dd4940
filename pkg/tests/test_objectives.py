import math

import numpy as np
import pytest
import torch

from promptseg.errors import ValidationError
from promptseg.objectives import (
    LossConfig,
    balanced_bce_loss,
    bce_loss,
    iou_loss,
    loss_for_task,
    task_loss,
)

from gradcheck import check_parameter_gradients
from oracles import balanced_bce_oracle, bce_oracle, iou_oracle


def _pair(seed, shape=(3, 3)):
    rng = np.random.default_rng(seed)
    pred = torch.from_numpy(rng.uniform(0.05, 0.95, shape))
    gt = torch.from_numpy((rng.random(shape) < 0.5).astype(np.float64))
    return pred, gt


class TestBce:
    def test_perfect_prediction_loss_is_epsilon_scale(self):
        gt = torch.tensor([[0.0, 1.0], [1.0, 0.0]], dtype=torch.float64)
        loss = float(bce_loss(gt.clone(), gt))
        assert abs(loss - (-math.log(1.0 - 1e-6))) < 1e-12
        assert loss < 2e-6

    def test_half_probability_is_log_two(self):
        pred = torch.full((4, 4), 0.5, dtype=torch.float64)
        gt = torch.tensor([[1.0, 0.0] * 2] * 4, dtype=torch.float64)
        assert abs(float(bce_loss(pred, gt)) - math.log(2.0)) < 1e-12

    def test_random_case_matches_loop_oracle(self):
        pred, gt = _pair(0)
        assert abs(float(bce_loss(pred, gt)) - bce_oracle(pred.numpy(), gt.numpy())) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            bce_loss(torch.zeros(2, 2), torch.zeros(3, 3))


class TestBalancedBce:
    def test_half_positive_is_half_bce(self):
        pred = torch.tensor([[0.3, 0.8]])
        gt = torch.tensor([[1.0, 0.0]])
        balanced = float(balanced_bce_loss(pred, gt))
        plain = float(bce_loss(pred, gt))
        assert abs(balanced - 0.5 * plain) < 1e-12

    def test_all_zero_gt_degenerates_to_single_class_bce(self):
        pred = torch.tensor([[0.2, 0.7], [0.4, 0.9]])
        gt = torch.zeros(2, 2)
        expected = float(-(torch.log(1.0 - pred.clamp(1e-6, 1 - 1e-6))).mean())
        assert abs(float(balanced_bce_loss(pred, gt)) - expected) < 1e-12

    def test_all_one_gt_degenerates_to_single_class_bce(self):
        pred = torch.tensor([[0.2, 0.7]])
        gt = torch.ones(1, 2)
        expected = float(-(torch.log(pred.clamp(1e-6, 1 - 1e-6))).mean())
        assert abs(float(balanced_bce_loss(pred, gt)) - expected) < 1e-12

    def test_4x4_with_three_positives_matches_oracle(self):
        rng = np.random.default_rng(1)
        pred = torch.from_numpy(rng.uniform(0.05, 0.95, (4, 4)))
        gt = torch.zeros(4, 4, dtype=torch.float64)
        gt[0, 0] = gt[1, 2] = gt[3, 3] = 1.0
        expected = balanced_bce_oracle(pred.numpy(), gt.numpy())
        assert abs(float(balanced_bce_loss(pred, gt)) - expected) < 1e-12


class TestIou:
    def test_identical_binary_maps_score_zero(self):
        gt = torch.tensor([[1.0, 0.0], [1.0, 1.0]])
        assert float(iou_loss(gt.clone(), gt)) < 1e-6

    def test_disjoint_binary_maps_score_one(self):
        pred = torch.tensor([[1.0, 0.0], [0.0, 0.0]])
        gt = torch.tensor([[0.0, 1.0], [1.0, 1.0]])
        assert abs(float(iou_loss(pred, gt)) - 1.0) < 1e-6

    def test_soft_case_matches_oracle(self):
        pred, gt = _pair(2)
        assert abs(float(iou_loss(pred, gt)) - iou_oracle(pred.numpy(), gt.numpy())) < 1e-12


class TestTaskLoss:
    def test_zero_iou_weight_equals_bce(self):
        pred, gt = _pair(3)
        cfg = LossConfig(kind="bce_plus_iou", iou_weight=0.0)
        assert torch.equal(task_loss(cfg, pred, gt), bce_loss(pred, gt))

    def test_balanced_kind_dispatches(self):
        pred, gt = _pair(4)
        cfg = LossConfig(kind="balanced_bce")
        assert torch.equal(task_loss(cfg, pred, gt), balanced_bce_loss(pred, gt))

    def test_composite_equals_sum_of_oracles(self):
        pred, gt = _pair(5)
        cfg = LossConfig(kind="bce_plus_iou", iou_weight=1.0)
        expected = bce_oracle(pred.numpy(), gt.numpy()) + iou_oracle(pred.numpy(), gt.numpy())
        assert abs(float(task_loss(cfg, pred, gt)) - expected) < 1e-12

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            LossConfig(kind="dice")

    def test_task_recipes(self):
        assert loss_for_task("shadow").kind == "balanced_bce"
        assert loss_for_task("camouflage").kind == "bce_plus_iou"
        assert loss_for_task("polyp").kind == "bce_plus_iou"
        with pytest.raises(ValidationError):
            loss_for_task("depth")


class TestLossProperties:
    @pytest.mark.parametrize("fn", [bce_loss, balanced_bce_loss, iou_loss])
    def test_nonnegative_and_finite_under_fuzzing(self, fn):
        rng = np.random.default_rng(10)
        for _ in range(300):
            h, w = rng.integers(1, 9, size=2)
            pred = torch.from_numpy(rng.random((h, w)))
            gt = torch.from_numpy((rng.random((h, w)) < rng.random()).astype(np.float64))
            value = float(fn(pred, gt))
            assert math.isfinite(value) and value >= 0.0

    @pytest.mark.parametrize(
        "fn", [bce_loss, balanced_bce_loss, iou_loss,
               lambda p, g: task_loss(LossConfig(kind="bce_plus_iou"), p, g)]
    )
    def test_gradients_wrt_prediction_match_finite_differences(self, fn):
        rng = np.random.default_rng(11)
        pred = torch.tensor(rng.uniform(0.1, 0.9, (3, 3)), requires_grad=True)
        gt = torch.from_numpy((rng.random((3, 3)) < 0.5).astype(np.float64))
        worst = check_parameter_gradients(lambda: fn(pred, gt), [pred])
        assert worst < 1e-4

    def test_bce_gradient_points_toward_ground_truth(self):
        for g in (0.0, 1.0):
            for p in np.linspace(0.1, 0.9, 9):
                pred = torch.tensor([[p]], requires_grad=True, dtype=torch.float64)
                gt = torch.tensor([[g]], dtype=torch.float64)
                bce_loss(pred, gt).backward()
                grad = float(pred.grad[0, 0])
                if g == 1.0:
                    assert grad < 0  # moving p upward reduces the loss
                else:
                    assert grad > 0
