"""Scalar training losses, evaluated over flows and confidence maps.

These functions score predictions against ground truth; they carry no
gradients. The per-iteration losses combine into an exponentially
weighted total in which the last iteration receives unit weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flow as fl
from .errors import ParameterError, SemanticsError, ShapeError

BCE_EPS = 1e-7


def bce_loss(conf: np.ndarray, gt_mask: np.ndarray) -> float:
    """Binary cross-entropy summed over all pixels.

    Confidences are clamped to [eps, 1 - eps] before the logs.
    """
    conf = np.asarray(conf, dtype=np.float64)
    gt_mask = np.asarray(gt_mask, dtype=np.float64)
    if conf.shape != gt_mask.shape:
        raise ShapeError(f"confidence {conf.shape} and mask {gt_mask.shape} differ")
    p = np.clip(conf, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(gt_mask * np.log(p) + (1.0 - gt_mask) * np.log(1.0 - p))
    return float(loss.sum())


def l1_flow_loss(pred: fl.FlowField, gt: fl.FlowField) -> float:
    """Sum of absolute coordinate differences over both channels."""
    if pred.direction != fl.BACKWARD or gt.direction != fl.BACKWARD:
        raise SemanticsError("flow regression loss compares backward flows")
    if pred.shape != gt.shape:
        raise ShapeError(f"flows {pred.shape} and {gt.shape} differ")
    du = np.abs(pred.u.astype(np.float64) - gt.u.astype(np.float64))
    dv = np.abs(pred.v.astype(np.float64) - gt.v.astype(np.float64))
    return float(du.sum() + dv.sum())


def roundtrip_coordinates(
    pred_backward: fl.FlowField, gt_forward: fl.FlowField
) -> tuple[np.ndarray, np.ndarray]:
    """Map the rectified lattice through pred, then back through gt.

    Returns (gx, gy): for each rectified pixel, the coordinates it lands on
    after sampling the forward flow at the predicted distorted position.
    Perfect prediction reproduces the lattice.
    """
    if pred_backward.direction != fl.BACKWARD:
        raise SemanticsError("prediction must be a backward flow")
    if gt_forward.direction != fl.FORWARD:
        raise SemanticsError("ground truth must be a forward flow")
    gx = fl.sample_bilinear_grid(gt_forward.u, pred_backward.u, pred_backward.v)
    gy = fl.sample_bilinear_grid(gt_forward.v, pred_backward.u, pred_backward.v)
    return gx, gy


def circle_line_loss(pred_backward: fl.FlowField, gt_forward: fl.FlowField) -> float:
    """Curvature penalty on round-tripped row and column lines.

    Rows measure the population variance of the returned vertical
    coordinate along each row (the coordinate perpendicular to the line);
    columns measure the horizontal one. The two means are added.
    """
    gx, gy = roundtrip_coordinates(pred_backward, gt_forward)
    gx = gx.astype(np.float64)
    gy = gy.astype(np.float64)
    row_var = ((gy - gy.mean(axis=1, keepdims=True)) ** 2).mean(axis=1)
    col_var = ((gx - gx.mean(axis=0, keepdims=True)) ** 2).mean(axis=0)
    return float(row_var.mean() + col_var.mean())


@dataclass(frozen=True)
class IterationLoss:
    l_f: float
    l_line: float
    combined: float


@dataclass(frozen=True)
class LossBreakdown:
    """Per-iteration terms plus the exponentially weighted total."""

    per_iteration: tuple[IterationLoss, ...]
    total: float
    lam: float
    alpha: float


def total_loss(
    per_iter: list[tuple[float, float]], lam: float = 0.85, alpha: float = 0.5
) -> LossBreakdown:
    """Combine per-iteration (flow, line) losses into the training total.

    combined_k = l_f + alpha * l_line; total = sum_k lam^(K-k) * combined_k,
    so the final iteration is weighted by lam^0 = 1.
    """
    if not per_iter:
        raise ParameterError("per-iteration loss list is empty")
    if not 0.0 < lam <= 1.0:
        raise ParameterError(f"lambda must lie in (0, 1], got {lam}")
    k_total = len(per_iter)
    breakdown = []
    total = 0.0
    for k, (l_f, l_line) in enumerate(per_iter, start=1):
        combined = float(l_f) + alpha * float(l_line)
        breakdown.append(IterationLoss(float(l_f), float(l_line), combined))
        total += lam ** (k_total - k) * combined
    return LossBreakdown(tuple(breakdown), float(total), float(lam), float(alpha))
