"""Training losses with closed-form gradients.

Every loss returns a :class:`LossResult` carrying the scalar value and the
gradient of that value with respect to each differentiable input. The
central-difference helper :func:`finite_diff_gradient` is the independent
check used by the test-suite and by ``ovc losses --check-grads``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ovc.geometry import Box, inter_instance_mask, mask_to_boxes, neighbor_set

CLAMP = 1e-7
DICE_EPS = 1e-6


class ContractViolation(ValueError):
    """Inputs break a documented precondition (e.g. overlapping gt and inter masks)."""


@dataclass
class LossResult:
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class LossWeights:
    cls: float = 2.0
    box: float = 2.0
    inter_mask: float = 4.0
    init_sem: float = 2.0
    init_reid: float = 0.5

    def __post_init__(self):
        for name in ("cls", "box", "inter_mask", "init_sem", "init_reid"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


def _check_shapes(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {[a.shape for a in arrays]}")


def _clamp(pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.clip(pred, CLAMP, 1.0 - CLAMP)
    # gradient does not flow through the clamp
    live = (pred >= CLAMP) & (pred <= 1.0 - CLAMP)
    return p, live


def _weighted_bce(pred, gt, weights) -> LossResult:
    p, live = _clamp(pred)
    elem = -(gt * np.log(p) + (1.0 - gt) * np.log(1.0 - p))
    norm = np.sum(weights)
    value = np.sum(weights * elem) / norm
    dp = -gt / p + (1.0 - gt) / (1.0 - p)
    grad = np.where(live, weights * dp / norm, 0.0)
    return LossResult(float(value), {"pred": grad})


def bce_loss(pred: np.ndarray, gt: np.ndarray) -> LossResult:
    """Mean binary cross-entropy over all voxels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    return _weighted_bce(pred, gt, np.ones_like(pred))


def bce_inter_loss(pred: np.ndarray, gt: np.ndarray, inter: np.ndarray,
                   alpha: float = 2.0) -> LossResult:
    """BCE with weight ``alpha`` on target and neighbour pixels, 1 elsewhere,
    normalized by the total weight."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    inter = np.asarray(inter, dtype=np.float64)
    _check_shapes(pred, gt, inter)
    weights = np.where((gt == 1) | (inter == 1), float(alpha), 1.0)
    return _weighted_bce(pred, gt, weights)


def _dice_terms(pred, gt, inter):
    """Per-instance Dice-inter value and gradient; ``inter`` may be all zero."""
    overlap = np.sum(pred * gt)
    repel = np.sum((1.0 - pred) * inter)
    num = 2.0 * overlap + repel + DICE_EPS
    den = np.sum(pred) + np.sum(gt) + np.sum(inter) + DICE_EPS
    value = 1.0 - num / den
    grad = -((2.0 * gt - inter) * den - num) / (den * den)
    return value, grad


def _dice_batch(pred, gt, inter) -> LossResult:
    if pred.ndim == 4:
        k = pred.shape[0]
        values = []
        grads = np.empty_like(pred)
        for i in range(k):
            v, g = _dice_terms(pred[i], gt[i], inter[i])
            values.append(v)
            grads[i] = g / k
        return LossResult(float(sum(values) / k), {"pred": grads})
    v, g = _dice_terms(pred, gt, inter)
    return LossResult(float(v), {"pred": g})


def dice_loss(pred: np.ndarray, gt: np.ndarray) -> LossResult:
    """Soft Dice loss.

    ``[T, H, W]`` inputs are one instance; ``[K, T, H, W]`` inputs are
    averaged over the K instances with equal weight.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    return _dice_batch(pred, gt, np.zeros_like(pred))


def dice_inter_loss(pred: np.ndarray, gt: np.ndarray, inter: np.ndarray) -> LossResult:
    """Dice loss that also rewards leaving the neighbours' pixels empty.

    With an all-zero ``inter`` this is exactly :func:`dice_loss`.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    inter = np.asarray(inter, dtype=np.float64)
    _check_shapes(pred, gt, inter)
    if np.any(gt * inter != 0):
        raise ContractViolation("gt and inter-instance masks must be disjoint")
    return _dice_batch(pred, gt, inter)


def inter_mask_loss(preds: np.ndarray, gts: np.ndarray,
                    boxes: Optional[Sequence[Sequence[Optional[Box]]]] = None,
                    epsilon: float = 0.1, alpha: float = 2.0) -> LossResult:
    """Mean over instances of inter-instance BCE plus inter-instance Dice.

    Args:
        preds: ``[K, T, H, W]`` predicted probabilities.
        gts: ``[K, T, H, W]`` binary ground truth.
        boxes: per-instance per-frame boxes used for the neighbour test;
            derived from ``gts`` when omitted.
    """
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    _check_shapes(preds, gts)
    if preds.ndim != 4 or preds.shape[0] < 1:
        raise ValueError(f"expected [K, T, H, W] with K >= 1, got {preds.shape}")
    k = preds.shape[0]
    if boxes is None:
        boxes = [mask_to_boxes(g) for g in gts]
    total = 0.0
    grads = np.empty_like(preds)
    for i in range(k):
        inter = inter_instance_mask(gts, neighbor_set(boxes, i, epsilon))
        b = bce_inter_loss(preds[i], gts[i], inter, alpha)
        d = dice_inter_loss(preds[i], gts[i], inter)
        total += b.value + d.value
        grads[i] = (b.grads["pred"] + d.grads["pred"]) / k
    return LossResult(total / k, {"preds": grads})


def init_reid_loss(anchor: np.ndarray, positive: np.ndarray,
                   negatives: Optional[np.ndarray] = None) -> LossResult:
    """Single-positive contrastive loss on raw dot products."""
    a = np.asarray(anchor, dtype=np.float64)
    pos = np.asarray(positive, dtype=np.float64)
    if negatives is None:
        neg = np.zeros((0, a.shape[0]))
    else:
        neg = np.asarray(negatives, dtype=np.float64).reshape(-1, a.shape[0]) \
            if np.size(negatives) else np.zeros((0, a.shape[0]))
    if a.ndim != 1 or pos.shape != a.shape or (neg.ndim == 2 and neg.shape[1] != a.shape[0]):
        raise ValueError("anchor, positive and negatives must share one dimension")
    logits = np.concatenate(([a @ pos], neg @ a))
    top = logits.max()
    shifted = np.exp(logits - top)
    total = shifted.sum()
    value = top + np.log(total) - logits[0]
    soft = shifted / total
    coef_pos = soft[0] - 1.0
    coef_neg = soft[1:]
    grads = {
        "anchor": coef_pos * pos + coef_neg @ neg,
        "positive": coef_pos * a,
        "negatives": np.outer(coef_neg, a),
    }
    return LossResult(float(value), grads)


def focal_loss(pred: np.ndarray, gt: np.ndarray, gamma: float = 2.0,
               alpha_f: float = 0.25) -> LossResult:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    p, live = _clamp(pred)
    positive = gt == 1
    pt = np.where(positive, p, 1.0 - p)
    at = np.where(positive, alpha_f, 1.0 - alpha_f)
    log_pt = np.log(pt)
    modulator = (1.0 - pt) ** gamma
    elem = -(at * modulator * log_pt)
    n = pred.size
    value = np.sum(elem) / n
    if gamma == 0:
        d_pt = -at / pt
    else:
        d_pt = at * (gamma * (1.0 - pt) ** (gamma - 1.0) * log_pt - modulator / pt)
    grad = np.where(positive, d_pt, -d_pt) / n
    return LossResult(float(value), {"pred": np.where(live, grad, 0.0)})


def _as_vec(box) -> np.ndarray:
    if isinstance(box, Box):
        return np.array(box.as_list(), dtype=np.float64)
    return np.asarray(box, dtype=np.float64).reshape(4)


def smooth_l1_loss(pred, gt, beta: float = 1.0) -> LossResult:
    if beta <= 0:
        raise ValueError("beta must be positive")
    diff = _as_vec(pred) - _as_vec(gt)
    ad = np.abs(diff)
    small = ad < beta
    elem = np.where(small, 0.5 * ad * ad / beta, ad - 0.5 * beta)
    grad = np.where(small, diff / beta, np.sign(diff)) / 4.0
    return LossResult(float(np.mean(elem)), {"pred": grad})


def giou_loss(pred, gt) -> LossResult:
    """``1 - GIoU`` with the gradient taken w.r.t. the predicted corners."""
    x1, y1, x2, y2 = _as_vec(pred)
    g1, h1, g2, h2 = _as_vec(gt)
    tiny = 1e-12

    pw, ph = x2 - x1, y2 - y1
    area_p = pw * ph
    area_g = (g2 - g1) * (h2 - h1)
    iw = min(x2, g2) - max(x1, g1)
    ih = min(y2, h2) - max(y1, h1)
    has_inter = iw > 0 and ih > 0
    inter = iw * ih if has_inter else 0.0
    union = area_p + area_g - inter
    cw = max(x2, g2) - min(x1, g1)
    ch = max(y2, h2) - min(y1, h1)
    enclose = cw * ch
    union_s = max(union, tiny)
    enclose_s = max(enclose, tiny)
    value = 2.0 - inter / union_s - union / enclose_s

    # d/d(x1, y1, x2, y2) of each building block
    d_area = np.array([-ph, -pw, ph, pw])
    if has_inter:
        d_iw = np.array([-1.0 if x1 > g1 else 0.0, 0.0, 1.0 if x2 < g2 else 0.0, 0.0])
        d_ih = np.array([0.0, -1.0 if y1 > h1 else 0.0, 0.0, 1.0 if y2 < h2 else 0.0])
        d_inter = d_iw * ih + d_ih * iw
    else:
        d_inter = np.zeros(4)
    d_union = d_area - d_inter
    d_cw = np.array([-1.0 if x1 < g1 else 0.0, 0.0, 1.0 if x2 > g2 else 0.0, 0.0])
    d_ch = np.array([0.0, -1.0 if y1 < h1 else 0.0, 0.0, 1.0 if y2 > h2 else 0.0])
    d_enclose = d_cw * ch + d_ch * cw
    grad = -(d_inter * union_s - inter * d_union) / union_s**2 \
        - (d_union * enclose_s - union * d_enclose) / enclose_s**2
    return LossResult(float(value), {"pred": grad})


def total_loss(cls: float, box_l1: float, box_giou: float, inter_mask: float,
               init_sem: float, init_reid: float,
               w: LossWeights = LossWeights()) -> float:
    return (w.cls * cls + w.box * (box_l1 + box_giou) + w.inter_mask * inter_mask
            + w.init_sem * init_sem + w.init_reid * init_reid)


def finite_diff_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                         h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        up = f(x)
        flat[idx] = orig - h
        down = f(x)
        flat[idx] = orig
        gflat[idx] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
