"""Structure-aware weighted BCE + IoU loss over the three prediction heads.

Pixel weights emphasize region boundaries: w = 1 + 5*|boxmean_31(gt) - gt|
where the 31x31 stride-1 box mean averages only in-bounds pixels, so constant
ground truths get a uniformly unit weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DataError, ShapeError
from . import tensor as T
from .tensor import Tensor


def weight_map(gt: np.ndarray, *, window: int = 31, gain: float = 5.0) -> np.ndarray:
    """Per-pixel boundary weight in [1, 1+gain] from a (B,1,H,W) ground truth."""
    if gt.ndim != 4 or gt.shape[1] != 1:
        raise ShapeError(f"weight_map: expected (B,1,H,W); got {gt.shape}")
    if gt.min() < 0.0 or gt.max() > 1.0:
        raise DataError("weight_map: ground truth values must lie in [0,1]")
    g = gt.astype(np.float64)
    counts = uniform_filter(np.ones(gt.shape[2:], np.float64), size=window, mode="constant")
    out = np.empty_like(g)
    for b in range(gt.shape[0]):
        sums = uniform_filter(g[b, 0], size=window, mode="constant")
        out[b, 0] = 1.0 + gain * np.abs(sums / counts - g[b, 0])
    return out.astype(np.float32)


def weighted_bce(logits: Tensor, gt: Tensor, w: Tensor) -> Tensor:
    """sum(w * bce) / sum(w), with the numerically stable logit form."""
    per_pixel = T.mul(w, T.bce_with_logits(logits, gt))
    return T.sdiv(T.sum_all(per_pixel), T.sum_all(w))


def weighted_iou(logits: Tensor, gt: Tensor, w: Tensor) -> Tensor:
    """1 - (sum(w*p*g)+1) / (sum(w*(p+g-p*g))+1) with p = sigmoid(logits)."""
    p = T.sigmoid(logits)
    pg = T.mul(p, gt)
    inter = T.sum_all(T.mul(w, pg))
    union = T.sum_all(T.mul(w, T.sub(T.add(p, gt), pg)))
    one = Tensor(np.ones((1, 1, 1, 1), np.float32))
    ratio = T.sdiv(T.add(inter, one), T.add(union, one))
    return T.sub(one, ratio)


@dataclass
class LossBreakdown:
    l1: float
    l2: float
    l_output: float
    total: float
    bce: dict = field(default_factory=dict)
    iou: dict = field(default_factory=dict)
    tensor: Tensor | None = None  # graph node for backward


def head_loss(logits: Tensor, gt: Tensor, w: Tensor) -> tuple[Tensor, float, float]:
    b = weighted_bce(logits, gt, w)
    i = weighted_iou(logits, gt, w)
    return T.add(b, i), b.item(), i.item()


def total_loss(s1: Tensor, s2: Tensor, s_output: Tensor, gt_arr: np.ndarray) -> LossBreakdown:
    """Composite loss over the three heads; gt_arr is a (B,1,H,W) array in [0,1]."""
    w = Tensor(weight_map(gt_arr))
    gt = Tensor(gt_arr.astype(np.float32))
    heads = {"l1": s1, "l2": s2, "l_output": s_output}
    tensors = {}
    bce = {}
    iou = {}
    values = {}
    for name, logits in heads.items():
        t, b, i = head_loss(logits, gt, w)
        tensors[name] = t
        bce[name], iou[name] = b, i
        values[name] = t.item()
    graph_total = T.add(T.add(tensors["l1"], tensors["l2"]), tensors["l_output"])
    total = values["l1"] + values["l2"] + values["l_output"]
    return LossBreakdown(l1=values["l1"], l2=values["l2"], l_output=values["l_output"],
                         total=total, bce=bce, iou=iou, tensor=graph_total)
