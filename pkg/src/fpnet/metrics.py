"""The four camouflaged-object-detection metrics and a dataset aggregator.

Conventions pinned here (all configurable at the call sites):
  * structure measure with alpha = 0.5, object/region terms per the original
    release, degenerate ground truths scored from the prediction mean;
  * mean enhanced-alignment measure over 256 evenly spaced thresholds,
    averaged over pixels (so a perfect binary prediction scores exactly 1);
  * weighted F with beta^2 = 1, Gaussian dependency window 7x7 sigma 5, and
    background importance decaying with exp(log(0.5)/5 * distance);
  * MAE as the plain mean absolute difference.

Predictions are probability maps; inputs whose range exceeds [0,1] by more
than 1e-6 are min-max normalized (guards against accidental logits).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate, distance_transform_edt

from .errors import DataError, ShapeError

_EPS = np.finfo(np.float64).eps


def _prepare(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim != 2 or gt.ndim != 2:
        raise ShapeError(f"metrics expect 2-D maps; got {pred.shape} and {gt.shape}")
    if pred.shape != gt.shape:
        raise ShapeError(f"metrics: pred {pred.shape} vs gt {gt.shape}")
    if pred.min() < -1e-6 or pred.max() > 1.0 + 1e-6:
        lo, hi = pred.min(), pred.max()
        pred = (pred - lo) / (hi - lo) if hi > lo else np.zeros_like(pred)
    pred = np.clip(pred, 0.0, 1.0)
    gt_bin = gt > 0.5
    return pred, gt_bin


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt_bin = _prepare(pred, gt)
    return float(np.abs(pred - gt_bin.astype(np.float64)).mean())


# ---------------------------------------------------------------------------
# structure measure


def _s_object_term(vals: np.ndarray) -> float:
    if vals.size == 0:
        return 0.0
    x = vals.mean()
    sigma = vals.std(ddof=1) if vals.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = pred * gt
    bg = (1.0 - pred) * (1.0 - gt)
    u = gt.mean()
    return u * _s_object_term(fg[gt > 0.5]) + (1.0 - u) * _s_object_term(bg[gt <= 0.5])


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    h, w = gt.shape
    if gt.sum() == 0:
        return int(round(h / 2)), int(round(w / 2))
    rows, cols = np.argwhere(gt > 0.5).mean(axis=0)
    return int(round(rows)) + 1, int(round(cols)) + 1


def _ssim_block(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 1.0
    x, y = pred.mean(), gt.mean()
    if n > 1:
        sigma_x = ((pred - x) ** 2).sum() / (n - 1)
        sigma_y = ((gt - y) ** 2).sum() / (n - 1)
        sigma_xy = ((pred - x) * (gt - y)).sum() / (n - 1)
    else:
        sigma_x = sigma_y = sigma_xy = 0.0
    num = 4.0 * x * y * sigma_xy
    den = (x * x + y * y) * (sigma_x + sigma_y)
    if num != 0.0:
        return num / (den + _EPS)
    return 1.0 if den == 0.0 else 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    cy, cx = _centroid(gt)
    area = h * w
    blocks = []
    weights = []
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p, g = pred[rs, cs], gt[rs, cs]
        blocks.append(_ssim_block(p, g.astype(np.float64)))
        weights.append(g.size / area)
    weights[3] = 1.0 - weights[0] - weights[1] - weights[2]
    return float(sum(wgt * q for wgt, q in zip(weights, blocks)))


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    pred, gt_bin = _prepare(pred, gt)
    y = gt_bin.mean()
    if y == 0.0:
        return float(1.0 - pred.mean())
    if y == 1.0:
        return float(pred.mean())
    gt_f = gt_bin.astype(np.float64)
    score = alpha * _s_object(pred, gt_f) + (1.0 - alpha) * _s_region(pred, gt_f)
    return float(min(1.0, max(0.0, score)))


# ---------------------------------------------------------------------------
# mean enhanced-alignment measure


def e_measure_mean(pred: np.ndarray, gt: np.ndarray, n_thresholds: int = 256) -> float:
    pred, gt_bin = _prepare(pred, gt)
    gt_f = gt_bin.astype(np.float64)
    thresholds = (np.arange(n_thresholds, dtype=np.float64) + 0.5) / n_thresholds
    all_bg = not gt_bin.any()
    all_fg = gt_bin.all()
    g = gt_f - gt_f.mean()
    scores = np.empty(n_thresholds)
    for i, t in enumerate(thresholds):
        binary = (pred >= t).astype(np.float64)
        if all_bg:
            scores[i] = (1.0 - binary).mean()
        elif all_fg:
            scores[i] = binary.mean()
        else:
            a = binary - binary.mean()
            denom = a * a + g * g
            phi = np.divide(2.0 * a * g, denom, out=np.zeros_like(denom), where=denom > 0)
            scores[i] = ((1.0 + phi) ** 2 / 4.0).mean()
    return float(np.clip(scores.mean(), 0.0, 1.0))


# ---------------------------------------------------------------------------
# weighted F measure


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    return k / k.sum()


def weighted_f_beta(pred: np.ndarray, gt: np.ndarray, beta2: float = 1.0,
                    sigma: float = 5.0, window: int = 7,
                    decay: float = 5.0) -> float:
    pred, gt_bin = _prepare(pred, gt)
    if not gt_bin.any():
        return 0.0
    gt_f = gt_bin.astype(np.float64)
    dist, idx = distance_transform_edt(~gt_bin, return_indices=True)
    err = np.abs(pred - gt_f)
    err_aligned = err.copy()
    bg = ~gt_bin
    err_aligned[bg] = err[idx[0][bg], idx[1][bg]]
    smoothed = correlate(err_aligned, _gaussian_kernel(window, sigma), mode="constant")
    min_err = err.copy()
    take = gt_bin & (smoothed < err)
    min_err[take] = smoothed[take]
    importance = np.ones_like(err)
    importance[bg] = 2.0 - np.exp(np.log(0.5) / decay * dist[bg])
    ew = min_err * importance
    tp_w = gt_f.sum() - ew[gt_bin].sum()
    fp_w = ew[bg].sum()
    recall = 1.0 - ew[gt_bin].mean()
    precision = tp_w / (tp_w + fp_w) if (tp_w + fp_w) > 0 else 0.0
    denom = beta2 * precision + recall
    if denom <= 0.0:
        return 0.0
    return float(np.clip((1.0 + beta2) * precision * recall / denom, 0.0, 1.0))


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class MetricReport:
    s_alpha: float
    e_mean: float
    f_beta_omega: float
    mae: float
    count: int = 1

    def to_json(self) -> str:
        return json.dumps({"s_alpha": self.s_alpha, "e_mean": self.e_mean,
                           "f_beta_omega": self.f_beta_omega, "mae": self.mae,
                           "count": self.count}, indent=2)

    def to_table(self) -> str:
        header = f"{'S_alpha':>10} {'E_mean':>10} {'F_beta_w':>10} {'MAE':>10} {'count':>7}"
        row = (f"{self.s_alpha:>10.4f} {self.e_mean:>10.4f} "
               f"{self.f_beta_omega:>10.4f} {self.mae:>10.4f} {self.count:>7d}")
        return header + "\n" + row


def compute_report(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    return MetricReport(s_alpha=s_measure(pred, gt),
                        e_mean=e_measure_mean(pred, gt),
                        f_beta_omega=weighted_f_beta(pred, gt),
                        mae=mae(pred, gt))


def _read_gray(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float64)
    except OSError as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc


def evaluate_pairs(pairs: list[tuple[np.ndarray, np.ndarray]]) -> MetricReport:
    if not pairs:
        raise DataError("evaluate_pairs: no prediction/ground-truth pairs")
    sums = np.zeros(4, dtype=np.float64)
    for pred, gt in pairs:
        r = compute_report(pred, gt)
        sums += (r.s_alpha, r.e_mean, r.f_beta_omega, r.mae)
    n = len(pairs)
    return MetricReport(*(sums / n), count=n)


def evaluate_dataset(pred_dir, gt_dir) -> MetricReport:
    """Mean per-image metrics over filename-stem-matched 8-bit grayscale masks."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.png"))}
    gts = {p.stem: p for p in sorted(gt_dir.glob("*.png"))}
    stems = sorted(set(preds) & set(gts))
    if not stems:
        raise DataError(f"no matching filename stems between {pred_dir} and {gt_dir}")
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise DataError(f"predictions missing for stems: {missing}")
    pairs = []
    for stem in stems:
        pred = _read_gray(preds[stem]) / 255.0
        gt = _read_gray(gts[stem]) >= 128
        if pred.shape != gt.shape:
            raise DataError(f"size mismatch for {stem!r}: pred {pred.shape} vs gt {gt.shape}")
        pairs.append((pred, gt.astype(np.float64)))
    return evaluate_pairs(pairs)
