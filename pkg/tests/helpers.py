"""Shared test utilities: finite-difference gradient checks and reference
oracles written independently of the library's vectorized paths (plain Python
loops wherever feasible)."""

from __future__ import annotations

import numpy as np

from fpnet import tensor as T
from fpnet.tensor import Tensor


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def finite_diff(loss_fn, leaf: Tensor, flat_idx: int, h: float) -> float:
    orig = float(leaf.data.flat[flat_idx])
    leaf.data.flat[flat_idx] = orig + h
    lp = loss_fn()
    leaf.data.flat[flat_idx] = orig - h
    lm = loss_fn()
    leaf.data.flat[flat_idx] = orig
    return (lp - lm) / (2.0 * h)


def gradcheck(loss_builder, leaves, rng, n_per_leaf=4, h=1e-2, tol=1e-3,
              min_pass_frac=1.0):
    """Compare backward() grads of `leaves` against central differences.

    loss_builder must be pure: it re-runs the forward pass from current leaf
    data and returns a fresh scalar loss Tensor.
    """
    for leaf in leaves:
        leaf.zero_grad()
    T.backward(loss_builder())

    def loss_value():
        return loss_builder().item()

    checked = 0
    failures = []
    for leaf in leaves:
        size = leaf.data.size
        count = min(n_per_leaf, size)
        coords = rng.choice(size, size=count, replace=False)
        for idx in coords:
            fd = finite_diff(loss_value, leaf, int(idx), h)
            an = float(leaf.grad.flat[int(idx)])
            checked += 1
            err = rel_err(fd, an)
            if err > tol:
                failures.append((idx, fd, an, err))
    frac = 1.0 - len(failures) / max(1, checked)
    assert frac >= min_pass_frac, (
        f"gradcheck: {len(failures)}/{checked} coords failed; worst: "
        f"{max(failures, key=lambda f: f[3]) if failures else None}")
    return checked


def snapshot_buffers(store):
    """Wrap a loss builder so batch-norm running stats are restored per call."""
    saved = {k: v.copy() for k, v in store.buffers.items()}

    def restore():
        for k, v in store.buffers.items():
            v[...] = saved[k]

    return restore


# ---------------------------------------------------------------------------
# reference oracles (independent scalar/loop implementations)


def conv2d_loops(x, w, bias=None, stride=1, pad=0, dil=1):
    """Triple-nested-loop direct convolution oracle in float64."""
    B, C, H, W = x.shape
    O, _, KH, KW = w.shape
    OH = (H + 2 * pad - (dil * (KH - 1) + 1)) // stride + 1
    OW = (W + 2 * pad - (dil * (KW - 1) + 1)) // stride + 1
    out = np.zeros((B, O, OH, OW))
    for b in range(B):
        for o in range(O):
            for oh in range(OH):
                for ow in range(OW):
                    acc = 0.0
                    for c in range(C):
                        for kh in range(KH):
                            for kw in range(KW):
                                ih = oh * stride - pad + kh * dil
                                iw = ow * stride - pad + kw * dil
                                if 0 <= ih < H and 0 <= iw < W:
                                    acc += float(x[b, c, ih, iw]) * float(w[o, c, kh, kw])
                    out[b, o, oh, ow] = acc + (float(bias[o]) if bias is not None else 0.0)
    return out


def avg_pool_loops(x, k):
    B, C, H, W = x.shape
    out = np.zeros((B, C, H // k, W // k))
    for b in range(B):
        for c in range(C):
            for oh in range(H // k):
                for ow in range(W // k):
                    acc = 0.0
                    for dy in range(k):
                        for dx in range(k):
                            acc += float(x[b, c, oh * k + dy, ow * k + dx])
                    out[b, c, oh, ow] = acc / (k * k)
    return out


def channel_inner_loops(a, b):
    B, C, H, W = a.shape
    out = np.zeros((B, 1, H, W))
    for bb in range(B):
        for h in range(H):
            for w in range(W):
                acc = 0.0
                for c in range(C):
                    acc += float(a[bb, c, h, w]) * float(b[bb, c, h, w])
                out[bb, 0, h, w] = acc / C
    return out


def weight_map_loops(gt2d, window=31, gain=5.0):
    """Scalar-loop boundary-weight oracle on one 2-D ground truth."""
    h, w = gt2d.shape
    half = window // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            n = 0
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        acc += float(gt2d[yy, xx])
                        n += 1
            out[y, x] = 1.0 + gain * abs(acc / n - float(gt2d[y, x]))
    return out


def weighted_bce_loops(logits, gt, w):
    import math
    num = 0.0
    den = 0.0
    for z, g, wt in zip(logits.ravel(), gt.ravel(), w.ravel()):
        z, g, wt = float(z), float(g), float(wt)
        bce = max(z, 0.0) - z * g + math.log1p(math.exp(-abs(z)))
        num += wt * bce
        den += wt
    return num / den


def weighted_iou_loops(logits, gt, w):
    import math
    inter = 0.0
    union = 0.0
    for z, g, wt in zip(logits.ravel(), gt.ravel(), w.ravel()):
        z, g, wt = float(z), float(g), float(wt)
        p = 1.0 / (1.0 + math.exp(-z))
        inter += wt * p * g
        union += wt * (p + g - p * g)
    return 1.0 - (inter + 1.0) / (union + 1.0)


# ---------------------------------------------------------------------------
# segmentation metric references (written independently of fpnet.metrics,
# following the same published conventions)

_MEPS = np.finfo(np.float64).eps


def ref_mae(pred, gt):
    gt = (np.asarray(gt, np.float64) > 0.5).astype(np.float64)
    return float(np.mean(np.abs(np.asarray(pred, np.float64) - gt)))


def _ref_obj(vals):
    if vals.size == 0:
        return 0.0
    x = float(vals.mean())
    s = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + s + _MEPS)


def _ref_ssim(p, g):
    n = p.size
    if n == 0:
        return 1.0
    x, y = float(p.mean()), float(g.mean())
    if n > 1:
        sx = float(((p - x) ** 2).sum()) / (n - 1)
        sy = float(((g - y) ** 2).sum()) / (n - 1)
        sxy = float(((p - x) * (g - y)).sum()) / (n - 1)
    else:
        sx = sy = sxy = 0.0
    num = 4.0 * x * y * sxy
    den = (x * x + y * y) * (sx + sy)
    if num != 0.0:
        return num / (den + _MEPS)
    return 1.0 if den == 0.0 else 0.0


def ref_s_measure(pred, gt, alpha=0.5):
    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64) > 0.5
    y = gt.mean()
    if y == 0.0:
        return float(1.0 - pred.mean())
    if y == 1.0:
        return float(pred.mean())
    g = gt.astype(np.float64)
    # object term
    so = y * _ref_obj((pred * g)[gt]) + (1.0 - y) * _ref_obj(((1 - pred) * (1 - g))[~gt])
    # region term: centroid split, four quadrant SSIM blocks
    rows, cols = np.argwhere(gt).mean(axis=0)
    cy, cx = int(round(rows)) + 1, int(round(cols)) + 1
    h, w = gt.shape
    quads = [(slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
             (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))]
    blocks = [_ref_ssim(pred[rs, cs], g[rs, cs]) for rs, cs in quads]
    wts = [g[rs, cs].size / (h * w) for rs, cs in quads]
    wts[3] = 1.0 - wts[0] - wts[1] - wts[2]
    sr = sum(a * b for a, b in zip(wts, blocks))
    return float(min(1.0, max(0.0, alpha * so + (1 - alpha) * sr)))


def ref_e_measure(pred, gt, n_thresholds=256):
    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64) > 0.5
    g = gt.astype(np.float64)
    scores = []
    for k in range(n_thresholds):
        t = (k + 0.5) / n_thresholds
        b = (pred >= t).astype(np.float64)
        if not gt.any():
            scores.append(float((1.0 - b).mean()))
            continue
        if gt.all():
            scores.append(float(b.mean()))
            continue
        a = b - b.mean()
        gg = g - g.mean()
        den = a * a + gg * gg
        phi = np.where(den > 0, 2.0 * a * gg / np.where(den > 0, den, 1.0), 0.0)
        scores.append(float((((1.0 + phi) ** 2) / 4.0).mean()))
    return float(np.clip(np.mean(scores), 0.0, 1.0))


def ref_weighted_f(pred, gt, beta2=1.0, sigma=5.0, window=7, decay=5.0):
    from scipy.ndimage import correlate, distance_transform_edt
    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64) > 0.5
    if not gt.any():
        return 0.0
    g = gt.astype(np.float64)
    dist, idx = distance_transform_edt(~gt, return_indices=True)
    err = np.abs(pred - g)
    moved = err.copy()
    moved[~gt] = err[idx[0][~gt], idx[1][~gt]]
    half = window // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    kern = np.exp(-(xx * xx + yy * yy) / (2 * sigma * sigma))
    kern /= kern.sum()
    smoothed = correlate(moved, kern, mode="constant")
    mn = err.copy()
    sel = gt & (smoothed < err)
    mn[sel] = smoothed[sel]
    imp = np.ones_like(err)
    imp[~gt] = 2.0 - np.exp(np.log(0.5) / decay * dist[~gt])
    ew = mn * imp
    tpw = g.sum() - ew[gt].sum()
    fpw = ew[~gt].sum()
    rec = 1.0 - ew[gt].mean()
    prec = tpw / (tpw + fpw) if (tpw + fpw) > 0 else 0.0
    den = beta2 * prec + rec
    if den <= 0.0:
        return 0.0
    return float(np.clip((1.0 + beta2) * prec * rec / den, 0.0, 1.0))
