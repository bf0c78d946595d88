"""Pure-numpy convolution kernels (fallback path).

Accumulation happens in float64 and results are cast back to float32, matching
the numba kernels to within float rounding. The per-tap loop keeps memory at
O(B*C*OH*OW) instead of materializing a full im2col buffer.
"""

from __future__ import annotations

import numpy as np


def out_extent(n: int, k: int, stride: int, pad: int, dil: int) -> int:
    eff = dil * (k - 1) + 1
    return (n + 2 * pad - eff) // stride + 1


def _tap_slice(k_idx: int, stride: int, dil: int, out_n: int) -> slice:
    start = k_idx * dil
    return slice(start, start + (out_n - 1) * stride + 1, stride)


def conv2d_forward(x, w, stride, pad, dil):
    B, C, H, W = x.shape
    O, _, KH, KW = w.shape
    OH = out_extent(H, KH, stride, pad, dil)
    OW = out_extent(W, KW, stride, pad, dil)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))).astype(np.float64)
    w64 = w.astype(np.float64)
    out = np.zeros((B, O, OH, OW), dtype=np.float64)
    for kh in range(KH):
        hs = _tap_slice(kh, stride, dil, OH)
        for kw in range(KW):
            ws = _tap_slice(kw, stride, dil, OW)
            patch = xp[:, :, hs, ws]
            out += np.einsum("bchw,oc->bohw", patch, w64[:, :, kh, kw])
    return out.astype(np.float32)


def conv2d_grad_weight(gout, x, kh_kw, stride, pad, dil):
    KH, KW = kh_kw
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))).astype(np.float64)
    g64 = gout.astype(np.float64)
    O = gout.shape[1]
    C = x.shape[1]
    OH, OW = gout.shape[2], gout.shape[3]
    gw = np.zeros((O, C, KH, KW), dtype=np.float64)
    for kh in range(KH):
        hs = _tap_slice(kh, stride, dil, OH)
        for kw in range(KW):
            ws = _tap_slice(kw, stride, dil, OW)
            patch = xp[:, :, hs, ws]
            gw[:, :, kh, kw] = np.einsum("bohw,bchw->oc", g64, patch)
    return gw.astype(np.float32)


def conv2d_grad_input(gout, w, in_hw, stride, pad, dil):
    H, W = in_hw
    B = gout.shape[0]
    O, C, KH, KW = w.shape
    OH, OW = gout.shape[2], gout.shape[3]
    g64 = gout.astype(np.float64)
    w64 = w.astype(np.float64)
    gxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for kh in range(KH):
        hs = _tap_slice(kh, stride, dil, OH)
        for kw in range(KW):
            ws = _tap_slice(kw, stride, dil, OW)
            gxp[:, :, hs, ws] += np.einsum("bohw,oc->bchw", g64, w64[:, :, kh, kw])
    if pad:
        gxp = gxp[:, :, pad:H + pad, pad:W + pad]
    return gxp.astype(np.float32)
