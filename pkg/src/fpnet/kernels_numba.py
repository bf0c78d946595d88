"""Numba @njit convolution kernels (hot path).

Each output element is produced by exactly one prange worker with a fixed
c -> kh -> kw accumulation order in float64, so results do not depend on the
thread count. fastmath stays off to keep the summation order contractual.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .kernels_numpy import out_extent


@njit(parallel=True, cache=True)
def _fwd(x, w, stride, pad, dil, out):
    B, C, H, W = x.shape
    O, _, KH, KW = w.shape
    OH = out.shape[2]
    OW = out.shape[3]
    for idx in prange(B * O * OH * OW):
        b = idx // (O * OH * OW)
        r = idx % (O * OH * OW)
        o = r // (OH * OW)
        r = r % (OH * OW)
        oh = r // OW
        ow = r % OW
        h0 = oh * stride - pad
        w0 = ow * stride - pad
        acc = 0.0
        for c in range(C):
            for kh in range(KH):
                ih = h0 + kh * dil
                if 0 <= ih < H:
                    for kw in range(KW):
                        iw = w0 + kw * dil
                        if 0 <= iw < W:
                            acc += np.float64(x[b, c, ih, iw]) * np.float64(w[o, c, kh, kw])
        out[b, o, oh, ow] = acc


@njit(parallel=True, cache=True)
def _grad_weight(gout, x, stride, pad, dil, gw):
    B, C, H, W = x.shape
    O, _, KH, KW = gw.shape
    OH = gout.shape[2]
    OW = gout.shape[3]
    for idx in prange(O * C * KH * KW):
        o = idx // (C * KH * KW)
        r = idx % (C * KH * KW)
        c = r // (KH * KW)
        r = r % (KH * KW)
        kh = r // KW
        kw = r % KW
        acc = 0.0
        for b in range(B):
            for oh in range(OH):
                ih = oh * stride - pad + kh * dil
                if 0 <= ih < H:
                    for ow in range(OW):
                        iw = ow * stride - pad + kw * dil
                        if 0 <= iw < W:
                            acc += np.float64(gout[b, o, oh, ow]) * np.float64(x[b, c, ih, iw])
        gw[o, c, kh, kw] = acc


@njit(parallel=True, cache=True)
def _grad_input(gout, w, stride, pad, dil, gx):
    B, C, H, W = gx.shape
    O, _, KH, KW = w.shape
    OH = gout.shape[2]
    OW = gout.shape[3]
    for idx in prange(B * C * H * W):
        b = idx // (C * H * W)
        r = idx % (C * H * W)
        c = r // (H * W)
        r = r % (H * W)
        h = r // W
        ww = r % W
        acc = 0.0
        for o in range(O):
            for kh in range(KH):
                num_h = h + pad - kh * dil
                if num_h < 0 or num_h % stride != 0:
                    continue
                oh = num_h // stride
                if oh >= OH:
                    continue
                for kw in range(KW):
                    num_w = ww + pad - kw * dil
                    if num_w < 0 or num_w % stride != 0:
                        continue
                    ow = num_w // stride
                    if ow >= OW:
                        continue
                    acc += np.float64(gout[b, o, oh, ow]) * np.float64(w[o, c, kh, kw])
        gx[b, c, h, ww] = acc


def conv2d_forward(x, w, stride, pad, dil):
    B = x.shape[0]
    O, _, KH, KW = w.shape
    OH = out_extent(x.shape[2], KH, stride, pad, dil)
    OW = out_extent(x.shape[3], KW, stride, pad, dil)
    out = np.empty((B, O, OH, OW), dtype=np.float64)
    _fwd(x, w, stride, pad, dil, out)
    return out.astype(np.float32)


def conv2d_grad_weight(gout, x, kh_kw, stride, pad, dil):
    KH, KW = kh_kw
    gw = np.empty((gout.shape[1], x.shape[1], KH, KW), dtype=np.float64)
    _grad_weight(gout, x, stride, pad, dil, gw)
    return gw.astype(np.float32)


def conv2d_grad_input(gout, w, in_hw, stride, pad, dil):
    H, W = in_hw
    gx = np.empty((gout.shape[0], w.shape[1], H, W), dtype=np.float64)
    _grad_input(gout, w, stride, pad, dil, gx)
    return gx.astype(np.float32)
