"""Reusable layers: BConv, octave convolution, RFB, SAM.

Layers are plain callables over tensors; their parameters are created in a
ParamStore under a dotted prefix at construction time, which fixes both the
checkpoint naming and the deterministic iteration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UsageError
from .params import ParamStore, uniform_fan_in
from . import tensor as T
from .tensor import Tensor


@dataclass
class FreqPair:
    """High-frequency branch at level resolution, low-frequency at half."""
    high: Tensor
    low: Tensor

    def validate(self) -> "FreqPair":
        hb, hc, hh, hw = self.high.shape
        lb, lc, lh, lw = self.low.shape
        if (hb, hh, hw) != (lb, 2 * lh, 2 * lw):
            raise ShapeError(
                f"FreqPair: low branch must be exactly half resolution; "
                f"high {self.high.shape} vs low {self.low.shape}")
        return self


def to_freq_pair(x: Tensor, alpha_oct: float = 0.5) -> FreqPair:
    """Split channels into high/low groups and pool the low group once."""
    C = x.shape[1]
    if C < 2:
        raise UsageError(f"to_freq_pair: need at least 2 channels, got {C}")
    if not 0.0 < alpha_oct < 1.0:
        raise UsageError(f"to_freq_pair: alpha_oct must be in (0,1), got {alpha_oct}")
    c_high = math.ceil((1.0 - alpha_oct) * C)
    c_high = min(max(c_high, 1), C - 1)
    high = _slice_channels(x, 0, c_high)
    low = T.avg_pool2(_slice_channels(x, c_high, C), 2)
    return FreqPair(high=high, low=low).validate()


def _slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    out = x.data[:, lo:hi]

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, lo:hi] = g
            T._accum(x, gx)

    return T._result(out, (x,), bwd, "slice_channels")


class Conv2d:
    """Bare convolution layer owning weight (and optionally bias)."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 in_c: int, out_c: int, k: int, *, stride: int = 1,
                 dilation: int = 1, bias: bool = True, zero_init: bool = False):
        shape = (out_c, in_c, k, k)
        w0 = np.zeros(shape, np.float32) if zero_init else uniform_fan_in(rng, shape)
        self.weight = store.parameter(f"{prefix}.w", w0)
        self.bias = store.parameter(f"{prefix}.b", np.zeros((1, out_c, 1, 1), np.float32)) \
            if bias else None
        self.stride = stride
        self.dilation = dilation
        self.padding = dilation * (k // 2)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, dilation=self.dilation)


class BConv:
    """conv -> batch normalization -> ReLU (ReLU optional for residual fuses)."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 in_c: int, out_c: int, k: int, *, stride: int = 1,
                 dilation: int = 1, activate: bool = True):
        self.conv = Conv2d(store, f"{prefix}.conv", rng, in_c, out_c, k,
                           stride=stride, dilation=dilation, bias=False)
        self.gamma = store.parameter(f"{prefix}.bn.gamma", np.ones((1, out_c, 1, 1), np.float32))
        self.beta = store.parameter(f"{prefix}.bn.beta", np.zeros((1, out_c, 1, 1), np.float32))
        self.state = T.BNState(out_c)
        self.state.mean = store.buffer(f"{prefix}.bn.mean", self.state.mean)
        self.state.var = store.buffer(f"{prefix}.bn.var", self.state.var)
        self.activate = activate

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        y = self.conv(x)
        y = T.batch_norm(y, self.gamma, self.beta, self.state, training=training)
        return T.relu(y) if self.activate else y


class OctaveConv:
    """Four-path octave convolution over a FreqPair.

    The cross convolutions carry no bias; one bias per branch is added after
    the two-path sum so the map stays linear in its input at zero bias.
    """

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 in_high: int, in_low: int, out_high: int, out_low: int, k: int = 3,
                 *, branches: str = "both"):
        if branches not in ("both", "high", "low"):
            raise UsageError(f"OctaveConv: bad branches {branches!r}")
        self.branches = branches
        if branches in ("both", "high"):
            self.w_hh = Conv2d(store, f"{prefix}.hh", rng, in_high, out_high, k, bias=False)
            self.w_lh = Conv2d(store, f"{prefix}.lh", rng, in_low, out_high, k, bias=False)
            self.b_h = store.parameter(f"{prefix}.bh", np.zeros((1, out_high, 1, 1), np.float32))
        if branches in ("both", "low"):
            self.w_ll = Conv2d(store, f"{prefix}.ll", rng, in_low, out_low, k, bias=False)
            self.w_hl = Conv2d(store, f"{prefix}.hl", rng, in_high, out_low, k, bias=False)
            self.b_l = store.parameter(f"{prefix}.bl", np.zeros((1, out_low, 1, 1), np.float32))

    def __call__(self, x: FreqPair) -> FreqPair:
        x.validate()
        high = low = None
        if self.branches in ("both", "high"):
            y_h = T.add(self.w_hh(x.high), T.upsample_nearest(self.w_lh(x.low), 2))
            high = T.add(y_h, _expand_bias(self.b_h, y_h))
        if self.branches in ("both", "low"):
            y_l = T.add(self.w_ll(x.low), self.w_hl(T.avg_pool2(x.high, 2)))
            low = T.add(y_l, _expand_bias(self.b_l, y_l))
        if high is None:  # single-branch modes fill the other side with constants
            b, c, h, w = low.shape
            high = Tensor(np.zeros((b, c, 2 * h, 2 * w), np.float32))
        if low is None:
            b, c, h, w = high.shape
            low = Tensor(np.zeros((b, c, h // 2, w // 2), np.float32))
        return FreqPair(high=high, low=low).validate()


def _expand_bias(b: Tensor, like: Tensor) -> Tensor:
    # bias is (1,C,1,1); add() only broadcasts channels, so tile spatially/batch
    out = np.broadcast_to(b.data, like.shape).astype(np.float32)

    def bwd(g):
        if b.requires_grad:
            T._accum(b, g.sum(axis=(0, 2, 3), keepdims=True, dtype=np.float64)
                     .astype(np.float32))

    return T._result(out, (b,), bwd, "expand_bias")


class RFB:
    """Receptive-field block: parallel dilated branches plus a 1x1 shortcut."""

    DILATIONS = (3, 5, 7)

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 in_c: int, out_c: int):
        self.b0 = BConv(store, f"{prefix}.b0", rng, in_c, out_c, 1)
        self.branches = []
        for i, d in enumerate(self.DILATIONS, start=1):
            reduce = BConv(store, f"{prefix}.b{i}.reduce", rng, in_c, out_c, 1)
            dilated = BConv(store, f"{prefix}.b{i}.dil", rng, out_c, out_c, 3, dilation=d)
            self.branches.append((reduce, dilated))
        self.fuse = BConv(store, f"{prefix}.fuse", rng, 4 * out_c, out_c, 1, activate=False)
        self.shortcut = BConv(store, f"{prefix}.shortcut", rng, in_c, out_c, 1, activate=False)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        feats = [self.b0(x, training)]
        for reduce, dilated in self.branches:
            feats.append(dilated(reduce(x, training), training))
        fused = self.fuse(T.concat_channels(feats), training)
        return T.relu(T.add(fused, self.shortcut(x, training)))


class SAM:
    """Spatial attention: channel max/mean stats -> 7x7 conv -> sigmoid gate."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator):
        self.conv = Conv2d(store, f"{prefix}.conv", rng, 2, 1, 7)

    def attention(self, x: Tensor) -> Tensor:
        stats = T.concat_channels([T.channel_max(x), T.channel_mean(x)])
        return T.sigmoid(self.conv(stats))

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return T.mul(x, self.attention(x))
