"""Detail-preserving fine localization: the correction fusion module.

CFM = prior-guided gating of the coarser feature, a per-pixel channel
correlation compressed through a small bottleneck into two modulation maps,
and a residual modulation fuse. The modulation convolutions are
zero-initialized so a fresh CFM is exactly the prior-corrected feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import BConv, Conv2d
from .errors import ShapeError, UsageError
from .params import ParamStore
from . import tensor as T
from .tensor import Tensor


class ChannelReducer:
    """1x1 BConv adapter bringing any encoder width to the CFM width."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 in_c: int, width: int):
        self.conv = BConv(store, f"{prefix}.conv", rng, in_c, width, 1)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return self.conv(x, training)


@dataclass
class ModulationMaps:
    affinity: Tensor  # single-channel per-pixel similarity
    alpha: Tensor
    beta: Tensor


def prior_correct(f_next: Tensor, s_g: Tensor) -> Tensor:
    """Gate the coarser feature with sigmoid(prior logits) and upsample x2."""
    if s_g.shape[1] != 1:
        raise UsageError(f"prior_correct: prior mask must be single-channel; got {s_g.shape}")
    if (s_g.shape[0], s_g.shape[2], s_g.shape[3]) != \
            (f_next.shape[0], f_next.shape[2], f_next.shape[3]):
        raise ShapeError(f"prior_correct: mask {s_g.shape} does not match feature "
                         f"{f_next.shape}; resample it first")
    return T.upsample_nearest(T.mul(f_next, T.sigmoid(s_g)), 2)


class CFM:
    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 width: int = 64, bottleneck: int = 16):
        self.width = width
        self.bottleneck = BConv(store, f"{prefix}.bottleneck", rng, 1, bottleneck, 3)
        self.alpha_conv = Conv2d(store, f"{prefix}.alpha", rng, bottleneck, width, 3,
                                 zero_init=True)
        self.beta_conv = Conv2d(store, f"{prefix}.beta", rng, bottleneck, width, 3,
                                zero_init=True)
        self.fconv = BConv(store, f"{prefix}.fconv", rng, width, width, 3)

    def channel_correlate(self, f_i: Tensor, f_next_corrected: Tensor,
                          training: bool = False) -> ModulationMaps:
        if f_i.shape != f_next_corrected.shape:
            raise ShapeError(f"channel_correlate: shape mismatch "
                             f"{f_i.shape} vs {f_next_corrected.shape}")
        affinity = T.channel_inner_product(f_i, f_next_corrected)
        mid = self.bottleneck(affinity, training)
        return ModulationMaps(affinity=affinity,
                              alpha=self.alpha_conv(mid),
                              beta=self.beta_conv(mid))

    def modulate_fuse(self, f_i: Tensor, f_next_corrected: Tensor,
                      maps: ModulationMaps, training: bool = False) -> Tensor:
        modulated = T.add(T.mul(self.fconv(f_i, training), maps.alpha), maps.beta)
        return T.add(f_next_corrected, modulated)

    def __call__(self, f_i: Tensor, f_next: Tensor, s_g: Tensor,
                 training: bool = False) -> Tensor:
        corrected = prior_correct(f_next, s_g)
        maps = self.channel_correlate(f_i, corrected, training)
        return self.modulate_fuse(f_i, corrected, maps, training)
