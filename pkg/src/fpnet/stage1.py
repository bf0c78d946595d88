"""Frequency-guided coarse positioning.

FPM turns one encoder level into a frequency feature at the decoder working
width: channel split into high/low groups, octave convolution, then per-branch
1x1 width adapters fused by addition (the low branch is nearest-upsampled back
to level resolution first). The neighbor-connection decoder then gates and
concatenates the three top levels down to the coarse logit map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import BConv, Conv2d, FreqPair, OctaveConv, to_freq_pair
from .errors import ShapeError
from .params import ParamStore
from . import tensor as T
from .tensor import Tensor

FREQ_MODES = ("high", "low", "both")


class FPM:
    """Frequency perception module for one pyramid level.

    Levels too small for the factor-2 octave pooling (spatial extent < 2)
    degrade to a plain 3x3 BConv into the working width; this keeps the 32x32
    toy configuration runnable.
    """

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator,
                 in_c: int, width: int, *, alpha_oct: float = 0.5,
                 freq_mode: str = "both", level_hw: int | None = None):
        if freq_mode not in FREQ_MODES:
            raise ShapeError(f"FPM: freq_mode must be one of {FREQ_MODES}")
        self.freq_mode = freq_mode
        self.alpha_oct = alpha_oct
        self.octave_ok = level_hw is None or (level_hw >= 2 and level_hw % 2 == 0)
        if not self.octave_ok:
            self.fallback = BConv(store, f"{prefix}.fallback", rng, in_c, width, 3)
            return
        import math
        c_high = min(max(math.ceil((1.0 - alpha_oct) * in_c), 1), in_c - 1)
        c_low = in_c - c_high
        self.oct = OctaveConv(store, f"{prefix}.oct", rng, c_high, c_low,
                              width, width, 3, branches=freq_mode)
        if freq_mode in ("both", "high"):
            self.adapt_high = BConv(store, f"{prefix}.adapt_high", rng, width, width, 1)
        if freq_mode in ("both", "low"):
            self.adapt_low = BConv(store, f"{prefix}.adapt_low", rng, width, width, 1)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        if not self.octave_ok:
            return self.fallback(x, training)
        pair = to_freq_pair(x, self.alpha_oct)
        y = self.oct(pair)
        terms = []
        if self.freq_mode in ("both", "high"):
            terms.append(self.adapt_high(y.high, training))
        if self.freq_mode in ("both", "low"):
            terms.append(T.upsample_nearest(self.adapt_low(y.low, training), 2))
        return terms[0] if len(terms) == 1 else T.add(terms[0], terms[1])


@dataclass
class DecoderState:
    f4_prime: Tensor
    f3_prime: Tensor
    f2_prime: Tensor
    s1_logits: Tensor


class GUp:
    """Nearest x2 upsampling followed by a 3x3 BConv."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator, width: int):
        self.conv = BConv(store, f"{prefix}.conv", rng, width, width, 3)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return self.conv(T.upsample_nearest(x, 2), training)


class NCD:
    """Neighbor connection decoder over the three top frequency features."""

    def __init__(self, store: ParamStore, prefix: str, rng: np.random.Generator, width: int):
        self.g4 = GUp(store, f"{prefix}.g4", rng, width)
        self.g43 = GUp(store, f"{prefix}.g43", rng, width)
        self.g32 = GUp(store, f"{prefix}.g32", rng, width)
        self.cat_inner = BConv(store, f"{prefix}.cat_inner", rng, 2 * width, width, 3)
        self.cat_outer = BConv(store, f"{prefix}.cat_outer", rng, 2 * width, width, 3)
        self.head = Conv2d(store, f"{prefix}.head", rng, width, 1, 1)

    def __call__(self, f2: Tensor, f3: Tensor, f4: Tensor,
                 training: bool = False) -> DecoderState:
        for fine, coarse, names in ((f2, f3, "f2/f3"), (f3, f4, "f3/f4")):
            if (fine.shape[2], fine.shape[3]) != (2 * coarse.shape[2], 2 * coarse.shape[3]):
                raise ShapeError(f"ncd: {names} must descend by exactly factor 2; "
                                 f"got {fine.shape} vs {coarse.shape}")
        f4p = self.g4(f4, training)
        f3p = T.mul(f3, self.g43(f4, training))
        gated_f2 = T.mul(f2, self.g32(f3p, training))
        inner = self.cat_inner(T.concat_channels([
            T.upsample_nearest(f3p, 2), T.upsample_nearest(f4p, 2)]), training)
        f2p = self.cat_outer(T.concat_channels([gated_f2, inner]), training)
        s1 = self.head(f2p)
        return DecoderState(f4_prime=f4p, f3_prime=f3p, f2_prime=f2p, s1_logits=s1)
