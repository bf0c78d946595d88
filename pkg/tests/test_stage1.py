"""Coarse-positioning stage: FPM level features and the neighbor decoder."""

import numpy as np
import pytest

from fpnet import tensor as T
from fpnet.blocks import to_freq_pair
from fpnet.errors import ShapeError
from fpnet.params import ParamStore
from fpnet.stage1 import FPM, GUp, NCD
from fpnet.tensor import Tensor

from helpers import gradcheck


def rand(rng, *shape, grad=False):
    return Tensor(0.5 * rng.standard_normal(shape).astype(np.float32),
                  requires_grad=grad)


# ---------------------------------------------------------------------------
# FPM


def test_fpm_output_shape(rng):
    store = ParamStore()
    fpm = FPM(store, "f", rng, in_c=6, width=4, level_hw=8)
    y = fpm(rand(rng, 2, 6, 8, 8))
    assert y.shape == (2, 4, 8, 8)


def test_fpm_matches_manual_composition(rng):
    store = ParamStore()
    fpm = FPM(store, "f", rng, in_c=6, width=4, level_hw=8)
    x = rand(rng, 1, 6, 8, 8)
    got = fpm(x).data
    pair = to_freq_pair(x, 0.5)
    y = fpm.oct(pair)
    want = T.add(fpm.adapt_high(y.high),
                 T.upsample_nearest(fpm.adapt_low(y.low), 2)).data
    assert np.array_equal(got, want)


def test_fpm_single_branch_param_sets(rng):
    names = {}
    for mode in ("high", "low", "both"):
        store = ParamStore()
        FPM(store, "f", rng, in_c=6, width=4, freq_mode=mode, level_hw=8)
        names[mode] = set(store.params)
    assert names["high"] < names["both"]
    assert names["low"] < names["both"]
    assert names["high"].isdisjoint(names["low"])
    assert any("adapt_high" in n for n in names["high"])
    assert not any("adapt_low" in n for n in names["high"])


def test_fpm_high_mode_equals_both_with_zeroed_low_path(rng):
    """Zeroing every low-side weight of a two-branch FPM reproduces the
    high-only variant exactly when the shared weights are copied over."""
    store_b = ParamStore()
    fpm_b = FPM(store_b, "f", rng, in_c=6, width=4, freq_mode="both", level_hw=8)
    store_h = ParamStore()
    fpm_h = FPM(store_h, "f", rng, in_c=6, width=4, freq_mode="high", level_hw=8)
    for name, p in store_h.params.items():
        p.data[...] = store_b.params[name].data
    for name in store_b.params:
        if name not in store_h.params:  # low-branch octave weights and adapter
            store_b.params[name].data[...] = 0.0
    x = rand(rng, 1, 6, 8, 8)
    assert np.array_equal(fpm_b(x).data, fpm_h(x).data)


def test_fpm_small_level_fallback(rng):
    store = ParamStore()
    fpm = FPM(store, "f", rng, in_c=6, width=4, level_hw=1)
    assert not fpm.octave_ok
    assert any(".fallback." in n for n in store.params)
    y = fpm(rand(rng, 1, 6, 1, 1))
    assert y.shape == (1, 4, 1, 1)


def test_fpm_rejects_bad_mode(rng):
    with pytest.raises(ShapeError):
        FPM(ParamStore(), "f", rng, in_c=6, width=4, freq_mode="mid")


def test_fpm_gradcheck(rng):
    store = ParamStore()
    fpm = FPM(store, "f", rng, in_c=4, width=3, level_hw=4)
    x = rand(rng, 1, 4, 4, 4, grad=True)

    def build():
        return T.sum_all(T.sigmoid(fpm(x)))

    conv_leaves = [p for n, p in store.params.items() if n.endswith(".w")]
    gradcheck(build, [x] + conv_leaves, rng, n_per_leaf=2, h=1e-2, tol=1e-2,
              min_pass_frac=0.85)


# ---------------------------------------------------------------------------
# NCD


def test_gup_doubles_resolution(rng):
    store = ParamStore()
    g = GUp(store, "g", rng, width=3)
    y = g(rand(rng, 1, 3, 4, 4))
    assert y.shape == (1, 3, 8, 8)


def _ncd_inputs(rng, w=4, b=1):
    return (rand(rng, b, w, 16, 16), rand(rng, b, w, 8, 8), rand(rng, b, w, 4, 4))


def test_ncd_shapes(rng):
    store = ParamStore()
    ncd = NCD(store, "ncd", rng, width=4)
    f2, f3, f4 = _ncd_inputs(rng)
    dec = ncd(f2, f3, f4)
    assert dec.f4_prime.shape == (1, 4, 8, 8)
    assert dec.f3_prime.shape == (1, 4, 8, 8)
    assert dec.f2_prime.shape == (1, 4, 16, 16)
    assert dec.s1_logits.shape == (1, 1, 16, 16)


def test_ncd_matches_manual_wiring(rng):
    store = ParamStore()
    ncd = NCD(store, "ncd", rng, width=4)
    f2, f3, f4 = _ncd_inputs(rng)
    dec = ncd(f2, f3, f4)

    f4p = ncd.g4(f4)
    f3p = T.mul(f3, ncd.g43(f4))
    gated = T.mul(f2, ncd.g32(f3p))
    inner = ncd.cat_inner(T.concat_channels(
        [T.upsample_nearest(f3p, 2), T.upsample_nearest(f4p, 2)]))
    f2p = ncd.cat_outer(T.concat_channels([gated, inner]))
    s1 = ncd.head(f2p)

    assert np.array_equal(dec.f4_prime.data, f4p.data)
    assert np.array_equal(dec.f3_prime.data, f3p.data)
    assert np.array_equal(dec.f2_prime.data, f2p.data)
    assert np.array_equal(dec.s1_logits.data, s1.data)


def test_ncd_rejects_bad_pyramid(rng):
    store = ParamStore()
    ncd = NCD(store, "ncd", rng, width=4)
    with pytest.raises(ShapeError):
        ncd(rand(rng, 1, 4, 16, 16), rand(rng, 1, 4, 8, 8), rand(rng, 1, 4, 8, 8))


def test_stage1_end_to_end_gradcheck(rng):
    """FPM features through the decoder to a scalar, checked by differences."""
    store = ParamStore()
    fpm = FPM(store, "fpm", rng, in_c=4, width=3, level_hw=8)
    ncd = NCD(store, "ncd", rng, width=3)
    x2 = rand(rng, 1, 4, 8, 8, grad=True)
    f3 = rand(rng, 1, 3, 4, 4, grad=True)
    f4 = rand(rng, 1, 3, 2, 2, grad=True)

    def build():
        dec = ncd(fpm(x2), f3, f4)
        return T.mean_all(T.sigmoid(dec.s1_logits))

    gradcheck(build, [x2, f3, f4], rng, n_per_leaf=3, h=1e-2, tol=1e-2,
              min_pass_frac=0.85)
