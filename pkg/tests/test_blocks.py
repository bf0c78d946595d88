"""Layer blocks: frequency split, octave convolution, RFB, SAM."""

import numpy as np
import pytest

from fpnet import tensor as T
from fpnet.blocks import (BConv, FreqPair, OctaveConv, RFB, SAM, _slice_channels,
                          to_freq_pair)
from fpnet.errors import ShapeError, UsageError
from fpnet.params import ParamStore
from fpnet.tensor import Tensor

from helpers import conv2d_loops, gradcheck


def rand(rng, *shape, grad=False):
    return Tensor(0.5 * rng.standard_normal(shape).astype(np.float32),
                  requires_grad=grad)


# ---------------------------------------------------------------------------
# frequency split


def test_freq_pair_invariant():
    good = FreqPair(high=Tensor(np.zeros((1, 2, 8, 8), np.float32)),
                    low=Tensor(np.zeros((1, 3, 4, 4), np.float32)))
    good.validate()
    with pytest.raises(ShapeError):
        FreqPair(high=Tensor(np.zeros((1, 2, 8, 8), np.float32)),
                 low=Tensor(np.zeros((1, 2, 8, 8), np.float32))).validate()


def test_to_freq_pair_splits_and_pools(rng):
    x = rand(rng, 2, 6, 8, 8)
    pair = to_freq_pair(x, 0.5)
    assert pair.high.shape == (2, 3, 8, 8)
    assert pair.low.shape == (2, 3, 4, 4)
    assert np.array_equal(pair.high.data, x.data[:, :3])
    want_low = x.data[:, 3:].reshape(2, 3, 4, 2, 4, 2).mean(axis=(3, 5))
    assert np.allclose(pair.low.data, want_low, atol=1e-6)


def test_to_freq_pair_uneven_alpha(rng):
    x = rand(rng, 1, 5, 4, 4)
    pair = to_freq_pair(x, 0.25)  # high gets ceil(0.75*5) = 4 channels
    assert pair.high.shape[1] == 4
    assert pair.low.shape[1] == 1


def test_to_freq_pair_rejects_degenerate(rng):
    with pytest.raises(UsageError):
        to_freq_pair(rand(rng, 1, 1, 4, 4))
    with pytest.raises(UsageError):
        to_freq_pair(rand(rng, 1, 4, 4, 4), alpha_oct=0.0)


def test_slice_channels_gradient(rng):
    x = rand(rng, 1, 4, 3, 3, grad=True)
    T.backward(T.sum_all(_slice_channels(x, 1, 3)))
    want = np.zeros_like(x.data)
    want[:, 1:3] = 1.0
    assert np.array_equal(x.grad, want)


# ---------------------------------------------------------------------------
# octave convolution


def _make_octave(rng, branches="both"):
    store = ParamStore()
    oct_ = OctaveConv(store, "oct", rng, in_high=2, in_low=3, out_high=4,
                      out_low=5, k=3, branches=branches)
    return store, oct_


def _rand_pair(rng, b=1, ch=2, cl=3, hw=8):
    return FreqPair(high=rand(rng, b, ch, hw, hw),
                    low=rand(rng, b, cl, hw // 2, hw // 2))


def test_octave_matches_composition_oracle(rng):
    store, oct_ = _make_octave(rng)
    for name, p in store.params.items():  # nonzero biases to exercise them too
        if name.endswith((".bh", ".bl")):
            p.data[...] = rng.standard_normal(p.data.shape).astype(np.float32)
    pair = _rand_pair(rng)
    out = oct_(pair)

    hh = conv2d_loops(pair.high.data, oct_.w_hh.weight.data, pad=1)
    lh = conv2d_loops(pair.low.data, oct_.w_lh.weight.data, pad=1)
    want_high = hh + np.repeat(np.repeat(lh, 2, 2), 2, 3) + oct_.b_h.data

    pooled = pair.high.data.reshape(1, 2, 4, 2, 4, 2).mean(axis=(3, 5))
    ll = conv2d_loops(pair.low.data, oct_.w_ll.weight.data, pad=1)
    hl = conv2d_loops(pooled, oct_.w_hl.weight.data, pad=1)
    want_low = ll + hl + oct_.b_l.data

    assert out.high.shape == (1, 4, 8, 8)
    assert out.low.shape == (1, 5, 4, 4)
    assert np.max(np.abs(out.high.data - want_high)) <= 1e-5
    assert np.max(np.abs(out.low.data - want_low)) <= 1e-5


def test_octave_is_linear_at_zero_bias(rng):
    _, oct_ = _make_octave(rng)  # biases start at zero
    p1 = _rand_pair(rng)
    p2 = _rand_pair(rng)
    summed = FreqPair(high=T.add(p1.high, p2.high), low=T.add(p1.low, p2.low))
    o1, o2, osum = oct_(p1), oct_(p2), oct_(summed)
    assert np.max(np.abs(osum.high.data - (o1.high.data + o2.high.data))) <= 1e-5
    assert np.max(np.abs(osum.low.data - (o1.low.data + o2.low.data))) <= 1e-5


def test_octave_cross_terms_vanish_when_zeroed(rng):
    """Zeroed cross paths decouple the branches exactly (not approximately)."""
    _, oct_ = _make_octave(rng)
    oct_.w_lh.weight.data[...] = 0.0
    oct_.w_hl.weight.data[...] = 0.0
    base = _rand_pair(rng)
    perturbed = FreqPair(high=base.high, low=rand(rng, 1, 3, 4, 4))
    a, b = oct_(base), oct_(perturbed)
    assert np.array_equal(a.high.data, b.high.data)  # low input cannot leak
    perturbed2 = FreqPair(high=rand(rng, 1, 2, 8, 8), low=base.low)
    c = oct_(perturbed2)
    assert np.array_equal(a.low.data, c.low.data)  # high input cannot leak


def test_octave_single_branch_modes(rng):
    for branches in ("high", "low"):
        store, oct_ = _make_octave(rng, branches)
        names = set(store.params)
        if branches == "high":
            assert any(".hh." in n for n in names) and not any(".ll." in n for n in names)
        else:
            assert any(".ll." in n for n in names) and not any(".hh." in n for n in names)
        out = oct_(_rand_pair(rng))
        out.validate()
        if branches == "high":
            assert np.array_equal(out.low.data, np.zeros_like(out.low.data))
        else:
            assert np.array_equal(out.high.data, np.zeros_like(out.high.data))


def test_octave_gradcheck(rng):
    store, oct_ = _make_octave(rng)
    pair = _rand_pair(rng, hw=4)
    pair.high.requires_grad = True
    pair.high.grad = np.zeros_like(pair.high.data)
    pair.low.requires_grad = True
    pair.low.grad = np.zeros_like(pair.low.data)
    leaves = [pair.high, pair.low] + list(store.params.values())

    def build():
        out = oct_(pair)
        return T.add(T.sum_all(T.sigmoid(out.high)), T.sum_all(T.sigmoid(out.low)))

    gradcheck(build, leaves, rng, n_per_leaf=2, h=1e-2, tol=5e-3)


# ---------------------------------------------------------------------------
# BConv / RFB / SAM


def test_bconv_shape_and_nonnegative(rng):
    store = ParamStore()
    layer = BConv(store, "c", rng, 3, 8, 3, stride=2)
    y = layer(rand(rng, 2, 3, 8, 8), training=True)
    assert y.shape == (2, 8, 4, 4)
    assert np.all(y.data >= 0.0)
    assert set(store.buffers) == {"c.bn.mean", "c.bn.var"}


def test_bconv_eval_with_fresh_stats_is_affine_conv(rng):
    store = ParamStore()
    layer = BConv(store, "c", rng, 2, 3, 3, activate=False)
    x = rand(rng, 1, 2, 6, 6)
    y = layer(x, training=False).data
    raw = T.conv2d(x, layer.conv.weight, padding=1).data
    assert np.allclose(y, raw / np.sqrt(1 + 1e-5), atol=1e-5)


def test_rfb_preserves_resolution(rng):
    store = ParamStore()
    rfb = RFB(store, "rfb", rng, 4, 6)
    y = rfb(rand(rng, 1, 4, 16, 16))
    assert y.shape == (1, 6, 16, 16)
    assert np.all(y.data >= 0.0)  # ends in a ReLU


def test_sam_gate_bounds(rng):
    store = ParamStore()
    sam = SAM(store, "sam", rng)
    x = rand(rng, 2, 5, 8, 8)
    att = sam.attention(x)
    assert att.shape == (2, 1, 8, 8)
    assert np.all(att.data > 0.0) and np.all(att.data < 1.0)
    y = sam(x)
    assert y.shape == x.shape
    assert np.all(np.abs(y.data) <= np.abs(x.data) + 1e-7)


def test_sam_gradcheck(rng):
    store = ParamStore()
    sam = SAM(store, "sam", rng)
    x = rand(rng, 1, 3, 4, 4, grad=True)
    leaves = [x] + list(store.params.values())

    def build():
        return T.sum_all(T.sigmoid(sam(x)))

    gradcheck(build, leaves, rng, n_per_leaf=3, h=1e-2, tol=5e-3,
              min_pass_frac=0.85)
