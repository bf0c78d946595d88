"""Dense rank-4 tensor type with reverse-mode autodiff.

Every value is a (batch, channel, height, width) float32 array; scalars live
in shape (1,1,1,1). Operations record a backward closure on the output tensor;
backward() walks the recorded graph once in reverse topological order, sums
gradients into leaf grad buffers, and then clears the graph so a second call
without re-recording is rejected.

Broadcasting is deliberately restricted: the only implicit broadcast is a
single-channel operand expanding across channels (needed by attention gates
and prior masks). Reductions accumulate in float64.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .backend import get_backend
from .errors import NumericError, ShapeError, UsageError

Shape4 = tuple[int, int, int, int]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are rank-4 (b,c,h,w); got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor constructed from non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self) -> Shape4:
        return self.data.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() requires a scalar tensor; got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn, opname: str) -> Tensor:
    data = np.ascontiguousarray(data, dtype=np.float32)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{opname} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._consumed = False
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor) -> None:
    """Populate grads of every reachable requires_grad tensor, then clear the graph."""
    if loss.data.size != 1:
        raise UsageError(f"backward requires a scalar loss; got shape {loss.shape}")
    if loss._consumed:
        raise UsageError("backward called twice on the same recorded graph")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any requires_grad tensor")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss._consumed = True
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0

    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
    for node in topo:
        is_leaf = not node._parents and node._backward is None
        node._backward = None
        node._parents = ()
        if not is_leaf and node is not loss:
            node.grad = None  # intermediates are freed; leaves keep accumulating


# ---------------------------------------------------------------------------
# shape helpers


def _check_same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def _broadcast_info(a: Tensor, b: Tensor, opname: str):
    """Allowed pairs: identical shapes, or one operand with C=1 (same b,h,w)."""
    sa, sb = a.shape, b.shape
    if sa == sb:
        return None
    if (sa[0], sa[2], sa[3]) == (sb[0], sb[2], sb[3]):
        if sb[1] == 1:
            return "b"
        if sa[1] == 1:
            return "a"
    raise ShapeError(f"{opname}: incompatible shapes {sa} vs {sb} "
                     "(only single-channel broadcast is supported)")


def _reduce_channel(g: np.ndarray) -> np.ndarray:
    return g.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# convolution family


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, *,
           stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    O, inC, KH, KW = weight.shape
    if x.shape[1] != inC:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels but weight expects {inC}")
    if KH % 2 == 0 or KW % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd; got {KH}x{KW}")
    if stride < 1 or padding < 0 or dilation < 1:
        raise ShapeError("conv2d: stride/dilation must be >= 1 and padding >= 0")
    kb = get_backend()
    eff = dilation * (KH - 1) + 1
    if x.shape[2] + 2 * padding < eff or x.shape[3] + 2 * padding < eff:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {KH}x{KW} "
                         f"dilation {dilation} padding {padding}")
    if bias is not None and bias.shape != (1, O, 1, 1):
        raise ShapeError(f"conv2d: bias must have shape (1,{O},1,1); got {bias.shape}")

    out = kb.conv2d_forward(x.data, weight.data, stride, padding, dilation)
    if bias is not None:
        out = out + bias.data

    in_hw = (x.shape[2], x.shape[3])

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, get_backend().conv2d_grad_input(g, weight.data, in_hw,
                                                      stride, padding, dilation))
        if weight.requires_grad:
            _accum(weight, get_backend().conv2d_grad_weight(g, x.data, (KH, KW),
                                                            stride, padding, dilation))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3), keepdims=True, dtype=np.float64)
                   .astype(np.float32))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bwd, "conv2d")


def avg_pool2(x: Tensor, k: int) -> Tensor:
    if k < 1:
        raise ShapeError(f"avg_pool2: window must be positive; got {k}")
    B, C, H, W = x.shape
    if H % k or W % k:
        raise ShapeError(f"avg_pool2: spatial extents {H}x{W} not divisible by {k}")
    oh, ow = H // k, W // k
    view = x.data.reshape(B, C, oh, k, ow, k)
    out = view.mean(axis=(3, 5), dtype=np.float64).astype(np.float32)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / np.float32(k * k)
            _accum(x, gx)

    return _result(out, (x,), bwd, "avg_pool2")


def upsample_nearest(x: Tensor, s: int) -> Tensor:
    if s < 1:
        raise ShapeError(f"upsample_nearest: factor must be positive; got {s}")
    if s == 1:
        out = x.data.copy()
    else:
        out = np.repeat(np.repeat(x.data, s, axis=2), s, axis=3)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            B, C, H, W = x.shape
            gx = g.reshape(B, C, H, s, W, s).sum(axis=(3, 5), dtype=np.float64)
            _accum(x, gx.astype(np.float32))

    return _result(out, (x,), bwd, "upsample_nearest")


def _linear_resample_axis(n_in: int, n_out: int):
    """align_corners=False source indices/weights for one axis."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = (src - i0).astype(np.float32)
    return i0, i1, frac


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bilinear: bad target size {out_h}x{out_w}")
    B, C, H, W = x.shape
    i0, i1, fh = _linear_resample_axis(H, out_h)
    j0, j1, fw = _linear_resample_axis(W, out_w)
    fh_col = fh[None, None, :, None]
    fw_row = fw[None, None, None, :]
    rows = x.data[:, :, i0, :] * (1.0 - fh_col) + x.data[:, :, i1, :] * fh_col
    out = rows[:, :, :, j0] * (1.0 - fw_row) + rows[:, :, :, j1] * fw_row

    def bwd(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        grows = np.zeros((B, C, out_h, W), dtype=np.float32)
        np.add.at(grows, (slice(None), slice(None), slice(None), j0), g * (1.0 - fw_row))
        np.add.at(grows, (slice(None), slice(None), slice(None), j1), g * fw_row)
        gx = np.zeros((B, C, H, W), dtype=np.float32)
        np.add.at(gx, (slice(None), slice(None), i0), grows * (1.0 - fh_col))
        np.add.at(gx, (slice(None), slice(None), i1), grows * fh_col)
        _accum(x, gx)

    return _result(out, (x,), bwd, "resize_bilinear")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    bc = _broadcast_info(a, b, "add")
    out = a.data + b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, _reduce_channel(g) if bc == "a" else g)
        if b.requires_grad:
            _accum(b, _reduce_channel(g) if bc == "b" else g)

    return _result(out, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    bc = _broadcast_info(a, b, "sub")
    out = a.data - b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, _reduce_channel(g) if bc == "a" else g)
        if b.requires_grad:
            _accum(b, -(_reduce_channel(g) if bc == "b" else g))

    return _result(out, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    bc = _broadcast_info(a, b, "mul")
    out = a.data * b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            ga = g * b.data
            _accum(a, _reduce_channel(ga) if bc == "a" else ga)
        if b.requires_grad:
            gb = g * a.data
            _accum(b, _reduce_channel(gb) if bc == "b" else gb)

    return _result(out, (a, b), bwd, "mul")


def sdiv(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise division without broadcast; used for scalar loss ratios."""
    _check_same_shape(a, b, "sdiv")
    if np.any(b.data == 0.0):
        raise NumericError("sdiv: division by zero")
    out = a.data / b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, g / b.data)
        if b.requires_grad:
            _accum(b, -g * a.data / (b.data * b.data))

    return _result(out, (a, b), bwd, "sdiv")


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    out = x.data * np.float32(scale) + np.float32(shift)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * np.float32(scale))

    return _result(out, (x,), bwd, "affine")


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * out * (1.0 - out))

    return _result(out, (x,), bwd, "sigmoid")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * (x.data > 0))

    return _result(out, (x,), bwd, "relu")


def scale_shift(x: Tensor, alpha: Tensor, beta: Tensor) -> Tensor:
    """Spatial modulation x * alpha + beta."""
    return add(mul(x, alpha), beta)


def concat_channels(tensors: Iterable[Tensor]) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat_channels: need at least one tensor")
    ref = ts[0].shape
    for t in ts[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"concat_channels: mismatched extents {t.shape} vs {ref}")
    out = np.concatenate([t.data for t in ts], axis=1)
    splits = np.cumsum([t.shape[1] for t in ts])[:-1]

    def bwd(g: np.ndarray) -> None:
        for t, gpart in zip(ts, np.split(g, splits, axis=1)):
            if t.requires_grad:
                _accum(t, gpart)

    return _result(out, ts, bwd, "concat_channels")


def channel_inner_product(a: Tensor, b: Tensor) -> Tensor:
    """Per-pixel channel inner product, normalized by channel count."""
    _check_same_shape(a, b, "channel_inner_product")
    C = a.shape[1]
    out = (a.data.astype(np.float64) * b.data).mean(axis=1, keepdims=True).astype(np.float32)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, g * b.data / np.float32(C))
        if b.requires_grad:
            _accum(b, g * a.data / np.float32(C))

    return _result(out, (a, b), bwd, "channel_inner_product")


def channel_mean(x: Tensor) -> Tensor:
    C = x.shape[1]
    out = x.data.mean(axis=1, keepdims=True, dtype=np.float64).astype(np.float32)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, np.repeat(g, C, axis=1) / np.float32(C))

    return _result(out, (x,), bwd, "channel_mean")


def channel_max(x: Tensor) -> Tensor:
    """Channel-wise max; ties route the gradient to the first max channel."""
    idx = x.data.argmax(axis=1)  # (B,H,W), first max on ties
    out = np.take_along_axis(x.data, idx[:, None], axis=1)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx[:, None], g, axis=1)
            _accum(x, gx)

    return _result(out, (x,), bwd, "channel_max")


def sum_all(x: Tensor) -> Tensor:
    out = np.full((1, 1, 1, 1), x.data.sum(dtype=np.float64), dtype=np.float32)

    def bwd(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, np.full_like(x.data, g.reshape(())[()]))

    return _result(out, (x,), bwd, "sum_all")


def mean_all(x: Tensor) -> Tensor:
    return affine(sum_all(x), 1.0 / x.data.size, 0.0)


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Elementwise binary cross-entropy on logits, numerically stable form."""
    _check_same_shape(logits, targets, "bce_with_logits")
    z = logits.data.astype(np.float64)
    t = targets.data.astype(np.float64)
    out = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def bwd(g: np.ndarray) -> None:
        if logits.requires_grad:
            p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
            _accum(logits, (g * (p - t)).astype(np.float32))
        if targets.requires_grad:
            _accum(targets, (g * -z).astype(np.float32))

    return _result(out, (logits, targets), bwd, "bce_with_logits")


class BNState:
    """Running statistics of one batch-norm layer (per-channel, shape (1,C,1,1))."""

    def __init__(self, channels: int):
        self.mean = np.zeros((1, channels, 1, 1), dtype=np.float32)
        self.var = np.ones((1, channels, 1, 1), dtype=np.float32)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState, *,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    C = x.shape[1]
    if gamma.shape != (1, C, 1, 1) or beta.shape != (1, C, 1, 1):
        raise ShapeError(f"batch_norm: scale/shift must be (1,{C},1,1)")
    use_batch_stats = training and x.shape[0] > 1
    if use_batch_stats:
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True, dtype=np.float64)
        var = ((x.data.astype(np.float64) - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
        state.mean[...] = (1 - momentum) * state.mean + momentum * mu
        state.var[...] = (1 - momentum) * state.var + momentum * var
    else:
        mu = state.mean.astype(np.float64)
        var = state.var.astype(np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = (gamma.data * xhat + beta.data).astype(np.float32)

    def bwd(g: np.ndarray) -> None:
        g64 = g.astype(np.float64)
        if gamma.requires_grad:
            _accum(gamma, (g64 * xhat).sum(axis=(0, 2, 3), keepdims=True).astype(np.float32))
        if beta.requires_grad:
            _accum(beta, g64.sum(axis=(0, 2, 3), keepdims=True).astype(np.float32))
        if x.requires_grad:
            gy = g64 * gamma.data
            if use_batch_stats:
                n = x.data.size // C
                sum_gy = gy.sum(axis=(0, 2, 3), keepdims=True)
                sum_gy_xhat = (gy * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = inv_std / n * (n * gy - sum_gy - xhat * sum_gy_xhat)
            else:
                gx = gy * inv_std
            _accum(x, gx.astype(np.float32))

    return _result(out, (x, gamma, beta), bwd, "batch_norm")
