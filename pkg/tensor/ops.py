"""
Differentiable operators on NCHW tensors.

Every operator validates shapes up front (ShapeError naming both shapes),
computes the forward with numpy and registers a backward closure through
make_node. Reductions run in a fixed order so results are deterministic.
"""
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DataError, ShapeError
from tensor.core import Tensor, accumulate_grad, make_node


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype), dtype=like.dtype)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _require_ndim(name: str, t: Tensor, ndim: int) -> None:
    if t.ndim != ndim:
        raise ShapeError(f"{name}: expected a {ndim}-D tensor, got shape {t.shape}")


# ---------------------------------------------------------------------------
# Elementwise and shape operators
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(g, a.shape))
        accumulate_grad(b, _unbroadcast(g, b.shape))

    return make_node(data, (a, b), backward_fn, "add")


def sub(a, b) -> Tensor:
    return add(a, mul(_lift(b, a), -1.0))


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(g * b.data, a.shape))
        accumulate_grad(b, _unbroadcast(g * a.data, b.shape))

    return make_node(data, (a, b), backward_fn, "mul")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {original} as {tuple(shape)}")

    def backward_fn(g):
        accumulate_grad(x, g.reshape(original))

    return make_node(data, (x,), backward_fn, "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    data = np.ascontiguousarray(x.data.transpose(axes))

    def backward_fn(g):
        accumulate_grad(x, g.transpose(inverse))

    return make_node(data, (x,), backward_fn, "transpose")


def swap_axes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: no tensors given")
    reference = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(reference) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, reference)) if i != axis
        ):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {reference} along axis {axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward_fn(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            accumulate_grad(t, g[tuple(index)])

    return make_node(data, tensors, backward_fn, "concat")


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        data = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}")

    def backward_fn(g):
        accumulate_grad(x, _unbroadcast(g, x.shape))

    return make_node(data, (x,), backward_fn, "broadcast_to")


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward_fn(g):
        accumulate_grad(x, np.broadcast_to(g, x.shape).astype(x.dtype))

    return make_node(data, (x,), backward_fn, "sum")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    data = np.where(mask, x.data, 0).astype(x.dtype)

    def backward_fn(g):
        accumulate_grad(x, g * mask)

    return make_node(data, (x,), backward_fn, "relu")


# ---------------------------------------------------------------------------
# Dense and convolutional operators
# ---------------------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    _require_ndim("linear input", x, 2)
    _require_ndim("linear weight", w, 2)
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias shape {b.shape} does not match weight shape {w.shape}")
    data = x.data @ w.data.T
    if b is not None:
        data = data + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        accumulate_grad(x, g @ w.data)
        accumulate_grad(w, g.T @ x.data)
        if b is not None:
            accumulate_grad(b, g.sum(axis=0))

    return make_node(data, parents, backward_fn, "linear")


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def im2col(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    """Padded input [N,Cin,Hp,Wp] to a contiguous [N*Ho*Wo, Cin*kh*kw] patch matrix."""
    n, cin = xp.shape[:2]
    span_h, span_w = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    windows = sliding_window_view(xp, (span_h, span_w), axis=(2, 3))
    windows = windows[:, :, :stride * (ho - 1) + 1:stride, :stride * (wo - 1) + 1:stride, ::dilation, ::dilation]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)


def col2im(
    cols: np.ndarray,
    padded_shape: Tuple[int, ...],
    kh: int,
    kw: int,
    stride: int,
    dilation: int,
    ho: int,
    wo: int,
) -> np.ndarray:
    """Scatter-add a [N*Ho*Wo, Cin*kh*kw] patch gradient back onto the padded input."""
    n, cin = padded_shape[:2]
    patches = cols.reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            r0, c0 = a * dilation, b * dilation
            out[:, :, r0:r0 + stride * (ho - 1) + 1:stride, c0:c0 + stride * (wo - 1) + 1:stride] += patches[:, :, a, b]
    return out


def conv2d(
    x: Tensor,
    w: Tensor,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    bias: Optional[Tensor] = None,
) -> Tensor:
    """Cross-correlation of x[N,Cin,H,W] with w[Cout,Cin,kh,kw] as one matmul over an im2col matrix."""
    _require_ndim("conv2d input", x, 4)
    _require_ndim("conv2d weight", w, 4)
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if cin != wcin:
        raise ShapeError(f"conv2d: input shape {x.shape} incompatible with weight shape {w.shape} (Cin {cin} vs {wcin})")
    if kh < 1 or kw < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid geometry kernel={kh}x{kw} stride={stride} padding={padding} dilation={dilation}")
    span_h, span_w = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    if h + 2 * padding < span_h or wd + 2 * padding < span_w:
        raise ShapeError(f"conv2d: input shape {x.shape} too small for weight shape {w.shape} with padding {padding}, dilation {dilation}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match weight shape {w.shape}")

    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(wd, kw, stride, padding, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if kh == 1 and kw == 1 and stride == 1:
        cols = np.ascontiguousarray(xp.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cin)
    else:
        cols = im2col(xp, kh, kw, stride, dilation, ho, wo)
    w_rows = w.data.reshape(cout, -1)
    out = cols @ w_rows.T
    data = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    if bias is not None:
        data = data + bias.data[None, :, None, None]
    parents = (x, w) if bias is None else (x, w, bias)

    def backward_fn(g):
        g_rows = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        if w.requires_grad:
            accumulate_grad(w, (g_rows.T @ cols).reshape(w.shape))
        if bias is not None:
            accumulate_grad(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = col2im(g_rows @ w_rows, xp.shape, kh, kw, stride, dilation, ho, wo)
            accumulate_grad(x, gxp[:, :, padding:padding + h, padding:padding + wd])

    return make_node(data, parents, backward_fn, "conv2d")


def depthwise_conv2d_per_sample(
    x: Tensor,
    k: Tensor,
    padding: Optional[int] = None,
    dilation: int = 1,
) -> Tensor:
    """
    Depthwise convolution with a distinct kernel for every (sample, channel).

    x is [N,C,H,W], k is [N,C,kh,kw]; output[n,c] = x[n,c] (*) k[n,c] with zero
    padding. The default padding dilation*(kh-1)/2 preserves the spatial size.
    """
    _require_ndim("depthwise input", x, 4)
    _require_ndim("depthwise kernel bank", k, 4)
    n, c, h, wd = x.shape
    kn, kc, kh, kw = k.shape
    if (n, c) != (kn, kc):
        raise ShapeError(f"depthwise_conv2d_per_sample: input shape {x.shape} incompatible with kernel bank shape {k.shape}")
    if padding is None:
        padding = dilation * (kh - 1) // 2
    ho = conv_output_size(h, kh, 1, padding, dilation)
    wo = conv_output_size(wd, kw, 1, padding, dilation)
    if ho < 1 or wo < 1:
        raise ShapeError(f"depthwise_conv2d_per_sample: input shape {x.shape} too small for kernel bank shape {k.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    data = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            r0, c0 = a * dilation, b * dilation
            data += xp[:, :, r0:r0 + ho, c0:c0 + wo] * k.data[:, :, a, b, None, None]

    def backward_fn(g):
        gk = np.zeros_like(k.data)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for a in range(kh):
            for b in range(kw):
                r0, c0 = a * dilation, b * dilation
                gk[:, :, a, b] = (g * xp[:, :, r0:r0 + ho, c0:c0 + wo]).sum(axis=(2, 3))
                if gxp is not None:
                    gxp[:, :, r0:r0 + ho, c0:c0 + wo] += g * k.data[:, :, a, b, None, None]
        accumulate_grad(k, gk)
        if gxp is not None:
            accumulate_grad(x, gxp[:, :, padding:padding + h, padding:padding + wd])

    return make_node(data, (x, k), backward_fn, "depthwise_conv2d_per_sample")


# ---------------------------------------------------------------------------
# Pooling and normalisation
# ---------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    _require_ndim("global_avg_pool input", x, 4)
    area = x.shape[2] * x.shape[3]
    data = x.data.mean(axis=(2, 3), keepdims=True)

    def backward_fn(g):
        accumulate_grad(x, np.broadcast_to(g / area, x.shape).astype(x.dtype))

    return make_node(data, (x,), backward_fn, "global_avg_pool")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""
    _require_ndim("max_pool2d input", x, 4)
    n, c, h, wd = x.shape
    ho, wo = h // size, wd // size
    if ho < 1 or wo < 1:
        raise ShapeError(f"max_pool2d: input shape {x.shape} smaller than window {size}")
    cropped = x.data[:, :, :ho * size, :wo * size]
    windows = cropped.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    winner = windows.argmax(axis=-1)
    data = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        scattered = np.zeros((n, c, ho, wo, size * size), dtype=x.dtype)
        np.put_along_axis(scattered, winner[..., None], g[..., None], axis=-1)
        scattered = scattered.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * size, wo * size)
        full = np.zeros_like(x.data)
        full[:, :, :ho * size, :wo * size] = scattered
        accumulate_grad(x, full)

    return make_node(data, (x,), backward_fn, "max_pool2d")


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Optional[np.ndarray],
    running_var: Optional[np.ndarray],
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    Per-channel normalisation over (N, H, W).

    Train mode normalises with batch statistics and updates the running
    buffers in place (unbiased variance); eval mode uses the running buffers,
    or (0, 1) when none are given.
    """
    _require_ndim("batch_norm2d input", x, 4)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d: input shape {x.shape} incompatible with affine shapes {gamma.shape}/{beta.shape}")
    axes = (0, 2, 3)
    count = x.shape[0] * x.shape[2] * x.shape[3]

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
        if running_var is not None:
            unbiased = var * count / (count - 1) if count > 1 else var
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        mean = running_mean if running_mean is not None else np.zeros(c, dtype=x.dtype)
        var = running_var if running_var is not None else np.ones(c, dtype=x.dtype)

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward_fn(g):
        accumulate_grad(gamma, (g * xhat).sum(axis=axes))
        accumulate_grad(beta, g.sum(axis=axes))
        if not x.requires_grad:
            return
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            term = count * gxhat - gxhat.sum(axis=axes, keepdims=True) - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            accumulate_grad(x, term * (inv_std[None, :, None, None] / count))
        else:
            accumulate_grad(x, gxhat * inv_std[None, :, None, None])

    return make_node(data.astype(x.dtype), (x, gamma, beta), backward_fn, "batch_norm2d")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_np(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax_np(logits))


def softmax_cross_entropy(
    logits: Tensor,
    labels: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> Tensor:
    """
    loss = -sum_n weights[n] * log softmax(logits[n])[labels[n]].

    Weights default to 1/N (mean reduction); they are constants, not graph inputs.
    """
    _require_ndim("softmax_cross_entropy logits", logits, 2)
    n, classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"softmax_cross_entropy: logits shape {logits.shape} incompatible with labels shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"softmax_cross_entropy: label out of range [0, {classes}): min {labels.min()}, max {labels.max()}")
    if weights is None:
        weights = np.full(n, 1.0 / max(n, 1), dtype=logits.dtype)
    else:
        weights = np.asarray(weights, dtype=logits.dtype).reshape(-1)
        if weights.shape[0] != n:
            raise ShapeError(f"softmax_cross_entropy: weights shape {weights.shape} incompatible with logits shape {logits.shape}")

    logp = log_softmax_np(logits.data)
    picked = logp[np.arange(n), labels]
    data = np.asarray(-(weights * picked).sum(), dtype=logits.dtype)

    def backward_fn(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        accumulate_grad(logits, (g * weights[:, None] * grad).astype(logits.dtype))

    return make_node(data, (logits,), backward_fn, "softmax_cross_entropy")
