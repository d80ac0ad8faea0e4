"""Forward/backward kernels for every layer type the model uses.

Tensors are plain numpy arrays (row-major, float32 for training, float64 for
gradient checks).  Each op comes as a ``*_forward`` function returning
``(output, ctx)`` and a ``*_backward`` function taking that ctx plus the
upstream gradient.  The bare name (``conv1d``, ``batchnorm``, ...) is a
convenience wrapper returning only the output.

Conventions: convolutions are cross-correlations (no kernel flip) with zero
padding; batch-norm uses biased variance everywhere; max-pool ties route the
gradient to the first maximum; ReLU has subgradient 0 at 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float32

BONAFIDE = 1
SPOOF = 0


@dataclass
class LayerGrads:
    d_input: np.ndarray
    d_params: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class BnState:
    """Affine parameters and running statistics of one batch-norm layer."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"

    @classmethod
    def fresh(cls, channels: int, dtype=DTYPE, **kwargs) -> "BnState":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            **kwargs,
        )


def out_length(n: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    """Output length of a convolution along one axis (floor rule)."""
    span = dilation * (kernel - 1) + 1
    if n + 2 * padding < span:
        raise ValueError(
            f"input length {n} with padding {padding} is shorter than the "
            f"dilated kernel span {span}"
        )
    return (n + 2 * padding - span) // stride + 1


def _check_conv_args(kernel, stride, dilation):
    if kernel < 1 or stride < 1 or dilation < 1:
        raise ValueError(
            f"kernel, stride and dilation must be >= 1 (got {kernel}, {stride}, {dilation})"
        )


# ---------------------------------------------------------------------------
# conv1d


def conv1d_forward(x, weight, bias, stride=1, padding=0, dilation=1):
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects [B,Cin,L] input and [Cout,Cin,K] weight, got {x.shape} and {weight.shape}")
    B, cin, L = x.shape
    cout, cin_w, K = weight.shape
    if cin != cin_w:
        raise ValueError(f"conv1d channel mismatch: input {x.shape} has {cin} channels, weight {weight.shape} expects {cin_w}")
    if bias.shape != (cout,):
        raise ValueError(f"conv1d bias shape {bias.shape} does not match weight {weight.shape}")
    _check_conv_args(K, stride, dilation)
    lout = out_length(L, K, stride, padding, dilation)

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    cols = np.empty((B, cin, K, lout), dtype=x.dtype)
    last = stride * (lout - 1) + 1
    for k in range(K):
        start = k * dilation
        cols[:, :, k, :] = xp[:, :, start:start + last:stride]
    cols = cols.reshape(B, cin * K, lout)
    w2 = weight.reshape(cout, cin * K)
    out = np.matmul(w2, cols) + bias[None, :, None]
    ctx = (x.shape, weight, cols, stride, padding, dilation, lout)
    return out, ctx


def conv1d_backward(ctx, d_out) -> LayerGrads:
    (B, cin, L), weight, cols, stride, padding, dilation, lout = ctx
    cout, _, K = weight.shape
    if d_out.shape != (B, cout, lout):
        raise ValueError(f"conv1d d_output shape {d_out.shape} != forward output {(B, cout, lout)}")
    d_w = np.tensordot(d_out, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
    d_b = d_out.sum(axis=(0, 2))
    d_cols = np.matmul(weight.reshape(cout, cin * K).T, d_out).reshape(B, cin, K, lout)
    d_xp = np.zeros((B, cin, L + 2 * padding), dtype=d_out.dtype)
    last = stride * (lout - 1) + 1
    for k in range(K):
        start = k * dilation
        d_xp[:, :, start:start + last:stride] += d_cols[:, :, k, :]
    d_x = d_xp[:, :, padding:padding + L] if padding else d_xp
    return LayerGrads(np.ascontiguousarray(d_x), {"weight": d_w, "bias": d_b})


def conv1d(x, weight, bias, stride=1, padding=0, dilation=1):
    return conv1d_forward(x, weight, bias, stride, padding, dilation)[0]


# ---------------------------------------------------------------------------
# conv2d


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects [B,Cin,H,W] input and [Cout,Cin,Kh,Kw] weight, got {x.shape} and {weight.shape}")
    B, cin, H, W = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} has {cin} channels, weight {weight.shape} expects {cin_w}")
    if bias.shape != (cout,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match weight {weight.shape}")
    _check_conv_args(min(kh, kw), stride, 1)
    hout = out_length(H, kh, stride, padding)
    wout = out_length(W, kw, stride, padding)

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = np.empty((B, cin, kh, kw, hout, wout), dtype=x.dtype)
    hl, wl = stride * (hout - 1) + 1, stride * (wout - 1) + 1
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + hl:stride, j:j + wl:stride]
    cols = cols.reshape(B, cin * kh * kw, hout * wout)
    out = np.matmul(weight.reshape(cout, -1), cols) + bias[None, :, None]
    ctx = (x.shape, weight, cols, stride, padding, hout, wout)
    return out.reshape(B, cout, hout, wout), ctx


def conv2d_backward(ctx, d_out) -> LayerGrads:
    (B, cin, H, W), weight, cols, stride, padding, hout, wout = ctx
    cout, _, kh, kw = weight.shape
    if d_out.shape != (B, cout, hout, wout):
        raise ValueError(f"conv2d d_output shape {d_out.shape} != forward output {(B, cout, hout, wout)}")
    d2 = d_out.reshape(B, cout, hout * wout)
    d_w = np.tensordot(d2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
    d_b = d2.sum(axis=(0, 2))
    d_cols = np.matmul(weight.reshape(cout, -1).T, d2).reshape(B, cin, kh, kw, hout, wout)
    d_xp = np.zeros((B, cin, H + 2 * padding, W + 2 * padding), dtype=d_out.dtype)
    hl, wl = stride * (hout - 1) + 1, stride * (wout - 1) + 1
    for i in range(kh):
        for j in range(kw):
            d_xp[:, :, i:i + hl:stride, j:j + wl:stride] += d_cols[:, :, i, j]
    d_x = d_xp[:, :, padding:padding + H, padding:padding + W] if padding else d_xp
    return LayerGrads(np.ascontiguousarray(d_x), {"weight": d_w, "bias": d_b})


def conv2d(x, weight, bias, stride=1, padding=0):
    return conv2d_forward(x, weight, bias, stride, padding)[0]


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm_forward(x, state: BnState):
    """Normalize per channel (axis 1) over the batch and all trailing axes.

    In train mode the running statistics of ``state`` are updated in place.
    """
    if state.eps <= 0:
        raise ValueError(f"batchnorm eps must be positive, got {state.eps}")
    if x.ndim < 2 or x.shape[1] != state.gamma.shape[0]:
        raise ValueError(f"batchnorm input {x.shape} does not match {state.gamma.shape[0]} channels")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    n = x.size // x.shape[1]

    if state.mode == "train":
        if n < 2:
            raise ValueError(f"batchnorm in train mode needs >= 2 values per channel, got {n}")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean
        state.running_var[...] = (1 - m) * state.running_var + m * var
    elif state.mode == "eval":
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown batchnorm mode {state.mode!r}")

    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = x_hat * state.gamma.reshape(bshape) + state.beta.reshape(bshape)
    ctx = (x_hat, inv_std.astype(x.dtype), state.gamma, state.mode, axes, bshape, n)
    return out.astype(x.dtype, copy=False), ctx


def batchnorm_backward(ctx, d_out) -> LayerGrads:
    x_hat, inv_std, gamma, mode, axes, bshape, n = ctx
    if d_out.shape != x_hat.shape:
        raise ValueError(f"batchnorm d_output shape {d_out.shape} != {x_hat.shape}")
    d_gamma = (d_out * x_hat).sum(axis=axes)
    d_beta = d_out.sum(axis=axes)
    d_xhat = d_out * gamma.reshape(bshape)
    if mode == "train":
        d_x = (inv_std.reshape(bshape) / n) * (
            n * d_xhat
            - d_xhat.sum(axis=axes).reshape(bshape)
            - x_hat * (d_xhat * x_hat).sum(axis=axes).reshape(bshape)
        )
    else:
        d_x = d_xhat * inv_std.reshape(bshape)
    return LayerGrads(d_x, {"gamma": d_gamma, "beta": d_beta})


def batchnorm(x, state: BnState):
    return batchnorm_forward(x, state)[0]


# ---------------------------------------------------------------------------
# pooling, activations


def maxpool1d_forward(x, size: int):
    B, C, L = x.shape
    if size < 1 or L % size:
        raise ValueError(f"maxpool1d: length {L} is not divisible by pool size {size}")
    windows = x.reshape(B, C, L // size, size)
    idx = windows.argmax(axis=-1)  # first maximum on ties
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx, size)


def maxpool1d_backward(ctx, d_out) -> LayerGrads:
    shape, idx, size = ctx
    B, C, L = shape
    if d_out.shape != (B, C, L // size):
        raise ValueError(f"maxpool1d d_output shape {d_out.shape} != {(B, C, L // size)}")
    d_x = np.zeros((B, C, L // size, size), dtype=d_out.dtype)
    np.put_along_axis(d_x, idx[..., None], d_out[..., None], axis=-1)
    return LayerGrads(d_x.reshape(shape))


def maxpool1d(x, size: int):
    return maxpool1d_forward(x, size)[0]


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, d_out) -> LayerGrads:
    if d_out.shape != mask.shape:
        raise ValueError(f"relu d_output shape {d_out.shape} != {mask.shape}")
    return LayerGrads(d_out * mask)


def relu(x):
    return relu_forward(x)[0]


def adaptive_avg_pool_1x1_forward(x):
    if x.ndim != 4:
        raise ValueError(f"adaptive_avg_pool_1x1 expects [B,C,H,W], got {x.shape}")
    return x.mean(axis=(2, 3)), x.shape


def adaptive_avg_pool_1x1_backward(shape, d_out) -> LayerGrads:
    B, C, H, W = shape
    if d_out.shape != (B, C):
        raise ValueError(f"avg-pool d_output shape {d_out.shape} != {(B, C)}")
    d_x = np.broadcast_to((d_out / (H * W))[:, :, None, None], shape).copy()
    return LayerGrads(d_x)


def adaptive_avg_pool_1x1(x):
    return adaptive_avg_pool_1x1_forward(x)[0]


# ---------------------------------------------------------------------------
# linear + loss


def linear_forward(x, weight, bias):
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"linear bias shape {bias.shape} does not match weight {weight.shape}")
    return x @ weight.T + bias, (x, weight)


def linear_backward(ctx, d_out) -> LayerGrads:
    x, weight = ctx
    if d_out.shape != (x.shape[0], weight.shape[0]):
        raise ValueError(f"linear d_output shape {d_out.shape} != {(x.shape[0], weight.shape[0])}")
    return LayerGrads(d_out @ weight, {"weight": d_out.T @ x, "bias": d_out.sum(axis=0)})


def linear(x, weight, bias):
    return linear_forward(x, weight, bias)[0]


def log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy_logits(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    Labels are class indices; index 1 is bonafide, index 0 is spoof.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ValueError(f"expected [B,2] logits, got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError(f"labels must be 0 (spoof) or 1 (bonafide), got {sorted(set(labels.tolist()))}")
    labels = labels.astype(np.int64)
    B = logits.shape[0]
    logp = log_softmax(logits)
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()
    d_logits = np.exp(logp)
    d_logits[rows, labels] -= 1
    d_logits /= B
    return float(loss), d_logits.astype(logits.dtype, copy=False)
