"""Differentiable CNN operations on NCHW tensors.

Convolution is lowered to a matrix multiply over im2col patches; pooling works
on strided window views. Each op records its own backward rule on the active
tape.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, make_result
from .errors import DegenerateBatchError, LabelError, ParameterError, ShapeError
from .rng import generator


def _check_mode(mode: str) -> None:
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    return (size - kernel) // stride + 1


def _im2col(xp: np.ndarray, r: int, s: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xp, (r, s), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * r * s)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: str = "valid",
) -> Tensor:
    """2-D cross-correlation of ``x`` [B,C,M,N] with ``weight`` [F,C,r,s]."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {list(x.shape)}, {list(weight.shape)}")
    if padding not in ("valid", "same"):
        raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    B, C, M, N = x.shape
    F, Cw, r, s = weight.shape
    if C != Cw:
        raise ShapeError(f"conv2d: input has {C} channels, kernel expects {Cw}")

    if padding == "same":
        pt, pb = same_padding(M, r, stride)
        pl, pr = same_padding(N, s, stride)
    else:
        pt = pb = pl = pr = 0
    Mp, Np = M + pt + pb, N + pl + pr
    if r > Mp or s > Np:
        raise ShapeError(f"conv2d: kernel {r}x{s} larger than padded input {Mp}x{Np}")

    xd = x.data
    if pt or pb or pl or pr:
        xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    else:
        xp = xd
    ho = (Mp - r) // stride + 1
    wo = (Np - s) // stride + 1
    cols = _im2col(xp, r, s, stride)
    wmat = weight.data.reshape(F, -1)
    out = cols @ wmat.T
    if bias is not None:
        if bias.shape != (F,):
            raise ShapeError(f"conv2d: bias shape {list(bias.shape)} != [{F}]")
        out = out + bias.data
    out = out.reshape(B, ho, wo, F).transpose(0, 3, 1, 2)

    def backward_fn(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, F)
        dw = (gm.T @ cols).reshape(weight.shape)
        db = gm.sum(axis=0) if bias is not None else None
        dcols = (gm @ wmat).reshape(B, ho, wo, C, r, s)
        dxp = np.zeros(xp.shape, dtype=xd.dtype)
        for u in range(r):
            for v in range(s):
                dxp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += (
                    dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
                )
        dx = dxp[:, :, pt : pt + M, pl : pl + N]
        return (dx, dw, db)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(np.ascontiguousarray(out), inputs, backward_fn)


def pool_output_size(size: int, window: int, stride: int) -> int:
    return (size - window) // stride + 1


def pool2d(x: Tensor, kind: str, window: int = 2, stride: int = 2) -> Tensor:
    """Max or average pooling over ``window``x``window`` patches.

    Max-pool ties route the gradient to the first maximizer in row-major
    window order.
    """
    if kind not in ("max", "avg"):
        raise ValueError(f"pool kind must be 'max' or 'avg', got {kind!r}")
    if x.ndim != 4:
        raise ShapeError(f"pool2d expects a 4-D input, got {list(x.shape)}")
    if window < 1 or stride < 1:
        raise ShapeError("pool window and stride must be >= 1")
    B, C, M, N = x.shape
    if window > M or window > N:
        raise ShapeError(f"pool window {window} exceeds input {M}x{N}")
    t = window
    ho = pool_output_size(M, t, stride)
    wo = pool_output_size(N, t, stride)
    win = sliding_window_view(x.data, (t, t), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(B, C, ho, wo, t * t)
    dtype = x.dtype

    if kind == "avg":
        out = flat.sum(axis=-1) / dtype.type(t * t)

        def backward_fn(g):
            dx = np.zeros(x.shape, dtype=dtype)
            share = g / dtype.type(t * t)
            for u in range(t):
                for v in range(t):
                    dx[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += share
            return (dx,)

    else:
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def backward_fn(g):
            dx = np.zeros(x.shape, dtype=dtype)
            for u in range(t):
                for v in range(t):
                    hit = arg == u * t + v
                    dx[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += g * hit
            return (dx,)

    return make_result(np.ascontiguousarray(out, dtype=dtype), (x,), backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects a 4-D input, got {list(x.shape)}")
    B, C, H, W = x.shape
    n = x.dtype.type(H * W)
    out = x.data.mean(axis=(2, 3))
    return make_result(
        out,
        (x,),
        lambda g: (np.broadcast_to((g / n)[:, :, None, None], x.shape).copy(),),
    )


def flatten(x: Tensor) -> Tensor:
    b = x.shape[0]
    old = x.shape
    return make_result(x.data.reshape(b, -1), (x,), lambda g: (g.reshape(old),))


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.9,
) -> Tensor:
    """Per-channel batch normalization of an NCHW tensor.

    In train mode the running statistics (plain arrays) are updated in place
    as ``running = momentum * running + (1 - momentum) * batch``.
    """
    _check_mode(mode)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm expects a 4-D input, got {list(x.shape)}")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm: gamma/beta must have shape [{C}]")
    dtype = x.dtype
    g4 = gamma.data.reshape(1, C, 1, 1)
    b4 = beta.data.reshape(1, C, 1, 1)

    if mode == "infer":
        inv_std = 1.0 / np.sqrt(running_var.astype(dtype) + dtype.type(eps))
        xhat = (x.data - running_mean.astype(dtype).reshape(1, C, 1, 1)) * inv_std.reshape(1, C, 1, 1)
        out = g4 * xhat + b4

        def backward_fn(g):
            return (
                g * g4 * inv_std.reshape(1, C, 1, 1),
                (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)),
            )

        return make_result(out.astype(dtype), (x, gamma, beta), backward_fn)

    n = B * H * W
    if n < 2:
        raise DegenerateBatchError("train-mode batchnorm needs at least 2 values per channel")
    mean = x.data.mean(axis=(0, 2, 3))
    centered = x.data - mean.reshape(1, C, 1, 1)
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv_std = (1.0 / np.sqrt(var + dtype.type(eps))).astype(dtype)
    xhat = centered * inv_std.reshape(1, C, 1, 1)
    out = g4 * xhat + b4

    running_mean *= momentum
    running_mean += (1.0 - momentum) * mean
    running_var *= momentum
    running_var += (1.0 - momentum) * var

    def backward_fn(g):
        dbeta = g.sum(axis=(0, 2, 3))
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dxhat = g * g4
        s1 = dxhat.sum(axis=(0, 2, 3)).reshape(1, C, 1, 1)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, C, 1, 1)
        dx = (inv_std.reshape(1, C, 1, 1) / dtype.type(n)) * (n * dxhat - s1 - xhat * s2)
        return (dx, dgamma, dbeta)

    return make_result(out.astype(dtype), (x, gamma, beta), backward_fn)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` for ``x`` [B,in] and ``weight`` [in,out]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {list(x.shape)} does not match weight {list(weight.shape)}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense: bias shape {list(bias.shape)} != [{weight.shape[1]}]")
        out = out + bias.data

    def backward_fn(g):
        return (g @ wd.T, xd.T @ g, g.sum(axis=0) if bias is not None else None)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, backward_fn)


def dropout(x: Tensor, rate: float, mode: str = "train", seed=0) -> Tensor:
    """Inverted dropout; identity in infer mode or at rate 0.

    ``seed`` may be an int or a tuple of ints.
    """
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return make_result(x.data.copy(), (x,), lambda g: (g,))
    keys = seed if isinstance(seed, (tuple, list)) else (seed,)
    keep = generator(*keys).random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy of max-shifted softmax probabilities.

    Returns ``(loss, probs)``; the loss gradient wrt logits is
    ``(probs - onehot) / B``.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [B, K], got {list(logits.shape)}")
    B, K = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != B or B < 1:
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {B}")
    if labels.min() < 0 or labels.max() >= K:
        raise LabelError(f"labels must lie in [0, {K}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    probs = np.exp(log_probs)
    rows = np.arange(B)
    loss = -log_probs[rows, labels].mean()

    def backward_fn(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / B),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward_fn), probs
