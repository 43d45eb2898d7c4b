"""Network primitives: convolution, pooling, affine, softmax, resize."""

import numpy as np

from .. import kernels
from ..errors import ShapeError
from .tensor import Tensor, as_tensor, reshape

PADDING_MODES = ("replicate", "zeros", "valid")


def _as_batch(x):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected (C,H,W) or (N,C,H,W) input, got {x.shape}")


def _unpad_replicate(gp, ph, pw):
    """Adjoint of edge padding: fold border gradients onto the edge pixels."""
    hp, wp = gp.shape[2], gp.shape[3]
    rows = gp[:, :, ph:hp - ph, :].copy()
    if ph:
        rows[:, :, 0, :] += gp[:, :, :ph, :].sum(axis=2)
        rows[:, :, -1, :] += gp[:, :, hp - ph:, :].sum(axis=2)
    out = rows[:, :, :, pw:wp - pw].copy()
    if pw:
        out[:, :, :, 0] += rows[:, :, :, :pw].sum(axis=3)
        out[:, :, :, -1] += rows[:, :, :, wp - pw:].sum(axis=3)
    return out


def conv2d(x, weight, bias=None, stride=1, padding="replicate"):
    """2-D cross-correlation of ``x`` (C,H,W or N,C,H,W) with ``weight`` (F,C,kh,kw).

    ``padding`` is ``"replicate"`` (edge), ``"zeros"`` or ``"valid"``; the
    first two pad by ``k // 2`` on each side.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if padding not in PADDING_MODES:
        raise ShapeError(f"unknown padding mode {padding!r}")
    xb, squeeze = _as_batch(x)
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-D, got {weight.shape}")
    f, c, kh, kw = weight.shape
    n, cin, h, w = xb.shape
    if cin != c:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {c}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (f,):
            raise ShapeError(f"conv2d bias shape {bias.shape} != ({f},)")
    ph, pw = (0, 0) if padding == "valid" else (kh // 2, kw // 2)
    mode = "edge" if padding == "replicate" else "constant"
    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode=mode) if (ph or pw) else xb
    xp = np.ascontiguousarray(xp)
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: input {xb.shape[2:]} smaller than kernel {(kh, kw)}")
    oh = (xp.shape[2] - kh) // stride + 1
    ow = (xp.shape[3] - kw) // stride + 1
    cols = kernels.im2col(xp, kh, kw, stride)
    w2 = weight.data.reshape(f, c * kh * kw)
    out = (cols.reshape(-1, c * kh * kw) @ w2.T).reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    if squeeze:
        out = out[0]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gb = g[None] if squeeze else g
        g2 = gb.transpose(0, 2, 3, 1).reshape(n, oh * ow, f)
        gx = gw = gbias = None
        if x.requires_grad:
            dcols = np.ascontiguousarray((g2.reshape(-1, f) @ w2).reshape(n, oh * ow, c * kh * kw))
            gxp = kernels.col2im(dcols, xp.shape, kh, kw, stride)
            if padding == "replicate":
                gx = _unpad_replicate(gxp, ph, pw)
            else:
                gx = gxp[:, :, ph:ph + h, pw:pw + w]
            if squeeze:
                gx = gx[0]
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gbias = gb.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gbias)

    return Tensor._wrap(out, parents, bw, "conv2d")


def maxpool2d(x, size=2):
    x = as_tensor(x)
    xb, squeeze = _as_batch(x)
    if xb.shape[2] < size or xb.shape[3] < size:
        raise ShapeError(f"maxpool2d: input {xb.shape[2:]} smaller than window {size}")
    out, arg = kernels.maxpool2d_forward(np.ascontiguousarray(xb), size)
    shape = xb.shape

    def bw(g):
        gb = np.ascontiguousarray(g[None] if squeeze else g)
        gx = kernels.maxpool2d_backward(gb, arg, shape, size)
        return (gx[0] if squeeze else gx,)

    return Tensor._wrap(out[0] if squeeze else out, (x,), bw, "maxpool2d")


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for ``x`` of shape (D,) or (N, D)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1] or x.ndim not in (1, 2):
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = np.outer(g, x.data) if x.ndim == 1 else g.T @ x.data
        if bias is None:
            return gx, gw
        gbias = (g if g.ndim == 1 else g.sum(axis=0)) if bias.requires_grad else None
        return gx, gw, gbias

    return Tensor._wrap(out, parents, bw, "linear")


def softmax(u, axis=-1):
    """Numerically stable softmax along ``axis``."""
    u = as_tensor(u)
    if u.shape[axis] < 2:
        raise ShapeError("softmax needs at least two classes")
    z = u.data - u.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._wrap(y, (u,), bw, "softmax")


def flatten(x, start=1):
    return reshape(x, x.shape[:start] + (-1,))


def resize_pad(x, size, offset):
    """Nearest-neighbour resize to ``size`` then zero-pad back to the input size.

    ``x`` is (N,C,H,W); ``size`` = (nh, nw) <= (H, W); ``offset`` = (top, left)
    places the resized image inside the zero canvas.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"resize_pad expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    nh, nw = size
    top, left = offset
    if not (0 < nh <= h and 0 < nw <= w and 0 <= top <= h - nh and 0 <= left <= w - nw):
        raise ShapeError(f"resize_pad: size {size} / offset {offset} do not fit {h}x{w}")
    ri = (np.arange(nh) * h) // nh
    ci = (np.arange(nw) * w) // nw
    out = np.zeros_like(x.data)
    out[:, :, top:top + nh, left:left + nw] = x.data[:, :, ri][:, :, :, ci]

    def bw(g):
        inner = g[:, :, top:top + nh, left:left + nw]
        rows = np.zeros((n, c, h, nw))
        np.add.at(rows, (slice(None), slice(None), ri), inner)
        gx = np.zeros((n, c, h, w))
        np.add.at(gx, (slice(None), slice(None), slice(None), ci), rows)
        return (gx,)

    return Tensor._wrap(out, (x,), bw, "resize_pad")
