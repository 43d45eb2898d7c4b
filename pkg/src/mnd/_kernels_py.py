"""Pure numpy implementations of the patch/pooling kernels.

These are the reference versions. The compiled module ``mnd._ckernels``
exposes the same four functions and must agree with them bit for bit, so
the accumulation order in ``col2im`` is fixed: kernel row, kernel column,
then output position.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride):
    """Unfold a padded batch ``(N, C, Hp, Wp)`` into ``(N, OH*OW, C*kh*kw)``."""
    n, c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]
    # (N, C, OH, OW, kh, kw) -> (N, OH, OW, C, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def col2im(cols, shape, kh, kw, stride):
    """Adjoint of :func:`im2col`; scatter-adds columns back into ``shape``."""
    n, c, hp, wp = shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    blocks = cols.reshape(n, oh, ow, c, kh, kw)
    out = np.zeros(shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
                blocks[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def maxpool2d_forward(x, size):
    n, c, h, w = x.shape
    oh, ow = h // size, w // size
    xc = x[:, :, :oh * size, :ow * size]
    win = xc.reshape(n, c, oh, size, ow, size).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, oh, ow, size * size)
    # argmax returns the first maximum: row-major tie-break inside the window
    arg = np.argmax(win, axis=-1).astype(np.int64)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2d_backward(grad, arg, shape, size):
    n, c, h, w = shape
    oh, ow = grad.shape[2], grad.shape[3]
    win = np.zeros((n, c, oh, ow, size * size), dtype=np.float64)
    np.put_along_axis(win, arg[..., None], grad[..., None], axis=-1)
    win = win.reshape(n, c, oh, ow, size, size).transpose(0, 1, 2, 4, 3, 5)
    out = np.zeros(shape, dtype=np.float64)
    out[:, :, :oh * size, :ow * size] = win.reshape(n, c, oh * size, ow * size)
    return out
