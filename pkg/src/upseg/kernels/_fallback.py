"""Pure-numpy im2col / col2im, the reference implementation of the hot kernels.

Both backends must produce bit-identical results: im2col is pure data
movement, and col2im accumulates each output cell in ascending kernel-offset
order, which is the same order the compiled kernel uses.
"""

import numpy as np


def im2col(x, kh, kw, stride, pad):
    """Unfold (N, C, H, W) into patch columns of shape (N, C*kh*kw, OH*OW)."""
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad > 0:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=np.float64)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, :, ky, kx] = xp[:, :, ky:ky + stride * oh:stride,
                                    kx:kx + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of im2col: scatter-add patch columns back onto (N, C, H, W)."""
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for ky in range(kh):
        for kx in range(kw):
            xp[:, :, ky:ky + stride * oh:stride,
               kx:kx + stride * ow:stride] += cols[:, :, ky, kx]
    if pad > 0:
        return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])
    return xp
