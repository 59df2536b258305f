"""Pure-numpy conv/pool kernels, API-compatible with the compiled core.

Convolutions use im2col + matmul over batch chunks sized to keep the
packed column tensor within a few tens of megabytes. Results match the
compiled backend up to floating-point summation order.
"""
import numpy as np

BACKEND = "numpy"

_CHUNK_BYTES = 32 * 2**20


def _chunk_size(n, k, m):
    per_sample = k * m * 8
    return max(1, min(n, int(_CHUNK_BYTES // max(per_sample, 1))))


def _im2col(xp, kh, kw, sh, sw, ho, wo):
    # xp: (n, cin, hp, wp) -> cols (n, cin*kh*kw, ho*wo)
    n, cin = xp.shape[:2]
    cols = np.empty((n, cin, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
    return cols.reshape(n, cin * kh * kw, ho * wo)


def conv2d_forward(x, w, b, stride, padding):
    """Cross-correlation of (N,Cin,H,W) with (Cout,Cin,kh,kw) -> (N,Cout,Ho,Wo)."""
    sh, sw = stride
    ph, pw = padding
    n, cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wid + 2 * pw - kw) // sw + 1
    k = cin * kh * kw
    w2 = w.reshape(cout, k)
    out = np.empty((n, cout, ho, wo))
    step = _chunk_size(n, k, ho * wo)
    for s in range(0, n, step):
        e = min(n, s + step)
        cols = _im2col(xp[s:e], kh, kw, sh, sw, ho, wo)
        out[s:e] = (w2 @ cols).reshape(e - s, cout, ho, wo)
    out += b.reshape(1, cout, 1, 1)
    return out


def conv2d_backward(x, w, dy, stride, padding, need_dx=True):
    """Gradients of conv2d_forward w.r.t. input and weight -> (dx, dw)."""
    sh, sw = stride
    ph, pw = padding
    n, cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = dy.shape[2:]
    k = cin * kh * kw
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    w2 = w.reshape(cout, k)
    dw = np.zeros((cout, k))
    dxp = np.zeros(xp.shape) if need_dx else None
    step = _chunk_size(n, k, ho * wo)
    for s in range(0, n, step):
        e = min(n, s + step)
        cols = _im2col(xp[s:e], kh, kw, sh, sw, ho, wo)
        dyf = dy[s:e].reshape(e - s, cout, ho * wo)
        dw += np.einsum("nom,nkm->ok", dyf, cols, optimize=True)
        if need_dx:
            dcols = (w2.T @ dyf).reshape(e - s, cin, kh, kw, ho, wo)
            for i in range(kh):
                for j in range(kw):
                    dxp[s:e, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += dcols[:, :, i, j]
    dx = None
    if need_dx:
        dx = dxp[:, :, ph:ph + h, pw:pw + wid]
        if ph or pw:
            dx = np.ascontiguousarray(dx)
    return dx, dw.reshape(cout, cin, kh, kw)


def _windows(x, kh, kw, sh, sw, ho, wo):
    n, c = x.shape[:2]
    sn, sc, sy, sx = x.strides
    v = np.lib.stride_tricks.as_strided(
        x, (n, c, ho, wo, kh, kw), (sn, sc, sy * sh, sx * sw, sy, sx))
    return v.reshape(n, c, ho, wo, kh * kw)


def maxpool2d_forward(x, kernel, stride):
    """Max pooling with floor semantics; ties go to the first cell in
    row-major window order (numpy argmax convention).

    Returns (out, idx); idx is the flat H*W index of each argmax cell.
    """
    kh, kw = kernel
    sh, sw = stride
    n, c, h, w = x.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    win = _windows(x, kh, kw, sh, sw, ho, wo)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    ys = (np.arange(ho) * sh)[:, None] + np.zeros(wo, dtype=np.int64)
    xs = (np.arange(wo) * sw)[None, :] + np.zeros((ho, 1), dtype=np.int64)
    gy = ys[None, None] + local // kw
    gx = xs[None, None] + local % kw
    idx = gy * w + gx
    return out, idx.astype(np.int64)


def maxpool2d_backward(x_shape, idx, dy):
    """Scatter dy back to the argmax cells recorded by maxpool2d_forward."""
    n, c, h, w = x_shape
    dx = np.zeros((n, c, h * w))
    np.add.at(dx, (np.arange(n)[:, None, None, None],
                   np.arange(c)[None, :, None, None], idx), dy)
    return dx.reshape(n, c, h, w)
