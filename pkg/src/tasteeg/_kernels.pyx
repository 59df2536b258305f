# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv/pool kernels.

Convolutions run per sample as an im2col pack followed by a BLAS dgemm,
so the packed column matrix stays cache resident. All arrays are
C-contiguous float64; dgemm is called through the Fortran-order identity
C-order(AB) == Fortran-order(B'A').
"""
from libc.string cimport memcpy, memset

from scipy.linalg.cython_blas cimport dgemm

import numpy as np

BACKEND = "compiled"


# C(m,n) = A(m,k) @ B(k,n) + beta*C, all C-contiguous
cdef void _mm_nn(const double* A, const double* B, double* C,
                 int m, int n, int k, double beta) noexcept nogil:
    cdef double one = 1.0
    cdef char cn = b'N'
    dgemm(&cn, &cn, &n, &m, &k, &one, B, &n, A, &k, &beta, C, &n)


# C(m,n) = A(k,m)^T @ B(k,n) + beta*C
cdef void _mm_tn(const double* A, const double* B, double* C,
                 int m, int n, int k, double beta) noexcept nogil:
    cdef double one = 1.0
    cdef char cn = b'N'
    cdef char ct = b'T'
    dgemm(&cn, &ct, &n, &m, &k, &one, B, &n, A, &m, &beta, C, &n)


# C(m,n) = A(m,k) @ B(n,k)^T + beta*C
cdef void _mm_nt(const double* A, const double* B, double* C,
                 int m, int n, int k, double beta) noexcept nogil:
    cdef double one = 1.0
    cdef char cn = b'N'
    cdef char ct = b'T'
    dgemm(&ct, &cn, &n, &m, &k, &one, B, &k, A, &k, &beta, C, &n)


cdef void _pad_sample(const double[:, :, :, ::1] x, double[:, :, ::1] xp,
                      int n, int ph, int pw) noexcept nogil:
    cdef int Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int c, y
    for c in range(Cin):
        for y in range(H):
            memcpy(&xp[c, y + ph, pw], &x[n, c, y, 0], W * sizeof(double))


cdef void _im2col(const double[:, :, ::1] xp, double[:, ::1] cols,
                  int kh, int kw, int sh, int sw, int Ho, int Wo) noexcept nogil:
    cdef int Cin = xp.shape[0]
    cdef int c, i, j, y, x, row
    for c in range(Cin):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for y in range(Ho):
                    if sw == 1:
                        memcpy(&cols[row, y * Wo], &xp[c, y * sh + i, j],
                               Wo * sizeof(double))
                    else:
                        for x in range(Wo):
                            cols[row, y * Wo + x] = xp[c, y * sh + i, x * sw + j]


cdef void _col2im_add(const double[:, ::1] cols, double[:, :, ::1] xp,
                      int kh, int kw, int sh, int sw, int Ho, int Wo) noexcept nogil:
    cdef int Cin = xp.shape[0]
    cdef int c, i, j, y, x, row
    cdef double* dst
    cdef const double* src
    for c in range(Cin):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for y in range(Ho):
                    src = &cols[row, y * Wo]
                    if sw == 1:
                        dst = &xp[c, y * sh + i, j]
                        for x in range(Wo):
                            dst[x] += src[x]
                    else:
                        for x in range(Wo):
                            xp[c, y * sh + i, x * sw + j] += src[x]


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, double[::1] b,
                   stride, padding):
    """Cross-correlation of (N,Cin,H,W) with (Cout,Cin,kh,kw) -> (N,Cout,Ho,Wo)."""
    cdef int sh = stride[0], sw = stride[1], ph = padding[0], pw = padding[1]
    cdef int N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int Hp = H + 2 * ph, Wp = W + 2 * pw
    cdef int Ho = (Hp - kh) // sh + 1, Wo = (Wp - kw) // sw + 1
    cdef int K = Cin * kh * kw, M = Ho * Wo

    out_np = np.empty((N, Cout, Ho, Wo))
    cdef double[:, :, :, ::1] out = out_np
    cdef double[:, :, ::1] xp = np.zeros((Cin, Hp, Wp))
    cdef double[:, ::1] cols = np.empty((K, M))
    cdef int n, o, m
    cdef double bo
    cdef double* orow
    with nogil:
        for n in range(N):
            _pad_sample(x, xp, n, ph, pw)
            _im2col(xp, cols, kh, kw, sh, sw, Ho, Wo)
            _mm_nn(&w[0, 0, 0, 0], &cols[0, 0], &out[n, 0, 0, 0], Cout, M, K, 0.0)
            for o in range(Cout):
                bo = b[o]
                orow = &out[n, o, 0, 0]
                for m in range(M):
                    orow[m] += bo
    return out_np


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] dy, stride, padding, bint need_dx=True):
    """Gradients of conv2d_forward w.r.t. input and weight.

    Returns (dx, dw); dx is None when need_dx is false. The bias gradient
    is a plain sum over (N,Ho,Wo) and is left to the caller.
    """
    cdef int sh = stride[0], sw = stride[1], ph = padding[0], pw = padding[1]
    cdef int N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int Hp = H + 2 * ph, Wp = W + 2 * pw
    cdef int Ho = dy.shape[2], Wo = dy.shape[3]
    cdef int K = Cin * kh * kw, M = Ho * Wo

    dw_np = np.zeros((Cout, Cin, kh, kw))
    cdef double[:, :, :, ::1] dw = dw_np
    dx_np = np.zeros((N, Cin, H, W)) if need_dx else None
    cdef double[:, :, :, ::1] dx = dx_np if need_dx else None
    cdef double[:, :, ::1] xp = np.zeros((Cin, Hp, Wp))
    cdef double[:, :, ::1] dxp = np.zeros((Cin, Hp, Wp))
    cdef double[:, ::1] cols = np.empty((K, M))
    cdef double[:, ::1] dcols = np.empty((K, M)) if need_dx else np.empty((1, 1))
    cdef int n, c, y
    with nogil:
        for n in range(N):
            _pad_sample(x, xp, n, ph, pw)
            _im2col(xp, cols, kh, kw, sh, sw, Ho, Wo)
            # dw(Cout,K) += dy_n(Cout,M) @ cols(K,M)^T
            _mm_nt(&dy[n, 0, 0, 0], &cols[0, 0], &dw[0, 0, 0, 0], Cout, K, M, 1.0)
            if need_dx:
                # dcols(K,M) = w(Cout,K)^T @ dy_n(Cout,M)
                _mm_tn(&w[0, 0, 0, 0], &dy[n, 0, 0, 0], &dcols[0, 0], K, M, Cout, 0.0)
                memset(&dxp[0, 0, 0], 0, Cin * Hp * Wp * sizeof(double))
                _col2im_add(dcols, dxp, kh, kw, sh, sw, Ho, Wo)
                for c in range(Cin):
                    for y in range(H):
                        memcpy(&dx[n, c, y, 0], &dxp[c, y + ph, pw],
                               W * sizeof(double))
    return dx_np, dw_np


def maxpool2d_forward(double[:, :, :, ::1] x, kernel, stride):
    """Max pooling with floor semantics.

    Returns (out, idx) where idx holds, per output cell, the flat H*W index
    of the first maximal input cell in row-major window order.
    """
    cdef int kh = kernel[0], kw = kernel[1], sh = stride[0], sw = stride[1]
    cdef int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int Ho = (H - kh) // sh + 1, Wo = (W - kw) // sw + 1
    out_np = np.empty((N, C, Ho, Wo))
    idx_np = np.empty((N, C, Ho, Wo), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_np
    cdef long long[:, :, :, ::1] idx = idx_np
    cdef int n, c, y, xo, i, j, y0, x0
    cdef double best, v
    cdef long long bi
    with nogil:
        for n in range(N):
            for c in range(C):
                for y in range(Ho):
                    y0 = y * sh
                    for xo in range(Wo):
                        x0 = xo * sw
                        best = x[n, c, y0, x0]
                        bi = <long long>y0 * W + x0
                        for i in range(kh):
                            for j in range(kw):
                                v = x[n, c, y0 + i, x0 + j]
                                if v > best:
                                    best = v
                                    bi = <long long>(y0 + i) * W + x0 + j
                        out[n, c, y, xo] = best
                        idx[n, c, y, xo] = bi
    return out_np, idx_np


def maxpool2d_backward(x_shape, long long[:, :, :, ::1] idx,
                       double[:, :, :, ::1] dy):
    """Scatter dy back to the argmax cells recorded by maxpool2d_forward."""
    cdef int N = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3]
    cdef int Ho = dy.shape[2], Wo = dy.shape[3]
    dx_np = np.zeros((N, C, H, W))
    cdef double[:, :, :, ::1] dx = dx_np
    cdef int n, c, y, xo
    cdef long long f
    cdef double* plane
    with nogil:
        for n in range(N):
            for c in range(C):
                plane = &dx[n, c, 0, 0]
                for y in range(Ho):
                    for xo in range(Wo):
                        f = idx[n, c, y, xo]
                        plane[f] += dy[n, c, y, xo]
    return dx_np
