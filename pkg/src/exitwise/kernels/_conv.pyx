# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled valid-convolution kernels (stride 1, no padding, NHWC layout).

The patch gather (im2col) and its adjoint (col2im) are compiled loops;
the contractions go to BLAS through numpy. For a fixed filter row ``p``
the ``kw x C`` input window is one contiguous run, so gathering a patch
is ``kh`` memcpy calls.

On x86 both kernels run with flush-to-zero and denormals-are-zero set.
Weight decay drives dead filters into the subnormal range, where every
multiply takes a slow microcode path; the previous mode is restored on
return.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.string cimport memcpy

cnp.import_array()

cdef extern from *:
    """
    #if defined(__SSE__) || defined(_M_X64)
    #include <xmmintrin.h>
    static unsigned int exitwise_fast_fp(void) {
        unsigned int old = _mm_getcsr();
        _mm_setcsr(old | 0x8040);  /* FTZ | DAZ */
        return old;
    }
    static void exitwise_restore_fp(unsigned int old) { _mm_setcsr(old); }
    #else
    static unsigned int exitwise_fast_fp(void) { return 0; }
    static void exitwise_restore_fp(unsigned int old) { (void)old; }
    #endif
    """
    unsigned int exitwise_fast_fp() nogil
    void exitwise_restore_fp(unsigned int old) nogil


def fast_fp_enter():
    """Switch this thread to flush-to-zero mode; returns the mode to restore."""
    return exitwise_fast_fp()


def fast_fp_exit(unsigned int mode):
    exitwise_restore_fp(mode)


cdef void _im2col(floating[:, :, :, ::1] x, floating[:, ::1] cols,
                  Py_ssize_t kh, Py_ssize_t kw) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[3]
    cdef Py_ssize_t ho = x.shape[1] - kh + 1, wo = x.shape[2] - kw + 1
    cdef Py_ssize_t run = kw * c
    cdef size_t nbytes = run * sizeof(floating)
    cdef Py_ssize_t s, i, j, p, r = 0
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                for p in range(kh):
                    memcpy(&cols[r, p * run], &x[s, i + p, j, 0], nbytes)
                r += 1


cdef void _col2im(floating[:, ::1] cols, floating[:, :, :, ::1] gx,
                  Py_ssize_t kh, Py_ssize_t kw) noexcept nogil:
    cdef Py_ssize_t n = gx.shape[0], c = gx.shape[3]
    cdef Py_ssize_t ho = gx.shape[1] - kh + 1, wo = gx.shape[2] - kw + 1
    cdef Py_ssize_t run = kw * c
    cdef Py_ssize_t s, i, j, p, t, r = 0
    cdef floating *dst
    cdef floating *src
    for s in range(n):
        for i in range(ho):
            for j in range(wo):
                for p in range(kh):
                    dst = &gx[s, i + p, j, 0]
                    src = &cols[r, p * run]
                    for t in range(run):
                        dst[t] += src[t]
                r += 1


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   floating[::1] b):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], f = w.shape[3]
    cdef Py_ssize_t ho = x.shape[1] - kh + 1, wo = x.shape[2] - kw + 1
    dtype = np.float64 if floating is double else np.float32
    if n == 0 or ho <= 0 or wo <= 0 or f == 0:
        return np.zeros((n, max(ho, 0), max(wo, 0), f), dtype=dtype)
    cols_arr = np.empty((n * ho * wo, kh * kw * c), dtype=dtype)
    cdef floating[:, ::1] cols = cols_arr
    cdef unsigned int mode = exitwise_fast_fp()
    try:
        with nogil:
            _im2col(x, cols, kh, kw)
        out = cols_arr @ np.asarray(w).reshape(kh * kw * c, f)
        out += np.asarray(b)
    finally:
        exitwise_restore_fp(mode)
    return out.reshape(n, ho, wo, f)


def conv2d_backward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                    floating[:, :, :, ::1] g, bint need_input_grad=True):
    """Return (grad_x or None, grad_w, grad_b) for upstream gradient ``g``."""
    cdef Py_ssize_t n = x.shape[0], hi = x.shape[1], wi = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], f = w.shape[3]
    cdef Py_ssize_t ho = g.shape[1], wo = g.shape[2]
    dtype = np.float64 if floating is double else np.float32
    if n == 0 or ho <= 0 or wo <= 0 or f == 0 or c == 0:
        gx_empty = np.zeros((n, hi, wi, c), dtype=dtype) if need_input_grad else None
        return gx_empty, np.zeros((kh, kw, c, f), dtype=dtype), np.zeros(f, dtype=dtype)
    cols_arr = np.empty((n * ho * wo, kh * kw * c), dtype=dtype)
    cdef floating[:, ::1] cols = cols_arr
    cdef floating[:, :, :, ::1] gx
    g2 = np.asarray(g).reshape(n * ho * wo, f)
    gx_arr = None
    cdef unsigned int mode = exitwise_fast_fp()
    try:
        with nogil:
            _im2col(x, cols, kh, kw)
        gw_arr = (cols_arr.T @ g2).reshape(kh, kw, c, f)
        gb_arr = g2.sum(axis=0)
        if need_input_grad:
            dcols_arr = np.ascontiguousarray(g2 @ np.asarray(w).reshape(kh * kw * c, f).T)
            cols = dcols_arr
            gx_arr = np.zeros((n, hi, wi, c), dtype=dtype)
            gx = gx_arr
            with nogil:
                _col2im(cols, gx, kh, kw)
    finally:
        exitwise_restore_fp(mode)
    return gx_arr, gw_arr, gb_arr
