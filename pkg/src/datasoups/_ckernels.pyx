# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``; same signatures."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, exp, log, fabs, INFINITY

cnp.import_array()

MODE_CONSTANT, MODE_EDGE, MODE_REFLECT = 0, 1, 2


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) nogil:
    cdef Py_ssize_t period
    if n == 1:
        return 0
    period = 2 * (n - 1)
    if i < 0:
        i = -i
    i = i % period
    if i >= n:
        i = period - i
    return i


cdef inline double _fetch(double[:, :, ::1] img, Py_ssize_t y, Py_ssize_t x,
                          Py_ssize_t c, int mode, double fill) nogil:
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    if mode == 1:
        if y < 0:
            y = 0
        elif y >= h:
            y = h - 1
        if x < 0:
            x = 0
        elif x >= w:
            x = w - 1
    elif mode == 2:
        y = _reflect(y, h)
        x = _reflect(x, w)
    elif y < 0 or y >= h or x < 0 or x >= w:
        return fill
    return img[y, x, c]


def affine_sample(img, matrix, int out_h, int out_w, int mode=0, double fill=0.0):
    cdef double[:, :, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[:, ::1] m = np.ascontiguousarray(matrix, dtype=np.float64)
    cdef Py_ssize_t nc = src.shape[2]
    out = np.empty((out_h, out_w, nc), dtype=np.float64)
    cdef double[:, :, ::1] dst = out
    cdef Py_ssize_t y, x, c, x0, y0
    cdef double sx, sy, fx, fy, top, bot
    with nogil:
        for y in range(out_h):
            for x in range(out_w):
                sx = m[0, 0] * x + m[0, 1] * y + m[0, 2]
                sy = m[1, 0] * x + m[1, 1] * y + m[1, 2]
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                fx = sx - x0
                fy = sy - y0
                for c in range(nc):
                    top = (_fetch(src, y0, x0, c, mode, fill) * (1 - fx)
                           + _fetch(src, y0, x0 + 1, c, mode, fill) * fx)
                    bot = (_fetch(src, y0 + 1, x0, c, mode, fill) * (1 - fx)
                           + _fetch(src, y0 + 1, x0 + 1, c, mode, fill) * fx)
                    dst[y, x, c] = top * (1 - fy) + bot * fy
    return out


cdef double _row_entropy(double[::1] d, double beta, double[::1] p) nogil:
    cdef Py_ssize_t j, n = d.shape[0]
    cdef double s = 0.0, sdp = 0.0
    for j in range(n):
        p[j] = exp(-d[j] * beta)
        s += p[j]
    for j in range(n):
        sdp += d[j] * p[j]
    for j in range(n):
        p[j] /= s
    return log(s) + beta * sdp / s


def perplexity_search(dist2, double perplexity, double tol=1e-5, int max_iter=50):
    cdef double[:, ::1] D = np.ascontiguousarray(dist2, dtype=np.float64)
    cdef Py_ssize_t n = D.shape[0], i, j, k, jj
    P_arr = np.zeros((n, n))
    betas_arr = np.ones(n)
    ents_arr = np.zeros(n)
    steps_arr = np.zeros(n, dtype=np.int64)
    cdef double[:, ::1] P = P_arr
    cdef double[::1] betas = betas_arr, ents = ents_arr
    cdef long long[::1] steps = steps_arr
    cdef double[::1] d = np.empty(n - 1)
    cdef double[::1] row = np.empty(n - 1)
    cdef double target = log(perplexity), dmin, scale, beta, lo, hi, h
    for i in range(n):
        jj = 0
        dmin = INFINITY
        for j in range(n):
            if j != i:
                d[jj] = D[i, j]
                if d[jj] < dmin:
                    dmin = d[jj]
                jj += 1
        scale = 0.0
        for j in range(n - 1):
            d[j] -= dmin
            scale += d[j]
        scale /= (n - 1)
        beta = 1.0 / scale if scale > 0 else 1.0
        lo = 0.0
        hi = INFINITY
        h = _row_entropy(d, beta, row)
        k = 0
        while fabs(h - target) > tol and k < max_iter:
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == INFINITY else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo) if lo > 0 else beta / 2.0
            h = _row_entropy(d, beta, row)
            k += 1
        jj = 0
        for j in range(n):
            if j != i:
                P[i, j] = row[jj]
                jj += 1
        betas[i] = beta
        ents[i] = h
        steps[i] = k
    return P_arr, betas_arr, ents_arr, steps_arr


def tsne_grad(P_in, Y_in, double exaggeration=1.0):
    cdef double[:, ::1] P = np.ascontiguousarray(P_in, dtype=np.float64)
    cdef double[:, ::1] Y = np.ascontiguousarray(Y_in, dtype=np.float64)
    cdef Py_ssize_t n = Y.shape[0], dim = Y.shape[1], i, j, a
    num_arr = np.zeros((n, n))
    grad_arr = np.zeros((n, dim))
    cdef double[:, ::1] num = num_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double s = 0.0, d2, diff, q, w, kl = 0.0
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                d2 = 0.0
                for a in range(dim):
                    diff = Y[i, a] - Y[j, a]
                    d2 = d2 + diff * diff
                num[i, j] = 1.0 / (1.0 + d2)
                num[j, i] = num[i, j]
                s = s + 2.0 * num[i, j]
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                q = num[i, j] / s
                w = (exaggeration * P[i, j] - q) * num[i, j]
                for a in range(dim):
                    grad[i, a] += 4.0 * w * (Y[i, a] - Y[j, a])
                if P[i, j] > 0:
                    if q < 1e-300:
                        q = 1e-300
                    kl = kl + P[i, j] * log(P[i, j] / q)
    return grad_arr, kl
