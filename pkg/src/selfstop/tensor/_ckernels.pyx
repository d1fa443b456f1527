# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; signatures mirror ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline void _taps(Py_ssize_t o, Py_ssize_t n, Py_ssize_t* a, Py_ssize_t* b,
                       double* wa, double* wb) noexcept nogil:
    cdef Py_ssize_t i = o >> 1
    if o & 1:
        a[0] = i
        b[0] = i + 1 if i + 1 < n else n - 1
        wa[0] = 0.75
        wb[0] = 0.25
    else:
        a[0] = i - 1 if i > 0 else 0
        b[0] = i
        wa[0] = 0.25
        wb[0] = 0.75


def _up_fwd(const real[:, :, ::1] x, real[:, :, ::1] out):
    cdef Py_ssize_t P = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t p, o, j, ra, rb
    cdef double wra, wrb, left, right
    cdef double[::1] row = np.empty(w)
    with nogil:
        for p in range(P):
            for o in range(2 * h):
                _taps(o, h, &ra, &rb, &wra, &wrb)
                for j in range(w):
                    row[j] = wra * x[p, ra, j] + wrb * x[p, rb, j]
                for j in range(w):
                    left = row[j - 1] if j > 0 else row[0]
                    right = row[j + 1] if j + 1 < w else row[w - 1]
                    out[p, o, 2 * j] = <real>(0.25 * left + 0.75 * row[j])
                    out[p, o, 2 * j + 1] = <real>(0.75 * row[j] + 0.25 * right)


def _up_bwd(const real[:, :, ::1] g, real[:, :, ::1] out):
    cdef Py_ssize_t P = out.shape[0], h = out.shape[1], w = out.shape[2]
    cdef Py_ssize_t p, o, j, ra, rb
    cdef double wra, wrb, ge, go
    cdef double[::1] row = np.empty(w)
    cdef double[:, ::1] acc = np.empty((h, w))
    with nogil:
        for p in range(P):
            for o in range(h):
                for j in range(w):
                    acc[o, j] = 0
            for o in range(2 * h):
                _taps(o, h, &ra, &rb, &wra, &wrb)
                # adjoint of the horizontal pass
                for j in range(w):
                    row[j] = 0.75 * (g[p, o, 2 * j] + g[p, o, 2 * j + 1])
                row[0] += 0.25 * g[p, o, 0]
                row[w - 1] += 0.25 * g[p, o, 2 * w - 1]
                for j in range(w - 1):
                    row[j] += 0.25 * g[p, o, 2 * j + 2]
                    row[j + 1] += 0.25 * g[p, o, 2 * j + 1]
                for j in range(w):
                    acc[ra, j] += wra * row[j]
                    acc[rb, j] += wrb * row[j]
            for o in range(h):
                for j in range(w):
                    out[p, o, j] = <real>acc[o, j]


def upsample2x_forward(x):
    p, h, w = x.shape
    out = np.empty((p, 2 * h, 2 * w), dtype=x.dtype)
    _up_fwd(x, out)
    return out


def upsample2x_backward(g):
    p, h2, w2 = g.shape
    out = np.empty((p, h2 // 2, w2 // 2), dtype=g.dtype)
    _up_bwd(g, out)
    return out


def _norm_fwd(const real[:, :, ::1] x, real[:, :, ::1] y, double[:, ::1] mean,
              double[:, ::1] var, double eps, bint per_sample):
    # mean/var are (N, C) when per_sample else (1, C)
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], M = x.shape[2]
    cdef Py_ssize_t n, c, m
    cdef double acc, d, mu, inv, cnt
    with nogil:
        for c in range(C):
            if per_sample:
                for n in range(N):
                    acc = 0
                    for m in range(M):
                        acc += x[n, c, m]
                    mu = acc / M
                    acc = 0
                    for m in range(M):
                        d = x[n, c, m] - mu
                        acc += d * d
                    mean[n, c] = mu
                    var[n, c] = acc / M
                    inv = 1.0 / sqrt(acc / M + eps)
                    for m in range(M):
                        y[n, c, m] = <real>((x[n, c, m] - mu) * inv)
            else:
                cnt = N * M
                acc = 0
                for n in range(N):
                    for m in range(M):
                        acc += x[n, c, m]
                mu = acc / cnt
                acc = 0
                for n in range(N):
                    for m in range(M):
                        d = x[n, c, m] - mu
                        acc += d * d
                mean[0, c] = mu
                var[0, c] = acc / cnt
                inv = 1.0 / sqrt(acc / cnt + eps)
                for n in range(N):
                    for m in range(M):
                        y[n, c, m] = <real>((x[n, c, m] - mu) * inv)


def _norm_bwd(const real[:, :, ::1] g, const real[:, :, ::1] y, const double[:, ::1] var,
              real[:, :, ::1] dx, double eps, bint per_sample):
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1], M = g.shape[2]
    cdef Py_ssize_t n, c, m
    cdef double gm, gym, inv, cnt
    with nogil:
        for c in range(C):
            if per_sample:
                for n in range(N):
                    gm = 0
                    gym = 0
                    for m in range(M):
                        gm += g[n, c, m]
                        gym += g[n, c, m] * y[n, c, m]
                    gm /= M
                    gym /= M
                    inv = 1.0 / sqrt(var[n, c] + eps)
                    for m in range(M):
                        dx[n, c, m] = <real>(inv * (g[n, c, m] - gm - y[n, c, m] * gym))
            else:
                cnt = N * M
                gm = 0
                gym = 0
                for n in range(N):
                    for m in range(M):
                        gm += g[n, c, m]
                        gym += g[n, c, m] * y[n, c, m]
                gm /= cnt
                gym /= cnt
                inv = 1.0 / sqrt(var[0, c] + eps)
                for n in range(N):
                    for m in range(M):
                        dx[n, c, m] = <real>(inv * (g[n, c, m] - gm - y[n, c, m] * gym))


def norm_forward(x, eps, per_sample):
    n, c, m = x.shape
    y = np.empty_like(x)
    rows = n if per_sample else 1
    mean = np.empty((rows, c))
    var = np.empty((rows, c))
    _norm_fwd(x, y, mean, var, eps, per_sample)
    if not per_sample:
        return y, mean[0], var[0]
    return y, mean, var


def norm_backward(g, y, var, eps, per_sample):
    dx = np.empty_like(g)
    v = np.ascontiguousarray(var, dtype=np.float64).reshape(-1 if per_sample else 1, g.shape[1])
    _norm_bwd(g, y, v, dx, eps, per_sample)
    return dx


cdef inline void _valid(Py_ssize_t j, Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t W,
                        Py_ssize_t wo, Py_ssize_t* b0, Py_ssize_t* b1) noexcept nogil:
    # output columns b with 0 <= b*stride + j - pad < W
    cdef Py_ssize_t lo = 0, hi = wo
    while lo < wo and lo * stride + j - pad < 0:
        lo += 1
    while hi > lo and (hi - 1) * stride + j - pad >= W:
        hi -= 1
    b0[0] = lo
    b1[0] = hi


def _im2col(const real[:, :, :, ::1] x, real[:, :, ::1] cols, int k, int stride, int pad,
            int ho, int wo):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t n, c, i, j, a, b, r, row, b0, b1, off, base
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(k):
                    for j in range(k):
                        row = (c * k + i) * k + j
                        _valid(j, stride, pad, W, wo, &b0, &b1)
                        off = j - pad
                        for a in range(ho):
                            r = a * stride + i - pad
                            base = a * wo
                            if r < 0 or r >= H:
                                for b in range(wo):
                                    cols[n, row, base + b] = 0
                                continue
                            for b in range(b0):
                                cols[n, row, base + b] = 0
                            for b in range(b0, b1):
                                cols[n, row, base + b] = x[n, c, r, b * stride + off]
                            for b in range(b1, wo):
                                cols[n, row, base + b] = 0


def _col2im(const real[:, :, ::1] cols, real[:, :, :, ::1] x, int k, int stride, int pad,
            int ho, int wo):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t n, c, i, j, a, b, r, row, b0, b1, off, base
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(k):
                    for j in range(k):
                        row = (c * k + i) * k + j
                        _valid(j, stride, pad, W, wo, &b0, &b1)
                        off = j - pad
                        for a in range(ho):
                            r = a * stride + i - pad
                            if r < 0 or r >= H:
                                continue
                            base = a * wo
                            for b in range(b0, b1):
                                x[n, c, r, b * stride + off] += cols[n, row, base + b]


def im2col(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = np.empty((n, c * k * k, ho * wo), dtype=x.dtype)
    _im2col(x, cols, k, stride, pad, ho, wo)
    return cols


def col2im(cols, shape, k, stride, pad):
    n, c, h, w = shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    x = np.zeros(shape, dtype=cols.dtype)
    _col2im(np.ascontiguousarray(cols), x, k, stride, pad, ho, wo)
    return x


cdef inline void _moments(real* v, Py_ssize_t n, double shift, double* s, double* q) noexcept nogil:
    # four independent chains per moment so the adds pipeline
    cdef Py_ssize_t j
    cdef double s0 = 0, s1 = 0, s2 = 0, s3 = 0, q0 = 0, q1 = 0, q2 = 0, q3 = 0
    cdef double a0, a1, a2, a3
    for j in range(0, n - 3, 4):
        a0 = v[j] - shift
        a1 = v[j + 1] - shift
        a2 = v[j + 2] - shift
        a3 = v[j + 3] - shift
        s0 += a0
        s1 += a1
        s2 += a2
        s3 += a3
        q0 += a0 * a0
        q1 += a1 * a1
        q2 += a2 * a2
        q3 += a3 * a3
    for j in range(n - n % 4, n):
        a0 = v[j] - shift
        s0 += a0
        q0 += a0 * a0
    s[0] += (s0 + s1) + (s2 + s3)
    q[0] += (q0 + q1) + (q2 + q3)


cdef inline void _dots(const real* g, const real* y, Py_ssize_t n, double* s, double* q) noexcept nogil:
    cdef Py_ssize_t j
    cdef double s0 = 0, s1 = 0, s2 = 0, s3 = 0, q0 = 0, q1 = 0, q2 = 0, q3 = 0
    for j in range(0, n - 3, 4):
        s0 += g[j]
        s1 += g[j + 1]
        s2 += g[j + 2]
        s3 += g[j + 3]
        q0 += g[j] * y[j]
        q1 += g[j + 1] * y[j + 1]
        q2 += g[j + 2] * y[j + 2]
        q3 += g[j + 3] * y[j + 3]
    for j in range(n - n % 4, n):
        s0 += g[j]
        q0 += g[j] * y[j]
    s[0] += (s0 + s1) + (s2 + s3)
    q[0] += (q0 + q1) + (q2 + q3)


def _urn_fwd(const real[:, :, ::1] x, real[:, :, ::1] y, double[::1] mean, double[::1] var, double eps):
    cdef Py_ssize_t P = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t p, o, j, ra, rb, M = 4 * h * w
    cdef double wra, wrb, left, right, a, b, mu, inv, shift, s, q
    cdef double[::1] row = np.empty(w)
    with nogil:
        for p in range(P):
            # moments are shifted by a representative value against cancellation
            shift = fabs(x[p, 0, 0])
            s = 0
            q = 0
            for o in range(2 * h):
                _taps(o, h, &ra, &rb, &wra, &wrb)
                for j in range(w):
                    row[j] = wra * x[p, ra, j] + wrb * x[p, rb, j]
                for j in range(w):
                    left = row[j - 1] if j > 0 else row[0]
                    right = row[j + 1] if j + 1 < w else row[w - 1]
                    a = 0.25 * left + 0.75 * row[j]
                    b = 0.75 * row[j] + 0.25 * right
                    # branch-free (and exact) relu; the signs here are random
                    y[p, o, 2 * j] = <real>(0.5 * (a + fabs(a)))
                    y[p, o, 2 * j + 1] = <real>(0.5 * (b + fabs(b)))
                _moments(&y[p, o, 0], 2 * w, shift, &s, &q)
            a = s / M
            mu = shift + a
            b = q / M - a * a
            b = b if b > 0 else 0
            mean[p] = mu
            var[p] = b
            inv = 1.0 / sqrt(b + eps)
            for o in range(2 * h):
                for j in range(2 * w):
                    y[p, o, j] = <real>((y[p, o, j] - mu) * inv)


def _urn_bwd(const real[:, :, ::1] g, const real[:, :, ::1] y, const double[::1] mean, const double[::1] var,
             real[:, :, ::1] dx, double eps):
    cdef Py_ssize_t P = dx.shape[0], h = dx.shape[1], w = dx.shape[2]
    cdef Py_ssize_t p, o, j, ra, rb, M = 4 * h * w
    cdef double wra, wrb, gm, gym, inv, c0
    cdef real zero_level
    cdef double[::1] d = np.empty(2 * w)
    cdef double[::1] row = np.empty(w)
    cdef double[:, ::1] acc = np.empty((h, w))
    with nogil:
        for p in range(P):
            gm = 0
            gym = 0
            for o in range(2 * h):
                _dots(&g[p, o, 0], &y[p, o, 0], 2 * w, &gm, &gym)
            gm /= M
            gym /= M
            inv = 1.0 / sqrt(var[p] + eps)
            c0 = -inv * gm
            # normalised value of a clamped (zero) activation, computed as in forward
            zero_level = <real>((0.0 - mean[p]) * inv)
            for o in range(h):
                for j in range(w):
                    acc[o, j] = 0
            for o in range(2 * h):
                _taps(o, h, &ra, &rb, &wra, &wrb)
                for j in range(2 * w):
                    d[j] = (<double>(y[p, o, j] > zero_level)) * (
                        inv * g[p, o, j] + c0 - inv * gym * y[p, o, j])
                # adjoint of the horizontal pass
                for j in range(w):
                    row[j] = 0.75 * (d[2 * j] + d[2 * j + 1])
                row[0] += 0.25 * d[0]
                row[w - 1] += 0.25 * d[2 * w - 1]
                for j in range(w - 1):
                    row[j] += 0.25 * d[2 * j + 2]
                    row[j + 1] += 0.25 * d[2 * j + 1]
                for j in range(w):
                    acc[ra, j] += wra * row[j]
                    acc[rb, j] += wrb * row[j]
            for o in range(h):
                for j in range(w):
                    dx[p, o, j] = <real>acc[o, j]


def up_relu_norm_forward(x, eps):
    p, h, w = x.shape
    y = np.empty((p, 2 * h, 2 * w), dtype=x.dtype)
    mean = np.empty(p)
    var = np.empty(p)
    _urn_fwd(x, y, mean, var, eps)
    return y, mean, var


def up_relu_norm_backward(g, y, mean, var, eps):
    p, h2, w2 = g.shape
    dx = np.empty((p, h2 // 2, w2 // 2), dtype=g.dtype)
    _urn_bwd(g, y, np.ascontiguousarray(mean, dtype=np.float64).reshape(-1),
             np.ascontiguousarray(var, dtype=np.float64).reshape(-1), dx, eps)
    return dx
