# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in _kernels_py.py (same signatures)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p

cnp.import_array()


def gaussian_splat_max(double[:, :, ::1] out, center, double sigma):
    cdef Py_ssize_t D = out.shape[0], H = out.shape[1], W = out.shape[2]
    cdef Py_ssize_t d, h, w
    cdef double inv = 1.0 / (2.0 * sigma * sigma)
    cdef double c0 = center[0], c1 = center[1], c2 = center[2]
    # numpy's exp is used for the 1-D factors so both backends share them bit-for-bit
    cdef double[::1] gd = np.exp(-((np.arange(D) - c0) ** 2) * inv)
    cdef double[::1] gh = np.exp(-((np.arange(H) - c1) ** 2) * inv)
    cdef double[::1] gw = np.exp(-((np.arange(W) - c2) ** 2) * inv)
    cdef double dh_val, v
    for d in range(D):
        for h in range(H):
            dh_val = gd[d] * gh[h]
            for w in range(W):
                v = dh_val * gw[w]
                if v > out[d, h, w]:
                    out[d, h, w] = v
    return np.asarray(out)


def local_maxima_3d(volume, double threshold):
    cdef double[:, :, ::1] vol = np.ascontiguousarray(volume, dtype=np.float64)
    cdef Py_ssize_t D = vol.shape[0], H = vol.shape[1], W = vol.shape[2]
    cdef Py_ssize_t d, h, w, a, b, c
    cdef Py_ssize_t d0, d1, h0, h1, w0, w1
    cdef double v
    cdef bint is_max
    vals = []
    out_idx = []
    for d in range(D):
        d0 = d - 1 if d > 0 else 0
        d1 = d + 1 if d < D - 1 else D - 1
        for h in range(H):
            h0 = h - 1 if h > 0 else 0
            h1 = h + 1 if h < H - 1 else H - 1
            for w in range(W):
                v = vol[d, h, w]
                if not (v >= threshold):
                    continue
                w0 = w - 1 if w > 0 else 0
                w1 = w + 1 if w < W - 1 else W - 1
                is_max = True
                for a in range(d0, d1 + 1):
                    for b in range(h0, h1 + 1):
                        for c in range(w0, w1 + 1):
                            if (a != d or b != h or c != w) and not (v > vol[a, b, c]):
                                is_max = False
                                break
                        if not is_max:
                            break
                    if not is_max:
                        break
                if is_max:
                    out_idx.append((d, h, w))
                    vals.append(v)
    if out_idx:
        return np.asarray(out_idx, dtype=np.int64), np.asarray(vals, dtype=np.float64)
    return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.float64)


cdef inline double _softplus(double x) nogil:
    # matches np.logaddexp(0, x)
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


def depth_layer_loss_batch(d_i, d_j, r_i, r_j, double gamma):
    a, b, ra, rb = np.broadcast_arrays(
        np.asarray(d_i, dtype=np.float64), np.asarray(d_j, dtype=np.float64),
        np.asarray(r_i, dtype=np.int64), np.asarray(r_j, dtype=np.int64))
    shape = a.shape
    cdef double[::1] di = np.ascontiguousarray(a).ravel()
    cdef double[::1] dj = np.ascontiguousarray(b).ravel()
    cdef cnp.int64_t[::1] ri = np.ascontiguousarray(ra).ravel()
    cdef cnp.int64_t[::1] rj = np.ascontiguousarray(rb).ravel()
    cdef Py_ssize_t n = di.shape[0], k
    loss_arr = np.zeros(n)
    grad_arr = np.zeros(n)
    cdef double[::1] loss = loss_arr
    cdef double[::1] g = grad_arr
    cdef double diff, margin
    for k in range(n):
        diff = di[k] - dj[k]
        margin = gamma * <double>(ri[k] - rj[k])
        if ri[k] == rj[k]:
            loss[k] = diff * diff
            g[k] = 2.0 * diff
        elif ri[k] < rj[k]:
            if diff - margin > 0:
                loss[k] = _softplus(diff)
                g[k] = 1.0 / (1.0 + exp(-diff))
        else:
            if margin - diff > 0:
                loss[k] = _softplus(-diff)
                g[k] = -1.0 / (1.0 + exp(diff))
    return loss_arr.reshape(shape), grad_arr.reshape(shape), -grad_arr.reshape(shape)
