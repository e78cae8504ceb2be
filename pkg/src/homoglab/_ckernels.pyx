# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stencil and painting kernels (2-d and 3-d).

Mirrors ``_kernels_py``; 1-d inputs are delegated back to the NumPy code.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fmod

from . import _kernels_py

cnp.import_array()


cdef void _apply_2d(const double[:, :, ::1] c, const double[:, ::1] u,
                    double[:, ::1] out, double inv_h2) noexcept nogil:
    cdef Py_ssize_t n0 = u.shape[0], n1 = u.shape[1]
    cdef Py_ssize_t i, j, ip, im, jp, jm
    cdef double uc, acc
    for i in range(n0):
        ip = i + 1 if i + 1 < n0 else 0
        im = i - 1 if i > 0 else n0 - 1
        for j in range(n1):
            jp = j + 1 if j + 1 < n1 else 0
            jm = j - 1 if j > 0 else n1 - 1
            uc = u[i, j]
            acc = c[0, i, j] * (u[ip, j] - uc) - c[0, im, j] * (uc - u[im, j])
            acc += c[1, i, j] * (u[i, jp] - uc) - c[1, i, jm] * (uc - u[i, jm])
            out[i, j] = -acc * inv_h2


cdef void _apply_3d(const double[:, :, :, ::1] c, const double[:, :, ::1] u,
                    double[:, :, ::1] out, double inv_h2) noexcept nogil:
    cdef Py_ssize_t n0 = u.shape[0], n1 = u.shape[1], n2 = u.shape[2]
    cdef Py_ssize_t i, j, k, ip, im, jp, jm, kp, km
    cdef double uc, acc
    for i in range(n0):
        ip = i + 1 if i + 1 < n0 else 0
        im = i - 1 if i > 0 else n0 - 1
        for j in range(n1):
            jp = j + 1 if j + 1 < n1 else 0
            jm = j - 1 if j > 0 else n1 - 1
            for k in range(n2):
                kp = k + 1 if k + 1 < n2 else 0
                km = k - 1 if k > 0 else n2 - 1
                uc = u[i, j, k]
                acc = c[0, i, j, k] * (u[ip, j, k] - uc) - c[0, im, j, k] * (uc - u[im, j, k])
                acc += c[1, i, j, k] * (u[i, jp, k] - uc) - c[1, i, jm, k] * (uc - u[i, jm, k])
                acc += c[2, i, j, k] * (u[i, j, kp] - uc) - c[2, i, j, km] * (uc - u[i, j, km])
                out[i, j, k] = -acc * inv_h2


def divform_apply_diag(c, u, double h):
    u = np.ascontiguousarray(u, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    if u.ndim not in (2, 3):
        return _kernels_py.divform_apply_diag(c, u, h)
    out = np.empty_like(u)
    cdef double inv_h2 = 1.0 / (h * h)
    cdef const double[:, :, ::1] c2, u3
    cdef const double[:, ::1] u2
    cdef double[:, ::1] o2
    cdef const double[:, :, :, ::1] c3
    cdef double[:, :, ::1] o3
    if u.ndim == 2:
        c2, u2, o2 = c, u, out
        with nogil:
            _apply_2d(c2, u2, o2, inv_h2)
    else:
        c3, u3, o3 = c, u, out
        with nogil:
            _apply_3d(c3, u3, o3, inv_h2)
    return out


cdef inline double _wrap_offset(double idx, double center, double L) noexcept nogil:
    cdef double off = fmod(idx - center + L / 2, L)
    if off < 0:
        off += L
    return off - L / 2


def paint_balls(shape, centers, double radius):
    shape = tuple(int(s) for s in shape)
    if len(shape) not in (2, 3):
        return _kernels_py.paint_balls(shape, centers, radius)
    flat = np.zeros(int(np.prod(shape)), dtype=np.uint8)
    cdef double[:, ::1] cen = np.ascontiguousarray(
        np.asarray(centers, dtype=np.float64).reshape(-1, len(shape)))
    cdef Py_ssize_t npts = cen.shape[0], p, a, b, e
    cdef int nd = len(shape)
    cdef long L0 = shape[0], L1 = shape[1], L2 = 1
    if nd == 3:
        L2 = shape[2]
    cdef double r2 = radius * radius * (1 + 1e-12)
    cdef long lo0, hi0, lo1, hi1, lo2, hi2
    cdef double o0, o1, o2, s01
    cdef long i0, i1, i2
    cdef cnp.uint8_t[::1] m = flat
    with nogil:
        for p in range(npts):
            lo0 = <long>floor(cen[p, 0] - radius)
            hi0 = <long>floor(cen[p, 0] + radius)
            if hi0 - lo0 + 1 >= L0:
                lo0 = 0
                hi0 = L0 - 1
            lo1 = <long>floor(cen[p, 1] - radius)
            hi1 = <long>floor(cen[p, 1] + radius)
            if hi1 - lo1 + 1 >= L1:
                lo1 = 0
                hi1 = L1 - 1
            if nd == 3:
                lo2 = <long>floor(cen[p, 2] - radius)
                hi2 = <long>floor(cen[p, 2] + radius)
                if hi2 - lo2 + 1 >= L2:
                    lo2 = 0
                    hi2 = L2 - 1
            else:
                lo2 = 0
                hi2 = 0
            for a in range(lo0, hi0 + 1):
                o0 = _wrap_offset(a, cen[p, 0], L0)
                i0 = ((a % L0) + L0) % L0
                for b in range(lo1, hi1 + 1):
                    o1 = _wrap_offset(b, cen[p, 1], L1)
                    i1 = ((b % L1) + L1) % L1
                    s01 = o0 * o0 + o1 * o1
                    if s01 > r2:
                        continue
                    if nd == 2:
                        m[i0 * L1 + i1] = 1
                    else:
                        for e in range(lo2, hi2 + 1):
                            o2 = _wrap_offset(e, cen[p, 2], L2)
                            if s01 + o2 * o2 <= r2:
                                i2 = ((e % L2) + L2) % L2
                                m[(i0 * L1 + i1) * L2 + i2] = 1
    return flat.reshape(shape).astype(bool)
