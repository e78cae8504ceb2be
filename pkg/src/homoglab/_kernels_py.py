"""Pure NumPy reference implementations of the hot kernels.

Semantics must match ``_ckernels.pyx`` exactly; the test suite runs both.
"""

import numpy as np


def divform_apply_diag(c, u, h):
    """Return ``-sum_j D_j^-(c_j D_j^+ u)`` for face coefficients ``c`` of shape (d,) + u.shape."""
    out = np.zeros_like(u)
    inv_h2 = 1.0 / (h * h)
    for j in range(u.ndim):
        flux = c[j] * (np.roll(u, -1, axis=j) - u)
        out -= flux - np.roll(flux, 1, axis=j)
    out *= inv_h2
    return out


def _box_indices(center, radius, L):
    lo = int(np.floor(center - radius))
    hi = int(np.floor(center + radius))
    if hi - lo + 1 >= L:
        idx = np.arange(L)
    else:
        idx = np.arange(lo, hi + 1)
    off = (idx - center + L / 2) % L - L / 2
    return idx % L, off


def paint_balls(shape, centers, radius):
    """Boolean mask of cells within ``radius`` of any center (all in cell units, periodic)."""
    mask = np.zeros(shape, dtype=bool)
    centers = np.asarray(centers, dtype=float).reshape(-1, len(shape))
    r2 = radius * radius * (1 + 1e-12)
    d = len(shape)
    for c in centers:
        idx, sq = [], None
        for j in range(d):
            i, off = _box_indices(c[j], radius, shape[j])
            bshape = [1] * d
            bshape[j] = i.size
            idx.append(i)
            o2 = (off * off).reshape(bshape)
            sq = o2 if sq is None else sq + o2
        sub = np.ix_(*idx)
        mask[sub] |= sq <= r2
    return mask
