"""Periodic lattice geometry and the discrete calculus everything else is built on.

Layout is staggered (marker-and-cell): scalars live at cell centers, the
j-th component of a vector field stored at array index ``x`` lives on the
face between ``x`` and ``x + e_j``.  Fields are plain NumPy arrays:

* scalar field  -- shape ``grid.shape``
* vector field  -- shape ``(d,) + grid.shape``
* matrix field  -- shape ``(d, d) + grid.shape``

The forward difference ``D_j^+`` and the backward difference ``D_j^-`` form
an exactly adjoint pair, ``sum(D^+ u . F) = -sum(u D^- . F)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import InvalidDimension, InvalidSize, SymbolSingular

MAX_CELLS = 2**28


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TorusGrid:
    """d-dimensional periodic lattice with ``L`` cells of width ``h`` per axis."""

    d: int
    L: int
    h: float = 1.0

    def __post_init__(self):
        if isinstance(self.d, bool) or int(self.d) != self.d or self.d not in (1, 2, 3):
            raise InvalidDimension(f"dimension must be 1, 2 or 3, got {self.d!r}")
        if isinstance(self.L, bool) or int(self.L) != self.L:
            raise InvalidSize(f"L must be an integer, got {self.L!r}")
        if self.L < 4 or not _is_power_of_two(int(self.L)):
            raise InvalidSize(f"L must be a power of two >= 4, got {self.L}")
        if int(self.L) ** int(self.d) > MAX_CELLS:
            raise InvalidSize(f"{self.L}^{self.d} cells exceed the limit of {MAX_CELLS}")
        if not (np.isfinite(self.h) and self.h > 0):
            raise InvalidSize(f"spacing h must be positive, got {self.h!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "h", float(self.h))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    @property
    def ncells(self) -> int:
        return self.L**self.d

    @property
    def period(self) -> float:
        return self.L * self.h

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def volume(self) -> float:
        return self.period**self.d

    def as_dict(self) -> dict:
        return {"d": self.d, "L": self.L, "h": self.h}


def make_grid(d: int, L: int, h: float = 1.0) -> TorusGrid:
    return TorusGrid(d, L, h)


# -- coordinates -----------------------------------------------------------


@functools.lru_cache(maxsize=32)
def _offsets_1d(L: int) -> np.ndarray:
    # minimal-image integer offsets 0, 1, ..., L/2, -L/2+1, ..., -1
    n = np.arange(L)
    return np.where(n <= L // 2, n, n - L)


def minimal_image(grid: TorusGrid, center: Sequence[float] | None = None) -> list[np.ndarray]:
    """Broadcastable physical displacements ``y - center`` under the minimal-image convention."""
    if center is None:
        center = (0.0,) * grid.d
    out = []
    for j in range(grid.d):
        n = np.arange(grid.L) - center[j] / grid.h
        n = (n + grid.L / 2) % grid.L - grid.L / 2
        shape = [1] * grid.d
        shape[j] = grid.L
        out.append((n * grid.h).reshape(shape))
    return out


def distance(grid: TorusGrid, center: Sequence[float] | None = None) -> np.ndarray:
    """Torus distance of every cell center from ``center`` (physical units)."""
    comps = minimal_image(grid, center)
    r2 = sum(c * c for c in comps)
    return np.sqrt(np.broadcast_to(r2, grid.shape))


def ball_mask(grid: TorusGrid, radius: float, center: Sequence[float] | None = None) -> np.ndarray:
    """Cells whose centers lie in the closed ball of ``radius`` around ``center``."""
    return distance(grid, center) <= radius * (1 + 1e-12)


def annulus_mask(grid: TorusGrid, r_in: float, r_out: float) -> np.ndarray:
    """Cells with ``r_in < |x| < r_out`` around the origin cell."""
    dist = distance(grid)
    return (dist > r_in) & (dist < r_out)


def refine(u: np.ndarray, factor: int, axes: Sequence[int] | None = None) -> np.ndarray:
    """Piecewise-constant upsampling: every cell becomes a block of ``factor`` cells per axis."""
    if axes is None:
        axes = range(u.ndim)
    for ax in axes:
        u = np.repeat(u, factor, axis=ax)
    return u


# -- discrete calculus -----------------------------------------------------


def discrete_gradient(grid: TorusGrid, u: np.ndarray) -> np.ndarray:
    """Forward-difference gradient, component j at x equals (u(x + h e_j) - u(x)) / h."""
    u = np.asarray(u)
    out = np.empty((grid.d,) + u.shape, dtype=u.dtype)
    for j in range(grid.d):
        out[j] = (np.roll(u, -1, axis=j) - u) / grid.h
    return out


def discrete_divergence(grid: TorusGrid, F: np.ndarray) -> np.ndarray:
    """Backward-difference divergence, the negative adjoint of :func:`discrete_gradient`."""
    F = np.asarray(F)
    out = np.zeros(F.shape[1:], dtype=F.dtype)
    for j in range(grid.d):
        out += F[j] - np.roll(F[j], 1, axis=j)
    return out / grid.h


def discrete_laplacian(grid: TorusGrid, u: np.ndarray) -> np.ndarray:
    return discrete_divergence(grid, discrete_gradient(grid, u))


def shift(u: np.ndarray, offset: int, axis: int) -> np.ndarray:
    """``out[x] = u[x + offset * e_axis]`` with periodic wraparound."""
    return np.roll(u, -offset, axis=axis)


def discrete_curl(grid: TorusGrid, F: np.ndarray) -> np.ndarray:
    """Plaquette circulations ``D_j^+ F_k - D_k^+ F_j`` for j < k (zero for gradients)."""
    pairs = [(j, k) for j in range(grid.d) for k in range(j + 1, grid.d)]
    out = np.empty((len(pairs),) + F.shape[1:], dtype=F.dtype)
    for n, (j, k) in enumerate(pairs):
        out[n] = (shift(F[k], 1, j) - F[k] - shift(F[j], 1, k) + F[j]) / grid.h
    return out


# -- spectral machinery ----------------------------------------------------


@functools.lru_cache(maxsize=32)
def angles(grid: TorusGrid, real: bool = True) -> tuple[np.ndarray, ...]:
    """Per-axis lattice angles 2 pi k_j / L, broadcastable to the (r)FFT layout."""
    out = []
    for j in range(grid.d):
        if real and j == grid.d - 1:
            k = np.arange(grid.L // 2 + 1)
        else:
            k = _offsets_1d(grid.L)
        shape = [1] * grid.d
        shape[j] = k.size
        out.append((2 * np.pi * k / grid.L).reshape(shape))
    return tuple(out)


@functools.lru_cache(maxsize=32)
def forward_symbols(grid: TorusGrid, real: bool = True) -> tuple[np.ndarray, ...]:
    """Symbols of D_j^+, i.e. (exp(i theta_j) - 1) / h."""
    return tuple((np.exp(1j * t) - 1) / grid.h for t in angles(grid, real))


@functools.lru_cache(maxsize=32)
def laplacian_symbol(grid: TorusGrid, real: bool = True) -> np.ndarray:
    """|k|_h^2 = (4/h^2) sum_j sin^2(theta_j / 2), the symbol of -Delta_h."""
    ang = angles(grid, real)
    out = np.zeros(spectral_shape(grid, real))
    for t in ang:
        out = out + (4.0 / grid.h**2) * np.sin(t / 2) ** 2
    out.flags.writeable = False
    return out


def spectral_shape(grid: TorusGrid, real: bool = True) -> tuple[int, ...]:
    if real:
        return (grid.L,) * (grid.d - 1) + (grid.L // 2 + 1,)
    return grid.shape


@functools.lru_cache(maxsize=32)
def rfft_weights(grid: TorusGrid) -> np.ndarray:
    """Multiplicity of each half-spectrum entry when summing over the full spectrum."""
    w = np.full(grid.L // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    shape = [1] * grid.d
    shape[-1] = w.size
    out = np.broadcast_to(w.reshape(shape), spectral_shape(grid, True))
    return out


def wavevectors(grid: TorusGrid, real: bool = False) -> tuple[np.ndarray, ...]:
    """Physical wavevector components 2 pi k_j / (L h)."""
    return tuple(t / grid.h for t in angles(grid, real))


def rfftn(u: np.ndarray) -> np.ndarray:
    return sfft.rfftn(u)


def irfftn(U: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return sfft.irfftn(U, s=grid.shape)


def fourier_multiplier_apply(
    grid: TorusGrid,
    u: np.ndarray,
    m: Callable[..., np.ndarray] | np.ndarray,
    m0: complex = 0.0,
) -> np.ndarray:
    """Return ``ifft(m(k) * fft(u))`` on the full lattice spectrum.

    ``m`` is either an array in the full FFT layout or a callable receiving the
    physical wavevector components (broadcastable arrays).  The value at
    ``k = 0`` is always taken from ``m0``.  Real input with a Hermitian
    symbol yields a real array; otherwise the complex result is returned.
    """
    u = np.asarray(u)
    if callable(m):
        ks = wavevectors(grid, real=False)
        with np.errstate(divide="ignore", invalid="ignore"):
            sym = np.broadcast_to(np.asarray(m(*ks), dtype=complex), grid.shape).copy()
    else:
        sym = np.array(m, dtype=complex, copy=True)
        if sym.shape != grid.shape:
            sym = np.broadcast_to(sym, grid.shape).copy()
    sym[(0,) * grid.d] = m0
    if not np.all(np.isfinite(sym)):
        bad = np.argwhere(~np.isfinite(sym))[0]
        raise SymbolSingular(f"multiplier undefined at frequency index {tuple(bad)}")
    out = sfft.ifftn(sym * sfft.fftn(u))
    if np.isrealobj(u):
        norm = np.linalg.norm(out)
        if norm == 0 or np.linalg.norm(out.imag) <= 1e-12 * norm:
            return out.real.copy()
    return out
