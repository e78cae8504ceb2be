"""Independent reference computations.

* The linearized corrector ``-Delta phi = div(omega e_1)`` has a closed-form
  second-moment structure: the annulus-averaged increment variance is a
  single lattice sum over Fourier modes.  ``linearized_variance_exact``
  evaluates it; ``linearized_variance_mc`` estimates the same quantity by
  sampling, and the two must agree statistically.
* ``dense_solve_reference`` assembles the heterogeneous operator as an
  explicit matrix with its own index arithmetic and factorizes it, which
  gives the Krylov solvers something to be checked against.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidSpec, SingularSystem, TooLarge
from .fields import CoefficientField, SpectrumKind, SpectrumSpec, discrete_spectrum, sample_gaussian_field
from .lattice import (
    TorusGrid,
    annulus_mask,
    forward_symbols,
    irfftn,
    laplacian_symbol,
    rfft_weights,
    rfftn,
    shift,
)
from .solver import solve_poisson

DENSE_LIMIT = 4096


class Regime(str, enum.Enum):
    SUB_CRITICAL = "SubCritical"
    CRITICAL_D2 = "CriticalD2"
    CRITICAL_DGT2 = "CriticalDgt2"


def regime_for(spec: SpectrumSpec, d: int) -> Regime:
    beta = spec.effective_beta
    if beta < min(2.0, d):
        return Regime.SUB_CRITICAL
    if beta == 2.0 and d == 2:
        return Regime.CRITICAL_D2
    if beta == 2.0 and d > 2:
        return Regime.CRITICAL_DGT2
    raise InvalidSpec(f"no variance regime for beta={beta}, d={d}")


@dataclass
class VarianceCurve:
    radii: list
    values: list
    regime: Regime
    stderr: list | None = None
    samples: int = 0
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "radii": [float(r) for r in self.radii],
            "values": [float(v) for v in self.values],
            "stderr": None if self.stderr is None else [float(s) for s in self.stderr],
            "regime": self.regime.value,
            "samples": self.samples,
        }


def _check(spec: SpectrumSpec, grid: TorusGrid, radii) -> list:
    if spec.kind not in (SpectrumKind.POWER_LAW, SpectrumKind.LORENTZIAN):
        raise InvalidSpec("the variance oracle needs a PowerLaw or Lorentzian spectrum")
    spec.validate_for(grid.d)
    radii = [float(r) for r in radii]
    limit = grid.period / 4
    for r in radii:
        if r < 0 or r > limit:
            raise InvalidSpec(f"radius {r} outside [0, {limit}]")
    return radii


def annulus_factor(grid: TorusGrid, radius: float) -> np.ndarray:
    """``avg over R<|x|<2R of |exp(i k.x) - 1|^2`` for every mode (rfft layout)."""
    mask = annulus_mask(grid, radius, 2 * radius)
    count = int(mask.sum())
    if count == 0:
        raise InvalidSpec(f"annulus at R={radius} contains no lattice cells")
    return 2.0 - 2.0 * rfftn(mask.astype(float)).real / count


def linearized_variance_exact(
    spec: SpectrumSpec, grid: TorusGrid, radii, direction: int = 0
) -> VarianceCurve:
    """Lattice-sum evaluation of the annulus-averaged increment variance."""
    radii = _check(spec, grid, radii)
    spectrum = discrete_spectrum(spec, grid)
    lap = laplacian_symbol(grid, real=True)
    s = forward_symbols(grid, real=True)[direction]
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = np.abs(s) ** 2 / lap**2 * spectrum
    kernel[(0,) * grid.d] = 0.0
    kernel *= rfft_weights(grid)
    values = []
    for r in radii:
        if r == 0:
            values.append(0.0)
            continue
        values.append(float(np.sum(kernel * annulus_factor(grid, r)) / grid.volume))
    return VarianceCurve(radii, values, regime_for(spec, grid.d), meta={"direction": direction})


def linearized_corrector(omega: np.ndarray, grid: TorusGrid, direction: int = 0) -> np.ndarray:
    """Mean-zero ``phi`` with ``-Delta_h phi = div(omega e_dir)``."""
    rhs = (omega - shift(omega, -1, direction)) / grid.h
    return solve_poisson(grid, rhs)


def increment_variance(phi: np.ndarray, grid: TorusGrid, masks) -> list[float]:
    """Spatially averaged ``(phi(y+x) - phi(y))^2``, then averaged over each mask of lags ``x``."""
    F = rfftn(phi)
    auto = irfftn(F * np.conj(F), grid) / grid.ncells
    c0 = auto[(0,) * grid.d]
    return [float(np.mean(2.0 * (c0 - auto[m]))) if m is not None else 0.0 for m in masks]


def linearized_variance_mc(
    spec: SpectrumSpec,
    grid: TorusGrid,
    radii,
    N: int,
    seed: int,
    direction: int = 0,
    amplitude_zero: bool = False,
) -> VarianceCurve:
    """Monte-Carlo estimate of the same curve, with standard errors over samples.

    ``amplitude_zero`` replaces the field by ``omega = 0`` (a degenerate
    ensemble used as a sanity check).
    """
    radii = _check(spec, grid, radii)
    if N < 8:
        raise InvalidSpec(f"need N >= 8 samples, got {N}")
    masks = [annulus_mask(grid, r, 2 * r) if r > 0 else None for r in radii]
    per_sample = np.zeros((N, len(radii)))
    for n in range(N):
        if amplitude_zero:
            continue
        omega = sample_gaussian_field(spec, grid, seed, n)
        phi = linearized_corrector(omega, grid, direction)
        per_sample[n] = increment_variance(phi, grid, masks)
    mean = per_sample.mean(axis=0)
    stderr = per_sample.std(axis=0, ddof=1) / math.sqrt(N)
    return VarianceCurve(
        radii,
        mean.tolist(),
        regime_for(spec, grid.d),
        stderr=stderr.tolist(),
        samples=N,
        meta={"direction": direction, "seed": seed},
    )


# -- dense reference solve -------------------------------------------------


def _index(grid: TorusGrid):
    strides = np.cumprod((1,) + grid.shape[:0:-1])[::-1]

    def flat(cell, axis=None, step=0):
        c = list(cell)
        if axis is not None:
            c[axis] = (c[axis] + step) % grid.L
        return int(sum(ci * si for ci, si in zip(c, strides)))

    return flat


def assemble_dense(a: CoefficientField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Explicit gradient ``G`` (faces x cells), face coefficient ``K`` and ``A = G^T K G``."""
    grid = a.grid
    d, n, h = grid.d, grid.ncells, grid.h
    flat = _index(grid)
    cells = list(np.ndindex(*grid.shape))
    G = np.zeros((d * n, n))
    for cell in cells:
        x = flat(cell)
        for j in range(d):
            G[j * n + x, flat(cell, j, 1)] += 1.0 / h
            G[j * n + x, x] -= 1.0 / h
    K = np.zeros((d * n, d * n))
    values = a.matrix()
    for cell in cells:
        x = flat(cell)
        for j in range(d):
            xp = flat(cell, j, 1)
            left, right = values[(j, j) + cell], values[(j, j) + np.unravel_index(xp, grid.shape)]
            K[j * n + x, j * n + x] = 2 * left * right / (left + right)
            for l in range(d):
                if l == j:
                    continue
                # flux_j(x) += 1/2 [cell_j(x) + cell_j(x + e_j)],
                # cell_j(y) = a_jl(y) (F_l(y) + F_l(y - e_l)) / 2
                for y_cell in (cell, np.unravel_index(xp, grid.shape)):
                    y = flat(y_cell)
                    ajl = values[(j, l) + tuple(y_cell)]
                    if ajl == 0:
                        continue
                    K[j * n + x, l * n + y] += 0.25 * ajl
                    K[j * n + x, l * n + flat(y_cell, l, -1)] += 0.25 * ajl
    return G, K, G.T @ K @ G


def dense_solve_reference(a: CoefficientField, g: np.ndarray) -> np.ndarray:
    """Mean-zero solution of ``-div(a grad u) = div g`` by dense factorization."""
    grid = a.grid
    n = grid.ncells
    if n > DENSE_LIMIT:
        raise TooLarge(f"{n} cells exceed the dense limit of {DENSE_LIMIT}")
    G, K, A = assemble_dense(a)
    g = np.asarray(g, dtype=float).reshape(grid.d * n)
    b = -G.T @ g
    # the kernel is the constants; pin it with a rank-one term
    M = A + np.full((n, n), 1.0 / n)
    try:
        lu = scipy.linalg.lu_factor(M, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(np.diag(lu[0]))):
        raise SingularSystem("assembled operator is singular beyond the constant mode")
    u = scipy.linalg.lu_solve(lu, b)
    u -= u.mean()
    bn = np.linalg.norm(b)
    if bn > 0 and np.linalg.norm(A @ u - b) > 1e-10 * bn:
        raise SingularSystem("dense solve did not reproduce the right-hand side")
    return u.reshape(grid.shape)
