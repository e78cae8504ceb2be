"""Heterogeneous elliptic solves on the torus.

The discrete operator is ``A u = -D^- . flux(D^+ u)`` where ``flux`` applies
the coefficient on faces:

* diagonal entries ``a_jj`` use the harmonic mean of the two cells sharing
  the j-face (exact for laminates),
* off-diagonal entries act through cell-centered gradients
  ``G_l = (F_l(x) + F_l(x - e_l)) / 2`` and are moved back to the j-face by
  arithmetic averaging, which keeps ``A`` symmetric whenever ``a`` is.

Symmetric problems use preconditioned CG; non-symmetric coefficients switch
to BiCGSTAB behind the same interface.  The preconditioner is the
constant-coefficient inverse built from the mean diagonal of ``a``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import IllConditioned, InvalidSpec, NoConvergence
from .fields import CoefficientField
from .lattice import (
    TorusGrid,
    discrete_divergence,
    discrete_gradient,
    forward_symbols,
    irfftn,
    laplacian_symbol,
    rfftn,
    shift,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-9
    max_iter: int | None = None
    precondition: bool = True

    def __post_init__(self):
        if not (0 < self.tol <= 1e-3):
            raise InvalidSpec(f"tol must lie in (0, 1e-3], got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise InvalidSpec(f"max_iter must be >= 1, got {self.max_iter}")

    def iteration_cap(self, grid: TorusGrid) -> int:
        return self.max_iter if self.max_iter is not None else 10 * grid.L


@dataclass
class SolveResult:
    u: np.ndarray
    residual: float
    iters: int
    history: list = field(default_factory=list)
    method: str = "cg"


def harmonic_mean(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 2.0 * x * y / (x + y)


class DivFormOperator:
    """Face-averaged divergence-form operator for one coefficient field."""

    def __init__(self, a: CoefficientField, mass: float = 0.0):
        self.a = a
        self.grid = a.grid
        self.mass = float(mass)
        d = self.grid.d
        self.face = np.empty((d,) + self.grid.shape)
        for j in range(d):
            ajj = np.broadcast_to(a.entry(j, j), self.grid.shape)
            self.face[j] = harmonic_mean(ajj, shift(ajj, 1, j))
        self.offdiag = None
        if not a.is_diagonal():
            self.offdiag = {
                (j, l): np.ascontiguousarray(a.values[j, l])
                for j in range(d)
                for l in range(d)
                if j != l and np.any(a.values[j, l])
            }
        self.symmetric = a.is_symmetric()
        self._mean_diag = np.array([float(np.mean(a.entry(j, j))) for j in range(d)])

    def flux(self, F: np.ndarray) -> np.ndarray:
        """Apply the face-averaged coefficient to a staggered vector field."""
        out = self.face * F
        if self.offdiag:
            d = self.grid.d
            centered = [0.5 * (F[l] + shift(F[l], -1, l)) for l in range(d)]
            for (j, l), ajl in self.offdiag.items():
                cell = ajl * centered[l]
                out[j] += 0.5 * (cell + shift(cell, 1, j))
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        if self.offdiag:
            out = -discrete_divergence(self.grid, self.flux(discrete_gradient(self.grid, u)))
        else:
            out = kernels.divform_apply_diag(self.face, u, self.grid.h)
        if self.mass:
            out = out + self.mass * u
        return out

    def rhs(self, g: np.ndarray) -> np.ndarray:
        """Right-hand side of ``-div(a grad u) = div g``."""
        return discrete_divergence(self.grid, g)

    def preconditioner(self):
        syms = forward_symbols(self.grid, real=True)
        symbol = sum(self._mean_diag[j] * np.abs(s) ** 2 for j, s in enumerate(syms)) + self.mass
        with np.errstate(divide="ignore"):
            inv = 1.0 / symbol
        inv[(0,) * self.grid.d] = 0.0 if self.mass == 0 else 1.0 / self.mass
        grid = self.grid

        def apply(r):
            return irfftn(inv * rfftn(r), grid)

        return apply


def _pcg(op: DivFormOperator, b, precond, tol, max_iter, project_mean):
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    history = [{"iter": 0, "residual": 1.0, "precond_residual": np.sqrt(abs(rz)) / bnorm}]
    best = (x.copy(), 1.0)
    it = 0
    restarts = 0
    while it < max_iter:
        Ap = op.apply(p)
        curvature = float(np.vdot(p, Ap))
        if curvature <= 0:
            raise IllConditioned(f"non-positive curvature {curvature:.3e} at iteration {it}")
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if project_mean:
            r -= r.mean()
        rel = np.linalg.norm(r) / bnorm
        z = precond(r)
        rz_new = float(np.vdot(r, z))
        history.append(
            {"iter": it, "residual": float(rel), "precond_residual": float(np.sqrt(abs(rz_new)) / bnorm)}
        )
        if rel < best[1]:
            best = (x.copy(), rel)
        if rel <= tol:
            true_r = b - op.apply(x)
            if project_mean:
                true_r -= true_r.mean()
            true_rel = np.linalg.norm(true_r) / bnorm
            if true_rel <= tol or restarts >= 3:
                return x, float(true_rel), it, history
            # recursive residual drifted away from the true one: restart from x
            restarts += 1
            r = true_r
            z = precond(r)
            rz_new = float(np.vdot(r, z))
            p = z.copy()
            rz = rz_new
            continue
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NoConvergence(
        f"CG stopped after {it} iterations at relative residual {best[1]:.3e} (tol {tol:.1e})",
        u=best[0],
        residual=best[1],
        iters=it,
        history=history,
    )


def _bicgstab(op: DivFormOperator, b, precond, tol, max_iter, project_mean):
    # right-preconditioned: iterate on y with x = M^{-1} y implicitly
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    r = b.copy()
    r_hat = r.copy()
    rho_old = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    history = [{"iter": 0, "residual": 1.0}]
    best = (x.copy(), 1.0)
    for it in range(1, max_iter + 1):
        rho = float(np.vdot(r_hat, r))
        if rho == 0:
            break
        beta = (rho / rho_old) * (alpha / omega)
        p = r + beta * (p - omega * v)
        p_hat = precond(p)
        v = op.apply(p_hat)
        alpha = rho / float(np.vdot(r_hat, v))
        s = r - alpha * v
        s_hat = precond(s)
        t = op.apply(s_hat)
        tt = float(np.vdot(t, t))
        omega = float(np.vdot(t, s)) / tt if tt > 0 else 0.0
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        if project_mean:
            r -= r.mean()
        rho_old = rho
        rel = np.linalg.norm(r) / bnorm
        history.append({"iter": it, "residual": float(rel)})
        if rel < best[1]:
            best = (x.copy(), rel)
        if rel <= tol:
            true_r = b - op.apply(x)
            if project_mean:
                true_r -= true_r.mean()
            true_rel = np.linalg.norm(true_r) / bnorm
            if true_rel <= 10 * tol:
                return x, float(true_rel), it, history
        if omega == 0:
            break
    raise NoConvergence(
        f"BiCGSTAB stopped at relative residual {best[1]:.3e} (tol {tol:.1e})",
        u=best[0],
        residual=best[1],
        iters=len(history) - 1,
        history=history,
    )


def _solve(op: DivFormOperator, b: np.ndarray, opts: SolveOptions, project_mean: bool) -> SolveResult:
    grid = op.grid
    if project_mean:
        b = b - b.mean()
    if not np.any(b) or np.linalg.norm(b) == 0:
        return SolveResult(np.zeros(grid.shape), 0.0, 0, [], "none")
    if opts.precondition:
        precond = op.preconditioner()
    elif project_mean:
        def precond(r):
            return r - r.mean()
    else:
        def precond(r):
            return r.copy()
    method = "cg" if op.symmetric else "bicgstab"
    solver = _pcg if op.symmetric else _bicgstab
    u, res, iters, history = solver(op, b, precond, opts.tol, opts.iteration_cap(grid), project_mean)
    if project_mean:
        u = u - u.mean()
    log.debug("%s converged in %d iterations, residual %.3e", method, iters, res)
    return SolveResult(u, res, iters, history, method)


def solve_divform(a: CoefficientField, g: np.ndarray, opts: SolveOptions | None = None) -> SolveResult:
    """Mean-zero solution of ``-div(a grad u) = div g`` on the torus."""
    opts = opts or SolveOptions()
    op = DivFormOperator(a)
    return _solve(op, op.rhs(np.asarray(g, dtype=float)), opts, project_mean=True)


def solve_massive(
    a: CoefficientField, g: np.ndarray, T: float, opts: SolveOptions | None = None
) -> SolveResult:
    """Solution of ``u / T - div(a grad u) = div g``; the mass term fixes the constant."""
    if not (T > 0):
        raise InvalidSpec(f"T must be positive, got {T}")
    opts = opts or SolveOptions()
    op = DivFormOperator(a, mass=1.0 / T)
    return _solve(op, op.rhs(np.asarray(g, dtype=float)), opts, project_mean=False)


def solve_poisson(grid: TorusGrid, rhs: np.ndarray) -> np.ndarray:
    """Mean-zero ``u`` with ``-Delta_h u = rhs - mean(rhs)``, by FFT."""
    rhs = np.asarray(rhs, dtype=float)
    mean = float(rhs.mean())
    if mean:
        log.debug("solve_poisson: projected out mean %.3e", mean)
    lap = laplacian_symbol(grid, real=True)
    R = rfftn(rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        U = R / lap
    U[(0,) * grid.d] = 0.0
    return irfftn(U, grid)


def divform_residual(a: CoefficientField, u: np.ndarray, g: np.ndarray) -> float:
    """Relative residual ``|div(a grad u + g)| / |div g|`` (0 when div g vanishes)."""
    op = DivFormOperator(a)
    b = op.rhs(g)
    bn = np.linalg.norm(b - b.mean())
    if bn == 0:
        return 0.0
    r = b - op.apply(u)
    return float(np.linalg.norm(r - r.mean()) / bn)
