"""Two-scale expansion experiments on the torus.

Geometry.  The coefficient is constant on "micro cells" of physical size
``eps``; each micro cell is resolved by ``M`` lattice cells.  The same array
of ``(M/eps)^d`` values is viewed on two grids:

* the corrector grid, spacing ``1/M`` (micro cell = unit length), where the
  extended corrector is computed;
* the physical grid, spacing ``eps/M`` and period 1, where ``u_eps`` and
  ``u_hom`` live.

Because the lattices coincide index by index, ``phi(x/eps)`` is just the
corrector array, and ``eps * D^+ phi`` on the physical grid equals ``D^+ phi``
on the corrector grid.

Error identity.  With ``w_i = D_i^+ ubar`` (``ubar`` the moving average of
``u_hom``) and ``z = u_eps - ubar - eps phi_i w_i`` one has, for face-diagonal
coefficients ``c``,

    -D^- . (c D^+ z) = D^- . [(g - g_eps) + eps R],
    R_j = sum_i c_j phi_i(x + e_j) D_j^+ w_i - sum_{i,k} sigma_ijk(x - e_k) D_k^- w_i,

exactly up to the solver tolerances (discrete product rules plus the
skew-symmetry of ``sigma``).  ``two_scale_error`` evaluates both sides.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .corrector import ExtendedCorrector, compute_corrector
from .errors import GridMismatch, InvalidSpec, ScaleTooSmall, SingularAhom
from .fields import CoefficientField
from .lattice import (
    TorusGrid,
    discrete_divergence,
    discrete_gradient,
    forward_symbols,
    irfftn,
    minimal_image,
    refine,
    rfftn,
    shift,
    wavevectors,
)
from .scaling import SeriesPoint, ScalingReport, fit_power_law, mu_star
from .solver import DivFormOperator, SolveOptions, solve_divform

log = logging.getLogger(__name__)


# -- moving averages ---------------------------------------------------------


def ball_average_factor(k: np.ndarray, radius: float, d: int) -> np.ndarray:
    """Fourier factor of the normalized ball of ``radius``: average of ``exp(i k.y)`` over the ball."""
    t = np.asarray(k, dtype=float) * radius
    out = np.ones_like(t)
    # below 1e-2 the closed forms lose digits to cancellation (d=3 worst)
    nz = t > 1e-2
    tn = t[nz]
    if d == 1:
        out[nz] = np.sin(tn) / tn
    elif d == 2:
        out[nz] = 2.0 * special.j1(tn) / tn
    elif d == 3:
        out[nz] = 3.0 * (np.sin(tn) - tn * np.cos(tn)) / tn**3
    else:
        raise InvalidSpec(f"unsupported dimension {d}")
    small = ~nz
    if np.any(small):
        ts = t[small] ** 2
        out[small] = 1.0 - ts / (2.0 * (d + 2)) + ts**2 / (8.0 * (d + 2) * (d + 4))
    return out


def steklov_average(u: np.ndarray, eps: float, grid: TorusGrid) -> np.ndarray:
    """Moving average over balls of radius ``eps``, applied spectrally.

    Vector fields (leading axis of length d) are averaged per component.
    """
    if eps < grid.h * (1 - 1e-12):
        raise ScaleTooSmall(f"averaging radius {eps} is below the lattice spacing {grid.h}")
    ks = wavevectors(grid, real=True)
    kabs = np.sqrt(sum(k * k for k in ks))
    factor = ball_average_factor(kabs, eps, grid.d)
    u = np.asarray(u, dtype=float)
    if u.shape == grid.shape:
        return irfftn(factor * rfftn(u), grid)
    return np.stack([irfftn(factor * rfftn(c), grid) for c in u])


# -- homogenized problem -----------------------------------------------------


def solve_homogenized(ahom: np.ndarray, g: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Mean-zero ``u`` with ``-D^- . (A D^+ u) = D^- . g`` for a constant matrix ``A``."""
    A = np.asarray(ahom, dtype=float)
    if A.shape != (grid.d, grid.d):
        raise InvalidSpec(f"ahom must be {grid.d}x{grid.d}")
    if np.linalg.eigvalsh(0.5 * (A + A.T)).min() <= 0:
        raise SingularAhom("the symmetric part of ahom is not positive definite")
    s = forward_symbols(grid, real=True)
    symbol = sum(np.conj(s[j]) * A[j, i] * s[i] for j in range(grid.d) for i in range(grid.d))
    zero = (0,) * grid.d
    symbol = np.array(symbol, dtype=complex)
    symbol[zero] = 1.0
    G = [rfftn(np.asarray(g[j], dtype=float)) for j in range(grid.d)]
    rhs = -sum(np.conj(s[j]) * G[j] for j in range(grid.d))
    U = rhs / symbol
    U[zero] = 0.0
    return irfftn(U, grid)


def homogenized_residual(ahom: np.ndarray, u: np.ndarray, g: np.ndarray, grid: TorusGrid) -> float:
    grad = discrete_gradient(grid, u)
    flux = np.einsum("ji,i...->j...", np.asarray(ahom, dtype=float), grad)
    b = discrete_divergence(grid, g)
    bn = np.linalg.norm(b)
    if bn == 0:
        return 0.0
    return float(np.linalg.norm(discrete_divergence(grid, flux) + b) / bn)


# -- band-limited right-hand sides -------------------------------------------


@dataclass(frozen=True)
class Mode:
    k: tuple
    amplitude: tuple
    phase: float = 0.0


DEFAULT_MODES = (
    Mode((1, 0), (1.0, 0.0)),
    Mode((0, 1), (0.0, 0.5)),
    Mode((1, 1), (0.5, 0.5), 0.25),
)


def band_limited_field(grid: TorusGrid, modes) -> np.ndarray:
    """``g_j(x) = sum_m b_mj cos(2 pi k_m . x / period + phase_m)`` at the j-face positions."""
    modes = list(modes)
    if not modes or len(modes) > 4:
        raise InvalidSpec("band-limited fields use between 1 and 4 modes")
    base = [np.arange(grid.L).reshape([-1 if m == j else 1 for m in range(grid.d)]) * grid.h for j in range(grid.d)]
    g = np.zeros((grid.d,) + grid.shape)
    for mode in modes:
        k = np.asarray(mode.k, dtype=float)
        b = np.asarray(mode.amplitude, dtype=float)
        if k.shape != (grid.d,) or b.shape != (grid.d,):
            raise InvalidSpec(f"mode {mode} does not match d={grid.d}")
        for j in range(grid.d):
            if b[j] == 0:
                continue
            phase = sum(
                2 * math.pi * k[m] * (base[m] + (0.5 * grid.h if m == j else 0.0)) / grid.period for m in range(grid.d)
            )
            g[j] = g[j] + b[j] * np.cos(phase + 2 * math.pi * mode.phase)
    return g


def weighted_gradient_norm(g: np.ndarray, grid: TorusGrid, beta: float) -> float:
    """``(sum mu_*(|x|)^2 |D g|^2 h^d)^(1/2)`` with ``|x|`` the torus distance to the origin."""
    rho = np.sqrt(np.broadcast_to(sum(c * c for c in minimal_image(grid)), grid.shape))
    mu = np.vectorize(lambda r: mu_star(r, beta, grid.d))(rho)
    jac = sum(np.sum(discrete_gradient(grid, g[j]) ** 2, axis=0) for j in range(grid.d))
    return float(math.sqrt(np.sum(mu**2 * jac) * grid.cell_volume))


# -- the error functional ----------------------------------------------------


@dataclass
class TwoScaleResult:
    eps: float
    err_h1: float
    err_normalized: float
    predicted: float
    weighted_norm: float
    components: dict
    consistency: float
    meta: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.err_normalized / self.predicted if self.predicted > 0 else float("nan")

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "err_h1": self.err_h1,
            "err_normalized": self.err_normalized,
            "predicted": self.predicted,
            "ratio": self.ratio,
            "weighted_norm": self.weighted_norm,
            "components": dict(self.components),
            "consistency": self.consistency,
            "meta": dict(self.meta),
        }


def tightened(opts: SolveOptions) -> SolveOptions:
    """Two orders of magnitude below ``opts.tol``.

    The error identity mixes the corrector and ``u_eps`` residuals with
    different normalizations; solving both tighter keeps its check within
    ``10 tol`` of the nominal tolerance.
    """
    return SolveOptions(max(opts.tol * 1e-2, 1e-13), opts.max_iter, opts.precondition)


def _l2(F: np.ndarray, grid: TorusGrid) -> float:
    return float(math.sqrt(np.sum(F * F) * grid.cell_volume))


def two_scale_error(
    a_fine: CoefficientField,
    corrector: ExtendedCorrector,
    g: np.ndarray,
    eps: float,
    opts: SolveOptions | None = None,
    beta: float = math.inf,
    average: bool = True,
) -> TwoScaleResult:
    """``|grad z_eps|`` for one sample plus the error-identity consistency check.

    ``average=False`` skips the moving average (``ubar = u_hom``, ``g_eps = g``);
    for a constant coefficient ``z`` then vanishes up to the solver tolerance,
    which is the degenerate control of the experiment.
    """
    opts = opts or SolveOptions()
    grid = a_fine.grid
    cgrid = corrector.grid
    if (cgrid.d, cgrid.L) != (grid.d, grid.L) or not math.isclose(grid.h, eps * cgrid.h, rel_tol=1e-12):
        raise GridMismatch(
            f"physical grid {grid} is not the corrector grid {cgrid} scaled by eps={eps}"
        )
    if not a_fine.is_diagonal():
        raise InvalidSpec("the two-scale error identity is implemented for face-diagonal coefficients")
    d = grid.d
    res = solve_divform(a_fine, g, tightened(opts))
    u_eps = res.u
    u_hom = solve_homogenized(corrector.ahom_sample, g, grid)
    ubar = steklov_average(u_hom, eps, grid) if average else u_hom
    g_eps = steklov_average(g, eps, grid) if average else g
    w = discrete_gradient(grid, ubar)
    phi = eps * corrector.phi
    z = u_eps - ubar - np.sum(phi * w, axis=0)
    grad_z = discrete_gradient(grid, z)
    err = _l2(grad_z, grid)

    face = DivFormOperator(a_fine).face
    h = grid.h
    R = np.zeros((d,) + grid.shape)
    for j in range(d):
        for i in range(d):
            R[j] += face[j] * shift(phi[i], 1, j) * (shift(w[i], 1, j) - w[i]) / h
            for k in range(d):
                if k == j:
                    continue
                sig = eps * corrector.sigma(i, j, k)
                R[j] -= shift(sig, -1, k) * (w[i] - shift(w[i], -1, k)) / h
    rhs_field = (g - g_eps) + R
    lhs = discrete_divergence(grid, face * grad_z)
    rhs = discrete_divergence(grid, rhs_field)
    rn = np.linalg.norm(rhs)
    consistency = float(np.linalg.norm(lhs + rhs) / rn) if rn > 0 else float(np.linalg.norm(lhs))
    wn = weighted_gradient_norm(g, grid, beta)
    predicted = eps * mu_star(1.0 / eps, beta, d)
    return TwoScaleResult(
        eps=float(eps),
        err_h1=err,
        err_normalized=err / wn if wn > 0 else float("nan"),
        predicted=float(predicted),
        weighted_norm=wn,
        components={"g_minus_g_eps": _l2(g - g_eps, grid), "corrector_term": _l2(R, grid)},
        consistency=consistency,
        meta={
            "solve_residual": res.residual,
            "iters": res.iters,
            "relative_err": err / _l2(discrete_gradient(grid, u_eps), grid) if np.any(u_eps) else 0.0,
            "averaged": average,
        },
    )


# -- campaign ----------------------------------------------------------------


def two_scale_grids(d: int, eps: float, resolution: int) -> tuple[TorusGrid, TorusGrid, TorusGrid]:
    """(micro-cell grid, corrector grid, physical grid) for one ``eps``."""
    n = round(1.0 / eps)
    if n < 4 or abs(n * eps - 1) > 1e-12 or n & (n - 1):
        raise InvalidSpec(f"eps must be 2^-m with 2^m >= 4, got {eps}")
    if resolution < 1 or resolution & (resolution - 1):
        raise InvalidSpec(f"resolution must be a power of two, got {resolution}")
    micro = TorusGrid(d, n, 1.0)
    corr = TorusGrid(d, n * resolution, 1.0 / resolution)
    phys = TorusGrid(d, n * resolution, eps / resolution)
    return micro, corr, phys


def two_scale_sample(config, eps: float, index: int) -> TwoScaleResult:
    camp = config.campaign
    micro, cgrid, pgrid = two_scale_grids(config.grid.d, eps, camp.resolution)
    a_micro = config.medium(index, grid=micro)
    values = refine(a_micro.values, camp.resolution, axes=range(a_micro.values.ndim - micro.d, a_micro.values.ndim))
    a_corr = CoefficientField(cgrid, values, a_micro.lam)
    a_phys = CoefficientField(pgrid, values, a_micro.lam)
    corr = compute_corrector(a_corr, tightened(config.solver))
    g = band_limited_field(pgrid, camp.modes)
    return two_scale_error(a_phys, corr, g, eps, config.solver, beta=config.effective_beta)


def measure_two_scale(config, threads: int = 1, collect=None) -> ScalingReport:
    """Normalized ``|grad z_eps|`` over the configured ``eps`` list, fitted against ``eps``."""
    from .runner import map_samples

    eps_list = sorted((float(e) for e in config.campaign.eps), reverse=True)
    tasks = [(e, n) for e in eps_list for n in range(config.sampling.N)]
    rows, failures = map_samples(lambda t: two_scale_sample(config, *tasks[t]), len(tasks), threads, fail_soft=True)
    if collect is not None:
        collect.extend(failures)
    by_eps: dict = {e: [] for e in eps_list}
    failed = {f["index"] for f in failures}
    ok_tasks = [t for i, t in enumerate(tasks) if i not in failed]
    for (e, _), row in zip(ok_tasks, rows):
        by_eps[e].append(row)
    series, predicted, ratios, consistency = [], [], [], []
    for e in eps_list:
        results = by_eps[e]
        if not results:
            continue
        vals = np.array([r.err_normalized for r in results])
        stderr = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        series.append(SeriesPoint(e, float(vals.mean()), stderr, len(vals)))
        predicted.append(results[0].predicted)
        ratios.append(float(np.mean([r.ratio for r in results])))
        consistency.append(float(max(r.consistency for r in results)))
    # eps_list is descending, reports are ascending in scale
    series, predicted, ratios, consistency = series[::-1], predicted[::-1], ratios[::-1], consistency[::-1]
    report = ScalingReport(
        "TwoScale",
        series,
        predicted,
        config_hash=config.hash(),
        predicted_exponent=None,
        diagnostics={"failures": failures, "ratio": ratios, "consistency": consistency},
    )
    values = report.values()
    report.diagnostics["strictly_decreasing"] = bool(all(b > a for a, b in zip(values, values[1:])))
    if len(series) >= 3:
        report.fit = fit_power_law([(p.scale, p.value, p.stderr) for p in report.series])
        pred_fit = fit_power_law([(p.scale, v, 0.0) for p, v in zip(report.series, report.predicted)])
        report.predicted_exponent = pred_fit.exponent
    return report
