"""Scaling laws, averaging fields and the Monte-Carlo campaigns that test them.

Scaling laws
    ``pi_star`` is the decay scale of spatial averages of the corrector
    gradients, ``mu_star`` / ``mu_alpha_d`` the growth scale of the corrector
    itself.  Both are piecewise in the correlation exponent with logarithmic
    behaviour at the critical values.

Averaging fields
    ``make_g1`` and ``make_g2`` build lattice gradient fields ``g = D^+ theta``
    whose divergence is a difference of normalized ball indicators, so that
    pairing ``grad phi`` with ``g`` returns a difference of ball averages of
    ``phi``.  They are realized by an exact torus Poisson solve, which keeps
    both the gradient property and the averaging identity exact.

Campaigns
    ``measure_average_decay`` and ``measure_corrector_growth`` sample media
    from an experiment config, compute extended correctors and reduce the
    statistics in sample order, so the report does not depend on threading.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import DegenerateSeries, DomainError, GeometryError, InvalidSpec
from .fields import CoefficientField, rng_stream
from .lattice import (
    TorusGrid,
    ball_mask,
    discrete_curl,
    discrete_divergence,
    discrete_gradient,
    distance,
    irfftn,
    minimal_image,
    rfftn,
    shift,
)
from .solver import SolveOptions, solve_divform, solve_poisson

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


# -- scaling laws ----------------------------------------------------------


class LawKind(str, enum.Enum):
    PI_STAR = "PiStar"
    MU_STAR = "MuStar"
    MU_ALPHA_D = "MuAlphaD"


def pi_star(r: float, beta: float, d: int) -> float:
    """``r^beta`` (beta < d), ``r^d / log r`` (beta = d), ``r^d`` (beta > d)."""
    if beta < d:
        return float(r) ** beta
    if beta == d:
        if r < 2:
            raise DomainError(f"pi_star at beta = d needs r >= 2, got {r}")
        return float(r) ** d / math.log(r)
    return float(r) ** d


def mu_alpha_d(r: float, alpha: float, d: int) -> float:
    if r < 0:
        raise DomainError(f"r must be non-negative, got {r}")
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if alpha < 2:
        return (r + 1.0) ** (1.0 - alpha / 2.0)
    if d < 2:
        raise DomainError(f"growth law undefined for alpha={alpha} in d={d}")
    if alpha == 2 and d == 2:
        return math.log(r + 2.0)
    if (alpha == 2 and d > 2) or (alpha > 2 and d == 2):
        return math.sqrt(math.log(r + 2.0))
    return 1.0


def mu_star(r: float, beta: float, d: int) -> float:
    return mu_alpha_d(r, beta, d)


@dataclass(frozen=True)
class ScalingLaw:
    kind: LawKind
    beta: float
    d: int
    alpha: float | None = None

    def __call__(self, r: float) -> float:
        if self.kind is LawKind.PI_STAR:
            return pi_star(r, self.beta, self.d)
        if self.kind is LawKind.MU_STAR:
            return mu_star(r, self.beta, self.d)
        return mu_alpha_d(r, self.alpha if self.alpha is not None else self.beta, self.d)

    @property
    def critical(self) -> bool:
        """Whether the law carries a logarithm (power fits are then not meaningful)."""
        if self.kind is LawKind.PI_STAR:
            return self.beta == self.d
        exponent = self.alpha if (self.kind is LawKind.MU_ALPHA_D and self.alpha is not None) else self.beta
        return exponent >= 2 and not (exponent > 2 and self.d > 2)


# -- averaging fields ------------------------------------------------------


class AveragingKind(str, enum.Enum):
    G1_DIPOLE = "G1Dipole"
    G2_MASK = "G2Mask"
    SKEW = "SkewG"


@dataclass
class AveragingField:
    kind: AveragingKind
    grid: TorusGrid
    r: float
    values: np.ndarray  # (d,) + shape, staggered like a gradient
    weights: np.ndarray | None = None  # -div(values), the realized averaging measure
    center: tuple | None = None
    meta: dict = field(default_factory=dict)

    def pair(self, F: np.ndarray) -> float:
        """Lattice integral ``sum_x F(x) . g(x)`` (times the cell volume)."""
        return float(np.sum(F * self.values) * self.grid.cell_volume)


def ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def dipole_radial_derivative(rho, d: int):
    """Radial derivative of the decaying ``h`` with ``-Delta h = 1_B / |B|`` (unit ball).

    ``-rho / (d |B|)`` inside the ball and ``-1 / (d |B| rho^(d-1))`` outside;
    the magnitude at ``rho = 1`` is ``1 / (d |B|)``.
    """
    rho = np.asarray(rho, dtype=float)
    vol = ball_volume(d)
    inside = rho <= 1
    with np.errstate(divide="ignore"):
        outer = -1.0 / (d * vol * np.where(inside, 1.0, rho) ** (d - 1))
    return np.where(inside, -rho / (d * vol), outer)


def _check_fits(grid: TorusGrid, extent: float):
    if extent > grid.period / 4 + 1e-12:
        raise GeometryError(f"averaging field of extent {extent} does not fit a quarter of the period {grid.period}")


def _ball_weights(grid: TorusGrid, radius: float, center=None) -> np.ndarray:
    mask = ball_mask(grid, radius, center)
    count = int(mask.sum())
    if count == 0:
        raise GeometryError(f"ball of radius {radius} contains no cells")
    return mask / (count * grid.cell_volume)


def make_g1(x: Sequence[float], r: float, grid: TorusGrid) -> AveragingField:
    """Dipole field with ``-div g1 = 1_{B_r(x)}/|B_r(x)| - 1_{B_r}/|B_r|``.

    ``x`` is a lattice point in physical units; balls are the discrete ones
    (cells whose centers lie within ``r``).
    """
    x = tuple(float(c) for c in x)
    if len(x) != grid.d:
        raise GeometryError(f"center {x} has the wrong dimension for d={grid.d}")
    if r <= 0:
        raise GeometryError(f"radius must be positive, got {r}")
    _check_fits(grid, math.hypot(*x) + r)
    w = _ball_weights(grid, r, x) - _ball_weights(grid, r)
    if not np.any(w):
        values = np.zeros((grid.d,) + grid.shape)
    else:
        values = discrete_gradient(grid, solve_poisson(grid, w))
    return AveragingField(AveragingKind.G1_DIPOLE, grid, float(r), values, w, center=x)


def make_g2(r: float, grid: TorusGrid, method: str = "lattice") -> AveragingField:
    """Mask field converting unit-ball versus ``B_r`` averages.

    ``method="lattice"`` solves ``-Delta theta = 1_B/|B| - 1_{B_r}/|B_r|`` on
    the torus: the averaging identity is exact but the field leaks a small,
    fast-decaying tail outside ``B_r``.  ``method="radial"`` samples the
    continuum radial potential instead: the support is exactly inside
    ``B_r`` and the field is an exact lattice gradient, while the realized
    weights only approximate the discrete indicators.
    """
    if r < 1:
        raise GeometryError(f"g2 needs r >= 1, got {r}")
    _check_fits(grid, r)
    if method == "lattice":
        w = _ball_weights(grid, 1.0) - _ball_weights(grid, r)
        values = np.zeros((grid.d,) + grid.shape) if not np.any(w) else discrete_gradient(grid, solve_poisson(grid, w))
    elif method == "radial":
        theta = _radial_mask_potential(distance(grid), float(r), grid.d)
        values = discrete_gradient(grid, theta)
        w = -discrete_divergence(grid, values)
    else:
        raise InvalidSpec(f"unknown g2 method {method!r}")
    return AveragingField(AveragingKind.G2_MASK, grid, float(r), values, w, meta={"method": method})


def _radial_mask_potential(rho: np.ndarray, r: float, d: int) -> np.ndarray:
    """Potential of ``1_B/|B| - 1_{B_r}/|B_r|``, normalized to vanish for ``rho >= r``."""
    vol = ball_volume(d)

    def dh(s):
        inner = min(s, 1.0) ** d - min(s, r) ** d / r**d
        return -inner / (d * vol * s ** (d - 1)) if s > 0 else 0.0

    flat = np.round(rho.ravel(), 12)
    levels, inverse = np.unique(flat, return_inverse=True)
    values = np.zeros(levels.size)
    for n, s in enumerate(levels):
        if s < r:
            pts = [p for p in (1.0,) if s < p < r]
            values[n] = -integrate.quad(dh, s, r, points=pts or None, limit=200)[0]
    return values[inverse].reshape(rho.shape)


# Frozen dipole constants.  Calibration: max of |g1(y)| (|y| + r)^d / r over
# r in {2, ..., 32}, |x| = r along an axis and the diagonal, L from 64 to 512.
# Observed maxima 0.91 (d=1), 0.79 (d=2), 1.59 (d=3), flat in L; the frozen
# values add roughly 25% headroom.
G1_CONSTANTS = {1: 1.2, 2: 1.0, 3: 2.0}


def dipole_bound_ratio(g: AveragingField) -> float:
    """``max_y |g1(y)| (|y| + r)^d / r`` over the realized field (face positions).

    The frozen constants cover centers with ``|x| <= r``; farther centers
    carry a larger dipole moment and the ratio grows like ``|x| / r``.
    """
    grid = g.grid
    y = minimal_image(grid)
    worst = 0.0
    for j in range(grid.d):
        pos = [comp + (0.5 * grid.h if m == j else 0.0) for m, comp in enumerate(y)]
        rho = np.sqrt(sum(p * p for p in pos))
        worst = max(worst, float(np.max(np.abs(g.values[j]) * (rho + g.r) ** grid.d / g.r)))
    return worst


def sigma_average_transform(g: AveragingField, j: int, k: int) -> AveragingField:
    """``S g`` with ``S = e_j (x) e_k - e_k (x) e_j`` on the staggered lattice.

    For ``sigma_ijk`` stored at ``x + (e_j + e_k)/2`` and ``g = D^+ theta``,
    ``sum D^+ sigma_ijk . g = sum q_i . S g`` where component j of ``S g`` is
    ``g_k(x - e_k)`` and component k is ``-g_j(x - e_j)``.
    """
    if j == k:
        raise IndexError("sigma_average_transform needs j != k")
    d = g.grid.d
    if not (0 <= j < d and 0 <= k < d):
        raise IndexError(f"indices ({j}, {k}) out of range for d={d}")
    curl = discrete_curl(g.grid, g.values)
    scale = max(np.abs(g.values).max(), 1e-300)
    if curl.size and np.abs(curl).max() > 1e-10 * scale:
        raise InvalidSpec("sigma_average_transform needs a gradient field")
    out = np.zeros_like(g.values)
    out[j] = shift(g.values[k], -1, k)
    out[k] = -shift(g.values[j], -1, j)
    return AveragingField(AveragingKind.SKEW, g.grid, g.r, out, None, g.center, {"j": j, "k": k})


# -- fitting ---------------------------------------------------------------


@dataclass(frozen=True)
class PowerFit:
    exponent: float
    intercept: float
    stderr: float

    def as_dict(self) -> dict:
        return {"exponent": self.exponent, "intercept": self.intercept, "stderr": self.stderr}


def fit_power_law(series) -> PowerFit:
    """Weighted least squares of ``log value`` against ``log scale``.

    ``series`` holds ``(scale, value, stderr)`` triples.  The log-space
    uncertainty is ``stderr / value``; with known uncertainties the slope
    error is the formal one, otherwise it comes from the residual scatter.
    """
    pts = [(float(s), float(v), float(e)) for s, v, e in series]
    if len(pts) < 3:
        raise DegenerateSeries(f"need at least 3 points, got {len(pts)}")
    if any(not (v > 0) or not (s > 0) for s, v, _ in pts):
        raise DegenerateSeries("all scales and values must be positive")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    sig = np.array([p[2] / p[1] for p in pts])
    X = np.column_stack([np.ones_like(x), x])
    if np.all(sig > 0):
        W = 1.0 / sig**2
        cov = np.linalg.inv(X.T @ (W[:, None] * X))
        coef = cov @ X.T @ (W * y)
        stderr = math.sqrt(cov[1, 1])
    else:
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        dof = len(pts) - 2
        s2 = float(resid @ resid) / dof if dof > 0 else 0.0
        stderr = math.sqrt(s2 * np.linalg.inv(X.T @ X)[1, 1])
    return PowerFit(float(coef[1]), float(coef[0]), float(stderr))


def ratio_stability(values, law_values) -> float:
    """Largest relative deviation of ``value / law`` from its mean over the scales."""
    ratio = np.asarray(values, dtype=float) / np.asarray(law_values, dtype=float)
    return float(np.max(np.abs(ratio / ratio.mean() - 1.0)))


# -- reports ---------------------------------------------------------------


@dataclass
class SeriesPoint:
    scale: float
    value: float
    stderr: float
    n: int

    def as_dict(self) -> dict:
        return {"scale": self.scale, "value": self.value, "stderr": self.stderr, "n": self.n}


@dataclass
class ScalingReport:
    kind: str
    series: list
    predicted: list
    config_hash: str = ""
    fit: PowerFit | None = None
    predicted_exponent: float | None = None
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.series = sorted(self.series, key=lambda p: p.scale)

    def scales(self) -> list:
        return [p.scale for p in self.series]

    def values(self) -> list:
        return [p.value for p in self.series]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "series": [p.as_dict() for p in self.series],
            "fit": None if self.fit is None else self.fit.as_dict(),
            "predicted": [float(v) for v in self.predicted],
            "predicted_exponent": self.predicted_exponent,
            "flags": list(self.flags),
            "diagnostics": self.diagnostics,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ScalingReport":
        fit = data.get("fit")
        return cls(
            kind=data["kind"],
            series=[SeriesPoint(**p) for p in data["series"]],
            predicted=list(data["predicted"]),
            config_hash=data.get("config_hash", ""),
            fit=None if fit is None else PowerFit(**fit),
            predicted_exponent=data.get("predicted_exponent"),
            flags=list(data.get("flags", [])),
            diagnostics=dict(data.get("diagnostics", {})),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scale", "value", "stderr", "n", "predicted", "fit"])
        for p, pred in zip(self.series, self.predicted):
            fit_value = "" if self.fit is None else repr(math.exp(self.fit.intercept) * p.scale**self.fit.exponent)
            writer.writerow([repr(p.scale), repr(p.value), repr(p.stderr), p.n, repr(float(pred)), fit_value])
        return buf.getvalue()


# -- campaign helpers --------------------------------------------------------


def ball_filter(grid: TorusGrid, radius: float) -> np.ndarray:
    """Spectrum (rfft layout) of the normalized discrete ball, for moving averages."""
    w = _ball_weights(grid, radius) * grid.cell_volume
    return rfftn(w)


def moving_average(u: np.ndarray, spectrum: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """``out(y) = mean of u over the discrete ball centered at y``."""
    # the ball is symmetric, so correlation and convolution coincide
    return irfftn(rfftn(u) * spectrum, grid)


def growth_directions(d: int) -> list[np.ndarray]:
    """Eight fixed unit directions: the axes with both signs, padded by diagonals."""
    dirs = []
    for i in range(d):
        for sgn in (1.0, -1.0):
            v = np.zeros(d)
            v[i] = sgn
            dirs.append(v)
    if d == 2:
        for s1 in (1.0, -1.0):
            for s2 in (1.0, -1.0):
                dirs.append(np.array([s1, s2]) / math.sqrt(2))
    elif d == 3:
        diag = np.ones(3) / math.sqrt(3)
        dirs += [diag, -diag]
    return dirs


def lattice_offset(r: float, direction, grid: TorusGrid) -> tuple[int, ...]:
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    return tuple(int(round(c)) for c in r * v / grid.h)


def _roll(u: np.ndarray, offset: Sequence[int]) -> np.ndarray:
    """``out[y] = u[y + offset]``."""
    return np.roll(u, tuple(-o for o in offset), axis=tuple(range(u.ndim)))


def _bootstrap(per_sample: np.ndarray, transform, seed: int, B: int = 1000) -> np.ndarray:
    """Bootstrap standard error of ``transform(mean over samples)``, column-wise."""
    n = per_sample.shape[0]
    rng = rng_stream(seed, 0, "bootstrap")
    picks = rng.integers(0, n, size=(B, n))
    stats = transform(per_sample[picks].mean(axis=1))
    return stats.std(axis=0, ddof=1)


def _check_radii(radii, grid: TorusGrid):
    radii = sorted(float(r) for r in radii)
    for r in radii:
        if r < 2 * grid.h - 1e-12 or r > grid.period / 8 + 1e-12:
            raise InvalidSpec(f"radius {r} outside [{2 * grid.h}, {grid.period / 8}]")
    return radii


def average_decay_sample(corr, radii, offsets_by_radius, grid: TorusGrid) -> np.ndarray:
    """Spatial mean over base points of ``|F|^2`` for each radius (one sample)."""
    comps = [u for _, u in corr.components()]
    out = np.zeros(len(radii))
    for n, r in enumerate(radii):
        spectrum = ball_filter(grid, r)
        acc = 0.0
        for u in comps:
            A = moving_average(u, spectrum, grid)
            for off in offsets_by_radius[n]:
                acc += float(np.mean((_roll(A, off) - A) ** 2))
        out[n] = acc / len(offsets_by_radius[n])
    return out


def growth_sample(corr, radii, offsets_by_radius, grid: TorusGrid) -> np.ndarray:
    """Spatial mean of ``avg_{B(y+x)} |psi - avg_{B(y)} psi|^2`` summed over components."""
    comps = [u for _, u in corr.components()]
    spectrum = ball_filter(grid, 1.0)
    means = [moving_average(u, spectrum, grid) for u in comps]
    squares = [moving_average(u * u, spectrum, grid) for u in comps]
    out = np.zeros(len(radii))
    for n in range(len(radii)):
        acc = 0.0
        for U, V in zip(means, squares):
            for off in offsets_by_radius[n]:
                acc += float(np.mean(_roll(V, off) - 2 * U * _roll(U, off) + U * U))
        out[n] = acc / len(offsets_by_radius[n])
    return out


def _corrector_for(config, index):
    from .corrector import compute_corrector

    return compute_corrector(config.medium(index), config.solver)


def measure_average_decay(config, radii=None, directions=None, threads: int = 1, collect=None) -> ScalingReport:
    """Second moments of ``F = (avg_{B_r(x)} - avg_{B_r}) (phi, sigma)`` with ``|x| = r``.

    The statistic is ``<|F|^2>^(1/2) / r``; its predicted decay is
    ``pi_star(r)^(-1/2)``.
    """
    from .runner import map_samples

    grid = config.grid
    camp = config.campaign
    radii = _check_radii(radii if radii is not None else camp.radii, grid)
    directions = directions if directions is not None else camp.directions
    directions = directions or [np.eye(grid.d)[i] for i in range(grid.d)]
    offsets = [[lattice_offset(r, v, grid) for v in directions] for r in radii]
    if config.sampling.N < 8:
        raise InvalidSpec(f"average-decay campaigns need N >= 8, got {config.sampling.N}")

    def one(index):
        return average_decay_sample(_corrector_for(config, index), radii, offsets, grid)

    rows, failures = map_samples(one, config.sampling.N, threads, fail_soft=True)
    if collect is not None:
        collect.extend(failures)
    per_sample = np.array(rows)
    n = per_sample.shape[0]
    r_arr = np.array(radii)
    mean = per_sample.mean(axis=0)
    values = np.sqrt(mean) / r_arr
    stderr = _bootstrap(per_sample, lambda m: np.sqrt(m) / r_arr, config.sampling.master_seed)
    beta = config.effective_beta
    law = ScalingLaw(LawKind.PI_STAR, beta, grid.d)
    predicted = [law(r) ** -0.5 for r in radii]
    series = [SeriesPoint(r, float(v), float(s), n) for r, v, s in zip(radii, values, stderr)]
    report = ScalingReport(
        "AvgDecay",
        series,
        predicted,
        config_hash=config.hash(),
        predicted_exponent=-min(beta, grid.d) / 2.0,
        diagnostics={"failures": failures, "directions": [list(map(float, v)) for v in directions]},
    )
    _attach_fit(report, law)
    return report


def measure_corrector_growth(config, radii=None, threads: int = 1, collect=None) -> ScalingReport:
    """``<avg_{B(x)} |(phi, sigma) - avg_B (phi, sigma)|^2>^(1/2)`` at ``|x| = r``."""
    from .runner import map_samples

    grid = config.grid
    radii = _check_radii(radii if radii is not None else config.campaign.radii, grid)
    offsets = [[lattice_offset(r, v, grid) for v in growth_directions(grid.d)] for r in radii]

    def one(index):
        return growth_sample(_corrector_for(config, index), radii, offsets, grid)

    rows, failures = map_samples(one, config.sampling.N, threads, fail_soft=True)
    if collect is not None:
        collect.extend(failures)
    per_sample = np.maximum(np.array(rows), 0.0)
    n = per_sample.shape[0]
    values = np.sqrt(per_sample.mean(axis=0))
    stderr = _bootstrap(per_sample, np.sqrt, config.sampling.master_seed)
    beta = config.effective_beta
    law = ScalingLaw(LawKind.MU_STAR, beta, grid.d)
    predicted = [law(r) for r in radii]
    series = [SeriesPoint(r, float(v), float(s), n) for r, v, s in zip(radii, values, stderr)]
    report = ScalingReport(
        "Growth",
        series,
        predicted,
        config_hash=config.hash(),
        predicted_exponent=(1 - beta / 2.0) if beta < 2 else 0.0,
        diagnostics={"failures": failures},
    )
    _attach_fit(report, law)
    return report


def _attach_fit(report: ScalingReport, law: ScalingLaw) -> None:
    values = report.values()
    if not values or all(v == 0 for v in values):
        report.flags.append("DegenerateSeries")
        return
    if law.critical:
        report.diagnostics["ratio_stability"] = ratio_stability(values, report.predicted)
        report.diagnostics["ratio"] = [float(v / p) for v, p in zip(values, report.predicted)]
        report.flags.append("CriticalRatioTest")
    try:
        report.fit = fit_power_law([(p.scale, p.value, p.stderr) for p in report.series])
    except DegenerateSeries as exc:
        report.flags.append("DegenerateSeries")
        report.diagnostics["fit_error"] = str(exc)


# -- Helmholtz decay probes --------------------------------------------------


@dataclass(frozen=True)
class LemmaLEas:
    """Right-hand side ``g = min(r^-d, |y|^-d) e_1`` (log-corrected dipole decay)."""

    r: float = 1.0


@dataclass(frozen=True)
class LemmaLEap:
    """Compactly supported ``g = (1 + |y|)^-gamma chi(|y| / r) e_1`` with a smooth cutoff."""

    r: float = 4.0
    gamma: float = 1.0


def leas_axis_profile(rho, d: int, r: float = 1.0):
    """``d_1 v`` on the positive e_1 axis for the LEas right-hand side with ``a = Id``.

    For ``rho >= r``: ``r^-d ((d - 1) log(rho/r) - 1/d) / (rho/r)^d``.
    """
    s = np.asarray(rho, dtype=float) / r
    return r ** (-d) * ((d - 1) * np.log(s) - 1.0 / d) / s**d


def _face_radius(grid: TorusGrid, j: int) -> np.ndarray:
    y = minimal_image(grid)
    pos = [comp + (0.5 * grid.h if m == j else 0.0) for m, comp in enumerate(y)]
    return np.sqrt(sum(p * p for p in pos))


def _cutoff(s: np.ndarray) -> np.ndarray:
    """C^1 taper: 1 for s <= 1/2, cos^2 down to 0 at s = 1."""
    t = np.clip(2 * s - 1, 0.0, 1.0)
    return np.where(s >= 1, 0.0, np.cos(0.5 * math.pi * t) ** 2)


def probe_rhs(probe, grid: TorusGrid) -> np.ndarray:
    rho = _face_radius(grid, 0)
    g = np.zeros((grid.d,) + grid.shape)
    if isinstance(probe, LemmaLEas):
        with np.errstate(divide="ignore"):
            g[0] = np.minimum(probe.r ** (-grid.d), np.where(rho > 0, rho, np.inf) ** (-grid.d))
        g[0][rho == 0] = probe.r ** (-grid.d)
    elif isinstance(probe, LemmaLEap):
        if not (0 < probe.gamma < grid.d):
            raise InvalidSpec(f"gamma must lie in (0, d), got {probe.gamma}")
        if probe.r < 1:
            raise InvalidSpec(f"probe radius must be >= 1, got {probe.r}")
        g[0] = (1 + rho) ** (-probe.gamma) * _cutoff(rho / probe.r)
    else:
        raise InvalidSpec(f"unknown probe {probe!r}")
    return g


def probe_envelope(probe, rho, d: int):
    rho = np.asarray(rho, dtype=float)
    if isinstance(probe, LemmaLEas):
        return np.log(rho / probe.r + 2) / (rho + probe.r) ** d
    return probe.r ** (d - probe.gamma) / rho**d


def shell_rms(grad: np.ndarray, grid: TorusGrid, radius: float, width: float = 0.125) -> float:
    """RMS of ``|grad v|`` over cells with ``|y|`` in ``[radius (1 - w), radius (1 + w))``."""
    rho = distance(grid)
    mask = (rho >= radius * (1 - width)) & (rho < radius * (1 + width))
    if not np.any(mask):
        raise GeometryError(f"shell at radius {radius} is empty")
    sq = np.sum(grad**2, axis=0)
    return float(math.sqrt(np.mean(sq[mask])))


def helmholtz_decay_probe(
    a: CoefficientField, probe, radii, opts: SolveOptions | None = None
) -> ScalingReport:
    """Solve ``div(a grad v + g) = 0`` and report shell RMS of ``grad v`` against the envelope."""
    grid = a.grid
    radii = sorted(float(r) for r in radii)
    for r in radii:
        if r > grid.period / 4 + 1e-12:
            raise GeometryError(f"radius {r} beyond a quarter of the period")
    g = probe_rhs(probe, grid)
    res = solve_divform(a, g, opts)
    grad = discrete_gradient(grid, res.u)
    values = [shell_rms(grad, grid, r) for r in radii]
    envelope = probe_envelope(probe, np.array(radii), grid.d)
    ratios = [v / e for v, e in zip(values, envelope)]
    series = [SeriesPoint(r, v, 0.0, 1) for r, v in zip(radii, values)]
    name = "LemmaLEas" if isinstance(probe, LemmaLEas) else "LemmaLEap"
    report = ScalingReport(
        f"HelmholtzProbe:{name}",
        series,
        list(map(float, envelope)),
        predicted_exponent=-float(grid.d),
        diagnostics={
            "envelope_ratio": ratios,
            "ratio_max": max(ratios),
            "ratio_non_increasing": all(b <= a_ * (1 + 1e-9) for a_, b in zip(ratios, ratios[1:])),
            "solve_residual": res.residual,
            "axis_profile": [float(grad[0][(int(round(r / grid.h)),) + (0,) * (grid.d - 1)]) for r in radii],
        },
    )
    if len(radii) >= 3 and all(v > 0 for v in values):
        report.fit = fit_power_law([(r, v, 0.0) for r, v in zip(radii, values)])
    return report
