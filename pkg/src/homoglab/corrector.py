"""Extended correctors ``(phi_i, q_i, sigma_ijk)`` and homogenized coefficients.

Layout on the staggered lattice:

* ``phi_i`` at cell centers, gauge ``mean(phi_i) = 0``;
* ``grad_phi[i]`` and ``q[i]`` on faces (component j at ``x + e_j/2``);
* ``sigma_ijk`` at the corner ``x + (e_j + e_k)/2``, stored only for j < k.

With these positions ``sum_k D_k^- sigma_ijk`` lands on the j-face, where
``q_ij`` lives, so the identity ``div sigma_i = q_i`` is a statement between
arrays of the same layout.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import HomogLabError, InvalidSpec
from .fields import CoefficientField, FieldKind, load_field, save_field
from .lattice import TorusGrid, discrete_gradient, shift
from .solver import DivFormOperator, SolveOptions, solve_massive, solve_poisson, _solve

log = logging.getLogger(__name__)


class DirectionError(HomogLabError):
    """A solver failure tagged with the corrector direction that caused it."""

    def __init__(self, direction: int, cause: Exception):
        super().__init__(f"direction {direction}: {cause}")
        self.direction = direction
        self.cause = cause


@dataclass
class ExtendedCorrector:
    grid: TorusGrid
    phi: np.ndarray  # (d,) + shape
    grad_phi: np.ndarray  # (d, d) + shape, [i, j]
    q: np.ndarray  # (d, d) + shape, [i, j]
    sigma_upper: dict  # (i, j, k) with j < k -> corner array
    ahom_sample: np.ndarray  # column i is the mean flux a(grad phi_i + e_i)
    residuals: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.grid.d

    def sigma(self, i: int, j: int, k: int) -> np.ndarray:
        """Read ``sigma_ijk``; the lower triangle is the negated upper one."""
        if j == k:
            return np.zeros(self.grid.shape)
        if j < k:
            return self.sigma_upper[(i, j, k)]
        return -self.sigma_upper[(i, k, j)]

    def sigma_array(self) -> np.ndarray:
        d = self.d
        out = np.zeros((d, d, d) + self.grid.shape)
        for (i, j, k), s in self.sigma_upper.items():
            out[i, j, k] = s
            out[i, k, j] = -s
        return out

    def div_sigma(self, i: int) -> np.ndarray:
        """``(div sigma_i)_j = sum_k D_k^- sigma_ijk`` on the j-faces."""
        d, h = self.d, self.grid.h
        out = np.zeros((d,) + self.grid.shape)
        for j in range(d):
            for k in range(d):
                if k != j:
                    s = self.sigma(i, j, k)
                    out[j] += (s - shift(s, -1, k)) / h
        return out

    def energy(self, i: int) -> float:
        """Torus average of ``|grad phi_i|^2``."""
        return float(np.mean(np.sum(self.grad_phi[i] ** 2, axis=0)))

    def components(self) -> list[tuple[str, np.ndarray]]:
        """Scalar potentials ``(phi_i, sigma_ijk for j < k)`` in a fixed order."""
        out = [(f"phi_{i}", self.phi[i]) for i in range(self.d)]
        out += [(f"sigma_{i}{j}{k}", s) for (i, j, k), s in sorted(self.sigma_upper.items())]
        return out


def _unit_flux(op: DivFormOperator, i: int) -> np.ndarray:
    e = np.zeros((op.grid.d,) + op.grid.shape)
    e[i] = 1.0
    return op.flux(e)


def compute_corrector(
    a: CoefficientField, opts: SolveOptions | None = None, directions=None
) -> ExtendedCorrector:
    """Solve for ``phi_i``, build the fluxes and the flux corrector ``sigma``."""
    opts = opts or SolveOptions()
    grid = a.grid
    d = grid.d
    directions = list(range(d)) if directions is None else sorted(set(directions))
    op = DivFormOperator(a)
    phi = np.zeros((d,) + grid.shape)
    grad_phi = np.zeros((d, d) + grid.shape)
    q = np.zeros((d, d) + grid.shape)
    ahom = np.full((d, d), np.nan)
    residuals: dict = {"solve": {}, "iters": {}, "div_sigma": {}, "energy": {}}
    for i in directions:
        unit = _unit_flux(op, i)
        try:
            res = _solve(op, op.rhs(unit), opts, project_mean=True)
        except Exception as exc:  # tag the direction, keep the original as cause
            raise DirectionError(i, exc) from exc
        phi[i] = res.u
        grad_phi[i] = discrete_gradient(grid, res.u)
        flux = op.flux(grad_phi[i]) + unit
        ahom[:, i] = flux.reshape(d, -1).mean(axis=1)
        q[i] = flux - ahom[:, i].reshape((d,) + (1,) * d)
        residuals["solve"][i] = res.residual
        residuals["iters"][i] = res.iters
    sigma_upper = {}
    for i in directions:
        for j in range(d):
            for k in range(j + 1, d):
                rhs = discrete_gradient_component(grid, q[i, k], j) - discrete_gradient_component(grid, q[i, j], k)
                sigma_upper[(i, j, k)] = solve_poisson(grid, rhs)
    corr = ExtendedCorrector(grid, phi, grad_phi, q, sigma_upper, ahom, residuals)
    for i in directions:
        # when q_i vanishes up to rounding (laminates, constants) the relative
        # mismatch is measured against the full flux instead
        scale = np.linalg.norm(q[i])
        full = np.linalg.norm(q[i] + ahom[:, i].reshape((d,) + (1,) * d))
        if scale <= 1e-10 * full:
            scale = full
        mismatch = np.linalg.norm(corr.div_sigma(i) - q[i])
        residuals["div_sigma"][i] = float(mismatch / scale) if scale > 0 else float(mismatch)
        residuals["energy"][i] = corr.energy(i)
    return corr


def discrete_gradient_component(grid: TorusGrid, u: np.ndarray, j: int) -> np.ndarray:
    return (shift(u, 1, j) - u) / grid.h


@dataclass
class MassiveCorrector:
    T: float
    phi: np.ndarray
    residuals: dict


def compute_massive_corrector(
    a: CoefficientField, T: float, opts: SolveOptions | None = None
) -> MassiveCorrector:
    """``phi_{T,i}`` solving ``phi/T - div a(grad phi + e_i) = 0`` for each direction."""
    if not (T > 0):
        raise InvalidSpec(f"T must be positive, got {T}")
    grid = a.grid
    op = DivFormOperator(a)
    phi = np.zeros((grid.d,) + grid.shape)
    residuals = {"solve": {}, "iters": {}}
    for i in range(grid.d):
        try:
            res = solve_massive(a, _unit_flux(op, i), T, opts)
        except Exception as exc:
            raise DirectionError(i, exc) from exc
        phi[i] = res.u
        residuals["solve"][i] = res.residual
        residuals["iters"][i] = res.iters
    return MassiveCorrector(float(T), phi, residuals)


# -- homogenized-coefficient checks ----------------------------------------

_PROBE_CACHE: dict = {}


def probe_vectors(d: int) -> list[np.ndarray]:
    """Unit vectors ``e_i`` and ``(e_i +- e_j)/sqrt 2``."""
    if d not in _PROBE_CACHE:
        eye = np.eye(d)
        vecs = [eye[i] for i in range(d)]
        for i in range(d):
            for j in range(i + 1, d):
                vecs += [(eye[i] + eye[j]) / np.sqrt(2), (eye[i] - eye[j]) / np.sqrt(2)]
        _PROBE_CACHE[d] = vecs
    return _PROBE_CACHE[d]


def ahom_bounds_ok(ahom: np.ndarray, lam: float, slack: float = 1e-8) -> bool:
    """Ellipticity ``xi.A xi >= lam`` and boundedness ``|A xi| <= 1/lam + 1`` on the test vectors."""
    for xi in probe_vectors(ahom.shape[0]):
        if xi @ ahom @ xi < lam - slack:
            return False
        if np.linalg.norm(ahom @ xi) > 1.0 / lam + 1.0 + slack:
            return False
    return True


def estimate_ahom(config, threads: int = 1) -> tuple[np.ndarray, np.ndarray, list]:
    """Ensemble mean and standard error of ``ahom_sample`` for a config.

    Returns ``(mean, stderr, samples)``.  Failures carry the sample index.
    """
    from .runner import map_samples

    def one(index):
        a = config.medium(index)
        return compute_corrector(a, config.solver).ahom_sample

    samples = map_samples(one, config.sampling.N, threads)
    stack = np.stack(samples)
    mean = stack.mean(axis=0)
    stderr = stack.std(axis=0, ddof=1) / np.sqrt(len(samples))
    return mean, stderr, samples


# -- persistence -----------------------------------------------------------


def save_corrector(corr: ExtendedCorrector, directory) -> Path:
    """One container per potential and flux, plus ``corrector.json`` with the metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for i in range(corr.d):
        name = f"phi_{i}.hglb"
        save_field(directory / name, corr.grid, corr.phi[i], FieldKind.SCALAR)
        files[f"phi_{i}"] = name
        name = f"q_{i}.hglb"
        save_field(directory / name, corr.grid, corr.q[i], FieldKind.VECTOR)
        files[f"q_{i}"] = name
    for (i, j, k), s in sorted(corr.sigma_upper.items()):
        name = f"sigma_{i}{j}{k}.hglb"
        save_field(directory / name, corr.grid, s, FieldKind.SCALAR)
        files[f"sigma_{i}{j}{k}"] = name
    sidecar = {
        "grid": corr.grid.as_dict(),
        "ahom_sample": corr.ahom_sample.tolist(),
        "residuals": _jsonable(corr.residuals),
        "files": files,
    }
    path = directory / "corrector.json"
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_corrector(directory) -> ExtendedCorrector:
    directory = Path(directory)
    meta = json.loads((directory / "corrector.json").read_text())
    files = meta["files"]
    grid = TorusGrid(**meta["grid"])
    d = grid.d
    phi = np.stack([load_field(directory / files[f"phi_{i}"])[1] for i in range(d)])
    q = np.stack([load_field(directory / files[f"q_{i}"])[1] for i in range(d)])
    sigma_upper = {}
    for key, name in files.items():
        if key.startswith("sigma_"):
            i, j, k = (int(c) for c in key[len("sigma_"):])
            sigma_upper[(i, j, k)] = load_field(directory / name)[1]
    grad_phi = np.stack([discrete_gradient(grid, phi[i]) for i in range(d)])
    residuals = {
        kind: {int(i): v for i, v in entries.items()} for kind, entries in meta["residuals"].items()
    }
    return ExtendedCorrector(grid, phi, grad_phi, q, sigma_upper, np.array(meta["ahom_sample"]), residuals)


def _jsonable(residuals: dict) -> dict:
    return {kind: {str(i): float(v) for i, v in entries.items()} for kind, entries in residuals.items()}


__all__ = [
    "DirectionError",
    "ExtendedCorrector",
    "MassiveCorrector",
    "ahom_bounds_ok",
    "compute_corrector",
    "compute_massive_corrector",
    "estimate_ahom",
    "load_corrector",
    "save_corrector",
    "probe_vectors",
]
