"""Stationary random media on the torus.

Gaussian fields are synthesized spectrally from a discrete spectrum
``c_h(k)`` (``k = 0`` removed, so every sample has zero spatial mean) and
turned into admissible coefficient fields by a bounded scalar transform.
Poisson-inclusion media cover the matrix-valued and non-symmetric case.

Randomness comes from counter-based Philox streams keyed by
``(seed, sample index, purpose tag)``, so any sample can be regenerated in
isolation and in any order.
"""

from __future__ import annotations

import functools
import logging
import struct
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import kernels
from .errors import InvalidSpec, MismatchedGrids
from .lattice import (
    TorusGrid,
    irfftn,
    laplacian_symbol,
    minimal_image,
    rfft_weights,
    rfftn,
)

log = logging.getLogger(__name__)


# -- random streams --------------------------------------------------------


def purpose_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def rng_stream(seed: int, index: int = 0, tag: str = "field") -> np.random.Generator:
    """Independent Philox generator for ``(seed, index, tag)``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index), purpose_key(tag)))
    return np.random.Generator(np.random.Philox(ss))


# -- specifications --------------------------------------------------------


class SpectrumKind(str, Enum):
    POWER_LAW = "PowerLaw"
    LORENTZIAN = "LorentzianCovariance"
    WHITE_NOISE = "WhiteNoise"


@dataclass(frozen=True)
class SpectrumSpec:
    """Covariance model of a stationary Gaussian field.

    ``amplitude=None`` normalizes the field to unit variance on the torus
    (PowerLaw, WhiteNoise) or keeps ``c(0) = 1`` (Lorentzian).  ``beta`` is
    the correlation decay exponent; it is only read for PowerLaw, the other
    kinds carry it as documentation (2 for Lorentzian, > d for white noise).
    """

    kind: SpectrumKind
    beta: float = 1.0
    amplitude: float | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", SpectrumKind(self.kind))
        except ValueError as exc:
            raise InvalidSpec(f"unknown spectrum kind {self.kind!r}") from exc
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise InvalidSpec(f"beta must be positive, got {self.beta}")
        if self.amplitude is not None and not (self.amplitude > 0):
            raise InvalidSpec(f"amplitude must be positive, got {self.amplitude}")

    def validate_for(self, d: int) -> None:
        if self.kind is SpectrumKind.POWER_LAW and not (0 < self.beta < d):
            raise InvalidSpec(f"PowerLaw needs 0 < beta < d={d}, got beta={self.beta}")

    @property
    def effective_beta(self) -> float:
        """Decay exponent used when evaluating the scaling laws."""
        if self.kind is SpectrumKind.LORENTZIAN:
            return 2.0
        if self.kind is SpectrumKind.WHITE_NOISE:
            return np.inf
        return self.beta


class TransformShape(str, Enum):
    CLAMP = "Clamp"
    TANH = "Tanh"


@dataclass(frozen=True)
class TransformSpec:
    lam: float
    contrast: float = 1.0
    shape: TransformShape = TransformShape.TANH

    def __post_init__(self):
        try:
            object.__setattr__(self, "shape", TransformShape(self.shape))
        except ValueError as exc:
            raise InvalidSpec(f"unknown transform shape {self.shape!r}") from exc
        if not (0 < self.lam <= 1):
            raise InvalidSpec(f"lambda must lie in (0, 1], got {self.lam}")
        if not (self.contrast >= 0 and np.isfinite(self.contrast)):
            raise InvalidSpec(f"contrast must be >= 0, got {self.contrast}")


def _as_matrix(value, d: int) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.ndim == 0:
        return float(m) * np.eye(d)
    if m.shape != (d, d):
        raise InvalidSpec(f"expected a scalar or {d}x{d} matrix, got shape {m.shape}")
    return m


def matrix_bounds(m: np.ndarray) -> tuple[float, float]:
    """(operator norm, smallest eigenvalue of the symmetric part)."""
    m = np.asarray(m, dtype=float)
    return float(np.linalg.norm(m, 2)), float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())


@dataclass(frozen=True)
class InclusionSpec:
    intensity: float
    radius: float
    a_in: object
    a_out: object

    def __post_init__(self):
        if not (self.intensity >= 0 and np.isfinite(self.intensity)):
            raise InvalidSpec(f"intensity must be >= 0, got {self.intensity}")
        if not (self.radius > 0):
            raise InvalidSpec(f"radius must be positive, got {self.radius}")

    def matrices(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        a_in, a_out = _as_matrix(self.a_in, d), _as_matrix(self.a_out, d)
        for name, m in (("a_in", a_in), ("a_out", a_out)):
            norm, low = matrix_bounds(m)
            if norm > 1 + 1e-12 or low <= 0:
                raise InvalidSpec(f"{name} violates |a xi| <= |xi| or positivity (norm {norm}, min eig {low})")
        return a_in, a_out

    def lam(self, d: int) -> float:
        return min(matrix_bounds(m)[1] for m in self.matrices(d))


# -- coefficient fields ----------------------------------------------------


@dataclass
class CoefficientField:
    """Per-cell d x d coefficient.

    ``values`` has shape ``grid.shape`` for a scalar multiple of the identity
    or ``(d, d) + grid.shape`` for a general matrix.  ``lam`` is the
    ellipticity certificate: every cell satisfies ``xi . a xi >= lam |xi|^2``
    and ``|a xi| <= |xi|``.
    """

    grid: TorusGrid
    values: np.ndarray
    lam: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape not in (self.grid.shape, (self.grid.d, self.grid.d) + self.grid.shape):
            raise MismatchedGrids(f"coefficient shape {self.values.shape} does not fit grid {self.grid}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidSpec("coefficient field contains non-finite values")

    @property
    def is_scalar(self) -> bool:
        return self.values.ndim == self.grid.d

    def is_symmetric(self) -> bool:
        if self.is_scalar:
            return True
        # rounding from building a matrix as Q diag Q^T must not flip the solver to BiCGSTAB
        scale = float(np.max(np.abs(self.values))) or 1.0
        return bool(np.max(np.abs(self.values - np.swapaxes(self.values, 0, 1))) <= 1e-12 * scale)

    def is_diagonal(self) -> bool:
        if self.is_scalar:
            return True
        d = self.grid.d
        return all(not np.any(self.values[i, j]) for i in range(d) for j in range(d) if i != j)

    def matrix(self) -> np.ndarray:
        if not self.is_scalar:
            return self.values
        d = self.grid.d
        out = np.zeros((d, d) + self.grid.shape)
        for i in range(d):
            out[i, i] = self.values
        return out

    def entry(self, i: int, j: int) -> np.ndarray | float:
        if self.is_scalar:
            return self.values if i == j else 0.0
        return self.values[i, j]

    def check_admissible(self, lam: float | None = None, slack: float = 1e-12) -> None:
        """Raise InvalidSpec unless every cell obeys the boundedness and ellipticity bounds."""
        lam = self.lam if lam is None else lam
        if self.is_scalar:
            lo, hi = float(self.values.min()), float(self.values.max())
            if lo < lam - slack or hi > 1 + slack:
                raise InvalidSpec(f"scalar coefficient range [{lo}, {hi}] escapes [{lam}, 1]")
            return
        d = self.grid.d
        cells = np.moveaxis(self.values.reshape(d, d, -1), -1, 0)
        norms = np.linalg.norm(cells, 2, axis=(1, 2))
        low = np.linalg.eigvalsh(0.5 * (cells + np.swapaxes(cells, 1, 2))).min(axis=1)
        if norms.max() > 1 + slack:
            raise InvalidSpec(f"operator norm {norms.max()} exceeds 1")
        if low.min() < lam - slack:
            raise InvalidSpec(f"symmetric part {low.min()} below lambda={lam}")


# -- Gaussian synthesis ----------------------------------------------------


@functools.lru_cache(maxsize=16)
def discrete_spectrum(spec: SpectrumSpec, grid: TorusGrid) -> np.ndarray:
    """c_h(k) on the half-spectrum (rfft layout), with c_h(0) = 0.

    The torus covariance is ``c(x) = (L h)^{-d} sum_k c_h(k) exp(i k.x)``.
    """
    spec.validate_for(grid.d)
    lap = laplacian_symbol(grid, real=True)
    zero = (0,) * grid.d
    if spec.kind is SpectrumKind.POWER_LAW:
        with np.errstate(divide="ignore"):
            c = lap ** ((spec.beta - grid.d) / 2.0)
        c[zero] = 0.0
        if spec.amplitude is None:
            var = float(np.sum(rfft_weights(grid) * c)) / grid.volume
            c = c / var
        else:
            c = spec.amplitude * c
    elif spec.kind is SpectrumKind.WHITE_NOISE:
        c = np.full(lap.shape, grid.cell_volume)
        c[zero] = 0.0
        scale = grid.ncells / (grid.ncells - 1) if spec.amplitude is None else spec.amplitude
        c = scale * c
    else:
        y = minimal_image(grid)
        cov = 1.0 / (1.0 + sum(comp * comp for comp in y))
        c = grid.cell_volume * rfftn(cov).real
        negative = c < 0
        if np.any(negative):
            log.info(
                "Lorentzian spectrum: truncated %d negative modes (min %.3e, relative %.3e)",
                int(negative.sum()),
                float(c.min()),
                float(-c.min() / c.max()),
            )
        c = np.where(negative, 0.0, c)
        c[zero] = 0.0
        if spec.amplitude is not None:
            c = spec.amplitude * c
    c.flags.writeable = False
    return c


def torus_covariance(spec: SpectrumSpec, grid: TorusGrid) -> np.ndarray:
    """Exact covariance c(x) of the synthesized field, indexed by lattice offset."""
    return irfftn(discrete_spectrum(spec, grid), grid) / grid.cell_volume


def sample_gaussian_field(
    spec: SpectrumSpec, grid: TorusGrid, seed: int, index: int = 0
) -> np.ndarray:
    """One realization, deterministic in ``(spec, grid, seed, index)``."""
    spectrum = discrete_spectrum(spec, grid)
    rng = rng_stream(seed, index, "gaussian")
    noise = rng.standard_normal(grid.shape)
    omega = irfftn(np.sqrt(spectrum / grid.cell_volume) * rfftn(noise), grid)
    omega -= omega.mean()
    return omega


def covariance_estimate(
    samples: Sequence[np.ndarray], lags: Sequence[Sequence[int]]
) -> list[tuple[tuple[int, ...], float, float]]:
    """Empirical covariance at integer lattice lags with the standard error across samples.

    Each sample contributes its spatial average of ``w(x + lag) w(x)``
    about its own spatial mean; the estimate is the mean over samples.
    """
    samples = [np.asarray(s, dtype=float) for s in samples]
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    shape = samples[0].shape
    if any(s.shape != shape for s in samples):
        raise MismatchedGrids("samples live on different grids")
    lags = [tuple(int(v) for v in lag) for lag in lags]
    per_sample = np.empty((len(samples), len(lags)))
    for n, s in enumerate(samples):
        s = s - s.mean()
        spec = rfftn(s)
        auto = np.fft.irfftn(spec * np.conj(spec), s=shape, axes=tuple(range(len(shape)))) / s.size
        for m, lag in enumerate(lags):
            per_sample[n, m] = auto[tuple(v % shape[j] for j, v in enumerate(lag))]
    mean = per_sample.mean(axis=0)
    stderr = per_sample.std(axis=0, ddof=1) / np.sqrt(len(samples))
    return [(lag, float(mean[m]), float(stderr[m])) for m, lag in enumerate(lags)]


# -- coefficient construction ----------------------------------------------


def lipschitz_transform(omega: np.ndarray, spec: TransformSpec, grid: TorusGrid | None = None) -> CoefficientField:
    """Scalar coefficient ((1+lam)/2 + ((1-lam)/2) s(contrast * omega)) Id with s = clamp or tanh."""
    omega = np.asarray(omega, dtype=float)
    if grid is None:
        grid = TorusGrid(omega.ndim, omega.shape[0])
    arg = spec.contrast * omega
    if spec.shape is TransformShape.CLAMP:
        s = np.clip(arg, -1.0, 1.0)
    else:
        s = np.tanh(arg)
    values = 0.5 * (1 + spec.lam) + 0.5 * (1 - spec.lam) * s
    # rounding can push the saturated values a hair outside [lam, 1]
    np.clip(values, spec.lam, 1.0, out=values)
    return CoefficientField(grid, values, spec.lam, meta={"transform": spec.shape.value})


def sample_poisson_inclusions(
    spec: InclusionSpec, grid: TorusGrid, seed: int, index: int = 0
) -> CoefficientField:
    """Boolean model: Poisson points on the torus, a_in within ``radius`` of any point."""
    d = grid.d
    a_in, a_out = spec.matrices(d)
    if spec.radius < grid.h:
        raise InvalidSpec(f"radius {spec.radius} is below the lattice spacing {grid.h}")
    rng = rng_stream(seed, index, "inclusions")
    npts = int(rng.poisson(spec.intensity * grid.volume))
    centers = rng.uniform(0.0, grid.period, size=(npts, d))
    if npts and spec.radius >= np.sqrt(d) * grid.period / 2:
        mask = np.ones(grid.shape, dtype=bool)
    else:
        mask = kernels.paint_balls(grid.shape, centers / grid.h, spec.radius / grid.h)
    lam = min(matrix_bounds(a_in)[1], matrix_bounds(a_out)[1])
    meta = {"points": npts, "volume_fraction": float(mask.mean())}
    if _is_scalar_identity(a_in) and _is_scalar_identity(a_out):
        values = np.where(mask, a_in[0, 0], a_out[0, 0])
    else:
        values = np.where(mask, a_in.reshape(d, d, *([1] * d)), a_out.reshape(d, d, *([1] * d)))
    return CoefficientField(grid, values, lam, meta=meta)


def _is_scalar_identity(m: np.ndarray) -> bool:
    return bool(np.allclose(m, m[0, 0] * np.eye(m.shape[0]), rtol=0, atol=0))


def constant_field(grid: TorusGrid, value) -> CoefficientField:
    m = _as_matrix(value, grid.d)
    norm, low = matrix_bounds(m)
    if _is_scalar_identity(m):
        return CoefficientField(grid, np.full(grid.shape, m[0, 0]), low)
    return CoefficientField(grid, np.broadcast_to(m.reshape(grid.d, grid.d, *([1] * grid.d)), (grid.d, grid.d) + grid.shape).copy(), low)


def laminate(grid: TorusGrid, values: Sequence[float], axis: int = 0) -> CoefficientField:
    """Layered scalar medium: equal-width bands along ``axis`` cycling through ``values``."""
    values = np.asarray(values, dtype=float)
    nb = len(values)
    if grid.L % nb:
        raise InvalidSpec(f"{nb} bands do not divide L={grid.L}")
    band = np.repeat(values, grid.L // nb)
    shape = [1] * grid.d
    shape[axis] = grid.L
    field_ = np.broadcast_to(band.reshape(shape), grid.shape).copy()
    return CoefficientField(grid, field_, float(values.min()))


# -- binary container ------------------------------------------------------

MAGIC = b"HGLB"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<4sHHHHId")


class FieldKind(int, Enum):
    SCALAR = 0
    VECTOR = 1
    MATRIX = 2
    COEFFICIENT = 3


def encode_field(grid: TorusGrid, values: np.ndarray, kind: FieldKind) -> bytes:
    values = np.asarray(values, dtype="<f8")
    ncomp = values.size // grid.ncells
    if ncomp * grid.ncells != values.size or values.shape[-grid.d:] != grid.shape:
        raise MismatchedGrids(f"array of shape {values.shape} does not fit {grid}")
    header = _HEADER.pack(MAGIC, CONTAINER_VERSION, int(kind), grid.d, ncomp, grid.L, grid.h)
    return header + np.ascontiguousarray(values).tobytes(order="C")


def decode_field(blob: bytes) -> tuple[TorusGrid, np.ndarray, FieldKind]:
    magic, version, kind, d, ncomp, L, h = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError("not a homoglab field container")
    if version != CONTAINER_VERSION:
        raise ValueError(f"unsupported container version {version}")
    grid = TorusGrid(d, L, h)
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    if data.size != ncomp * grid.ncells:
        raise ValueError("truncated field container")
    lead = {1: (), d: (d,), d * d: (d, d)}.get(ncomp, (ncomp,))
    if kind == FieldKind.SCALAR or (kind == FieldKind.COEFFICIENT and ncomp == 1):
        lead = ()
    return grid, data.reshape(lead + grid.shape).astype(float), FieldKind(kind)


def save_field(path, grid: TorusGrid, values: np.ndarray, kind: FieldKind = FieldKind.SCALAR) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_field(grid, values, kind))


def load_field(path) -> tuple[TorusGrid, np.ndarray, FieldKind]:
    with open(path, "rb") as fh:
        return decode_field(fh.read())
