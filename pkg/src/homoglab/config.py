"""Experiment configuration: TOML in, validated dataclasses out.

Every field problem is collected before anything is raised, so a broken
file reports all of its mistakes at once.  The configuration hash is the
SHA-256 of a canonical JSON rendering (sorted keys, floats normalized,
output directory excluded) and therefore does not depend on how the file
was formatted.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib
import tomli_w

from .errors import HomogLabError, ParseError, ValidationError
from .fields import (
    CoefficientField,
    InclusionSpec,
    SpectrumKind,
    SpectrumSpec,
    TransformSpec,
    lipschitz_transform,
    sample_gaussian_field,
    sample_poisson_inclusions,
)
from .lattice import TorusGrid
from .solver import SolveOptions

CAMPAIGN_KINDS = ("AvgDecay", "Growth", "TwoScale", "AppendixA", "Ahom", "HelmholtzProbe")
ENSEMBLE_KINDS = ("gaussian", "inclusions")
PROBES = ("LEas", "LEap")

DEFAULTS = {
    "ensemble": {
        "kind": "gaussian",
        "spectrum": "PowerLaw",
        "beta": 1.0,
        "transform": {"lambda": 0.2, "contrast": 1.0, "shape": "Tanh"},
    },
    "grid": {"d": 2, "L": 128, "h": 1.0},
    "solver": {"tol": 1e-9, "precondition": True},
    "campaign": {"kind": "Ahom", "directions": [], "resolution": 4},
    "sampling": {"N": 16, "master_seed": 0},
    "output": {"dir": "out"},
}

_FLOAT_FIELDS = {
    ("ensemble", "beta"),
    ("ensemble", "amplitude"),
    ("ensemble", "transform", "lambda"),
    ("ensemble", "transform", "contrast"),
    ("ensemble", "inclusions", "intensity"),
    ("ensemble", "inclusions", "radius"),
    ("grid", "h"),
    ("solver", "tol"),
    ("campaign", "T"),
    ("campaign", "probe_r"),
    ("campaign", "gamma"),
}


@dataclass(frozen=True)
class CampaignSpec:
    kind: str
    radii: tuple = ()
    eps: tuple = ()
    directions: tuple = ()
    modes: tuple = ()
    resolution: int = 4
    probe: str = "LEas"
    probe_r: float | None = None
    gamma: float = 1.0
    T: float | None = None


@dataclass(frozen=True)
class SamplingSpec:
    N: int
    master_seed: int


@dataclass
class ExperimentConfig:
    raw: dict
    grid: TorusGrid
    solver: SolveOptions
    campaign: CampaignSpec
    sampling: SamplingSpec
    output_dir: Path
    spectrum: SpectrumSpec | None = None
    transform: TransformSpec | None = None
    inclusions: InclusionSpec | None = None
    source: Path | None = field(default=None, compare=False)

    # -- derived quantities -------------------------------------------------

    @property
    def effective_beta(self) -> float:
        if self.inclusions is not None:
            return math.inf
        return float(self.spectrum.effective_beta)

    def canonical(self) -> dict:
        data = copy.deepcopy(self.raw)
        data.pop("output", None)
        return data

    def hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(text.encode()).hexdigest()

    def to_toml(self) -> str:
        return tomli_w.dumps(self.raw)

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["sampling"]["master_seed"] = int(seed)
        if out is not None:
            raw["output"]["dir"] = str(out)
        return build_config(raw, self.source)

    # -- sampling -----------------------------------------------------------

    def medium(self, index: int, grid: TorusGrid | None = None) -> CoefficientField:
        """Coefficient sample ``index`` on ``grid`` (the configured grid by default)."""
        grid = grid or self.grid
        cache = os.environ.get("HOMOGLAB_CACHE")
        path = None
        if cache:
            key = hashlib.sha256(f"{self.hash()}|{grid.d}|{grid.L}|{grid.h!r}|{index}".encode()).hexdigest()[:24]
            path = Path(cache) / f"medium-{key}.npz"
            if path.exists():
                with np.load(path) as data:
                    return CoefficientField(grid, data["values"], float(data["lam"]))
        seed = self.sampling.master_seed
        if self.inclusions is not None:
            a = sample_poisson_inclusions(self.inclusions, grid, seed, index)
        else:
            omega = sample_gaussian_field(self.spectrum, grid, seed, index)
            a = lipschitz_transform(omega, self.transform, grid)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp.npz")
            np.savez(tmp, values=a.values, lam=a.lam)
            os.replace(tmp, path)
        return a


# -- parsing -----------------------------------------------------------------


def _merge(defaults: dict, data: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in data.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _normalize_numbers(raw: dict) -> None:
    """Coerce integer literals in float-valued fields so ``1`` and ``1.0`` hash alike."""
    for path in _FLOAT_FIELDS:
        node = raw
        for key in path[:-1]:
            node = node.get(key) if isinstance(node, dict) else None
            if node is None:
                break
        if isinstance(node, dict) and isinstance(node.get(path[-1]), int) and not isinstance(node[path[-1]], bool):
            node[path[-1]] = float(node[path[-1]])
    camp = raw.get("campaign", {})
    for key in ("radii", "eps"):
        if isinstance(camp.get(key), list):
            camp[key] = [float(v) if isinstance(v, int) and not isinstance(v, bool) else v for v in camp[key]]
    if isinstance(camp.get("directions"), list):
        camp["directions"] = [
            [float(c) if isinstance(c, int) and not isinstance(c, bool) else c for c in v] if isinstance(v, list) else v
            for v in camp["directions"]
        ]


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return parse_config_text(text, path)


def parse_config_text(text: str, source=None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"invalid TOML: {exc}", line=getattr(exc, "lineno", None)) from exc
    return build_config(data, source)


def build_config(data: dict, source=None) -> ExperimentConfig:
    errors: list = []
    unknown = set(data) - set(DEFAULTS)
    for key in sorted(unknown):
        errors.append((key, "unknown section"))
    raw = _merge(DEFAULTS, data)
    if raw["ensemble"].get("kind") == "inclusions":
        # the Gaussian defaults are meaningless here; keep only what the user wrote
        given = data.get("ensemble", {})
        for key in ("spectrum", "beta", "transform"):
            if key not in given:
                raw["ensemble"].pop(key, None)
    _normalize_numbers(raw)

    def check(fieldname, fn):
        try:
            return fn()
        except HomogLabError as exc:
            errors.append((fieldname, str(exc)))
        except (TypeError, ValueError, KeyError) as exc:
            errors.append((fieldname, f"{type(exc).__name__}: {exc}"))
        return None

    g = raw["grid"]
    grid = check("grid", lambda: TorusGrid(_int(g.get("d"), "d"), _int(g.get("L"), "L"), _num(g.get("h"), "h")))
    s = raw["solver"]
    solver = check(
        "solver",
        lambda: SolveOptions(
            tol=_num(s.get("tol"), "tol"),
            max_iter=None if s.get("max_iter") is None else _int(s["max_iter"], "max_iter"),
            precondition=bool(s.get("precondition", True)),
        ),
    )
    smp = raw["sampling"]
    sampling = None
    N = smp.get("N")
    seed = smp.get("master_seed")
    if not isinstance(N, int) or isinstance(N, bool) or N < 1:
        errors.append(("sampling.N", f"must be a positive integer, got {N!r}"))
    elif not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errors.append(("sampling.master_seed", f"must be a non-negative integer, got {seed!r}"))
    else:
        sampling = SamplingSpec(N, seed)

    ens = raw["ensemble"]
    spectrum = transform = inclusions = None
    kind = ens.get("kind")
    if kind not in ENSEMBLE_KINDS:
        errors.append(("ensemble.kind", f"must be one of {ENSEMBLE_KINDS}, got {kind!r}"))
    elif kind == "gaussian":
        beta = ens.get("beta")
        if not isinstance(beta, (int, float)) or isinstance(beta, bool) or not beta > 0:
            errors.append(("ensemble.beta", f"must be a positive number, got {beta!r}"))
        else:
            spectrum = check(
                "ensemble.spectrum",
                lambda: SpectrumSpec(ens.get("spectrum"), float(beta), ens.get("amplitude")),
            )
            if spectrum is not None and grid is not None:
                check("ensemble.beta", lambda: spectrum.validate_for(grid.d))
        t = ens.get("transform") or {}
        transform = check(
            "ensemble.transform",
            lambda: TransformSpec(_num(t.get("lambda"), "lambda"), _num(t.get("contrast", 1.0), "contrast"), t.get("shape", "Tanh")),
        )
    else:
        inc = ens.get("inclusions")
        if not isinstance(inc, dict):
            errors.append(("ensemble.inclusions", "missing [ensemble.inclusions] table"))
        else:
            inclusions = check(
                "ensemble.inclusions",
                lambda: InclusionSpec(
                    _num(inc.get("intensity"), "intensity"),
                    _num(inc.get("radius"), "radius"),
                    inc.get("a_in"),
                    inc.get("a_out"),
                ),
            )
            if inclusions is not None and grid is not None:
                check("ensemble.inclusions", lambda: inclusions.matrices(grid.d))

    campaign = check("campaign", lambda: _campaign(raw["campaign"], grid, errors))
    out = raw["output"].get("dir")
    if not isinstance(out, str) or not out:
        errors.append(("output.dir", "must be a non-empty string"))
    if errors:
        raise ValidationError(errors)
    return ExperimentConfig(
        raw=raw,
        grid=grid,
        solver=solver,
        campaign=campaign,
        sampling=sampling,
        output_dir=Path(out),
        spectrum=spectrum,
        transform=transform,
        inclusions=inclusions,
        source=None if source is None else Path(source),
    )


def _int(v, name):
    if not isinstance(v, int) or isinstance(v, bool):
        raise ValueError(f"{name} must be an integer, got {v!r}")
    return v


def _num(v, name):
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
        raise ValueError(f"{name} must be a finite number, got {v!r}")
    return float(v)


def _campaign(c: dict, grid: TorusGrid | None, errors: list) -> CampaignSpec | None:
    kind = c.get("kind")
    start = len(errors)
    if kind not in CAMPAIGN_KINDS:
        errors.append(("campaign.kind", f"must be one of {CAMPAIGN_KINDS}, got {kind!r}"))
    radii = c.get("radii", [])
    if not isinstance(radii, list) or not all(isinstance(r, float) and r >= 0 for r in radii):
        errors.append(("campaign.radii", "must be a list of non-negative numbers"))
    eps = c.get("eps", [])
    if not isinstance(eps, list) or not all(isinstance(e, float) and 0 < e <= 1 for e in eps):
        errors.append(("campaign.eps", "must be a list of numbers in (0, 1]"))
    directions = c.get("directions", [])
    if not isinstance(directions, list) or not all(isinstance(v, list) for v in directions):
        errors.append(("campaign.directions", "must be a list of vectors"))
    elif grid is not None and any(len(v) != grid.d for v in directions):
        errors.append(("campaign.directions", f"every direction needs {grid.d} components"))
    elif any(not math.isclose(math.hypot(*v), 1.0, rel_tol=1e-9) for v in directions):
        errors.append(("campaign.directions", "directions must be unit vectors"))
    modes = c.get("modes", [])
    parsed_modes = []
    if not isinstance(modes, list) or len(modes) > 4:
        errors.append(("campaign.modes", "must be a list of at most 4 mode tables"))
    else:
        from .twoscale import Mode

        for m in modes:
            if not isinstance(m, dict) or "k" not in m or "amplitude" not in m:
                errors.append(("campaign.modes", "each mode needs k and amplitude"))
                continue
            parsed_modes.append(Mode(tuple(int(v) for v in m["k"]), tuple(float(v) for v in m["amplitude"]), float(m.get("phase", 0.0))))
    resolution = c.get("resolution", 4)
    if not isinstance(resolution, int) or resolution < 1 or resolution & (resolution - 1):
        errors.append(("campaign.resolution", "must be a power of two"))
    probe = c.get("probe", "LEas")
    if probe not in PROBES:
        errors.append(("campaign.probe", f"must be one of {PROBES}"))
    T = c.get("T")
    if T is not None and not (isinstance(T, float) and T > 0):
        errors.append(("campaign.T", "must be positive"))
    gamma = c.get("gamma", 1.0)
    if not isinstance(gamma, (int, float)) or gamma <= 0:
        errors.append(("campaign.gamma", "must be positive"))
    if kind in ("AvgDecay", "Growth", "AppendixA", "HelmholtzProbe") and not radii:
        errors.append(("campaign.radii", f"{kind} campaigns need radii"))
    if kind == "TwoScale" and not eps:
        errors.append(("campaign.eps", "TwoScale campaigns need eps"))
    if len(errors) > start:
        return None
    if kind == "TwoScale" and not parsed_modes and grid is not None and grid.d == 2:
        from .twoscale import DEFAULT_MODES

        parsed_modes = list(DEFAULT_MODES)
    return CampaignSpec(
        kind=kind,
        radii=tuple(radii),
        eps=tuple(eps),
        directions=tuple(np.asarray(v, dtype=float) for v in directions),
        modes=tuple(parsed_modes),
        resolution=resolution,
        probe=probe,
        probe_r=c.get("probe_r"),
        gamma=float(gamma),
        T=T,
    )


def write_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(config.to_toml())
