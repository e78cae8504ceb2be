"""Campaign orchestration, persistence and plot-data emission.

Samples are mapped over a thread pool, but results are always reduced in
index order, so a report is byte-identical whatever ``--threads`` says.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
import os
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CampaignFailed, HomogLabError, NoConvergence
from .scaling import (
    LemmaLEap,
    LemmaLEas,
    ScalingReport,
    SeriesPoint,
    fit_power_law,
    helmholtz_decay_probe,
    measure_average_decay,
    measure_corrector_growth,
    ratio_stability,
)

log = logging.getLogger(__name__)

FAIL_HARD_FRACTION = 0.25

# Errors a single sample may legitimately raise; anything else is a bug and propagates.
SAMPLE_ERRORS = (HomogLabError, ArithmeticError, np.linalg.LinAlgError)


def _failure(index: int, exc: BaseException) -> dict:
    rec = {"index": int(index), "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, NoConvergence) and exc.residual is not None:
        rec["residual"] = float(exc.residual)
    return rec


def map_samples(fn, N: int, threads: int = 1, fail_soft: bool = False):
    """Apply ``fn`` to ``0..N-1``.

    Without ``fail_soft`` the first failing index re-raises.  With it, the
    result is ``(rows, failures)`` where ``rows`` holds the successes in
    index order; more than a quarter of failures raises ``CampaignFailed``.
    """

    def guarded(i):
        try:
            return True, fn(i)
        except SAMPLE_ERRORS as exc:
            return False, exc

    if threads is None or threads <= 1 or N <= 1:
        outcomes = [guarded(i) for i in range(N)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(guarded, range(N)))
    rows, failures = [], []
    for i, (ok, value) in enumerate(outcomes):
        if ok:
            rows.append(value)
            continue
        if not fail_soft:
            raise value
        log.warning("sample %d failed: %s", i, value)
        failures.append(_failure(i, value))
    if not fail_soft:
        return rows
    if len(failures) > FAIL_HARD_FRACTION * N:
        raise CampaignFailed(f"{len(failures)} of {N} samples failed", failures)
    return rows, failures


# -- manifest ----------------------------------------------------------------


@dataclass
class RunManifest:
    config_hash: str
    kind: str
    tool_version: str = __version__
    started: str = ""
    finished: str = ""
    seeds: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    exit_code: int = 0
    files: list = field(default_factory=list)
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def check_writable(directory) -> Path:
    """Create ``directory`` and prove it accepts files, before any compute starts."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=directory, prefix=".probe-"):
            pass
    except OSError as exc:
        raise OSError(f"output directory {directory} is not writable: {exc}") from exc
    return directory


# -- campaign dispatch -------------------------------------------------------


def _appendix_a(config, threads: int, failures: list) -> ScalingReport:
    from .oracle import Regime, linearized_variance_exact, linearized_variance_mc

    spec = config.spectrum
    if spec is None:
        raise HomogLabError("AppendixA campaigns need a Gaussian ensemble")
    radii = [r for r in config.campaign.radii if r > 0]
    exact = linearized_variance_exact(spec, config.grid, radii)
    if config.sampling.N >= 8:
        mc = linearized_variance_mc(spec, config.grid, radii, config.sampling.N, config.sampling.master_seed)
        series = [SeriesPoint(r, v, s, mc.samples) for r, v, s in zip(radii, mc.values, mc.stderr)]
    else:
        series = [SeriesPoint(r, v, 0.0, 0) for r, v in zip(radii, exact.values)]
    regime = exact.regime
    if regime is Regime.SUB_CRITICAL:
        exponent = 2.0 - spec.effective_beta
    else:
        exponent = 0.0
    report = ScalingReport(
        "AppendixA",
        series,
        list(exact.values),
        config_hash=config.hash(),
        predicted_exponent=exponent,
        diagnostics={"regime": regime.value, "exact": exact.as_dict()},
    )
    if regime is not Regime.SUB_CRITICAL:
        law = [math.log(r) ** (2 if regime is Regime.CRITICAL_D2 else 1) for r in radii]
        report.diagnostics["ratio_stability"] = ratio_stability(exact.values, law)
        report.flags.append("CriticalRatioTest")
    if len(radii) >= 3:
        report.fit = fit_power_law([(p.scale, p.value, p.stderr) for p in report.series])
    return report


def _ahom(config, threads: int, failures: list) -> ScalingReport:
    from .corrector import ahom_bounds_ok, compute_corrector

    def one(index):
        return compute_corrector(config.medium(index), config.solver).ahom_sample

    samples, fails = map_samples(one, config.sampling.N, threads, fail_soft=True)
    failures.extend(fails)
    stack = np.stack(samples)
    n = len(samples)
    mean = stack.mean(axis=0)
    stderr = stack.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    lam = config.medium(0).lam
    # running mean of the trace per dimension: a convergence panel for plotting
    traces = np.trace(stack, axis1=1, axis2=2) / config.grid.d
    series = [
        SeriesPoint(float(k), float(traces[:k].mean()), float(traces[:k].std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0, k)
        for k in range(1, n + 1)
    ]
    return ScalingReport(
        "Ahom",
        series,
        [float(np.trace(mean) / config.grid.d)] * n,
        config_hash=config.hash(),
        diagnostics={
            "ahom_mean": mean.tolist(),
            "ahom_stderr": stderr.tolist(),
            "bounds_ok": [bool(ahom_bounds_ok(s, lam)) for s in samples],
            "failures": fails,
        },
    )


def _helmholtz(config, threads: int, failures: list) -> ScalingReport:
    from .fields import constant_field

    camp = config.campaign
    if camp.probe == "LEas":
        probe = LemmaLEas(camp.probe_r if camp.probe_r is not None else 1.0)
    else:
        probe = LemmaLEap(camp.probe_r if camp.probe_r is not None else 4.0, camp.gamma)
    # both probes concern the constant-coefficient operator, so the ensemble is not sampled
    a = constant_field(config.grid, 1.0)
    report = helmholtz_decay_probe(a, probe, camp.radii, config.solver)
    report.config_hash = config.hash()
    return report


def _two_scale(config, threads: int, failures: list) -> ScalingReport:
    from .twoscale import measure_two_scale

    return measure_two_scale(config, threads, collect=failures)


DISPATCH = {
    "AvgDecay": lambda c, t, f: measure_average_decay(c, threads=t, collect=f),
    "Growth": lambda c, t, f: measure_corrector_growth(c, threads=t, collect=f),
    "TwoScale": _two_scale,
    "AppendixA": _appendix_a,
    "Ahom": _ahom,
    "HelmholtzProbe": _helmholtz,
}


def _sanitize(obj):
    """JSON-safe copy: numpy scalars and arrays become Python objects, non-finite floats stay."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def run_campaign(config, threads: int = 1, out=None) -> tuple[RunManifest, int]:
    """Run the configured campaign and write ``report.json``, ``report.csv`` and ``manifest.json``.

    The returned exit code is 0 on full success, 2 when some samples failed
    but the campaign completed, and 1 on a hard failure.
    """
    outdir = check_writable(out if out is not None else config.output_dir)
    kind = config.campaign.kind
    manifest = RunManifest(config_hash=config.hash(), kind=kind, started=_now())
    manifest.seeds = [
        {"index": i, "master_seed": config.sampling.master_seed} for i in range(config.sampling.N)
    ]
    failures: list = []
    try:
        report = DISPATCH[kind](config, threads, failures)
    except CampaignFailed as exc:
        manifest.failures = exc.failures
        manifest.error = str(exc)
        manifest.exit_code = 1
    except HomogLabError as exc:
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.exit_code = 1
    else:
        report.diagnostics = _sanitize(report.diagnostics)
        (outdir / "report.json").write_text(report.to_json())
        (outdir / "report.csv").write_text(report.to_csv())
        manifest.files = ["report.json", "report.csv"]
        manifest.failures = failures
        manifest.exit_code = 2 if failures else 0
    manifest.finished = _now()
    manifest.files.append("manifest.json")
    (outdir / "manifest.json").write_text(manifest.to_json())
    return manifest, manifest.exit_code


# -- plot data ---------------------------------------------------------------

PLOT_HEADER = ["scale", "value", "stderr", "n", "predicted", "fit"]


def emit_plotdata(report: ScalingReport, directory) -> list[Path]:
    """One CSV per panel.

    ``series.csv`` columns: ``scale`` (r or eps), ``value`` (measured
    statistic), ``stderr`` (its standard error), ``n`` (successful samples),
    ``predicted`` (the scaling law at the same scale), ``fit`` (fitted power
    law, blank without a fit).  Reports with a ``ratio`` diagnostic get a
    second panel ``ratio.csv`` with columns ``scale,ratio``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    main = directory / "series.csv"
    if not report.series:
        warnings.warn(f"{report.kind} report has an empty series; writing header only", stacklevel=2)
        with open(main, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(PLOT_HEADER)
        return [main]
    main.write_text(report.to_csv())
    paths.append(main)
    ratio = report.diagnostics.get("ratio")
    if isinstance(ratio, list) and len(ratio) == len(report.series):
        p = directory / "ratio.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scale", "ratio"])
            for pt, v in zip(report.series, ratio):
                w.writerow([repr(pt.scale), repr(float(v))])
        paths.append(p)
    return paths


def load_report(path) -> ScalingReport:
    return ScalingReport.from_dict(json.loads(Path(path).read_text()))


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
