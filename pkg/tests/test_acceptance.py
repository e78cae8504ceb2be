"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line; the lines are
also gathered in the "acceptance criteria" section of the pytest summary.
The desk-scale campaigns read their parameters from ``configs/``.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import random_scalar_medium
from homoglab.config import parse_config, parse_config_text
from homoglab.corrector import ahom_bounds_ok, compute_corrector
from homoglab.fields import CoefficientField, SpectrumSpec, constant_field
from homoglab.lattice import discrete_divergence, discrete_gradient, make_grid
from homoglab.oracle import dense_solve_reference, linearized_variance_exact, linearized_variance_mc
from homoglab.runner import run_campaign
from homoglab.scaling import (
    LemmaLEap,
    LemmaLEas,
    fit_power_law,
    helmholtz_decay_probe,
    leas_axis_profile,
    measure_average_decay,
    measure_corrector_growth,
    ratio_stability,
)
from homoglab.solver import SolveOptions, solve_divform
from homoglab.twoscale import (
    DEFAULT_MODES,
    band_limited_field,
    measure_two_scale,
    two_scale_error,
    two_scale_grids,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(autouse=True)
def cache(tmp_path_factory, monkeypatch):
    monkeypatch.setenv("HOMOGLAB_CACHE", str(tmp_path_factory.getbasetemp() / "media"))


def test_criterion_01_adjointness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for d, L in ((2, 16), (3, 8)):
        g = make_grid(d, L, 0.37)
        for _ in range(100):
            u = rng.standard_normal(g.shape)
            F = rng.standard_normal((d,) + g.shape)
            lhs = np.sum(discrete_gradient(g, u) * F)
            rhs = -np.sum(u * discrete_divergence(g, F))
            scale = np.linalg.norm(discrete_gradient(g, u)) * np.linalg.norm(F)
            worst = max(worst, abs(lhs - rhs) / scale)
    criterion(1, worst <= 1e-12, f"max relative defect {worst:.2e} over 200 pairs ({time.perf_counter() - t0:.2f}s)")


def test_criterion_02_dense_oracle(criterion):
    rng = np.random.default_rng(2)
    worst = 0.0
    count = 0
    for d, L in ((2, 8), (3, 4)):
        g = make_grid(d, L)
        for lam in (0.1, 0.5):
            for _ in range(13 if d == 2 else 12):
                a = random_scalar_medium(g, lam, rng)
                f = rng.standard_normal((d,) + g.shape)
                u = solve_divform(a, f, SolveOptions(tol=1e-12)).u
                ref = dense_solve_reference(a, f)
                worst = max(worst, np.linalg.norm(u - ref) / np.linalg.norm(ref))
                count += 1
    criterion(2, worst <= 1e-8 and count == 50, f"max relative difference {worst:.2e} on {count} pairs")


def test_criterion_03_constant_coefficient(criterion):
    worst = 0.0
    for d, L in ((2, 32), (3, 16)):
        c = 0.35
        corr = compute_corrector(constant_field(make_grid(d, L), c))
        grad = float(np.max(np.abs(corr.grad_phi)))
        sigma = max(float(np.max(np.abs(s))) for s in corr.sigma_upper.values())
        ahom = float(np.max(np.abs(corr.ahom_sample - c * np.eye(d))))
        worst = max(worst, grad, sigma, ahom)
    criterion(3, worst <= 1e-10, f"max of |grad phi|, |sigma|, |ahom - c Id| = {worst:.1e}")


def test_criterion_04_laminate(criterion):
    g = make_grid(2, 128)
    band = np.where(np.arange(g.L) < g.L // 2, 0.2, 1.0)
    a = CoefficientField(g, np.broadcast_to(band[:, None], g.shape).copy(), 0.2)
    A = compute_corrector(a, SolveOptions(tol=1e-12)).ahom_sample
    err = float(np.max(np.abs(A - np.diag([1 / 3, 0.6]))))
    criterion(4, err <= 1e-6, f"ahom = diag({A[0, 0]:.9f}, {A[1, 1]:.9f}), max error {err:.1e}")


def test_criterion_05_corrector_invariants(criterion):
    config = parse_config_text(
        """
[ensemble]
kind = "gaussian"
spectrum = "PowerLaw"
beta = 1.0
[ensemble.transform]
lambda = 0.2
[grid]
d = 2
L = 128
[sampling]
N = 16
master_seed = 11
"""
    )
    tol = config.solver.tol
    problems = []
    worst_energy = worst_div = worst_mean = 0.0
    for index in range(config.sampling.N):
        a = config.medium(index)
        corr = compute_corrector(a, config.solver)
        S = corr.sigma_array()
        if not np.array_equal(S, -np.swapaxes(S, 1, 2)):
            problems.append(f"sample {index}: sigma not skew")
        for i in range(2):
            worst_energy = max(worst_energy, corr.energy(i))
            worst_div = max(worst_div, corr.residuals["div_sigma"][i])
            worst_mean = max(worst_mean, float(np.max(np.abs(corr.q[i].reshape(2, -1).mean(axis=1)))))
        if not ahom_bounds_ok(corr.ahom_sample, a.lam):
            problems.append(f"sample {index}: ahom outside the ellipticity sandwich")
    ok = not problems and worst_energy <= 25 and worst_div <= 10 * tol and worst_mean <= 1e-14
    criterion(
        5,
        ok,
        f"energy <= {worst_energy:.3f}, div sigma defect {worst_div:.1e}, |mean q| {worst_mean:.1e}"
        + ("" if not problems else f"; {problems}"),
    )


def test_criterion_06_linearized_variance_subcritical(criterion):
    radii = [16, 32, 64, 128, 256]
    curve = linearized_variance_exact(SpectrumSpec("PowerLaw", 1.0), make_grid(2, 4096), radii)
    slope = fit_power_law([(r, v, 0.0) for r, v in zip(radii, curve.values)]).exponent
    criterion(6, abs(slope - 1.0) <= 0.1, f"slope {slope:.3f} (target 1.0 +- 0.1)")


def test_criterion_07_linearized_variance_critical(criterion):
    radii = [8, 16, 32, 64]
    spec = SpectrumSpec("LorentzianCovariance", 2.0)
    d2 = linearized_variance_exact(spec, make_grid(2, 1024), radii)
    s2 = ratio_stability(d2.values, [math.log(r) ** 2 for r in radii])
    d3 = linearized_variance_exact(spec, make_grid(3, 256), radii)
    s3 = ratio_stability(d3.values, [math.log(r) for r in radii])
    criterion(7, s2 <= 0.2 and s3 <= 0.2, f"d=2 value/log^2 R spread {s2:.3f}, d=3 value/log R spread {s3:.3f}")


def test_criterion_08_oracle_cross_validation(criterion):
    radii = [2, 4, 8, 16, 32]
    spec = SpectrumSpec("PowerLaw", 1.0)
    grid = make_grid(2, 256)
    exact = linearized_variance_exact(spec, grid, radii)
    mc = linearized_variance_mc(spec, grid, radii, 200, 8)
    z = [(m - e) / s for m, e, s in zip(mc.values, exact.values, mc.stderr)]
    criterion(8, max(abs(v) for v in z) <= 3, "z-scores " + ", ".join(f"{v:+.2f}" for v in z))


@pytest.mark.slow
def test_criterion_09_average_decay(criterion):
    long = measure_average_decay(parse_config(CONFIGS / "avg_decay_powerlaw.toml"))
    short = measure_average_decay(parse_config(CONFIGS / "avg_decay_whitenoise.toml"))
    s1, s2 = long.fit.exponent, short.fit.exponent
    criterion(9, abs(s1 + 0.5) <= 0.2 and abs(s2 + 1.0) <= 0.2, f"beta=1 slope {s1:.3f} (-0.5), white noise slope {s2:.3f} (-1.0)")


@pytest.mark.slow
def test_criterion_10_growth(criterion):
    rep = measure_corrector_growth(parse_config(CONFIGS / "growth_powerlaw.toml"))
    crit = measure_corrector_growth(parse_config(CONFIGS / "growth_lorentzian.toml"))
    slope = rep.fit.exponent
    spread = crit.diagnostics["ratio_stability"]
    criterion(
        10,
        abs(slope - 0.5) <= 0.15 and spread <= 0.25,
        f"beta=1 exponent {slope:.3f} (0.5 +- 0.15), Lorentzian ratio spread {spread:.3f}",
    )


@pytest.mark.slow
def test_criterion_11_two_scale(criterion):
    config = parse_config(CONFIGS / "two_scale_whitenoise.toml")
    rep = measure_two_scale(config)
    slope = rep.fit.exponent
    decreasing = rep.diagnostics["strictly_decreasing"]
    # constant-coefficient control without the moving average
    eps = 1 / 16
    _, cgrid, pgrid = two_scale_grids(2, eps, 4)
    corr = compute_corrector(constant_field(cgrid, 0.6), SolveOptions(tol=1e-11))
    g = band_limited_field(pgrid, DEFAULT_MODES)
    control = two_scale_error(constant_field(pgrid, 0.6), corr, g, eps, config.solver, average=False)
    tol = config.solver.tol
    ok = decreasing and 0.8 <= slope <= 1.05 and control.meta["relative_err"] <= 10 * tol
    criterion(
        11,
        ok,
        f"slope {slope:.3f} in [0.8, 1.05], decreasing {decreasing}, "
        f"constant control {control.meta['relative_err']:.1e}",
    )


def test_criterion_12_helmholtz_probes(criterion):
    leap = parse_config(CONFIGS / "helmholtz_leap.toml")
    a = constant_field(leap.grid, 1.0)
    rep = helmholtz_decay_probe(a, LemmaLEap(leap.campaign.probe_r, leap.campaign.gamma), leap.campaign.radii, leap.solver)
    slope = rep.fit.exponent
    leas = parse_config(CONFIGS / "helmholtz_leas.toml")
    radii = [16.0, 32.0]
    probe = helmholtz_decay_probe(constant_field(leas.grid, 1.0), LemmaLEas(leas.campaign.probe_r), radii, leas.solver)
    # the x_1-derivative lives on faces, half a cell beyond the cell centre
    exact = leas_axis_profile(np.array(radii) + 0.5, 2, leas.campaign.probe_r)
    rel = np.abs(np.array(probe.diagnostics["axis_profile"]) / exact - 1)
    criterion(
        12,
        abs(slope + 2.0) <= 0.2 and rel.max() <= 0.1,
        f"LEap slope {slope:.3f} (-2 +- 0.2), LEas profile deviation {rel.max():.2%}",
    )


REPRO = """
[ensemble]
kind = "gaussian"
spectrum = "PowerLaw"
beta = 1.0
[grid]
d = 2
L = 64
[campaign]
kind = "{kind}"
radii = [2, 4, 8]
eps = [0.25, 0.125, 0.0625]
resolution = 2
[sampling]
N = 8
master_seed = 4
"""


def test_criterion_13_reproducibility(criterion, tmp_path):
    mismatched = []
    for kind in ("Growth", "AvgDecay", "TwoScale", "Ahom", "AppendixA"):
        config = parse_config_text(REPRO.format(kind=kind))
        outputs = []
        for run, threads in enumerate((1, 4, 1)):
            out = tmp_path / f"{kind}-{run}"
            run_campaign(config, threads=threads, out=out)
            outputs.append(((out / "report.json").read_bytes(), (out / "report.csv").read_bytes()))
        if any(o != outputs[0] for o in outputs[1:]):
            mismatched.append(kind)
    criterion(13, not mismatched, "byte-identical reports with threads 1, 4, 1" + (f"; mismatch in {mismatched}" if mismatched else ""))
