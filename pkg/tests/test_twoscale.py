import math

import numpy as np
import pytest
from scipy import integrate

from conftest import random_matrix_medium
from homoglab.config import parse_config_text
from homoglab.corrector import compute_corrector
from homoglab.errors import GridMismatch, InvalidSpec, ScaleTooSmall, SingularAhom
from homoglab.fields import CoefficientField, constant_field
from homoglab.lattice import discrete_divergence, discrete_gradient, make_grid, refine
from homoglab.solver import solve_poisson
from homoglab.twoscale import (
    DEFAULT_MODES,
    Mode,
    ball_average_factor,
    band_limited_field,
    homogenized_residual,
    measure_two_scale,
    solve_homogenized,
    steklov_average,
    two_scale_error,
    two_scale_grids,
    two_scale_sample,
    weighted_gradient_norm,
)


def quadrature_factor(k, d):
    """Average of cos(k y_1) over the unit ball by nested quadrature."""
    if d == 1:
        return integrate.quad(lambda y: math.cos(k * y), -1, 1)[0] / 2
    if d == 2:
        val = integrate.dblquad(lambda t, r: math.cos(k * r * math.cos(t)) * r, 0, 1, 0, 2 * math.pi)[0]
        return val / math.pi
    val = integrate.dblquad(
        lambda t, r: math.cos(k * r * math.cos(t)) * r * r * math.sin(t) * 2 * math.pi, 0, 1, 0, math.pi
    )[0]
    return val / (4 * math.pi / 3)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("k", [0.0, 0.5, 2.0, 7.0])
def test_ball_factor_matches_quadrature(d, k):
    assert ball_average_factor(np.array([k]), 1.0, d)[0] == pytest.approx(quadrature_factor(k, d), abs=1e-9)


def test_ball_factor_small_argument_is_smooth():
    t = np.array([0.0, 1e-9, 1e-5, 1e-3, 0.0099, 0.0101])
    for d in (1, 2, 3):
        expected = [quadrature_factor(x, d) for x in t]
        np.testing.assert_allclose(ball_average_factor(t, 1.0, d), expected, atol=1e-12)
    with pytest.raises(InvalidSpec):
        ball_average_factor(t, 1.0, 4)


def test_steklov_on_a_mode_and_contraction(rng):
    g = make_grid(2, 64, 1 / 64)
    x = np.arange(64)[:, None] * g.h * np.ones((1, 64))
    u = np.cos(2 * np.pi * 3 * x)
    eps = 0.05
    expected = ball_average_factor(np.array([2 * np.pi * 3]), eps, 2)[0] * u
    np.testing.assert_allclose(steklov_average(u, eps, g), expected, atol=1e-12)
    v = rng.standard_normal(g.shape)
    assert np.linalg.norm(steklov_average(v, eps, g)) <= np.linalg.norm(v)
    F = rng.standard_normal((2,) + g.shape)
    out = steklov_average(F, eps, g)
    np.testing.assert_allclose(out[1], steklov_average(F[1], eps, g))
    with pytest.raises(ScaleTooSmall):
        steklov_average(u, 0.5 * g.h, g)


def test_homogenized_identity_is_poisson(rng):
    g = make_grid(2, 32, 1 / 32)
    F = rng.standard_normal((2,) + g.shape)
    u = solve_homogenized(np.eye(2), F, g)
    np.testing.assert_allclose(u, solve_poisson(g, discrete_divergence(g, F)), atol=1e-11)


def test_homogenized_anisotropic_residual(rng):
    g = make_grid(3, 16, 1 / 16)
    F = rng.standard_normal((3,) + g.shape)
    A = np.array([[1.0, 0.2, 0.0], [0.1, 0.8, 0.05], [0.0, 0.0, 0.5]])
    u = solve_homogenized(A, F, g)
    assert homogenized_residual(A, u, F, g) < 1e-12
    with pytest.raises(SingularAhom):
        solve_homogenized(np.diag([1.0, -1.0, 1.0]), F, g)
    with pytest.raises(InvalidSpec):
        solve_homogenized(np.eye(2), F, g)


def test_band_limited_field_checks():
    g = make_grid(2, 16, 1 / 16)
    F = band_limited_field(g, DEFAULT_MODES)
    assert F.shape == (2, 16, 16)
    assert abs(F.mean()) < 1e-12
    with pytest.raises(InvalidSpec):
        band_limited_field(g, [])
    with pytest.raises(InvalidSpec):
        band_limited_field(g, [DEFAULT_MODES[0]] * 5)
    with pytest.raises(InvalidSpec):
        band_limited_field(g, [Mode((1, 0, 0), (1.0, 0.0, 0.0))])


def test_weighted_norm_without_weight_is_jacobian_norm(rng):
    # the weight is identically one only for short-range correlations in d=3
    g = make_grid(3, 16, 1 / 16)
    F = band_limited_field(g, [Mode((1, 0, 2), (1.0, 0.5, 0.0))])
    jac = sum(np.sum(discrete_gradient(g, F[j]) ** 2) for j in range(3))
    assert weighted_gradient_norm(F, g, math.inf) == pytest.approx(math.sqrt(jac * g.cell_volume))
    assert weighted_gradient_norm(F, g, 1.0) > weighted_gradient_norm(F, g, math.inf)


def test_grids_share_the_lattice():
    micro, corr, phys = two_scale_grids(2, 1 / 8, 4)
    assert (micro.L, corr.L, phys.L) == (8, 32, 32)
    assert corr.h == 0.25 and phys.h == pytest.approx(1 / 32)
    for bad in ((2, 0.3, 4), (2, 0.5, 4), (2, 1 / 8, 3)):
        with pytest.raises(InvalidSpec):
            two_scale_grids(*bad)


def test_constant_coefficient_control():
    eps = 1 / 8
    _, cgrid, pgrid = two_scale_grids(2, eps, 2)
    corr = compute_corrector(constant_field(cgrid, 0.7))
    g = band_limited_field(pgrid, DEFAULT_MODES)
    res = two_scale_error(constant_field(pgrid, 0.7), corr, g, eps, average=False)
    assert res.err_h1 <= 1e-9 * np.linalg.norm(g)
    averaged = two_scale_error(constant_field(pgrid, 0.7), corr, g, eps)
    assert averaged.err_h1 > res.err_h1


def test_error_identity_is_consistent(rng):
    eps = 1 / 8
    micro, cgrid, pgrid = two_scale_grids(2, eps, 4)
    vals = refine(rng.uniform(0.2, 1.0, micro.shape), 4)
    corr = compute_corrector(CoefficientField(cgrid, vals, 0.2))
    g = band_limited_field(pgrid, DEFAULT_MODES)
    res = two_scale_error(CoefficientField(pgrid, vals, 0.2), corr, g, eps)
    assert res.consistency < 10 * 1e-9
    assert res.err_h1 > 0 and res.meta["averaged"]
    assert res.ratio == pytest.approx(res.err_normalized / res.predicted)


def test_grid_mismatch_and_non_diagonal(rng):
    eps = 1 / 8
    _, cgrid, pgrid = two_scale_grids(2, eps, 2)
    corr = compute_corrector(constant_field(cgrid, 1.0))
    g = band_limited_field(pgrid, DEFAULT_MODES)
    with pytest.raises(GridMismatch):
        two_scale_error(constant_field(pgrid, 1.0), corr, g, 1 / 4)
    with pytest.raises(GridMismatch):
        two_scale_error(constant_field(make_grid(2, 32, 1 / 32), 1.0), corr, g[:, :32, :32], eps)
    with pytest.raises(InvalidSpec):
        two_scale_error(random_matrix_medium(pgrid, 0.2, rng), corr, g, eps)


CAMPAIGN = """
[ensemble]
kind = "gaussian"
spectrum = "WhiteNoise"
[ensemble.transform]
lambda = 0.2
[grid]
d = 2
L = 16
[campaign]
kind = "TwoScale"
eps = [0.25, 0.125, 0.0625]
resolution = 2
[sampling]
N = 2
master_seed = 0
"""


def test_two_scale_campaign_orders_diagnostics(tmp_path, monkeypatch):
    monkeypatch.setenv("HOMOGLAB_CACHE", str(tmp_path))
    config = parse_config_text(CAMPAIGN)
    rep = measure_two_scale(config)
    assert rep.scales() == [0.0625, 0.125, 0.25]
    sample = two_scale_sample(config, 0.0625, 0)
    assert rep.predicted[0] == pytest.approx(sample.predicted)
    assert rep.predicted == sorted(rep.predicted)
    assert len(rep.diagnostics["ratio"]) == 3
    assert max(rep.diagnostics["consistency"]) < 1e-8
    # short-range correlations in d=2: eps sqrt(log(1/eps + 2))
    assert rep.predicted[1] == pytest.approx(0.125 * math.sqrt(math.log(10)))
    assert rep.fit is not None and 0.7 < rep.predicted_exponent < 1.0
