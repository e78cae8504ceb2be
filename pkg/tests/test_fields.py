import math

import numpy as np
import pytest

from homoglab.errors import InvalidSpec, MismatchedGrids
from homoglab.fields import (
    CoefficientField,
    FieldKind,
    InclusionSpec,
    SpectrumKind,
    SpectrumSpec,
    TransformShape,
    TransformSpec,
    constant_field,
    covariance_estimate,
    decode_field,
    encode_field,
    laminate,
    lipschitz_transform,
    load_field,
    rng_stream,
    sample_gaussian_field,
    sample_poisson_inclusions,
    save_field,
    torus_covariance,
)
from homoglab.lattice import make_grid


def test_sampling_is_bitwise_deterministic():
    g = make_grid(2, 64)
    spec = SpectrumSpec("PowerLaw", 1.0)
    a = sample_gaussian_field(spec, g, 11, 3)
    b = sample_gaussian_field(spec, g, 11, 3)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, sample_gaussian_field(spec, g, 11, 4))


def test_samples_have_zero_mean():
    g = make_grid(3, 16)
    w = sample_gaussian_field(SpectrumSpec("LorentzianCovariance"), g, 0)
    assert abs(w.mean()) < 1e-15


@pytest.mark.parametrize("beta,d", [(2.0, 2), (0.0, 2), (-1.0, 2), (3.0, 3)])
def test_power_law_beta_range(beta, d):
    with pytest.raises(InvalidSpec):
        spec = SpectrumSpec("PowerLaw", beta)
        sample_gaussian_field(spec, make_grid(d, 8), 0)


def test_unknown_kind():
    with pytest.raises(InvalidSpec):
        SpectrumSpec("Matern", 1.0)


def test_white_noise_decorrelates():
    g = make_grid(2, 32)
    N = 1000
    samples = [sample_gaussian_field(SpectrumSpec("WhiteNoise"), g, 5, n) for n in range(N)]
    for lag, est, _ in covariance_estimate(samples, [(2, 0), (0, 3), (2, 2)]):
        assert abs(est) < 4 / math.sqrt(N), lag


def test_power_law_unit_variance():
    g = make_grid(2, 128)
    c = torus_covariance(SpectrumSpec("PowerLaw", 1.0), g)
    assert c[0, 0] == pytest.approx(1.0, rel=1e-12)


def test_power_law_covariance_matches_torus_covariance():
    # Monte-Carlo estimate versus the exact covariance of the synthesized torus field
    g = make_grid(2, 256)
    spec = SpectrumSpec("PowerLaw", 1.0)
    samples = [sample_gaussian_field(spec, g, 1, n) for n in range(200)]
    exact = torus_covariance(spec, g)
    lags = [(4, 0), (8, 0), (16, 0), (0, 8), (32, 0)]
    for lag, est, err in covariance_estimate(samples, lags):
        # the per-sample mean subtraction biases the estimate by the variance of the mean
        assert abs(est - exact[lag]) < 4 * err + 0.02, lag


def test_power_law_covariance_ratio_on_large_torus():
    # c(x) / c(2x) -> 2^beta once the torus is large compared to |x|
    g = make_grid(2, 4096)
    c = torus_covariance(SpectrumSpec("PowerLaw", 1.0), g)
    ratios = [c[r, 0] / c[2 * r, 0] for r in (4, 8, 16)]
    for ratio in ratios:
        assert ratio == pytest.approx(2.0, rel=0.15)
    radii = np.array([4, 8, 16, 32])
    slope = np.polyfit(np.log(radii), np.log([c[r, 0] for r in radii]), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.2)


def test_covariance_is_isotropic_within_noise():
    g = make_grid(2, 128)
    spec = SpectrumSpec("PowerLaw", 1.0)
    samples = [sample_gaussian_field(spec, g, 2, n) for n in range(100)]
    (_, c1, e1), (_, c2, e2) = covariance_estimate(samples, [(8, 0), (0, 8)])
    assert abs(c1 - c2) < 3 * math.hypot(e1, e2)


def test_covariance_estimate_basic_cases():
    g = make_grid(2, 64)
    samples = [sample_gaussian_field(SpectrumSpec("WhiteNoise"), g, 3, n) for n in range(50)]
    (_, c0, e0), = covariance_estimate(samples, [(0, 0)])
    assert abs(c0 - 1.0) < 4 * e0 + 0.05
    zeros = [np.zeros(g.shape)] * 3
    assert all(est == 0.0 for _, est, _ in covariance_estimate(zeros, [(0, 0), (1, 2)]))
    with pytest.raises(MismatchedGrids):
        covariance_estimate([np.zeros((4, 4)), np.zeros((8, 8))], [(0, 0)])


def test_lorentzian_covariance_shape():
    g = make_grid(2, 256)
    c = torus_covariance(SpectrumSpec("LorentzianCovariance"), g)
    for r in (1, 4, 16):
        assert c[r, 0] == pytest.approx(1 / (1 + r * r), rel=0.1, abs=0.01)


def test_transform_with_zero_contrast_is_constant(rng):
    w = rng.standard_normal((16, 16))
    a = lipschitz_transform(w, TransformSpec(0.2, 0.0))
    assert np.all(a.values == 0.6)


def test_clamp_saturates():
    w = np.zeros((4, 4))
    w[0, 0], w[1, 0] = 1e9, -1e9
    a = lipschitz_transform(w, TransformSpec(0.3, 1.0, TransformShape.CLAMP))
    assert a.values[0, 0] == 1.0
    assert a.values[1, 0] == pytest.approx(0.3, abs=1e-15)


def test_transform_pointwise_bounds_on_a_million_cells():
    w = rng_stream(0, 0, "test").standard_normal((1024, 1024)) * 10
    for shape in (TransformShape.CLAMP, TransformShape.TANH):
        a = lipschitz_transform(w, TransformSpec(0.2, 0.1, shape))
        assert a.values.min() >= 0.2 and a.values.max() <= 1.0
        a.check_admissible()


@pytest.mark.parametrize("lam,contrast", [(0.0, 1.0), (1.5, 1.0), (0.5, -1.0)])
def test_transform_spec_validation(lam, contrast):
    with pytest.raises(InvalidSpec):
        TransformSpec(lam, contrast)


def test_inclusions_zero_intensity_is_background():
    g = make_grid(2, 32)
    a = sample_poisson_inclusions(InclusionSpec(0.0, 2.0, 1.0, 0.4), g, 0)
    assert np.all(a.values == 0.4)


def test_inclusions_full_coverage():
    g = make_grid(2, 16)
    a = sample_poisson_inclusions(InclusionSpec(1.0, 100.0, 0.9, 0.4), g, 0)
    assert np.all(a.values == 0.9)


def test_inclusions_volume_fraction_matches_boolean_model():
    g = make_grid(2, 64)
    rho, R = 0.01, 5.0
    spec = InclusionSpec(rho, R, 1.0, 0.5)
    fractions = np.array([sample_poisson_inclusions(spec, g, 9, n).meta["volume_fraction"] for n in range(200)])
    # centers are continuous, so a cell is covered exactly when a point falls in its disc
    expected = 1 - math.exp(-rho * math.pi * R * R)
    stderr = fractions.std(ddof=1) / math.sqrt(len(fractions))
    assert abs(fractions.mean() - expected) < 3 * stderr


def test_inclusions_matrix_and_non_symmetric():
    g = make_grid(2, 32)
    a_in = [[0.6, 0.1], [-0.1, 0.6]]
    a = sample_poisson_inclusions(InclusionSpec(0.02, 3.0, a_in, 0.5), g, 4)
    assert a.values.shape == (2, 2, 32, 32)
    assert not a.is_symmetric()
    a.check_admissible()


def test_inclusion_matrices_validated():
    with pytest.raises(InvalidSpec):
        InclusionSpec(0.1, 1.0, [[2.0, 0], [0, 1.0]], 0.5).matrices(2)
    with pytest.raises(InvalidSpec):
        sample_poisson_inclusions(InclusionSpec(0.1, 0.5, 1.0, 0.5), make_grid(2, 8), 0)


def test_laminate_and_constant_fields():
    g = make_grid(2, 8)
    lam = laminate(g, [0.2, 1.0])
    assert np.all(lam.values[:4] == 0.2) and np.all(lam.values[4:] == 1.0)
    c = constant_field(g, 0.7)
    assert c.is_scalar and c.is_diagonal() and c.is_symmetric()


def test_coefficient_shape_and_finiteness():
    g = make_grid(2, 8)
    with pytest.raises(MismatchedGrids):
        CoefficientField(g, np.ones((4, 4)), 0.5)
    bad = np.ones(g.shape)
    bad[0, 0] = np.nan
    with pytest.raises(InvalidSpec):
        CoefficientField(g, bad, 0.5)


def test_field_container_roundtrip(tmp_path, rng):
    g = make_grid(3, 8, 0.25)
    v = rng.standard_normal((3,) + g.shape)
    path = tmp_path / "v.hglb"
    save_field(path, g, v, FieldKind.VECTOR)
    g2, v2, kind = load_field(path)
    assert g2 == g and kind is FieldKind.VECTOR and np.array_equal(v, v2)
    blob = encode_field(g, v[0], FieldKind.SCALAR)
    assert blob[:4] == encode_field(g, v[1], FieldKind.SCALAR)[:4]
    with pytest.raises(ValueError):
        decode_field(b"XXXX" + blob[4:])


def test_rng_streams_are_independent_by_tag():
    a = rng_stream(1, 0, "gaussian").standard_normal(4)
    b = rng_stream(1, 0, "inclusions").standard_normal(4)
    assert not np.array_equal(a, b)
    with pytest.raises(ValueError):
        rng_stream(-1)


def test_spectrum_kind_values():
    assert SpectrumKind("WhiteNoise") is SpectrumKind.WHITE_NOISE
    assert SpectrumSpec("LorentzianCovariance").effective_beta == 2.0
