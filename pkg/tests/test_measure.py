import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ottolab import measure
from ottolab.potential import Potential

from conftest import gaussian_pdf


def test_normalize_constant():
    d = measure.normalize(np.full(101, 2.0), 0.0, 1.0)
    assert np.allclose(d.values, 1.0)


def test_gaussian_grid_mass():
    assert measure.gaussian(0.0, 1.0).mass == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=30)
@given(st.lists(st.floats(0.0, 10.0), min_size=16, max_size=64).filter(lambda v: sum(v) > 1e-3))
def test_normalize_is_idempotent(vals):
    d = measure.normalize(vals, -1.0, 2.0)
    assert d.mass == pytest.approx(1.0, abs=1e-12)
    again = measure.normalize(d.values, -1.0, 2.0)
    assert np.allclose(again.values, d.values, rtol=0, atol=1e-12)


def test_normalize_rejects_negative_and_nan():
    with pytest.raises(ValueError):
        measure.normalize([1.0, -1.0, 1.0])
    with pytest.raises(ValueError):
        measure.normalize([1.0, np.nan, 1.0])


def test_moments():
    d = measure.gaussian(0.0, 1.0)
    assert measure.moment(d, 2) == pytest.approx(1.0, abs=1e-4)
    assert measure.moment(measure.gaussian(1.0, 2.0), 1) == pytest.approx(1.0, abs=1e-4)
    assert measure.moment(d, 0) == pytest.approx(1.0)
    assert measure.variance(measure.gaussian(1.0, 2.0)) == pytest.approx(2.0, abs=1e-4)


def test_score_of_gaussians():
    # [DERIVED] -(x - m) / var
    s = measure.score(measure.gaussian(0.0, 1.0))
    assert np.interp(1.0, s.x, s.values) == pytest.approx(-1.0, abs=1e-3)
    s = measure.score(measure.gaussian(1.0, 2.0))
    assert np.interp(0.0, s.x, s.values) == pytest.approx(0.5, abs=1e-3)


def test_score_of_uniform_is_zero():
    s = measure.score(measure.normalize(np.ones(201), 0.0, 1.0))
    assert np.allclose(s.values[1:-1], 0.0, atol=1e-12)


def test_log_density_matches_closed_form():
    d = measure.gaussian(0.5, 1.5)
    logp, _ = measure.log_density(d)
    x = d.x
    inner = np.abs(x) < 5
    ref = np.log(gaussian_pdf(x, 0.5, 1.5))
    assert np.max(np.abs(logp[inner] - ref[inner])) < 1e-6


def test_kde_moments():
    rng = np.random.default_rng(1)
    d = measure.from_samples(rng.standard_normal(100_000))
    assert measure.moment(d, 2) == pytest.approx(1.0, abs=0.02)
    d = measure.from_samples(3.0 + rng.standard_normal(100_000))
    assert measure.moment(d, 1) == pytest.approx(3.0, abs=0.02)


def test_kde_agrees_with_scipy():
    # independent estimator at the same bandwidth
    rng = np.random.default_rng(2)
    xs = rng.standard_normal(2000)
    bw = measure.silverman_bandwidth(xs)
    d = measure.from_samples(xs, -6, 6, 1201, bandwidth=bw)
    ref = stats.gaussian_kde(xs, bw_method=bw / np.std(xs, ddof=1))(d.x)
    assert np.max(np.abs(d.values - ref)) < 2e-3


def test_kde_degenerate_samples():
    with pytest.raises(ValueError):
        measure.from_samples(np.zeros(1000))


def test_l1_distance():
    a = measure.gaussian(0.0, 1.0)
    assert measure.l1_distance(a, a) == 0.0
    b = measure.gaussian(1.0, 1.0)
    # [DERIVED] total variation of two unit-variance normals one apart
    ref = 2 * (2 * stats.norm.cdf(0.5) - 1)
    assert measure.l1_distance(a, b) == pytest.approx(ref, abs=1e-5)


def test_gibbs_grid_matches_potential():
    pot = Potential.normalized_quadratic()
    d = measure.gibbs(pot)
    assert np.allclose(d.values, gaussian_pdf(d.x, 0.0, 1.0), atol=1e-8)


def test_cdf_against_normal_cdf():
    d = measure.gaussian(0.0, 1.0)
    assert np.max(np.abs(d.cdf() - stats.norm.cdf(d.x))) < 1e-5


def test_inverse_cdf_sampling():
    d = measure.gaussian(1.0, 2.0)
    u = np.random.default_rng(3).random(200_000)
    xs = measure.inverse_cdf_sample(d, u)
    assert np.mean(xs) == pytest.approx(1.0, abs=3 * math.sqrt(2 / 2e5))
    assert stats.kstest(xs, stats.norm(1.0, math.sqrt(2)).cdf).pvalue > 1e-3


def test_csv_round_trip(tmp_path):
    d = measure.gaussian(0.3, 0.7, -5, 5, 257)
    d.to_csv(tmp_path / "d.csv")
    back = measure.GridDensity.from_csv(tmp_path / "d.csv")
    assert back.same_grid(d)
    assert np.array_equal(back.values, d.values)


def test_comment_header_round_trip(tmp_path):
    measure.write_rows(tmp_path / "r.csv", ["a", "b"], [[1, 2.5]], {"seed": 7})
    assert measure.read_comments(tmp_path / "r.csv")["seed"] == "7"
    assert measure.read_columns(tmp_path / "r.csv")["b"][0] == 2.5


@given(st.floats(-1e300, 1e300, allow_nan=False))
def test_fmt_round_trips_floats(v):
    assert float(measure.fmt(v)) == v
