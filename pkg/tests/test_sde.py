import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ottolab import measure, pde, sde
from ottolab.oracle import GaussianState, ou_marginal
from ottolab.potential import Perturbation, Potential


def test_ou_mean_within_clt_band(ou):
    t = math.log(4)
    ens = sde.simulate_forward(ou, sde.gaussian_sampler(1.0, 2.0), 0.0, t, 1e-3, 100_000, seed=11)
    g = ou_marginal(GaussianState(1.0, 2.0), ens.times[-1])
    xs = ens.data[-1]
    assert abs(np.mean(xs) - g.mean) < 3 * math.sqrt(1.25 / 1e5)
    # Euler bias on the variance is O(dt); allow it on top of the sampling band
    assert abs(np.var(xs, ddof=1) - g.var) < 3 * g.var * math.sqrt(2 / 1e5) + 2e-3


def test_brownian_variance():
    ens = sde.simulate_forward(Potential.zero(), sde.point_mass_sampler(0.0), 0.0, 1.0, 1e-2, 100_000, seed=3)
    assert np.var(ens.data[-1], ddof=1) == pytest.approx(1.0, abs=0.015)


def test_zero_amplitude_reproduces_unperturbed(ou):
    a = sde.simulate_forward(ou, sde.gaussian_sampler(1, 2), 0, 0.1, 1e-3, 5000, seed=5)
    b = sde.simulate_forward(ou, sde.gaussian_sampler(1, 2), 0, 0.1, 1e-3, 5000, seed=5,
                             pert=Perturbation(0, 1, 0))
    assert np.array_equal(a.data, b.data)


def test_seed_determinism_and_thread_independence(ou, monkeypatch):
    runs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("OTTO_THREADS", threads)
        runs.append(sde.simulate_forward(ou, sde.gaussian_sampler(1, 2), 0, 0.05, 1e-3, 20_000, seed=9).data)
    assert np.array_equal(runs[0], runs[1])
    other = sde.simulate_forward(ou, sde.gaussian_sampler(1, 2), 0, 0.05, 1e-3, 20_000, seed=10).data
    assert not np.array_equal(runs[0], other)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("OTTO_THREADS", "2")
    assert sde.worker_count() == 2


def test_invalid_dt(ou):
    for dt in (0.0, 0.02):
        with pytest.raises(ValueError):
            sde.simulate_forward(ou, sde.gaussian_sampler(0, 1), 0, 1, dt, 10, seed=1)


def test_zero_horizon_keeps_initial_draws(ou):
    ens = sde.simulate_forward(ou, sde.gaussian_sampler(0, 1), 0.5, 0.5, 1e-3, 100, seed=2)
    assert ens.data.shape == (1, 100)
    rng = sde.block_rng(2, 0)
    assert np.array_equal(ens.data[0], rng.standard_normal(100))


def test_grid_sampler_law(n12):
    xs = sde.grid_sampler(n12)(np.random.default_rng(0), 50_000)
    assert stats.kstest(xs, stats.norm(1, math.sqrt(2)).cdf).pvalue > 1e-3


def test_csv_header_echoes_seed(ou, tmp_path):
    ens = sde.simulate_forward(ou, sde.gaussian_sampler(0, 1), 0, 0.02, 1e-3, 50, seed=1234)
    ens.to_csv(tmp_path / "e.csv", save_stride=5)
    meta = measure.read_comments(tmp_path / "e.csv")
    assert meta["seed"] == "1234" and meta["orientation"] == "forward"
    cols = measure.read_columns(tmp_path / "e.csv")
    assert np.array_equal(cols["t=0.02"], ens.data[-1])


def test_at_rejects_off_grid_times(ou):
    ens = sde.simulate_forward(ou, sde.gaussian_sampler(0, 1), 0, 0.02, 1e-3, 10, seed=1)
    with pytest.raises(ValueError):
        ens.at(0.0105)


# -- reversed diffusion -------------------------------------------------------------------

def test_reversed_drift_at_stationarity(stationary_flow, ou_normalized):
    ip = pde.LogDensityInterpolant(stationary_flow)
    x = np.linspace(-3, 3, 25)
    drift = sde.reversed_drift(ip, ou_normalized, 0.2, x)
    assert np.max(np.abs(drift + x / 2)) < 1e-3
    # reversed minus forward drift (-Psi') is the likelihood score, zero at stationarity
    assert np.max(np.abs(drift + ou_normalized.gradient(x))) < 1e-3


def test_reversed_drift_heat(heat_flow):
    ip = pde.LogDensityInterpolant(heat_flow)
    x = np.linspace(-3, 3, 25)
    for t in (0.2, 0.7):
        assert np.max(np.abs(sde.reversed_drift(ip, Potential.zero(), t, x) + x / (1 + t))) < 1e-3


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-3, 3))
def test_reversed_drift_identity(t, x):
    # (log p)' + Psi' equals (log l)' - Psi'
    flow = _flow_cache()
    ip = pde.LogDensityInterpolant(flow)
    pot = flow.potential
    lhs = sde.reversed_drift(ip, pot, t, np.array([x]))
    rhs = ip.grad_log_ell(t, np.array([x])) - pot.gradient(np.array([x]))
    assert lhs[0] == pytest.approx(rhs[0], abs=1e-9)


_CACHE = {}


def _flow_cache():
    if "f" not in _CACHE:
        _CACHE["f"] = pde.solve_forward(Potential.quadratic(0.25), measure.gaussian(1, 2), 0, 1, 1e-3, save_stride=10)
    return _CACHE["f"]


def test_reversal_recovers_initial_law(ou_flow, ou):
    rev = sde.simulate_reversed(ou_flow, ou, 1e-3, 100_000, seed=21)
    assert rev.orientation == "reversed"
    xs = rev.data[-1]
    assert np.mean(xs) == pytest.approx(1.0, abs=0.02)
    assert np.var(xs, ddof=1) == pytest.approx(2.0, abs=0.05)
    g = ou_marginal(GaussianState(1.0, 2.0), 0.25)
    xs = rev.at(0.75)
    assert np.mean(xs) == pytest.approx(g.mean, abs=0.02)
    assert np.var(xs, ddof=1) == pytest.approx(g.var, abs=0.05)


def test_reversed_heat_recovers_unit_variance(heat_flow):
    rev = sde.simulate_reversed(heat_flow, Potential.zero(), 1e-3, 40_000, seed=4)
    assert np.var(rev.data[-1], ddof=1) == pytest.approx(1.0, abs=0.05)


def test_reversed_stationary(stationary_flow, ou_normalized):
    rev = sde.simulate_reversed(stationary_flow, ou_normalized, 1e-3, 40_000, seed=8)
    band = 4 / math.sqrt(40_000)
    for k in (0, 250, 500):
        xs = rev.data[k]
        assert abs(np.mean(xs)) < band
        assert abs(np.var(xs, ddof=1) - 1) < band * math.sqrt(2) + 5e-3
