import math
import warnings

import numpy as np
import pytest
from scipy import special

from noarb import frackernel as fk, procgen
from noarb.procgen import MuSpec, TimeGrid

G = TimeGrid(1.0, 256)


@pytest.fixture(scope="module")
def kg07():
    return fk.KernelGrid.build(0.7, G)


@pytest.mark.parametrize("H", [0.6, 0.7, 0.8])
def test_constant_matches_molchan_closed_form(H):
    a = H - 0.5
    c_std = math.sqrt(H * (2 * H - 1) / special.beta(2 - 2 * H, a))
    assert fk.calibrated_constant(H) == pytest.approx(c_std / a, rel=1e-8)


def test_kernel_value_vs_brute_quadrature():
    H, t, s = 0.7, 1.0, 0.5
    a = H - 0.5
    n = 10**6
    u = s + (np.arange(n) + 0.5) * (t - s) / n
    inner = np.sum(u ** (a - 1) * (u - s) ** a) * (t - s) / n
    oracle = fk.calibrated_constant(H) * ((t / s) ** a * (t - s) ** a - a * s ** (-a) * inner)
    assert fk.kernel_value(H, t, s) == pytest.approx(oracle, rel=1e-6)


def test_kernel_limits():
    assert fk.kernel_value(0.5, 1.0, 0.3) == 1.0
    # (t - s)^0.2 decays slowly
    near = [abs(fk.kernel_value(0.7, 1.0, 1.0 - e)) for e in (1e-3, 1e-6, 1e-12)]
    assert near[0] > near[1] > near[2] and near[2] < 1e-2
    assert fk.kernel_value(0.7, 1.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        fk.kernel_value(0.4, 1.0, 0.5)
    with pytest.raises(ValueError):
        fk.kernel_value(0.7, 1.0, 0.0)


def test_closed_inner_matches_quadrature():
    for s in (0.01, 0.3, 0.9):
        assert fk._inner_closed(0.7, 1.0, s) == pytest.approx(fk._inner_quad(0.7, 1.0, s), rel=1e-9)


def test_apply_zero(kg07):
    assert np.all(fk.apply_K(np.zeros(G.N + 1), G, 0.7, kg07) == 0)


def test_kernel_process_covariance(kg07):
    X = fk.kernel_fbm(0.7, G, 2, n_paths=20000, kgrid=kg07).values
    v = (X[:, -1] ** 2).mean()
    c = (X[:, 128] * X[:, -1]).mean()
    assert v == pytest.approx(1.0, rel=0.05)
    assert c == pytest.approx(float(procgen.fbm_covariance(0.7, 0.5, 1.0)), rel=0.05)


def test_kgrid_mismatch(kg07):
    with pytest.raises(ValueError):
        fk.apply_K(np.ones(G.N + 1), G, 0.8, kg07)


def test_fractional_derivative_power_oracle():
    g = TimeGrid(1.0, 1024)
    d = fk.fractional_derivative(g.times, g, 0.7)
    for t in (0.5, 1.0):
        i = g.index_of(t)
        assert d[i] == pytest.approx(t**0.8 / math.gamma(1.8), rel=1e-3)
    assert np.all(fk.fractional_derivative(np.zeros(g.N + 1), g, 0.7) == 0)
    np.testing.assert_allclose(fk.fractional_derivative(g.times**2, g, 0.5), g.times**2, atol=1e-12)


def test_fractional_derivative_warns_on_rough_input():
    g = TimeGrid(1.0, 512)
    w = procgen.sample_fbm(0.1, g, 1).values
    with pytest.warns(RuntimeWarning):
        fk.fractional_derivative(w, g, 0.7)
    with pytest.warns(RuntimeWarning):
        fk.fractional_derivative(g.times + 1.0, g, 0.7)


@pytest.mark.parametrize("p,tol", [(1, 1e-3), (2, 2e-3), (3, 5e-3)])
def test_inverse_round_trip(kg07, p, tol):
    t = G.times
    g = fk.apply_K(t**p, G, 0.7, kg07)
    back = fk.inverse_K(g, G, 0.7)
    sl = slice(G.index_of(0.2), G.index_of(0.9))
    np.testing.assert_allclose(back[sl], t[sl] ** p, rtol=tol)


def test_half_power_variant_fails_round_trip(kg07):
    g = fk.apply_K(G.times, G, 0.7, kg07)
    back = fk.inverse_K(g, G, 0.7, variant="half-power")
    i = G.index_of(0.5)
    assert abs(back[i] - 0.5) / 0.5 > 0.1


def test_constant_drift_integrand_closed_form():
    # the numerical inverse of mu * t agrees with kappa * s^-a away from 0
    mu = 0.5
    kappa = fk.constant_drift_integrand(0.7, mu)
    g = TimeGrid(1.0, 1024)
    num = fk.inverse_K(mu * g.times, g, 0.7)
    sl = slice(g.index_of(0.2), None)
    np.testing.assert_allclose(num[sl], kappa * g.times[sl] ** -0.2, rtol=1e-3)


def test_girsanov_zero_drift_exact():
    B = procgen.sample_brownian(G, 1, n_paths=100)
    d = fk.girsanov_density(0.0, B, 0.7)
    assert np.all(d.Lam == 1.0)


def test_girsanov_constant_drift():
    X, B = fk.kernel_fbm(0.7, G, 5, n_paths=10000, return_driver=True)
    d = fk.girsanov_density(0.5, B, 0.7)
    lam = d.Lam[:, -1]
    assert 0.95 <= lam.mean() <= 1.05
    m, se = fk.weighted_mean_se(X.values[:, -1] + 0.5, lam)
    assert abs(m) <= 4 * se
    assert abs((X.values[:, -1] + 0.5).mean() - 0.5) < 0.05


def test_girsanov_path_dependent_drift():
    X, B = fk.kernel_fbm(0.7, G, 6, n_paths=10000, return_driver=True)
    mu = MuSpec("sine_path", value=0.5, amplitude=0.2)
    d = fk.girsanov_density(mu, B, 0.7)
    drift = (mu.values(B.values)[:, :-1] * G.dt).sum(axis=1)
    m, se = fk.weighted_mean_se(X.values[:, -1] + drift, d.Lam[:, -1])
    assert 0.95 <= d.Lam[:, -1].mean() <= 1.05
    assert abs(m) <= 4 * se


def test_weighted_mean_se():
    # equal weights: plain mean and sd / sqrt(n) with the population sd
    m, se = fk.weighted_mean_se(np.array([1.0, 3.0]), np.array([1.0, 1.0]))
    assert m == 2.0 and se == pytest.approx(1 / math.sqrt(2))
