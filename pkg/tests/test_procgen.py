import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from noarb import procgen
from noarb.procgen import KernelSpec, MuSpec, Path, ProcessSpec, TimeGrid, VSpec

from conftest import within_se


G = TimeGrid(1.0, 256)


def test_grid_basics():
    g = TimeGrid(1.0, 100)
    assert g.dt == pytest.approx(0.01)
    assert g.times[-1] == 1.0 and g.times.size == 101
    assert g.index_of(0.5) == 50
    assert g.steps_for(0.105) == 11
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10)


def test_seed_is_mandatory():
    with pytest.raises(ValueError):
        procgen.sample_brownian(G, None)


@pytest.mark.parametrize("spec", [
    ProcessSpec("brownian"), ProcessSpec("fbm", H=0.3), ProcessSpec("fbm", H=0.7, method="exact-cholesky"),
    ProcessSpec("moving_average", kernel=KernelSpec.fbm(0.7)), ProcessSpec("ito_quadratic"),
    ProcessSpec("tanaka_abs"), ProcessSpec("tanaka_capped", cap=0.5), ProcessSpec("power_integrand", alpha=1.0),
])
def test_paths_start_at_zero(spec):
    x = procgen.simulate(spec, TimeGrid(1.0, 64), 50, 3)["X"]
    assert np.all(x[:, 0] == 0.0)


def test_same_seed_same_paths():
    a = procgen.simulate(ProcessSpec("fbm", H=0.7), G, 10, 5)["X"]
    b = procgen.simulate(ProcessSpec("fbm", H=0.7), G, 10, 5)["X"]
    c = procgen.simulate(ProcessSpec("fbm", H=0.7), G, 10, 6)["X"]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_brownian_variance_and_independence():
    b = procgen.sample_brownian(G, 11, n_paths=20000).values
    v = b[:, -1] ** 2
    assert within_se(v.mean(), 1.0, v.std() / math.sqrt(v.size))
    i = G.index_of(0.5)
    r = np.corrcoef(b[:, i], b[:, -1] - b[:, i])[0, 1]
    assert abs(r) <= 4 / math.sqrt(20000)


def test_fbm_covariance_formula():
    assert procgen.fbm_covariance(0.5, 1.0, 2.0) == pytest.approx(1.0)
    assert procgen.fbm_covariance(0.7, 1.0, 1.0) == pytest.approx(1.0)
    # frozen from the closed form 0.5 * 2**1.4
    assert procgen.fbm_covariance(0.7, 1.0, 2.0) == pytest.approx(1.3195079107728942, rel=1e-12)


def test_fbm_methods_agree_in_law():
    g = TimeGrid(1.0, 64)
    for method in ("davies-harte", "exact-cholesky"):
        x = procgen.sample_fbm(0.3, g, 4, method=method, n_paths=20000).values
        prod = x[:, 32] * x[:, 64]
        assert within_se(prod.mean(), float(procgen.fbm_covariance(0.3, 0.5, 1.0)), prod.std() / math.sqrt(prod.size))


def test_fbm_rejects_bad_hurst():
    with pytest.raises(ValueError):
        ProcessSpec("fbm", H=1.0)
    with pytest.raises(ValueError):
        procgen.sample_fbm(0.0, G, 1)


def test_c_h_constant_matches_quadrature():
    H = 0.7
    f = lambda u: ((1 + u) ** (H - 0.5) - u ** (H - 0.5)) ** 2
    oracle = 1 / (2 * H) + integrate.quad(f, 0, 1)[0] + integrate.quad(f, 1, np.inf)[0]
    assert procgen.c_h_squared(H) == pytest.approx(oracle, rel=1e-8)
    assert procgen.c_h_squared(0.5) == 1.0


def test_moving_average_power_kernel_variance():
    # Var(Y_1) with phi(t) = t^(H-1/2) equals c_H^2 up to truncation of the past
    g = TimeGrid(1.0, 128)
    var = procgen.kernel_l2_check(KernelSpec.fbm(0.7), g, 40.0)
    assert var == pytest.approx(procgen.c_h_squared(0.7), rel=0.03)
    assert abs(procgen.truncation_self_check(KernelSpec.fbm(0.7), g, 40.0)) < 0.02


def test_moving_average_zero_and_indicator():
    g = TimeGrid(1.0, 64)
    y0 = procgen.sample_moving_average(KernelSpec.zero(), g, 1, n_paths=3).values
    assert np.all(y0 == 0)
    y = procgen.sample_moving_average(KernelSpec.brownian(), g, 2, n_paths=20000).values[:, -1]
    assert within_se((y**2).mean(), 1.0, (y**2).std() / math.sqrt(y.size))


def test_moving_average_rejects_non_l2_kernel():
    bad = KernelSpec(lambda t: t ** -1.0, name="1/t")
    with pytest.raises(ValueError):
        procgen.sample_moving_average(bad, TimeGrid(1.0, 32), 1)


def test_ito_quadratic_identity():
    for N in (64, 1024):
        g = TimeGrid(1.0, N)
        X, B = procgen.sample_ito_quadratic(g, 9, n_paths=200)
        b = B.values
        qv = procgen.realized_quadratic_variation(B).values
        # exact discrete identity
        np.testing.assert_allclose(X.values, 0.5 * (b**2 - qv) + g.times, atol=1e-12)
        gap = np.abs(X.values - 0.5 * (b**2 + g.times)).max()
        assert gap == pytest.approx(0.5 * np.abs(qv - g.times).max(), rel=1e-9)
    assert X.values[:, 0].tolist() == [0.0] * 200


def test_ito_gap_shrinks_with_dt():
    gaps = []
    for N in (64, 4096):
        g = TimeGrid(1.0, N)
        X, B = procgen.sample_ito_quadratic(g, 2, n_paths=200)
        gaps.append(np.abs(X.values - 0.5 * (B.values**2 + g.times)).max())
    assert gaps[1] < gaps[0] / 3


def test_tanaka_decomposition():
    g = TimeGrid(1.0, 512)
    absb, L, M = procgen.sample_tanaka(g, 4, n_paths=500)
    assert np.all(absb.values >= 0)
    assert np.all(L.values[:, 0] == 0)
    np.testing.assert_allclose(absb.values, M.values + L.values, atol=1e-12)
    assert np.diff(L.values, axis=1).min() >= -1e-12


def test_tanaka_cap():
    g = TimeGrid(1.0, 512)
    D, L, M = procgen.sample_tanaka(g, 4, cap=0.5, n_paths=2000)
    stopped = D.values - M.values
    step = np.diff(L.values, axis=1).max()
    assert stopped.max() <= 0.5 + step + 1e-12
    # stopped local time is the running local time until it first crosses the cap
    hit = L.values > 0.5
    before = ~np.logical_or.accumulate(hit, axis=1)
    np.testing.assert_allclose(stopped[before], L.values[before], atol=1e-12)
    with pytest.raises(ValueError):
        procgen.sample_tanaka(g, 1, cap=0.0)


def test_power_integrand_variance():
    g = TimeGrid(1.0, 512)
    x0 = procgen.sample_power_integrand(0.0, VSpec(), g, 3, n_paths=20000).values[:, -1]
    assert within_se((x0**2).mean(), 1.0, (x0**2).std() / math.sqrt(x0.size))
    x1 = procgen.sample_power_integrand(1.0, VSpec(), g, 3, n_paths=20000).values[:, -1]
    assert within_se((x1**2).mean(), 1 / 3, (x1**2).std() / math.sqrt(x1.size))
    with pytest.raises(ValueError):
        procgen.sample_power_integrand(-0.5, VSpec(), g, 3)


def test_power_integrand_condition_star():
    g = TimeGrid(0.5, 16384)
    x = procgen.sample_power_integrand(1.0, VSpec(), g, 8, n_paths=20)
    res = procgen.check_condition_star(procgen.realized_quadratic_variation(x), lambda h: h**3 / 3, 0.25, 0.1)
    assert res.all_hold


@given(st.sampled_from(["constant", "sine", "clipped_path", "sine_path"]), st.floats(0.01, 2.0), st.integers(0, 1000))
def test_v_bounded(kind, bound, seed):
    v = VSpec(kind, bound=bound, value=5.0, amplitude=3.0, scale=4.0)
    g = TimeGrid(1.0, 32)
    d = procgen.brownian_values(g, np.random.default_rng(seed), 5)
    assert np.abs(v.values(g, d)).max() <= bound


def test_v_validation():
    with pytest.raises(ValueError):
        VSpec("sine")
    with pytest.raises(ValueError):
        VSpec("bogus", bound=1)
    with pytest.raises(ValueError):
        MuSpec("bogus")


def test_qv_brownian_and_fbm():
    g = TimeGrid(1.0, 4096)
    qv = procgen.realized_quadratic_variation(procgen.sample_brownian(g, 1, n_paths=10000)).values[:, -1]
    assert within_se(qv.mean(), 1.0, qv.std() / math.sqrt(qv.size))
    qf = procgen.realized_quadratic_variation(procgen.sample_fbm(0.7, g, 1, n_paths=200)).values[:, -1]
    assert np.median(qf) < 0.05
    const = procgen.realized_quadratic_variation(Path(g, np.full(g.N + 1, 2.0)))
    assert np.all(const.values == 0)


def test_condition_star_examples():
    g = TimeGrid(1.0, 1024)
    B = procgen.sample_brownian(g, 3, n_paths=500)
    assert procgen.check_condition_star(procgen.realized_quadratic_variation(B), lambda h: h / 2, 0.1).all_hold
    const = procgen.realized_quadratic_variation(Path(g, np.zeros(g.N + 1)))
    assert not procgen.check_condition_star(const, lambda h: h**3, 0.1).holds
    X, B = procgen.sample_ito_quadratic(g, 5, n_paths=2000)
    M = Path(g, X.values - g.times)
    res = procgen.check_condition_star(procgen.realized_quadratic_variation(M), lambda h: h * h / 10, 0.1)
    assert 0.2 < 1 - res.holds.mean() < 0.8
    with pytest.raises(ValueError):
        procgen.check_condition_star(const, lambda h: h, g.dt / 2)


def test_drift_and_qv_drift_kinds():
    g = TimeGrid(1.0, 256)
    d = procgen.simulate(ProcessSpec("drift_power", alpha=0.5), g, 4, 1)
    np.testing.assert_allclose(d["X"] - d["B"], np.broadcast_to(np.sqrt(g.times), (4, g.N + 1)))
    c = procgen.simulate(ProcessSpec("qv_drift", alpha=1.0, base=ProcessSpec("constant", value=1.5)), g, 3, 1)
    np.testing.assert_array_equal(c["X"], 1.5)
    assert ProcessSpec("qv_drift", alpha=0.4, base=ProcessSpec("brownian")).no_arbitrage_regime is False


def test_spec_validation():
    for kw in ({"kind": "nope"}, {"kind": "fbm"}, {"kind": "tanaka_capped"}, {"kind": "power_integrand", "alpha": -0.6},
               {"kind": "qv_drift", "alpha": 1.0}, {"kind": "moving_average"}):
        with pytest.raises(ValueError):
            ProcessSpec(**kw)


def test_chunks_are_deterministic():
    spec = ProcessSpec("brownian")
    a = np.concatenate([c["X"] for c in procgen.simulate_chunks(spec, G, 25, 4, chunk=10)])
    b = np.concatenate([c["X"] for c in procgen.simulate_chunks(spec, G, 25, 4, chunk=10)])
    assert a.shape == (25, G.N + 1)
    np.testing.assert_array_equal(a, b)


def test_path_csv():
    g = TimeGrid(1.0, 4)
    buf = io.StringIO()
    Path(g, np.array([0.0, 0.1, 0.2, 0.3, 1 / 3])).to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,value"
    assert lines[-1] == "1,0.333333333333"
    assert len(lines) == 6
