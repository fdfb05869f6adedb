import math

import numpy as np
import pytest
from hypothesis import given, strategies as hst

from noarb import detect, procgen, strategy as st, xform
from noarb.procgen import Path, ProcessSpec, TimeGrid
from noarb.strategy import Deterministic, HittingLevel, Truncate
from noarb.xform import MonotoneMap

from conftest import within_se

MAPS = [MonotoneMap("exp"), MonotoneMap("cubic_linear"), MonotoneMap("arctan"), MonotoneMap("cbrt"),
        MonotoneMap("power", p=5), MonotoneMap("affine", a=-2.0, b=1.0), MonotoneMap("table", xs=(-10, 0, 10), ys=(-1, 0, 3))]


@given(hst.sampled_from(MAPS), hst.lists(hst.floats(-3, 3), min_size=2, max_size=30, unique=True))
def test_maps_preserve_order(f, xs):
    x = np.sort(np.array(xs))
    y = f(x)
    d = np.diff(y)
    assert np.all(d >= 0) if f.increasing else np.all(d <= 0)


def test_exp_of_fbm_is_geometric_fbm():
    g = TimeGrid(1.0, 128)
    a = procgen.simulate(ProcessSpec("fbm", H=0.7), g, 5, 3)["X"]
    b = procgen.simulate(ProcessSpec("geometric_fbm", H=0.7), g, 5, 3)["X"]
    np.testing.assert_array_equal(xform.apply_monotone(MonotoneMap("exp"), a), b)


def test_identity_unchanged():
    g = TimeGrid(1.0, 32)
    B = procgen.sample_brownian(g, 1)
    np.testing.assert_array_equal(xform.apply_monotone(MonotoneMap.identity(), B).values, B.values)


def test_cbrt_keeps_increment_signs():
    g = TimeGrid(1.0, 512)
    B = procgen.sample_brownian(g, 4, n_paths=50)
    Y = xform.apply_monotone(MonotoneMap("cbrt"), B)
    np.testing.assert_array_equal(np.sign(np.diff(Y.values)), np.sign(np.diff(B.values)))


def test_validation():
    with pytest.raises(ValueError):
        MonotoneMap("affine", a=0)
    with pytest.raises(ValueError):
        MonotoneMap("power", p=2)
    with pytest.raises(ValueError):
        MonotoneMap("table", xs=(0, 1, 2), ys=(0, 1, 1))
    with pytest.raises(ValueError):
        xform.apply_monotone(MonotoneMap("log"), np.array([1.0, -1.0]))
    # exp saturates at float precision, so it is not strict there
    with pytest.raises(ValueError):
        xform.apply_monotone(MonotoneMap("exp"), np.array([-800.0, -790.0]))


def test_map_json_roundtrip():
    for f in MAPS:
        assert MonotoneMap.from_dict(f.to_dict()) == f


def test_sign_verdicts_invariant():
    g = TimeGrid(1.0, 256)
    base = detect.increment_sign_test(ProcessSpec("fbm", H=0.7), Deterministic(0.2), Deterministic(0.6), n=2000, grid=g, seed=3)
    for f in MAPS[:3]:
        v = detect.increment_sign_test(ProcessSpec("fbm", H=0.7, transform=f), Deterministic(0.2), Deterministic(0.6),
                                       n=2000, grid=g, seed=3)
        assert (v.n_pos, v.n_neg, v.n_zero, v.classification) == (base.n_pos, base.n_neg, base.n_zero, base.classification)


def test_identity_and_linear_clocks():
    g = TimeGrid(1.0, 100)
    tc = xform.build_time_change(g.times, g)
    np.testing.assert_allclose(tc.C[:-1], g.times[:-1], atol=1e-12)
    assert np.isnan(tc.C[-1])  # top of the attained range
    tc2 = xform.build_time_change(2 * g.times, g)
    s = np.linspace(0, 1.9, 20)
    np.testing.assert_allclose(tc2.inverse_at(s), s / 2, atol=1e-12)
    assert np.isnan(tc2.inverse_at(np.array([2.0])))[0]


def test_qv_clock_inverse_composition():
    g = TimeGrid(1.0, 4096)
    B = procgen.sample_brownian(g, 7)
    tc = xform.qv_time_change(B)
    comp = tc.inverse_at(tc.nu[:-1])
    assert np.abs(comp - g.times[:-1]).max() <= g.dt + 1e-12


def test_time_change_path():
    g = TimeGrid(1.0, 64)
    B = procgen.sample_brownian(g, 1, n_paths=3)
    same = xform.time_change_path(B, xform.build_time_change(g.times, g))
    np.testing.assert_array_equal(same.values, B.values)
    g2 = TimeGrid(2.0, 512)
    W = procgen.sample_brownian(g2, 5, n_paths=20000)
    tilde = xform.time_change_path(W, xform.build_time_change(2 * TimeGrid(1.0, 256).times, TimeGrid(1.0, 256)))
    v = tilde.values[:, 128] ** 2
    assert within_se(v.mean(), 1.0, v.std() / math.sqrt(v.size))


def test_time_change_rejects():
    g = TimeGrid(1.0, 10)
    with pytest.raises(ValueError):
        xform.build_time_change(np.linspace(1, 0, 11), g)
    with pytest.raises(ValueError):
        xform.build_time_change(np.linspace(0.1, 1, 11), g)
    with pytest.raises(ValueError):
        xform.build_time_change(np.zeros((2, 11)), g)
    tc = xform.build_time_change(3 * g.times, g)
    with pytest.raises(ValueError):
        xform.time_change_path(procgen.sample_brownian(g, 1), tc)


@pytest.mark.parametrize("kind", ["t", "2t", "qv"])
def test_gains_correspondence(kind):
    from noarb.experiments import timechange_max_gap

    assert timechange_max_gap(kind, TimeGrid(1.0, 512), 40, 3) <= 1e-12


@given(hst.integers(0, 10**6), hst.floats(0.05, 0.45), hst.floats(0.5, 0.95))
def test_pullback_direction(seed, a, b):
    g = TimeGrid(1.0, 256)
    x = procgen.sample_brownian(TimeGrid(2.0, 512), seed, n_paths=3)
    tc = xform.build_time_change(2 * g.times, g)
    k0, k1 = g.index_of(a), g.index_of(b)
    gt, gx = xform.gains_pullback(x, tc, k0, k1)
    np.testing.assert_array_equal(gt, gx)


def test_qv_drift():
    g = TimeGrid(1.0, 512)
    const = procgen.simulate(ProcessSpec("constant", value=0.7), g, 2, 1)["X"]
    np.testing.assert_array_equal(xform.qv_drift_values(const, 0.5), const)
    for alpha in (1.0, 0.5):
        z = xform.qv_drift_process(ProcessSpec("brownian"), alpha, g, 3, n_paths=10000).values[:, -1]
        assert within_se(z.mean(), 1.0, z.std() / math.sqrt(z.size))
