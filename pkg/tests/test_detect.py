import math

import numpy as np
import pytest
from hypothesis import given, strategies as hst
from scipy import optimize, stats

from noarb import detect, procgen
from noarb.procgen import ProcessSpec, TimeGrid, VSpec
from noarb.strategy import ALWAYS, NEVER, BinOp, Const, Deterministic, EventSpec, HittingLevel, StopTime, Truncate, ValueAt

from conftest import within_se

G = TimeGrid(1.0, 256)


def cp_lower_bisect(k, n, conf):
    """Independent oracle: largest p with P(Bin(n, p) >= k) <= 1 - conf."""
    if k == 0:
        return 0.0
    return optimize.brentq(lambda p: stats.binom.sf(k - 1, n, p) - (1 - conf), 1e-15, k / n)


@given(hst.integers(1, 500), hst.integers(0, 500), hst.sampled_from([0.9, 0.99, 0.999]))
def test_cp_lower_matches_oracle(n, k, conf):
    k = min(k, n)
    if k == n:
        return
    assert detect.cp_lower(k, n, conf) == pytest.approx(cp_lower_bisect(k, n, conf), abs=1e-9)


@given(hst.integers(1, 200), hst.integers(0, 200))
def test_cp_bounds_bracket(n, k):
    k = min(k, n)
    assert 0 <= detect.cp_lower(k, n) <= k / n <= detect.cp_upper(k, n) <= 1


def test_cp_coverage():
    rng = np.random.default_rng(3)
    p, n, conf = 0.03, 400, 0.99
    k = rng.binomial(n, p, size=4000)
    lb = np.array([detect.cp_lower(int(x), n, conf) for x in k])
    assert (lb <= p).mean() >= conf - 0.005


def test_brownian_both_signs_symmetric():
    v = detect.increment_sign_test(ProcessSpec("brownian"), Deterministic(0.2), Deterministic(0.5), n=20000, grid=G, seed=1)
    assert v.classification == detect.BOTH
    f = v.n_pos / v.n
    assert within_se(f, 0.5, math.sqrt(0.25 / v.n))


def test_example2_and_tanaka_nonneg():
    g = TimeGrid(1.0, 1024)
    v = detect.increment_sign_test(ProcessSpec("ito_quadratic"), Deterministic(0), Deterministic(0.25), n=5000, grid=g, seed=2)
    assert v.classification == detect.NONNEG
    v = detect.increment_sign_test(ProcessSpec("tanaka_abs"), Deterministic(0), Deterministic(1.0), n=5000, grid=G, seed=2)
    assert v.classification == detect.NONNEG


def test_null_and_inconclusive():
    v = detect.increment_sign_test(ProcessSpec("constant", value=1.0), Deterministic(0), Deterministic(1), n=200, grid=G, seed=1)
    assert v.classification == detect.NULL
    rare = EventSpec(BinOp(">", ValueAt("X"), Const(1.8)), Deterministic(0.5))
    v = detect.increment_sign_test(ProcessSpec("brownian"), Deterministic(0.5), Deterministic(1), rare, n=2000, grid=G, seed=1)
    assert v.classification == detect.INCONCLUSIVE
    assert 0 < v.n < detect.MIN_CONDITIONED
    with pytest.raises(detect.NoConditioningError):
        detect.increment_sign_test(ProcessSpec("brownian"), Deterministic(0.5), Deterministic(1), NEVER, n=200, grid=G, seed=1)


def test_sign_test_rejects_reversed_stops():
    with pytest.raises(ValueError):
        detect.increment_sign_test(ProcessSpec("brownian"), Deterministic(0.5), Deterministic(0.2), n=200, grid=G, seed=1)


@given(hst.lists(hst.floats(-10, 10, allow_nan=False), min_size=1, max_size=300))
def test_classify_increments_sign_flip(xs):
    x = np.array(xs)
    a = detect.classify_increments(x, zero_tol=1e-9)
    b = detect.classify_increments(-x, zero_tol=1e-9)
    assert (a.n_pos, a.n_neg, a.n_zero) == (b.n_neg, b.n_pos, b.n_zero)
    flip = {detect.NONNEG: detect.NONPOS, detect.NONPOS: detect.NONNEG}
    assert b.classification == flip.get(a.classification, a.classification)


def test_chunking_does_not_change_counts():
    spec = ProcessSpec("fbm", H=0.7)
    a = detect.increment_sign_test(spec, Deterministic(0.2), Deterministic(0.5), n=3000, grid=G, seed=5, chunk=1000)
    b = detect.increment_sign_test(spec, Deterministic(0.2), Deterministic(0.5), n=3000, grid=G, seed=5, chunk=1000)
    assert a == b


def test_reachability_normal_tail():
    r = detect.reachability_test(ProcessSpec("brownian"), 0.1, 1.0, 1.0, n=40000, grid=G, seed=3, nu=1.0)
    p = stats.norm.sf(1.0)
    assert within_se(r.p_up, p, r.se(p))
    assert within_se(r.p_down, p, r.se(p))


def test_window_tail_bound():
    bound = detect.chaining_lower_bound(0.1, 1.0, 0.5)
    oracle = stats.norm.cdf(-1 / math.sqrt(0.1)) * (2 * stats.norm.cdf(0.5 / math.sqrt(0.9)) - 1)
    assert bound == pytest.approx(oracle, rel=1e-12)
    r = detect.reachability_test(ProcessSpec("brownian"), 0.1, 1.0, 0.5, n=20000, grid=G, seed=4)
    assert r.p_sup_below - 3 * r.se(r.p_sup_below) > bound


def test_reachability_validation():
    with pytest.raises(ValueError):
        detect.reachability_test(ProcessSpec("brownian"), 0.5, 0.2, 0.1, n=100, grid=G, seed=1)
    with pytest.raises(ValueError):
        detect.reachability_test(ProcessSpec("brownian"), 0.1, 0.5, 0.1, Deterministic(0.8), n=100, grid=G, seed=1)
    with pytest.raises(detect.NoConditioningError):
        detect.reachability_test(ProcessSpec("brownian"), 0.1, 0.5, 0.1, A=NEVER, n=100, grid=G, seed=1)


def test_fbm_reachability_after_hit():
    g = TimeGrid(1.5, 384)
    tau = Truncate(HittingLevel(0.3), 1.0)
    A = EventSpec(BinOp("<", StopTime(), Const(0.6)), tau)
    r = detect.reachability_test(ProcessSpec("fbm", H=0.7), 0.25, 0.5, 0.2, tau, A, 5000, grid=g, seed=2, nu=0.5)
    assert r.lb_up > 0 and r.lb_down > 0 and 0 < r.freq_A < 1


def test_search_finds_example2():
    g = TimeGrid(1.0, 512)
    fam = detect.interval_family(g, 0.1, [0.1, 0.5, 1.0])
    res = detect.arbitrage_search(ProcessSpec("ito_quadratic"), fam, 0.1, 2000, grid=g, seed=1)
    assert res.arbitrage_found
    assert "+1*1(0,0.1]" in [c.candidate for c in res.flagged]
    assert all(c.candidate.startswith("+1*1(0,") for c in res.flagged)


def test_search_negative_control_small():
    spec = ProcessSpec("fbm", H=0.7, V=VSpec("sine", bound=0.1, amplitude=0.2))
    fam = detect.interval_family(G, 0.1, [0.1, 0.5, 1.0], levels=[0.2])
    assert not detect.arbitrage_search(spec, fam, 0.1, 3000, grid=G, seed=9).arbitrage_found


def test_search_constant_is_null():
    fam = detect.interval_family(G, 0.1, [0.25, 1.0])
    res = detect.arbitrage_search(ProcessSpec("constant", value=2.0), fam, 0.1, 200, grid=G, seed=1)
    assert all(c.cls == detect.NULL for c in res.candidates)
    assert not res.arbitrage_found


def test_verdict_csv_columns():
    v = detect.classify_increments(np.array([1.0, -1.0] * 20))
    text = detect.verdicts_to_csv([("x", v)])
    assert text.splitlines()[0] == "candidate,n_pos,n_neg,n_zero,lb_pos,lb_neg,class"
