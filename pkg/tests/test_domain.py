import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from oracles import completion_outcomes, nested_loop_combinations, quad_shortage
from taskadmit.domain import (AtomicPrice, CombinationSpace, ConstantRate, EmpiricalPrice, LomaxPrice,
                              MixturePrice, PiecewiseLinearRate, ProblemInstance, SinusoidRate, StepRate,
                              SumRate, TaskClass, enumerate_combinations, eval_rate, mean_shortage,
                              successor_on_accept)


# --- rates ------------------------------------------------------------------


@pytest.mark.parametrize("rate", [
    ConstantRate(0.3),
    SinusoidRate(0.5, 0.4, 7.0, 1.1),
    StepRate(0.2, 0.9, 3.3),
    PiecewiseLinearRate((0.0, 2.0, 5.0), (0.1, 0.8, 0.3)),
    SumRate((ConstantRate(0.1), SinusoidRate(0.5, 0.5, 4.0))),
])
def test_rate_integral_matches_quadrature(rate):
    for a, b in [(0.0, 1.0), (0.5, 6.5), (2.0, 2.0), (0.0, 10.0)]:
        ref, _ = quad(lambda t: float(rate(t)), a, b, points=[3.3] if isinstance(rate, StepRate) else None,
                      limit=200)
        assert rate.integral(a, b) == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("rate", [
    SinusoidRate(0.5, 0.4, 7.0, 1.1),
    StepRate(0.2, 0.9, 3.3),
    PiecewiseLinearRate((0.0, 2.0, 5.0), (0.1, 0.8, 0.3)),
])
def test_rate_upper_bound_dominates(rate):
    t = np.linspace(0, 10, 2001)
    assert np.all(rate(t) <= rate.upper_bound(10.0) + 1e-15)


def test_sinusoid_rejects_negative_excursion():
    with pytest.raises(ValueError):
        SinusoidRate(0.1, 0.2, 10.0)


def test_step_rate_is_not_lipschitz():
    assert StepRate(1.0, 2.0, 5.0).lipschitz_bound == math.inf
    assert StepRate(1.0, 1.0, 5.0).lipschitz_bound == 0.0


def test_eval_rate_outside_window():
    r = ConstantRate(1.0)
    assert eval_rate(r, 3.0, 10.0) == 1.0
    with pytest.raises(ValueError):
        eval_rate(r, 11.0, 10.0)
    with pytest.raises(ValueError):
        eval_rate(r, -0.1, 10.0)


# --- prices -----------------------------------------------------------------


def test_lomax_shortage_at_zero_is_mean():
    assert LomaxPrice(3, 1600).shortage(0.0) == pytest.approx(800.0, rel=1e-15)
    assert mean_shortage(LomaxPrice(3, 400), 0.0) == pytest.approx(200.0)


@pytest.mark.parametrize("alpha,lam", [(3, 400), (3, 2500), (2.5, 10.0), (5, 1.0)])
def test_lomax_shortage_quadrature(alpha, lam):
    from scipy.stats import lomax

    d = LomaxPrice(alpha, lam)
    sf = lomax(alpha, scale=lam).sf
    for p in np.logspace(-2, 4, 15) * lam / 100:
        assert float(d.shortage(p)) == pytest.approx(quad_shortage(d.cdf, p, sf=sf, scale=lam), rel=1e-7)


def test_empirical_shortage_quadrature():
    d = EmpiricalPrice((1.0, 2.0, 5.0, 9.0), (0.2, 0.3, 0.1, 0.4))
    for p in [0.0, 0.5, 1.0, 1.7, 2.0, 4.2, 8.99, 9.0, 12.0]:
        ref = quad_shortage(d.cdf, p, upper=9.0) if p < 9 else 0.0
        assert float(d.shortage(p)) == pytest.approx(ref, abs=1e-9)
    assert d.mean == pytest.approx(float(d.shortage(0.0)))


def test_atomic_and_mixture_shortage():
    a = AtomicPrice((2.0, 6.0), (0.5, 0.5))
    assert float(a.shortage(0.0)) == pytest.approx(4.0)
    assert float(a.shortage(3.0)) == pytest.approx(1.5)
    assert float(a.shortage(7.0)) == 0.0
    m = MixturePrice((a, LomaxPrice(3, 10)), (1.0, 3.0))
    assert float(m.shortage(1.0)) == pytest.approx(0.25 * float(a.shortage(1.0)) + 0.75 * float(
        LomaxPrice(3, 10).shortage(1.0)))


def test_mean_shortage_rejects_negative():
    with pytest.raises(ValueError):
        mean_shortage(LomaxPrice(3, 1), -1.0)


def test_negative_threshold_extension():
    d = LomaxPrice(3, 100)
    assert float(d.shortage(-5.0)) == pytest.approx(d.mean + 5.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.5, 8), st.floats(0.1, 5000), st.floats(0, 1e5), st.floats(0, 1e5))
def test_shortage_is_decreasing_and_convex(alpha, lam, p, q):
    d = LomaxPrice(alpha, lam)
    lo, hi = min(p, q), max(p, q)
    assert float(d.shortage(lo)) >= float(d.shortage(hi)) - 1e-12
    mid = 0.5 * (lo + hi)
    assert float(d.shortage(mid)) <= 0.5 * (float(d.shortage(lo)) + float(d.shortage(hi))) + 1e-9 * lam


def test_lomax_sampling_mean():
    rng = np.random.default_rng(3)
    x = LomaxPrice(4, 300).sample(rng, 200_000)
    assert x.mean() == pytest.approx(100.0, rel=0.02)


# --- combinations -----------------------------------------------------------


@pytest.mark.parametrize("n,k", [(1, 1), (3, 2), (5, 3), (10, 3), (6, 4)])
def test_enumeration_matches_nested_loops(n, k):
    assert enumerate_combinations(n, k) == nested_loop_combinations(n, k)
    assert len(enumerate_combinations(n, k)) == math.comb(n + k, k)


def test_small_has_286_combinations():
    assert len(enumerate_combinations(10, 3)) == 286


def test_enumerate_rejects_zero():
    with pytest.raises(ValueError):
        enumerate_combinations(0, 2)


def test_successor_on_accept():
    assert successor_on_accept((1, 0, 2), 1, 4) == (1, 1, 2)
    with pytest.raises(ValueError):
        successor_on_accept((2, 2), 0, 4)


def test_space_indexing_and_accept_index():
    sp = CombinationSpace(4, 3)
    assert [tuple(r) for r in sp.counts] == enumerate_combinations(4, 3)
    for i, n in enumerate(sp.counts):
        assert sp.index(n) == i
        for k in range(3):
            if n.sum() < 4:
                assert tuple(sp.counts[sp.accept_index[i, k]]) == successor_on_accept(tuple(n), k, 4)
            else:
                assert sp.accept_index[i, k] == -1


def test_transition_matrix_matches_server_enumeration():
    mus = [0.3, 1.1]
    sp = CombinationSpace(4, 2)
    P = sp.transition_matrix(mus, 0.7).toarray()
    for i, n in enumerate(sp.counts):
        ref = np.zeros(sp.size)
        for nxt, p in completion_outcomes(tuple(n), mus, 0.7):
            ref[sp.index(nxt)] += p
        np.testing.assert_allclose(P[i], ref, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.lists(st.floats(1e-4, 5), min_size=3, max_size=3),
       st.floats(0.01, 10))
def test_transition_rows_stochastic(n_serv, n_cls, mus, dt):
    sp = CombinationSpace(n_serv, n_cls)
    P = sp.transition_matrix(mus[:n_cls], dt)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-9)
    assert P.nnz <= sp.n_transition_pairs()


def test_small_blocks_cover_all_pairs():
    sp = CombinationSpace(10, 3)
    total = sum(r.size for r, _, _ in sp.transition_blocks([1, 2, 3], 1.0, rows_per_block=1000))
    assert total == sp.n_transition_pairs() == 8008


def test_instance_epochs_clamp_last():
    c = TaskClass("a", 1.0, ConstantRate(1.0), LomaxPrice(3, 1))
    inst = ProblemInstance([c], 2, 10.0, 3.0)
    assert inst.n_epochs == 4
    np.testing.assert_allclose(inst.epoch_times, [0, 3, 6, 9, 10])
    assert inst.epoch_of(9.5) == 3
    assert ProblemInstance([c], 2, 10.0, 2.5).n_epochs == 4
    with pytest.raises(ValueError):
        ProblemInstance([c], 2, 10.0, 0.0)
