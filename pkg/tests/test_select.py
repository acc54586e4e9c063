import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_system
from sotl import select
from sotl.datamodel import CoefficientEstimate, DataError, GroupData, MultiSourceProblem
from sotl.l0solve import exhaustive_best_subset
from sotl.select import (
    HbicError,
    default_gamma_max,
    extract_target,
    fit_sjets,
    fit_sotl,
    hbic,
    hbic_value,
)
from sotl.stacking import build_stacked, stack_coefficients

# log(0.25) + log(log(100)) * log(1200) / 100 * 10, evaluated with mpmath at 30 digits
HBIC_WORKED_TOTAL = -0.303512272218910697508353314477


def test_hbic_worked_value():
    v = hbic_value(rss=25.0, n=100, n_cols=1200, gamma=10)
    assert v.q_term == pytest.approx(math.log(0.25), abs=1e-12)
    assert v.penalty == pytest.approx(1.0830, abs=1e-3)
    assert v.total == pytest.approx(HBIC_WORKED_TOTAL, abs=1e-12)
    assert abs(v.total - (-0.3033)) <= 1e-3


def test_hbic_null_model_and_linearity():
    v0 = hbic_value(rss=7.0, n=50, n_cols=30, gamma=0)
    assert v0.penalty == 0.0 and v0.total == pytest.approx(math.log(7.0 / 50))
    a = hbic_value(rss=7.0, n=50, n_cols=30, gamma=4)
    b = hbic_value(rss=7.0, n=50, n_cols=30, gamma=8)
    assert b.penalty == pytest.approx(2 * a.penalty, rel=1e-15)
    assert a.total == a.q_term + a.penalty


def test_hbic_errors():
    with pytest.raises(HbicError, match="perfect fit"):
        hbic_value(rss=0.0, n=10, n_cols=5, gamma=1)
    with pytest.raises(HbicError, match="N >= 3"):
        hbic_value(rss=1.0, n=2, n_cols=5, gamma=1)


def test_hbic_floor_on_exact_fit():
    X = np.array([[1.0], [2.0], [3.0]])
    s = build_stacked(MultiSourceProblem((GroupData(X, 2 * X[:, 0]),)))
    est = CoefficientEstimate(np.array([2.0]), 0.0)
    with pytest.raises(HbicError):
        hbic(s, est)
    assert math.isfinite(hbic(s, est, floor=True).total)


def test_extract_target():
    est = CoefficientEstimate(np.array([1.0, 2.0, 3.0, 4.0]), 0.0)
    assert extract_target(est, 2).tolist() == [1.0, 2.0]
    assert extract_target(est, 4).tolist() == [1.0, 2.0, 3.0, 4.0]
    assert not extract_target(CoefficientEstimate(np.zeros(4), 0.0), 2).any()
    with pytest.raises(DataError):
        extract_target(est, 5)


def test_default_gamma_rule(rng):
    s = random_system(rng, n_groups=2, p=30, n_range=(40, 41))
    N, pz = s.n_total, s.n_cols
    assert default_gamma_max(s) == min(int(N / (2 * math.log(pz))), pz, 100, N - 1)


def test_noiseless_recovery(rng):
    p = 20
    X0, X1 = rng.standard_normal((40, p)), rng.standard_normal((40, p))
    beta = np.zeros(p)
    beta[[0, 3, 8]] = [2.0, -1.5, 1.0]
    omega = np.zeros(p)
    omega[[5, 11]] = [1.0, -2.0]
    prob = MultiSourceProblem((GroupData(X0, X0 @ beta), GroupData(X1, X1 @ (beta + omega))))
    s = build_stacked(prob)
    fit = fit_sotl(s, gamma_max=15)
    assert fit.gamma_opt == 5
    np.testing.assert_allclose(fit.beta_target, beta, atol=1e-10)
    assert [g for g, _ in fit.hbic_trace] == list(range(1, 16))


def test_gamma_max_one_is_best_single_column(rng):
    s = random_system(rng, n_groups=2, p=6, n_range=(10, 15))
    fit = fit_sotl(s, gamma_max=1)
    assert fit.gamma_opt == 1
    assert fit.estimate.rss == pytest.approx(exhaustive_best_subset(s, 1).rss, rel=1e-12)


def test_gamma_max_range(rng):
    s = random_system(rng, n_groups=1, p=4, n_range=(6, 7))
    with pytest.raises(DataError):
        fit_sotl(s, gamma_max=0)
    with pytest.raises(DataError):
        fit_sotl(s, gamma_max=s.n_total)


def test_ties_go_to_smallest_gamma(rng, monkeypatch):
    s = random_system(rng, n_groups=2, p=6, n_range=(15, 20))
    flat = select.HbicValue(0, -1.0, 0.0)
    monkeypatch.setattr(select, "hbic", lambda *a, **k: flat)
    assert fit_sotl(s, gamma_max=6).gamma_opt == 1


def test_failed_sizes_are_recorded(rng, monkeypatch):
    s = random_system(rng, n_groups=2, p=6, n_range=(15, 20))
    real = select.fit_support_size

    def flaky(system, gamma, opts=None, init_support=None):
        if gamma == 3:
            raise select.SolverError("boom")
        return real(system, gamma, opts, init_support)

    monkeypatch.setattr(select, "fit_support_size", flaky)
    fit = fit_sotl(s, gamma_max=5)
    assert fit.failed_gammas == (3,)
    assert [g for g, _ in fit.hbic_trace] == [1, 2, 4, 5]


def test_sweep_rss_is_monotone(rng):
    s = random_system(rng, n_groups=3, p=15, n_range=(20, 30))
    rss = [select.fit_support_size(s, g).rss for g in range(1, 8)]
    fit = fit_sotl(s, gamma_max=7)
    values = dict(fit.hbic_trace)
    # recover RSS from the recorded HBIC values
    rs = [math.exp(values[g] - hbic_value(1.0, s.n_total, s.n_cols, g).penalty) * s.n_total for g in range(1, 8)]
    assert all(b <= a * (1 + 1e-8) for a, b in zip(rs, rs[1:]))
    assert all(r_sweep <= r_cold * (1 + 1e-8) for r_sweep, r_cold in zip(rs, rss))


@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.01, 100.0))
@settings(max_examples=15, deadline=None)
def test_scale_invariance_of_selection(seed, c):
    rng = np.random.default_rng(seed)
    s = random_system(rng, n_groups=2, p=8, n_range=(20, 30))
    a = fit_sotl(s, gamma_max=6)
    b = fit_sotl(s.scaled_response(c), gamma_max=6)
    assert a.gamma_opt == b.gamma_opt
    for (_, va), (_, vb) in zip(a.hbic_trace, b.hbic_trace):
        assert vb - va == pytest.approx(2 * math.log(c), abs=1e-8)


def test_sjets_recovers_noiseless_support(rng):
    p = 12
    X = rng.standard_normal((80, p))
    beta = np.zeros(p)
    beta[[1, 6]] = [3.0, -2.0]
    s = build_stacked(MultiSourceProblem((GroupData(X, X @ beta),)))
    fit = fit_sjets(s, rng_seed=1)
    assert set(np.flatnonzero(fit.beta_target)) == {1, 6}
    assert fit.hbic_trace == ()
    again = fit_sjets(s, rng_seed=1)
    assert np.array_equal(fit.estimate.phi, again.estimate.phi)
    assert fit.tuning["lambda"] == again.tuning["lambda"]
