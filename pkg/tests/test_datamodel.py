import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sotl.datamodel import (
    CoefficientEstimate,
    DataError,
    FitResult,
    GroupData,
    MultiSourceProblem,
    SimMetrics,
    make_problem,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_group_shapes_are_validated():
    with pytest.raises(DataError, match="rows"):
        GroupData(np.ones((3, 2)), np.ones(4))
    with pytest.raises(DataError, match="2-d"):
        GroupData(np.ones(3), np.ones(3))
    with pytest.raises(DataError, match="finite"):
        GroupData([[1.0, np.nan]], [0.0])
    with pytest.raises(DataError, match="non-empty"):
        GroupData(np.ones((0, 2)), np.ones(0))


def test_group_data_is_immutable_copy():
    X = np.ones((2, 2))
    g = GroupData(X, [1.0, 2.0])
    X[0, 0] = 5.0
    assert g.design[0, 0] == 1.0
    with pytest.raises(ValueError):
        g.design[0, 0] = 3.0


def test_problem_invariants():
    g1 = GroupData(np.ones((2, 3)), np.ones(2))
    g2 = GroupData(np.ones((4, 3)), np.ones(4))
    prob = MultiSourceProblem((g1, g2), target_index=1)
    assert prob.n_groups == 2 and prob.p == 3 and prob.total_n == 6
    assert prob.target is g2
    assert prob.auxiliary_indices == [0]
    with pytest.raises(DataError, match="columns"):
        MultiSourceProblem((g1, GroupData(np.ones((2, 2)), np.ones(2))))
    with pytest.raises(DataError, match="target_index"):
        MultiSourceProblem((g1,), target_index=1)


def test_make_problem_names_bad_group():
    with pytest.raises(DataError, match="group 1"):
        make_problem([np.ones((2, 2)), np.ones((2, 2))], [np.ones(2), np.ones(3)])


def test_estimate_support_and_gamma():
    est = CoefficientEstimate(np.array([0.0, 1.5, 0.0, -2.0]), 3.0)
    assert est.support.tolist() == [1, 3]
    assert est.gamma == 2
    with pytest.raises(DataError):
        CoefficientEstimate(np.zeros(2), -1.0)


def test_beta_target_is_first_block():
    est = CoefficientEstimate(np.arange(6.0), 1.0)
    fit = FitResult(est, p=2)
    assert fit.beta_target.tolist() == [0.0, 1.0]


@given(
    phi=arrays(np.float64, st.integers(1, 12), elements=finite),
    rss=st.floats(0, 1e6),
    trace=st.lists(st.tuples(st.integers(1, 50), finite), max_size=5),
)
@settings(max_examples=50, deadline=None)
def test_fit_result_round_trip(phi, rss, trace):
    fit = FitResult(
        CoefficientEstimate(phi, rss, rank_deficient=True),
        p=max(1, phi.size // 2),
        hbic_trace=tuple(trace),
        gamma_opt=3,
        wall_time=0.25,
        method="sotl",
        failed_gammas=(7,),
        tuning={"gamma_max": 9.0},
    )
    back = FitResult.from_json(fit.to_json())
    assert np.array_equal(back.estimate.phi, fit.estimate.phi)
    assert back.estimate.rss == fit.estimate.rss
    assert back.estimate.rank_deficient
    assert back.hbic_trace == fit.hbic_trace
    assert (back.gamma_opt, back.wall_time, back.method) == (3, 0.25, "sotl")
    assert back.failed_gammas == (7,) and back.tuning == {"gamma_max": 9.0}


def test_fit_result_json_fields():
    fit = FitResult(CoefficientEstimate(np.array([1.0, 0.0, 2.0, 0.0]), 0.5), p=2)
    d = json.loads(fit.to_json())
    assert d["beta_target"] == [1.0, 0.0]
    assert d["support"] == [0]
    for key in ("hbic_trace", "gamma_opt", "wall_time", "estimate"):
        assert key in d


@given(st.lists(st.floats(0, 1e3), min_size=6, max_size=6), st.integers(0, 5), st.integers(1, 60))
def test_sim_metrics_round_trip(vals, failures, reps):
    m = SimMetrics("sjets", *vals, failures=failures, replications=reps)
    assert SimMetrics.from_json(m.to_json()) == m
