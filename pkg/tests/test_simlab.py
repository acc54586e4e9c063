import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sotl import simlab
from sotl.datamodel import GroupData
from sotl.simlab import (
    ADVERSARIAL_SIZE,
    ReplicationRecord,
    ScenarioConfig,
    SimulationError,
    ar1_covariance,
    compute_metrics,
    gen_ar1_design,
    gen_scenario,
    run_one,
    run_replications,
    write_grid_table,
    write_table,
)


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(example_id=4, n_t=10, sigma=1.0)
    with pytest.raises(ValueError):
        ScenarioConfig(example_id=1, n_t=10, sigma=0.0)
    with pytest.raises(ValueError):
        ScenarioConfig(example_id=1, n_t=10, sigma=1.0, s=20, p=10)
    with pytest.raises(ValueError):
        ScenarioConfig(example_id=1, n_t=10, sigma=1.0, r=0)


def test_ar1_theoretical_covariance():
    S = ar1_covariance(4, 0.5)
    assert np.all(np.diag(S) == 1.0)
    assert S[0, 1] == 0.5 and S[0, 3] == 0.125


def test_ar1_empirical_covariance():
    X = gen_ar1_design(100_000, 5, 0.5, np.random.default_rng(1))
    np.testing.assert_allclose(np.cov(X, rowvar=False), ar1_covariance(5, 0.5), atol=0.02)
    Z = gen_ar1_design(100_000, 5, 0.0, np.random.default_rng(2))
    off = np.corrcoef(Z, rowvar=False)[~np.eye(5, dtype=bool)]
    assert np.all(np.abs(off) <= 0.02)


def test_ar1_rejects_bad_rho():
    with pytest.raises(ValueError):
        gen_ar1_design(3, 3, 1.0, np.random.default_rng(0))


def _aux_beta(problem, z):
    X, y = problem.groups[z].design, problem.groups[z].response
    return np.linalg.lstsq(X, y, rcond=None)[0]


def test_example1_zero_offset_shares_beta():
    cfg = ScenarioConfig(example_id=1, n_t=40, sigma=1e-9, w=0.0, p=20, s=4, test_n=5)
    prob, beta, test = gen_scenario(cfg, 0)
    assert prob.n_groups == 2 and prob.groups[1].n == 120
    np.testing.assert_allclose(_aux_beta(prob, 1), beta, atol=1e-6)
    assert beta[:4].tolist() == [2.0] * 4 and not beta[4:].any()
    assert test.n == 5


def test_example2_offsets():
    cfg = ScenarioConfig(example_id=2, n_t=50, sigma=1e-9, w=0.6, p=20, s=4, test_n=5)
    prob, beta, _ = gen_scenario(cfg, 3)
    assert [g.n for g in prob.groups] == [50, 50, 50]
    d1 = _aux_beta(prob, 1) - beta
    d2 = _aux_beta(prob, 2) - beta
    np.testing.assert_allclose(d1[:4], 0.3, atol=1e-6)
    np.testing.assert_allclose(d2[:4], 0.6, atol=1e-6)
    assert np.all(np.abs(d2[4:]) < 1e-6)


def test_example3_adversarial_offsets():
    cfg = ScenarioConfig(example_id=3, n_t=60, sigma=1e-9, p=50, s=5, test_n=5)
    prob, beta, _ = gen_scenario(cfg, 0)
    d2 = np.round(_aux_beta(prob, 2) - beta, 6)
    assert np.count_nonzero(d2) == ADVERSARIAL_SIZE
    assert np.all(d2[d2 != 0] == -4.0)
    d1 = np.round(_aux_beta(prob, 1) - beta, 6)
    assert d1[:5].tolist() == [0.5] * 5 and not d1[5:].any()
    _, _, _ = gen_scenario(cfg, 1)
    J0 = np.flatnonzero(d2)
    J1 = np.flatnonzero(np.round(_aux_beta(gen_scenario(cfg, 1)[0], 2) - beta, 6))
    assert not np.array_equal(J0, J1)


def test_scenario_is_seeded():
    cfg = ScenarioConfig(example_id=2, n_t=10, sigma=1.0, w=1.0, p=15, s=3, test_n=7)
    a = gen_scenario(cfg, 5)
    b = gen_scenario(cfg, 5)
    c = gen_scenario(cfg, 6)
    for ga, gb in zip(a[0].groups, b[0].groups):
        assert np.array_equal(ga.design, gb.design) and np.array_equal(ga.response, gb.response)
    assert np.array_equal(a[2].design, b[2].design)
    assert not np.array_equal(a[0].groups[0].design, c[0].groups[0].design)


def test_metrics_hand_example():
    test = GroupData(np.eye(5), np.zeros(5))
    rec = compute_metrics([0.9, 0, 0.2, 0, 0], [1, 1, 0, 0, 0], test, 0.5)
    assert (rec.tp, rec.fp, rec.tn, rec.fn) == (1, 1, 2, 1)
    assert rec.nz == 2 and rec.tpr == 0.5 and rec.fpr == pytest.approx(1 / 3) and rec.sra == 0.6
    assert rec.se == pytest.approx((0.81 + 0.04) / 5)
    assert rec.rt == 0.5


def test_metrics_perfect_and_null():
    rng = np.random.default_rng(0)
    beta = np.array([2.0, 2.0, 0.0, 0.0, 0.0, 0.0])
    X = rng.standard_normal((20_000, 6))
    test = GroupData(X, X @ beta + 0.5 * rng.standard_normal(20_000))
    rec = compute_metrics(beta, beta, test, 0.0)
    assert (rec.sra, rec.fpr, rec.tpr, rec.nz) == (1.0, 0.0, 1.0, 2)
    assert rec.se == pytest.approx(0.25, rel=0.03)
    null = compute_metrics(np.zeros(6), beta, test, 0.0)
    assert (null.nz, null.tpr, null.fpr, null.sra) == (0, 0.0, 0.0, 4 / 6)


def test_metrics_length_mismatch():
    with pytest.raises(ValueError):
        compute_metrics(np.zeros(3), np.zeros(4), GroupData(np.eye(4), np.zeros(4)), 0.0)


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=30), st.data())
@settings(max_examples=60, deadline=None)
def test_confusion_identities(beta_hat, data):
    p = len(beta_hat)
    beta_hat = np.where(np.abs(beta_hat) < 1.0, 0.0, beta_hat)
    s = data.draw(st.integers(1, p - 1))
    beta = np.zeros(p)
    beta[:s] = 2.0
    rec = compute_metrics(beta_hat, beta, GroupData(np.eye(p), np.zeros(p)), 0.0)
    assert rec.sra == pytest.approx(1 - (rec.fp + rec.fn) / p)
    assert rec.nz == rec.tp + rec.fp
    assert rec.tpr == pytest.approx(rec.tp / s)
    assert rec.fpr == pytest.approx(rec.fp / (p - s))
    assert 0 <= rec.sra <= 1 and 0 <= rec.fpr <= 1 and 0 <= rec.tpr <= 1


SMALL = dict(n_t=20, sigma=0.5, p=30, s=3, test_n=200)


def test_single_replication_average_equals_record():
    cfg = ScenarioConfig(example_id=1, r=1, **SMALL)
    res = run_replications(cfg, ["sotl"])
    rec = run_one(cfg, 0, ["sotl"])["sotl"]
    m = res["sotl"]
    assert (m.mse, m.sra, m.nz, m.fpr, m.tpr) == (rec.se, rec.sra, rec.nz, rec.fpr, rec.tpr)
    assert m.replications == 1 and m.failures == 0


def test_replications_are_reproducible_except_time():
    cfg = ScenarioConfig(example_id=2, w=0.5, r=3, **SMALL)
    a = run_replications(cfg, ["sotl", "sjets"])
    b = run_replications(cfg, ["sotl", "sjets"])
    for m in ("sotl", "sjets"):
        da, db = a[m].to_dict(), b[m].to_dict()
        da.pop("art"), db.pop("art")
        assert da == db


def test_noise_floor_bound():
    cfg = ScenarioConfig(example_id=1, r=4, **SMALL)
    m = run_replications(cfg, ["sotl"])["sotl"]
    assert m.mse >= cfg.sigma**2 * (1 - 3 / np.sqrt(cfg.r * cfg.test_n))


def test_failures_beyond_threshold_abort(monkeypatch):
    def broken(method, system, config, seed):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(simlab, "_fit", broken)
    cfg = ScenarioConfig(example_id=1, r=3, **SMALL)
    with pytest.raises(SimulationError, match="solver exploded"):
        run_replications(cfg, ["sotl"])


def test_isolated_failure_is_counted(monkeypatch):
    real = simlab._fit
    calls = {"n": 0}

    def sometimes(method, system, config, seed):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("one-off")
        return real(method, system, config, seed)

    monkeypatch.setattr(simlab, "_fit", sometimes)
    cfg = ScenarioConfig(example_id=1, r=10, **SMALL)
    m = run_replications(cfg, ["sotl"])["sotl"]
    assert m.failures == 1 and m.replications == 10


def test_unknown_method():
    with pytest.raises(ValueError):
        run_replications(ScenarioConfig(example_id=1, r=1, **SMALL), ["ridge"])


def test_tables_written(tmp_path):
    cfg = ScenarioConfig(example_id=1, r=2, **SMALL)
    res = run_replications(cfg, ["sotl"])
    csv_path, json_path = write_table(res, tmp_path / "t", cfg)
    assert csv_path.read_text().splitlines()[0] == "method,mse,sra,nz,fpr,tpr,art,failures"
    payload = json.loads(json_path.read_text())
    assert payload["rows"][0]["method"] == "sotl" and payload["scenario"]["n_t"] == 20
    csv2, _ = write_grid_table([(cfg, res), (cfg, res)], tmp_path / "grid")
    lines = csv2.read_text().splitlines()
    assert lines[0].startswith("n_t,method") and len(lines) == 3


def test_sjets_screens_true_support():
    cfg = ScenarioConfig(example_id=1, n_t=60, sigma=0.5, w=0.0, p=100, r=50)
    hits = 0
    for i in range(cfg.r):
        rec = run_one(cfg, i, ["sjets"])["sjets"]
        hits += rec.fn == 0
    assert hits >= 0.95 * cfg.r
