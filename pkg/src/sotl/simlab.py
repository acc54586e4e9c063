"""Simulation harness: the three data-generating examples, metrics and replications."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .datamodel import GroupData, MultiSourceProblem, SimMetrics
from .l0solve import L0Options
from .l1solve import LassoPathConfig
from .select import fit_sjets, fit_sotl
from .stacking import build_stacked

log = logging.getLogger(__name__)

METHODS = ("sotl", "sjets")
AR_RHO = 0.5
SIGNAL = 2.0
ADVERSARIAL_SIZE = 40
ADVERSARIAL_VALUE = -4.0
EX3_INFORMATIVE_OFFSET = 0.5
FAILURE_LIMIT = 0.10


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of a simulation table.

    ``n_t`` is the target sample size. Auxiliary sizes follow the example:
    ``3 * n_t`` in Example 1 and ``n_t`` in Examples 2 and 3. ``w`` is the
    offset magnitude and is ignored by Example 3.
    """

    example_id: int
    n_t: int
    sigma: float
    w: float = 0.0
    p: int = 600
    s: int = 10
    r: int = 50
    test_n: int = 1000
    base_seed: int = 0
    gamma_max: int | None = None
    l0: L0Options = field(default_factory=L0Options)
    lasso: LassoPathConfig = field(default_factory=LassoPathConfig)

    def __post_init__(self):
        if self.example_id not in (1, 2, 3):
            raise ValueError(f"example_id must be 1, 2 or 3, got {self.example_id}")
        if not 1 <= self.s <= self.p:
            raise ValueError(f"need 1 <= s <= p, got s={self.s}, p={self.p}")
        if self.n_t < 1 or self.r < 1 or self.test_n < 1:
            raise ValueError("n_t, r and test_n must be positive")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.example_id == 3 and self.p < ADVERSARIAL_SIZE:
            raise ValueError(f"Example 3 needs p >= {ADVERSARIAL_SIZE}")

    @property
    def n_groups(self) -> int:
        return 2 if self.example_id == 1 else 3

    def to_dict(self) -> dict:
        return asdict(self)


def gen_ar1_design(n: int, p: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with ``Sigma[j, k] = rho ** |j - k|``.

    Uses the stationary AR(1) recursion across columns, so no Cholesky
    factor is needed.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    if not -1 < rho < 1:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    z = rng.standard_normal((n, p))
    x = np.empty_like(z)
    x[:, 0] = z[:, 0]
    c = np.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        x[:, j] = rho * x[:, j - 1] + c * z[:, j]
    return x


def ar1_covariance(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def true_coefficients(config: ScenarioConfig, rng: np.random.Generator):
    """Target beta and the per-auxiliary offsets for one replication."""
    p, s = config.p, config.s
    beta = np.zeros(p)
    beta[:s] = SIGNAL
    if config.example_id == 1:
        w1 = np.zeros(p)
        w1[:s] = config.w
        omegas = [w1]
    elif config.example_id == 2:
        w1, w2 = np.zeros(p), np.zeros(p)
        w1[:s] = 0.5 * config.w
        w2[:s] = config.w
        omegas = [w1, w2]
    else:
        w1, w2 = np.zeros(p), np.zeros(p)
        w1[:s] = EX3_INFORMATIVE_OFFSET
        J = rng.choice(p, ADVERSARIAL_SIZE, replace=False)
        w2[J] = ADVERSARIAL_VALUE
        omegas = [w1, w2]
    return beta, omegas


def replication_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(base_seed), int(index)])


def gen_scenario(config: ScenarioConfig, replication_index: int):
    """Draw one replication: ``(problem, beta_true, test_group)``.

    The target is group 0. Everything is a pure function of
    ``(base_seed, replication_index)``.
    """
    if replication_index < 0:
        raise ValueError("replication_index must be non-negative")
    rng = replication_rng(config.base_seed, replication_index)
    beta, omegas = true_coefficients(config, rng)
    aux_n = 3 * config.n_t if config.example_id == 1 else config.n_t
    sizes = [config.n_t] + [aux_n] * len(omegas)
    coefs = [beta] + [beta + w for w in omegas]
    groups = []
    for n, b in zip(sizes, coefs):
        X = gen_ar1_design(n, config.p, AR_RHO, rng)
        y = X @ b + config.sigma * rng.standard_normal(n)
        groups.append(GroupData(X, y))
    Xt = gen_ar1_design(config.test_n, config.p, AR_RHO, rng)
    yt = Xt @ beta + config.sigma * rng.standard_normal(config.test_n)
    return MultiSourceProblem(tuple(groups), 0), beta, GroupData(Xt, yt)


@dataclass(frozen=True)
class ReplicationRecord:
    se: float
    sra: float
    nz: int
    fpr: float
    tpr: float
    rt: float
    tp: int
    fp: int
    tn: int
    fn: int


def compute_metrics(beta_hat, beta_true, test: GroupData, runtime_seconds: float) -> ReplicationRecord:
    """Single-replication prediction error and support-recovery counts.

    A coefficient is "nonzero" only if it is exactly nonzero. When the true
    support is empty TPR is reported as 1, and when it is full FPR is 0.
    """
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    beta_true = np.asarray(beta_true, dtype=np.float64)
    p = beta_true.size
    if beta_hat.shape != (p,) or test.p != p:
        raise ValueError(
            f"length mismatch: beta_hat {beta_hat.shape}, beta_true ({p},), test p={test.p}"
        )
    est = beta_hat != 0
    true = beta_true != 0
    tp = int(np.sum(est & true))
    fp = int(np.sum(est & ~true))
    tn = int(np.sum(~est & ~true))
    fn = int(np.sum(~est & true))
    s = tp + fn
    resid = test.response - test.design @ beta_hat
    return ReplicationRecord(
        se=float(resid @ resid) / test.n,
        sra=(tp + tn) / p,
        nz=tp + fp,
        fpr=fp / (p - s) if p > s else 0.0,
        tpr=tp / s if s else 1.0,
        rt=float(runtime_seconds),
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def _fit(method: str, system, config: ScenarioConfig, seed):
    if method == "sotl":
        return fit_sotl(system, config.gamma_max, config.l0)
    if method == "sjets":
        return fit_sjets(system, config.lasso, seed)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def run_one(config: ScenarioConfig, index: int, methods) -> dict:
    """Fit every method on one replication. Failures map to the exception text."""
    problem, beta, test = gen_scenario(config, index)
    system = build_stacked(problem)
    out = {}
    for m in methods:
        try:
            t0 = time.perf_counter()
            fit = _fit(m, system, config, [config.base_seed, index, 1])
            rt = time.perf_counter() - t0
            out[m] = compute_metrics(fit.beta_target, beta, test, rt)
        except Exception as exc:  # recorded per replication, judged in aggregate
            log.warning("replication %d, method %s failed: %s", index, m, exc)
            out[m] = f"{type(exc).__name__}: {exc}"
    return out


def aggregate(method: str, records) -> SimMetrics:
    ok = [r for r in records if isinstance(r, ReplicationRecord)]
    failures = len(records) - len(ok)
    if not ok:
        nan = float("nan")
        return SimMetrics(method, nan, nan, nan, nan, nan, nan, failures, len(records))
    # Fixed-order sums keep the averages bit-reproducible.
    def mean(attr):
        return float(sum(getattr(r, attr) for r in ok) / len(ok))

    return SimMetrics(
        method=method,
        mse=mean("se"),
        sra=mean("sra"),
        nz=mean("nz"),
        fpr=mean("fpr"),
        tpr=mean("tpr"),
        art=mean("rt"),
        failures=failures,
        replications=len(records),
    )


def run_replications(config: ScenarioConfig, methods=METHODS, jobs: int = 1) -> dict[str, SimMetrics]:
    """Run ``config.r`` replications and average the metrics per method.

    Every method sees the same data in each replication. A method failing on
    more than 10% of replications raises :class:`SimulationError`.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected a subset of {METHODS}")
    idx = range(config.r)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_one, [config] * config.r, idx, [methods] * config.r))
    else:
        rows = [run_one(config, i, methods) for i in idx]
    result = {}
    for m in methods:
        recs = [row[m] for row in rows]
        errors = [(i, r) for i, r in enumerate(recs) if not isinstance(r, ReplicationRecord)]
        if len(errors) > FAILURE_LIMIT * config.r:
            detail = "; ".join(f"rep {i}: {e}" for i, e in errors[:5])
            raise SimulationError(f"{m} failed on {len(errors)}/{config.r} replications ({detail})")
        result[m] = aggregate(m, recs)
    return result


TABLE_COLUMNS = ("method", "mse", "sra", "nz", "fpr", "tpr", "art", "failures")


def write_table(results: dict[str, SimMetrics], path_stem: Path, config: ScenarioConfig | None = None):
    """Write ``<stem>.csv`` and ``<stem>.json``; returns both paths."""
    path_stem = Path(path_stem)
    path_stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = path_stem.parent / f"{path_stem.name}.csv"
    json_path = path_stem.parent / f"{path_stem.name}.json"
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TABLE_COLUMNS)
        for m in results.values():
            d = m.to_dict()
            wr.writerow([d[c] for c in TABLE_COLUMNS])
    payload = {"rows": [m.to_dict() for m in results.values()]}
    if config is not None:
        payload["scenario"] = scenario_summary(config)
    json_path.write_text(json.dumps(payload, indent=2))
    return csv_path, json_path


GRID_COLUMNS = ("n_t",) + TABLE_COLUMNS


def write_grid_table(blocks, path_stem: Path):
    """One table over several target sizes: ``blocks`` is a list of
    ``(ScenarioConfig, results)`` pairs sharing ``sigma`` and ``w``.

    Rows are ordered by block, then method.
    """
    path_stem = Path(path_stem)
    path_stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = path_stem.parent / f"{path_stem.name}.csv"
    json_path = path_stem.parent / f"{path_stem.name}.json"
    rows = []
    for config, results in blocks:
        for m in results.values():
            rows.append({"n_t": config.n_t, **m.to_dict()})
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(GRID_COLUMNS)
        for row in rows:
            wr.writerow([row[c] for c in GRID_COLUMNS])
    payload = {"rows": rows, "scenarios": [scenario_summary(c) for c, _ in blocks]}
    json_path.write_text(json.dumps(payload, indent=2))
    return csv_path, json_path


def scenario_summary(config: ScenarioConfig) -> dict:
    return config.to_dict()


def with_overrides(config: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(config, **kw)
