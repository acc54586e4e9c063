"""HBIC and the two top-level estimators (SOTL and S-JETS)."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .datamodel import CoefficientEstimate, DataError, FitResult
from .l0solve import L0Options, SolverError, _gains, _restricted_lstsq, fit_support_size
from .l1solve import LassoPathConfig, select_lambda_cv
from .stacking import StackedSystem

log = logging.getLogger(__name__)

RSS_FLOOR = 1e-12
GAMMA_CAP = 100


class HbicError(ValueError):
    pass


@dataclass(frozen=True)
class HbicValue:
    gamma: int
    q_term: float
    penalty: float

    @property
    def total(self) -> float:
        return self.q_term + self.penalty


def hbic_value(rss: float, n: int, n_cols: int, gamma: int) -> HbicValue:
    """``log(rss / n) + log(log n) * log(n_cols) / n * gamma`` in natural logs."""
    if n < 3:
        raise HbicError(f"HBIC needs N >= 3, got N={n}")
    if rss <= 0:
        raise HbicError("perfect fit; HBIC undefined (log of zero RSS)")
    penalty = math.log(math.log(n)) * math.log(n_cols) / n * gamma
    return HbicValue(int(gamma), math.log(rss / n), penalty)


def hbic(system: StackedSystem, estimate: CoefficientEstimate, floor: bool = False) -> HbicValue:
    """HBIC of a stacked estimate.

    With ``floor=True`` the RSS is clamped below at ``1e-12 * ||Y||^2`` so an
    exact fit yields a finite value.
    """
    rss = estimate.rss
    if floor:
        rss = max(rss, RSS_FLOOR * system.y_norm_sq)
    return hbic_value(rss, system.n_total, system.n_cols, estimate.gamma)


def default_gamma_max(system: StackedSystem) -> int:
    N, pz = system.n_total, system.n_cols
    g = min(int(N / (2.0 * math.log(pz))) if pz > 1 else N, pz, GAMMA_CAP, N - 1)
    return max(g, 1)


def extract_target(estimate: CoefficientEstimate, p: int) -> np.ndarray:
    if estimate.phi.size < p:
        raise DataError(f"phi has length {estimate.phi.size} < p={p}")
    return estimate.phi[:p].copy()


def _warm_start(system: StackedSystem, prev: CoefficientEstimate) -> np.ndarray:
    """Previous support plus the single column with the largest exact gain."""
    active = prev.support
    coef, r, _, _, XA = _restricted_lstsq(system, active)
    mask = np.zeros(system.n_cols, dtype=bool)
    mask[active] = True
    C = system.transpose_many(XA)
    Ginv = np.linalg.pinv(C[:, active], hermitian=True)
    g = _gains(system.col_sq_norms(), C, Ginv, system.apply_transpose(r), mask)
    return np.sort(np.append(active, int(np.argmax(g))))


def fit_sotl(system: StackedSystem, gamma_max: int | None = None, opts: L0Options | None = None) -> FitResult:
    """Sweep support sizes ``1..gamma_max`` and keep the HBIC minimiser.

    Each size is solved by :func:`fit_support_size`, and from size 2 on also
    warm-started from the previous size's support grown by one column; the
    lower-RSS solution is kept, so RSS never increases along the sweep.
    Ties in HBIC go to the smaller size.
    """
    opts = opts or L0Options()
    t0 = time.perf_counter()
    G = default_gamma_max(system) if gamma_max is None else int(gamma_max)
    hi = min(system.n_cols, system.n_total - 1)
    if not 1 <= G <= hi:
        raise DataError(f"gamma_max={G} outside [1, {hi}]")
    trace, fits, failed = [], {}, []
    errors = {}
    prev = None
    for gamma in range(1, G + 1):
        try:
            est = fit_support_size(system, gamma, opts)
            if prev is not None and prev.gamma == gamma - 1:
                warm = fit_support_size(system, gamma, opts, init_support=_warm_start(system, prev))
                if warm.rss < est.rss - opts.tolerance * est.rss:
                    est = warm
            value = hbic(system, est, floor=True)
        except (SolverError, DataError, HbicError, np.linalg.LinAlgError) as exc:
            log.warning("SOTL sweep failed at gamma=%d: %s", gamma, exc)
            failed.append(gamma)
            errors[gamma] = str(exc)
            prev = None
            continue
        prev = est
        fits[gamma] = est
        trace.append((gamma, value.total))
    if not trace:
        raise SolverError(f"every support size failed: {errors}")
    best = min(trace, key=lambda t: (t[1], t[0]))[0]
    return FitResult(
        estimate=fits[best],
        p=system.p,
        hbic_trace=tuple(trace),
        gamma_opt=best,
        wall_time=time.perf_counter() - t0,
        method="sotl",
        failed_gammas=tuple(failed),
        tuning={"gamma_max": float(G)},
    )


def fit_sjets(system: StackedSystem, config: LassoPathConfig | None = None, rng_seed=0) -> FitResult:
    """Lasso on the stacked system with the penalty chosen by K-fold CV."""
    config = config or LassoPathConfig()
    t0 = time.perf_counter()
    lam, est = select_lambda_cv(system, config, rng_seed)
    return FitResult(
        estimate=est,
        p=system.p,
        hbic_trace=(),
        gamma_opt=est.gamma,
        wall_time=time.perf_counter() - t0,
        method="sjets",
        tuning={"lambda": lam},
    )
