"""Fixed-size best-subset regression on a stacked system.

``fit_support_size`` runs a splicing search: starting from a support of the
requested size it repeatedly exchanges the ``k`` active columns whose removal
costs least with the ``k`` inactive columns whose addition helps most, keeping
an exchange only when it lowers the residual sum of squares.
``exhaustive_best_subset`` enumerates every support and is the oracle the
splicing search is checked against.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .datamodel import CoefficientEstimate, DataError
from .stacking import StackedSystem

RCOND = 1e-10
EXHAUSTIVE_LIMIT = 10**6


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class L0Options:
    """Splicing controls.

    ``pair_drops`` and ``pair_adds`` bound the pair-swap fallback: drop pairs
    are taken from that many lowest-sacrifice active columns, add pairs from
    that many highest-gain inactive ones. Either below 2 disables it.
    """

    max_splicing_size: int = 2
    max_iterations: int = 50
    tolerance: float = 1e-8
    pair_drops: int = 6
    pair_adds: int = 40

    def __post_init__(self):
        if self.max_splicing_size < 1 or self.max_iterations < 1:
            raise ValueError("max_splicing_size and max_iterations must be positive")
        if self.pair_drops < 0 or self.pair_adds < 0:
            raise ValueError("pair_drops and pair_adds must be non-negative")
        if not 0 < self.tolerance < 1:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tolerance}")


def _restricted_lstsq(system: StackedSystem, support: np.ndarray):
    """Least squares on ``support``; returns (coef, residual, rss, rank, XA)."""
    XA = system.columns(support)
    if support.size == 0:
        r = system.y.copy()
        return np.zeros(0), r, float(r @ r), 0, XA
    coef, _, rank, _ = np.linalg.lstsq(XA, system.y, rcond=RCOND)
    r = system.y - XA @ coef
    return coef, r, float(r @ r), int(rank), XA


def _estimate(system: StackedSystem, support, coef, rss, rank_deficient) -> CoefficientEstimate:
    phi = np.zeros(system.n_cols)
    phi[np.asarray(support, dtype=np.int64)] = coef
    return CoefficientEstimate(phi, max(rss, 0.0), rank_deficient)


def least_squares_on_support(system: StackedSystem, support) -> CoefficientEstimate:
    """Minimum-RSS coefficients restricted to ``support`` (minimum-norm if singular)."""
    support = np.unique(np.asarray(support, dtype=np.int64))
    if support.size and (support[0] < 0 or support[-1] >= system.n_cols):
        raise DataError(f"support index out of range [0, {system.n_cols})")
    if support.size > system.n_total:
        raise DataError(f"support of size {support.size} exceeds N={system.n_total}")
    coef, _, rss, rank, _ = _restricted_lstsq(system, support)
    return _estimate(system, support, coef, rss, rank < support.size)


def _sacrifices(G: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Exact RSS increase from dropping each active column."""
    Ginv_diag = np.diag(np.linalg.pinv(G, rcond=RCOND, hermitian=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(Ginv_diag > 0, coef**2 / Ginv_diag, 0.0)


def _projected_sq_norms(d: np.ndarray, C: np.ndarray, Ginv: np.ndarray) -> np.ndarray:
    # ||(I - P_A) x_i||^2 = d_i - c_i' G^+ c_i, clipped at rounding level
    out = d - np.einsum("ki,ki->i", C, Ginv @ C)
    return np.where(out > RCOND * np.maximum(d, 1e-300), out, 0.0)


def _gains(d, C, Ginv, corr, active_mask) -> np.ndarray:
    """Exact RSS decrease from adding each inactive column to the active set."""
    den = _projected_sq_norms(d, C, Ginv)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(den > 0, corr**2 / den, 0.0)
    g[active_mask] = -np.inf
    return g


def _best_single_swap(d, cy, yy, C, active, active_mask):
    """Best (drop, add) pair by predicted RSS, from Gram quantities only."""
    best = (np.inf, -1, -1)
    G = C[:, active]
    gamma = active.size
    for a in range(gamma):
        keep = np.delete(np.arange(gamma), a)
        if keep.size:
            GB = G[np.ix_(keep, keep)]
            GBinv = np.linalg.pinv(GB, rcond=RCOND, hermitian=True)
            CB = C[keep]
            coef = GBinv @ cy[active[keep]]
            rss_b = yy - cy[active[keep]] @ coef
            num = cy - CB.T @ coef
            den = _projected_sq_norms(d, CB, GBinv)
        else:
            rss_b, num, den = yy, cy, d
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(den > 0, num**2 / den, 0.0)
        g[active_mask] = -np.inf
        i = int(np.argmax(g))
        if rss_b - g[i] < best[0]:
            best = (rss_b - g[i], a, i)
    return best


def _best_pair_swap(system: StackedSystem, d, cy, yy, C, active, active_mask, sac, opts: L0Options):
    """Best exchange of two active for two inactive columns, within a window.

    Drop pairs come from the ``opts.pair_drops`` active columns with the
    smallest sacrifice. For each, the ``opts.pair_adds`` inactive columns with
    the largest single gain are paired up and scored exactly through their
    2x2 projected Gram matrix. Returns ``(rss, drop_positions, add_columns)``.
    """
    best = (np.inf, None, None)
    gamma = active.size
    drops = np.argsort(sac, kind="stable")[: min(opts.pair_drops, gamma)]
    G = C[:, active]
    for a, b in itertools.combinations(np.sort(drops), 2):
        keep = np.delete(np.arange(gamma), [a, b])
        if keep.size:
            GBinv = np.linalg.pinv(G[np.ix_(keep, keep)], rcond=RCOND, hermitian=True)
            CB = C[keep]
            coef = GBinv @ cy[active[keep]]
            rss_b = yy - cy[active[keep]] @ coef
            u_all = cy - CB.T @ coef
            den = _projected_sq_norms(d, CB, GBinv)
        else:
            CB, GBinv = np.zeros((0, d.size)), np.zeros((0, 0))
            rss_b, u_all, den = yy, cy, d
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(den > 0, u_all**2 / den, -np.inf)
        g[active_mask] = -np.inf
        T = np.argsort(-g, kind="stable")[: opts.pair_adds]
        T = T[np.isfinite(g[T])]
        if T.size < 2:
            continue
        XT = system.columns(T)
        P = XT.T @ XT - CB[:, T].T @ (GBinv @ CB[:, T])
        u = u_all[T]
        dg = np.diag(P)
        det = np.outer(dg, dg) - P * P
        num = dg[None, :] * u[:, None] ** 2 - 2 * P * np.outer(u, u) + dg[:, None] * u[None, :] ** 2
        ok = det > 1e-10 * np.outer(dg, dg)
        np.fill_diagonal(ok, False)
        with np.errstate(divide="ignore", invalid="ignore"):
            pg = np.where(ok, num / det, -np.inf)
        k = int(np.argmax(pg))
        i, j = divmod(k, T.size)
        if np.isfinite(pg[i, j]) and rss_b - pg[i, j] < best[0]:
            best = (rss_b - pg[i, j], (a, b), (int(T[i]), int(T[j])))
    return best


def _initial_support(system: StackedSystem, gamma: int) -> np.ndarray:
    d = system.col_sq_norms()
    c = system.apply_transpose(system.y)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(d > 0, np.abs(c) / np.sqrt(d), 0.0)
    order = np.argsort(-score, kind="stable")
    return np.sort(order[:gamma])


def _check_gamma(system: StackedSystem, gamma: int):
    hi = min(system.n_cols, system.n_total)
    if not 1 <= gamma <= hi:
        raise DataError(f"gamma={gamma} outside [1, {hi}]")


def _splice(system: StackedSystem, gamma: int, opts: L0Options, active: np.ndarray):
    d = system.col_sq_norms()
    cy = system.apply_transpose(system.y)
    yy = system.y_norm_sq
    n_inactive = system.n_cols - gamma
    coef, r, rss, rank, XA = _restricted_lstsq(system, active)
    mask = np.zeros(system.n_cols, dtype=bool)

    def improves(new_rss):
        return new_rss < rss - opts.tolerance * rss

    for _ in range(opts.max_iterations):
        mask[:] = False
        mask[active] = True
        C = system.transpose_many(XA)
        G = C[:, active]
        Ginv = np.linalg.pinv(G, rcond=RCOND, hermitian=True)
        sac = _sacrifices(G, coef)
        gain = _gains(d, C, Ginv, system.apply_transpose(r), mask)
        drop_order = active[np.argsort(sac, kind="stable")]
        add_order = np.argsort(-gain, kind="stable")
        candidates = []
        for k in range(1, min(opts.max_splicing_size, gamma, n_inactive) + 1):
            candidates.append(np.concatenate([np.setdiff1d(active, drop_order[:k]), add_order[:k]]))
        accepted = False
        for cand in candidates:
            cand = np.sort(cand)
            trial = _restricted_lstsq(system, cand)
            if improves(trial[2]):
                active = cand
                coef, r, rss, rank, XA = trial
                accepted = True
                break
        if accepted:
            continue
        # Ranked exchanges stalled: fall back to the exact best single swap.
        if n_inactive == 0:
            break
        _, a, i = _best_single_swap(d, cy, yy, C, active, mask)
        if a >= 0:
            cand = np.sort(np.append(np.delete(active, a), i))
            trial = _restricted_lstsq(system, cand)
            if improves(trial[2]):
                active = cand
                coef, r, rss, rank, XA = trial
                continue
        # Single swaps are exhausted; try a windowed exact pair swap.
        if gamma < 2 or n_inactive < 2 or opts.pair_drops < 2 or opts.pair_adds < 2:
            break
        _, drop, add = _best_pair_swap(system, d, cy, yy, C, active, mask, sac, opts)
        if drop is None:
            break
        cand = np.sort(np.concatenate([np.delete(active, list(drop)), add]))
        trial = _restricted_lstsq(system, cand)
        if not improves(trial[2]):
            break
        active = cand
        coef, r, rss, rank, XA = trial
    return active, coef, rss, rank


def _forward_support(system: StackedSystem, gamma: int) -> np.ndarray:
    """Greedy forward selection by exact RSS decrease."""
    d = system.col_sq_norms()
    active = np.zeros(0, dtype=np.int64)
    mask = np.zeros(system.n_cols, dtype=bool)
    r = system.y.copy()
    XA = np.zeros((system.n_total, 0))
    for _ in range(gamma):
        C = system.transpose_many(XA)
        Ginv = np.linalg.pinv(C[:, active], rcond=RCOND, hermitian=True)
        g = _gains(d, C, Ginv, system.apply_transpose(r), mask)
        j = int(np.argmax(g))
        active = np.append(active, j)
        mask[j] = True
        _, r, _, _, XA = _restricted_lstsq(system, active)
    return np.sort(active)


def fit_support_size(
    system: StackedSystem,
    gamma: int,
    opts: L0Options | None = None,
    init_support=None,
) -> CoefficientEstimate:
    """Splicing search for the RSS-minimal support of size ``gamma``.

    Two searches are run, one started from the ``gamma`` columns with the
    largest normalised correlation with ``Y`` and one from greedy forward
    selection, and the lower-RSS result is kept (the first on ties).
    Passing ``init_support`` replaces both with a single search from there.
    Each search stops at a support that neither a single swap nor a
    windowed pair swap (see :class:`L0Options`) can improve.

    Parameters
    ----------
    system : StackedSystem
    gamma : int
        Target support size, ``1 <= gamma <= min(pZ, N)``.
    opts : L0Options, optional
    init_support : array-like of int, optional

    Returns
    -------
    CoefficientEstimate
        At most ``gamma`` nonzeros; fewer only when least squares puts exact
        zeros on some active columns.
    """
    opts = opts or L0Options()
    _check_gamma(system, gamma)
    if init_support is not None:
        starts = [np.unique(np.asarray(init_support, dtype=np.int64))]
        if starts[0].size != gamma:
            raise DataError(f"init_support has {starts[0].size} distinct entries, expected {gamma}")
    else:
        starts = [_initial_support(system, gamma)]
        fwd = _forward_support(system, gamma)
        if not np.array_equal(fwd, starts[0]):
            starts.append(fwd)
    best = None
    for s in starts:
        out = _splice(system, gamma, opts, s)
        if best is None or out[2] < best[2] - opts.tolerance * best[2]:
            best = out
    active, coef, rss, rank = best
    return _estimate(system, active, coef, rss, rank < active.size)


def exhaustive_best_subset(system: StackedSystem, gamma: int) -> CoefficientEstimate:
    """Globally RSS-minimal support of size ``gamma`` by full enumeration.

    Ties are resolved toward the lexicographically smallest support.
    """
    _check_gamma(system, gamma)
    count = math.comb(system.n_cols, gamma)
    if count > EXHAUSTIVE_LIMIT:
        raise DataError(
            f"C({system.n_cols}, {gamma}) = {count} supports exceeds {EXHAUSTIVE_LIMIT}; "
            "reduce the instance"
        )
    X = system.dense()
    y = system.y
    best = None
    for support in itertools.combinations(range(system.n_cols), gamma):
        XA = X[:, support]
        coef, _, rank, _ = np.linalg.lstsq(XA, y, rcond=RCOND)
        resid = y - XA @ coef
        rss = float(resid @ resid)
        # Strict improvement beyond rounding keeps the earliest (lexicographic) support.
        if best is None or rss < best[0] - 1e-12 * max(best[0], 1e-300):
            best = (rss, support, coef, rank)
    rss, support, coef, rank = best
    return _estimate(system, np.array(support), coef, rss, rank < gamma)
