"""Lasso on the stacked system (the S-JETS baseline).

The objective is ``||Y - X phi||^2 + lam * sum_j w_j |phi_j|`` with no 1/N
factor. ``w = 1`` is the plain lasso; with ``standardize=True`` the path
functions use ``w_j = ||x_j|| / sqrt(N)``, which is the same as fitting on
unit-RMS columns and mapping the coefficients back to the original scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._cd import cd_solve
from .datamodel import CoefficientEstimate, DataError
from .stacking import StackedSystem


class ConvergenceError(RuntimeError):
    """Coordinate descent ran out of sweeps; carries the last iterate."""

    def __init__(self, message, phi=None, kkt_violation=None, lam=None):
        super().__init__(message)
        self.phi = phi
        self.kkt_violation = kkt_violation
        self.lam = lam


@dataclass(frozen=True)
class LassoPathConfig:
    n_lambdas: int = 100
    lambda_min_ratio: float = 1e-3
    cv_folds: int = 10
    tol: float = 1e-7
    max_sweeps: int = 10_000
    standardize: bool = True

    def __post_init__(self):
        if self.n_lambdas < 2:
            raise ValueError("n_lambdas must be at least 2")
        if not 0 < self.lambda_min_ratio < 1:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.tol <= 0 or self.max_sweeps < 1:
            raise ValueError("tol and max_sweeps must be positive")


SWEEP_CHUNK = 100


def kkt_tolerance(lam: float) -> float:
    return 1e-6 * (1.0 + lam)


def kkt_violation(system: StackedSystem, phi, lam: float, weights=None) -> float:
    """Largest violation of the lasso stationarity conditions at ``phi``."""
    phi = np.asarray(phi, dtype=np.float64)
    w = np.ones(system.n_cols) if weights is None else np.asarray(weights, dtype=np.float64)
    grad = 2.0 * system.apply_transpose(system.residual(phi))
    nz = phi != 0
    viol = np.where(
        nz,
        np.abs(grad - lam * w * np.sign(phi)),
        np.maximum(np.abs(grad) - lam * w, 0.0),
    )
    return float(viol.max()) if viol.size else 0.0


def standardization_weights(system: StackedSystem) -> np.ndarray:
    d = system.col_sq_norms()
    w = np.sqrt(d / system.n_total)
    w[w == 0] = 1.0
    return w


def _objective(system: StackedSystem, phi, mu) -> float:
    r = system.residual(phi)
    return float(r @ r) + float(mu @ np.abs(phi))


def _face_step(system: StackedSystem, A, g, cur, lin):
    """Search direction on the sign face ``A`` for feature-sign search.

    ``g`` is the face gradient at ``cur`` and ``lin`` the linear penalty term.
    Full column rank gives the Newton step to the face minimiser (solved by
    QR, horizon 1). When ``X_A`` is singular and ``g`` has a component in its
    null space, the objective falls linearly along that component without
    changing the fit, so it is returned with an unbounded horizon and the
    line search stops at a zero crossing.
    """
    XA = system.columns(A)
    if A.size <= system.n_total:
        Q, R = np.linalg.qr(XA)
        rdiag = np.abs(np.diag(R))
        if rdiag.min() > 1e-10 * rdiag.max():
            u = np.linalg.solve(R.T, 0.5 * lin)
            return np.linalg.solve(R, Q.T @ system.y - u) - cur, 1.0
    ev, V = np.linalg.eigh(XA.T @ XA)
    null = ev <= 1e-13 * ev.max()
    Vn = V[:, null]
    gn = Vn @ (Vn.T @ g)
    if np.linalg.norm(gn) > 1e-10 * (np.linalg.norm(g) + np.linalg.norm(lin)):
        return -gn, np.inf
    Vr = V[:, ~null]
    return -0.5 * Vr @ ((Vr.T @ g) / ev[~null]), 1.0


def _feature_sign(system: StackedSystem, phi, lam, w, bound, max_steps=200):
    """Exact active-set refinement (feature-sign search) from a warm start.

    Alternates a step on the current support and signs (see
    :func:`_face_step`), with a line search through sign changes, and the
    addition of the most violating inactive coordinate. Returns the refined
    vector, or ``None`` if no step decreases the objective or it runs out of
    steps.
    """
    mu = lam * w
    x = phi.copy()
    for _ in range(max_steps):
        grad = -2.0 * system.apply_transpose(system.residual(x))
        A = np.flatnonzero(x)
        theta = np.sign(x)
        viol = np.where(x != 0, np.abs(grad + mu * theta), np.maximum(np.abs(grad) - mu, 0.0))
        if viol.max(initial=0.0) <= bound:
            return x
        inactive_viol = np.where(x == 0, viol, 0.0)
        on_active_ok = np.all(viol[A] <= bound) if A.size else True
        if on_active_ok:
            j = int(np.argmax(inactive_viol))
            theta[j] = -np.sign(grad[j])
            A = np.sort(np.append(A, j))
        step, horizon = _face_step(system, A, grad[A] + mu[A] * theta[A], x[A], mu[A] * theta[A])
        # Line search over zero crossings (and the full step when finite);
        # only strict decreases are accepted, so the search cannot cycle.
        cur = x[A]
        best_x, best_f = x, _objective(system, x, mu)
        with np.errstate(divide="ignore", invalid="ignore"):
            ts = -cur / step
        cross = np.flatnonzero((ts > 0) & (ts < horizon))
        cands = [(ts[k], k) for k in cross]
        if np.isfinite(horizon):
            cands.append((horizon, -1))
        for t, k in cands:
            cand = np.zeros_like(x)
            cand[A] = cur + t * step
            if k >= 0:
                cand[A[k]] = 0.0
            f = _objective(system, cand, mu)
            if f < best_f:
                best_f, best_x = f, cand
        if best_x is x:
            return None
        x = best_x
    return None


def coordinate_descent(
    system: StackedSystem,
    lam: float,
    warm_start=None,
    weights=None,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
    objective_trace: list | None = None,
) -> CoefficientEstimate:
    """Solve the (weighted) lasso at a single ``lam`` by coordinate descent.

    The returned solution satisfies the stationarity conditions to within
    ``1e-6 * (1 + lam)``. Descent runs in chunks of sweeps; whenever a chunk
    ends without that certificate, an exact feature-sign search is tried from
    the current iterate before descent resumes (at a tighter ``tol`` if the
    sweep criterion had already been met). Raises :class:`ConvergenceError`
    if ``max_sweeps`` runs out first.
    """
    if lam < 0:
        raise DataError(f"lambda must be non-negative, got {lam}")
    phi = np.zeros(system.n_cols) if warm_start is None else np.array(warm_start, dtype=np.float64)
    if phi.shape != (system.n_cols,):
        raise DataError(f"warm_start has shape {phi.shape}, expected ({system.n_cols},)")
    w = np.ones(system.n_cols) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    r = np.ascontiguousarray(system.residual(phi))
    d = system.col_sq_norms()
    trace = np.empty(max_sweeps if objective_trace is not None else 0)
    used = 0
    bound = kkt_tolerance(lam)
    cur_tol = tol
    viol = np.inf
    while used < max_sweeps:
        budget = min(max_sweeps - used, SWEEP_CHUNK)
        out = cd_solve(
            system.rows_t, system.p, system.block_lo, system.block_hi, d,
            float(lam), w, phi, r, cur_tol, budget, trace[used:],
        )
        used += abs(out)
        # Residual is updated incrementally; refresh it before certifying.
        r[:] = system.residual(phi)
        viol = kkt_violation(system, phi, lam, w)
        if viol <= bound:
            break
        refined = _feature_sign(system, phi, lam, w, bound)
        if refined is not None:
            phi[:] = refined
            r[:] = system.residual(phi)
            viol = kkt_violation(system, phi, lam, w)
            if viol <= bound:
                break
        if out > 0:
            cur_tol = max(cur_tol * 0.1, 1e-15)
    if objective_trace is not None:
        objective_trace.extend(trace[:used].tolist())
    if viol > bound:
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_sweeps} sweeps "
            f"(lambda={lam:.6g}, KKT violation {viol:.3g})",
            phi=phi, kkt_violation=viol, lam=lam,
        )
    return CoefficientEstimate(phi, float(r @ r))


def lambda_max(system: StackedSystem, weights=None) -> float:
    """Smallest ``lam`` at which the all-zero vector is optimal."""
    c = 2.0 * np.abs(system.apply_transpose(system.y))
    if weights is not None:
        c = c / np.asarray(weights)
    return float(c.max())


def lambda_grid(lmax: float, config: LassoPathConfig) -> np.ndarray:
    return np.geomspace(lmax, lmax * config.lambda_min_ratio, config.n_lambdas)


def lasso_path(system: StackedSystem, config: LassoPathConfig | None = None, lambdas=None):
    """Warm-started path of solutions.

    Returns a list of ``(lam, CoefficientEstimate)`` from largest to smallest
    ``lam``. The default grid is log-spaced from the null-model threshold
    down to ``lambda_min_ratio`` times it.
    """
    config = config or LassoPathConfig()
    w = standardization_weights(system) if config.standardize else None
    if lambdas is None:
        lambdas = lambda_grid(lambda_max(system, w), config)
    out = []
    phi = np.zeros(system.n_cols)
    for lam in lambdas:
        try:
            est = coordinate_descent(system, lam, phi, w, config.tol, config.max_sweeps)
        except ConvergenceError as exc:
            raise ConvergenceError(f"path failed at lambda={lam:.6g}: {exc}", exc.phi, exc.kkt_violation, lam) from exc
        phi = np.array(est.phi)
        out.append((float(lam), est))
    return out


def cv_folds(system: StackedSystem, n_folds: int, rng_seed) -> list[np.ndarray]:
    """Held-out row sets, stratified by group.

    Each group's rows are shuffled with the seeded generator and cut into
    ``n_folds`` contiguous chunks; fold ``k`` is the union of chunk ``k`` of
    every group.
    """
    rng = np.random.default_rng(rng_seed)
    folds: list[list[np.ndarray]] = [[] for _ in range(n_folds)]
    for g in range(system.n_groups):
        lo, hi = system.group_offsets[g], system.group_offsets[g + 1]
        if hi - lo < n_folds:
            raise DataError(
                f"group {system.group_order[g]} has {hi - lo} rows, fewer than "
                f"{n_folds} CV folds; use fewer folds"
            )
        perm = lo + rng.permutation(hi - lo)
        for k, chunk in enumerate(np.array_split(perm, n_folds)):
            folds[k].append(chunk)
    return [np.sort(np.concatenate(f)) for f in folds]


def cv_error_curve(system: StackedSystem, config: LassoPathConfig, rng_seed):
    """Mean held-out squared error of every grid ``lam`` (on stacked rows)."""
    if system.n_total < config.cv_folds:
        raise DataError(f"N={system.n_total} is smaller than cv_folds={config.cv_folds}")
    w = standardization_weights(system) if config.standardize else None
    lambdas = lambda_grid(lambda_max(system, w), config)
    folds = cv_folds(system, config.cv_folds, rng_seed)
    sq_err = np.zeros(len(lambdas))
    all_rows = np.arange(system.n_total)
    for held in folds:
        train = system.subset_rows(np.setdiff1d(all_rows, held))
        test = system.subset_rows(held)
        for k, (_, est) in enumerate(lasso_path(train, config, lambdas)):
            res = test.residual(est.phi)
            sq_err[k] += float(res @ res)
    return lambdas, sq_err / system.n_total


def select_lambda_cv(system: StackedSystem, config: LassoPathConfig | None = None, rng_seed=0):
    """K-fold CV choice of ``lam`` (minimum mean held-out error), then a full refit.

    Returns ``(lam_opt, CoefficientEstimate)``; ties go to the larger ``lam``.
    """
    config = config or LassoPathConfig()
    lambdas, err = cv_error_curve(system, config, rng_seed)
    k = int(np.argmin(err))
    path = lasso_path(system, config, lambdas[: k + 1])
    return float(lambdas[k]), path[-1][1]
