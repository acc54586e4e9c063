"""Numba kernels for weighted-lasso coordinate descent on a stacked system.

Column ``c`` of the stacked design is feature ``c % p`` of the row-scaled
designs restricted to rows ``[lo[b], hi[b])`` with ``b = c // p``.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _col_dot(rows_t, f, lo, hi, v):
    s = 0.0
    for i in range(lo, hi):
        s += rows_t[f, i] * v[i]
    return s


@nb.njit(cache=True)
def _col_axpy(rows_t, f, lo, hi, a, v):
    for i in range(lo, hi):
        v[i] += a * rows_t[f, i]


@nb.njit(cache=True)
def _update(rows_t, p, lo, hi, d, thr, c, phi, r):
    """Exact minimisation over coordinate ``c``; returns |change| * ||x_c||."""
    b = c // p
    f = c - b * p
    dc = d[c]
    if dc <= 0.0:
        return 0.0
    old = phi[c]
    z = _col_dot(rows_t, f, lo[b], hi[b], r) + dc * old
    if z > thr[c]:
        new = (z - thr[c]) / dc
    elif z < -thr[c]:
        new = (z + thr[c]) / dc
    else:
        new = 0.0
    if new != old:
        _col_axpy(rows_t, f, lo[b], hi[b], old - new, r)
        phi[c] = new
    return abs(new - old) * np.sqrt(dc)


@nb.njit(cache=True)
def _objective(r, phi, lam, w):
    s = 0.0
    for i in range(r.shape[0]):
        s += r[i] * r[i]
    pen = 0.0
    for j in range(phi.shape[0]):
        pen += w[j] * abs(phi[j])
    return s + lam * pen


@nb.njit(cache=True)
def cd_solve(rows_t, p, lo, hi, d, lam, w, phi, r, tol, max_sweeps, trace):
    """Active-set cyclic coordinate descent, in place on ``phi`` and ``r``.

    Minimises ``||r||^2 + lam * sum(w * |phi|)`` where ``r = Y - X phi``.
    A full sweep is followed by sweeps over the nonzero set until they
    settle; the loop ends when a full sweep changes nothing by more than
    ``tol``. ``trace[k]`` receives the objective after sweep ``k``.
    Returns the number of sweeps, negated if ``max_sweeps`` was hit.
    """
    ncol = phi.shape[0]
    thr = np.empty(ncol)
    for j in range(ncol):
        thr[j] = 0.5 * lam * w[j]
    sweeps = 0
    active = np.empty(ncol, dtype=np.int64)
    while sweeps < max_sweeps:
        # full sweep
        dmax = 0.0
        for c in range(ncol):
            dlt = _update(rows_t, p, lo, hi, d, thr, c, phi, r)
            if dlt > dmax:
                dmax = dlt
        if sweeps < trace.shape[0]:
            trace[sweeps] = _objective(r, phi, lam, w)
        sweeps += 1
        if dmax < tol:
            return sweeps
        na = 0
        for c in range(ncol):
            if phi[c] != 0.0:
                active[na] = c
                na += 1
        while sweeps < max_sweeps:
            dmax = 0.0
            for k in range(na):
                dlt = _update(rows_t, p, lo, hi, d, thr, active[k], phi, r)
                if dlt > dmax:
                    dmax = dlt
            if sweeps < trace.shape[0]:
                trace[sweeps] = _objective(r, phi, lam, w)
            sweeps += 1
            if dmax < tol:
                break
    return -sweeps
