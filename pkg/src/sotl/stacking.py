"""The stacked "artificial data" system and its structure-aware kernels.

Row order is the target group first, then the auxiliary groups in ascending
group index. Column block 0 is ``beta``; column block ``b >= 1`` is the
``omega`` of the ``b``-th auxiliary group. Each row has nonzeros only in the
beta block and (for auxiliary rows) its own omega block, so the dense
``N x pZ`` matrix is never formed. Only the ``N x p`` matrix of row-scaled
designs is stored.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import DataError, MultiSourceProblem


@dataclass(frozen=True)
class BlockLayout:
    block_id: int
    columns: tuple[int, int]
    rows: tuple[int, int]
    owner: int | str  # "target" for the beta block, else the group index


class StackedSystem:
    """Implicit ``(X, Y)`` pair with 1/sqrt(n_z) row scaling.

    Parameters
    ----------
    rows : ndarray, shape (N, p)
        Scaled group designs stacked in row order.
    y : ndarray, shape (N,)
        Scaled responses in the same order.
    group_offsets : sequence of int, length Z + 1
        Row offsets of each group in stacked order (target first).
    group_order : sequence of int
        Original group index of each stacked row block.
    """

    def __init__(self, rows, y, group_offsets, group_order):
        rows = np.ascontiguousarray(rows, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        offsets = np.asarray(group_offsets, dtype=np.int64)
        if rows.ndim != 2 or y.ndim != 1 or rows.shape[0] != y.shape[0]:
            raise DataError(f"inconsistent stacked shapes {rows.shape} / {y.shape}")
        if offsets[0] != 0 or offsets[-1] != rows.shape[0] or np.any(np.diff(offsets) < 0):
            raise DataError("group offsets must partition the stacked rows")
        for a in (rows, y, offsets):
            a.setflags(write=False)
        self.rows = rows
        self.y = y
        self.group_offsets = offsets
        self.group_order = tuple(int(g) for g in group_order)
        self.p = rows.shape[1]
        self.n_groups = len(self.group_order)
        # Row range of each column block: beta spans everything, omega_b its group.
        lo = np.empty(self.n_groups, dtype=np.int64)
        hi = np.empty(self.n_groups, dtype=np.int64)
        lo[0], hi[0] = 0, rows.shape[0]
        lo[1:], hi[1:] = offsets[1:-1], offsets[2:]
        lo.setflags(write=False)
        hi.setflags(write=False)
        self.block_lo = lo
        self.block_hi = hi
        self._rows_t = None
        self._col_sq_norms = None

    # -- shape ---------------------------------------------------------------
    @property
    def n_total(self) -> int:
        return self.rows.shape[0]

    @property
    def n_cols(self) -> int:
        return self.p * self.n_groups

    @property
    def target_index(self) -> int:
        return self.group_order[0]

    @property
    def layout(self) -> list[BlockLayout]:
        out = []
        for b in range(self.n_groups):
            owner: int | str = "target" if b == 0 else self.group_order[b]
            out.append(
                BlockLayout(
                    b,
                    (b * self.p, (b + 1) * self.p),
                    (int(self.block_lo[b]), int(self.block_hi[b])),
                    owner,
                )
            )
        return out

    @property
    def blocks(self) -> list[np.ndarray]:
        """Per-group scaled designs ``X_z / sqrt(n_z)`` in stacked row order."""
        o = self.group_offsets
        return [self.rows[o[g] : o[g + 1]] for g in range(self.n_groups)]

    @property
    def y_stacked(self) -> np.ndarray:
        return self.y

    @property
    def rows_t(self) -> np.ndarray:
        """Transposed scaled designs, ``(p, N)`` C-contiguous, for column access."""
        if self._rows_t is None:
            rt = np.ascontiguousarray(self.rows.T)
            rt.setflags(write=False)
            self._rows_t = rt
        return self._rows_t

    @property
    def y_norm_sq(self) -> float:
        return float(self.y @ self.y)

    # -- kernels -------------------------------------------------------------
    def apply(self, phi) -> np.ndarray:
        """Return ``X @ phi`` without forming ``X``."""
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (self.n_cols,):
            raise DataError(f"phi has shape {phi.shape}, expected ({self.n_cols},)")
        p = self.p
        out = self.rows @ phi[:p]
        for b in range(1, self.n_groups):
            lo, hi = self.block_lo[b], self.block_hi[b]
            out[lo:hi] += self.rows[lo:hi] @ phi[b * p : (b + 1) * p]
        return out

    def apply_transpose(self, r) -> np.ndarray:
        """Return ``X.T @ r`` without forming ``X``."""
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.n_total,):
            raise DataError(f"r has shape {r.shape}, expected ({self.n_total},)")
        p = self.p
        out = np.empty(self.n_cols)
        out[:p] = r @ self.rows
        for b in range(1, self.n_groups):
            lo, hi = self.block_lo[b], self.block_hi[b]
            out[b * p : (b + 1) * p] = r[lo:hi] @ self.rows[lo:hi]
        return out

    def transpose_many(self, R) -> np.ndarray:
        """Return ``R.T @ X`` for an ``N x k`` matrix ``R`` (shape ``k x pZ``)."""
        R = np.asarray(R, dtype=np.float64)
        if R.ndim != 2 or R.shape[0] != self.n_total:
            raise DataError(f"R has shape {R.shape}, expected ({self.n_total}, k)")
        p = self.p
        out = np.empty((R.shape[1], self.n_cols))
        out[:, :p] = R.T @ self.rows
        for b in range(1, self.n_groups):
            lo, hi = self.block_lo[b], self.block_hi[b]
            out[:, b * p : (b + 1) * p] = R[lo:hi].T @ self.rows[lo:hi]
        return out

    def residual(self, phi) -> np.ndarray:
        return self.y - self.apply(phi)

    def rss(self, phi) -> float:
        r = self.residual(phi)
        return float(r @ r)

    def col_sq_norms(self) -> np.ndarray:
        """Squared Euclidean norm of every column of ``X``."""
        if self._col_sq_norms is None:
            sq = self.rows**2
            p = self.p
            out = np.empty(self.n_cols)
            out[:p] = sq.sum(axis=0)
            for b in range(1, self.n_groups):
                lo, hi = self.block_lo[b], self.block_hi[b]
                out[b * p : (b + 1) * p] = sq[lo:hi].sum(axis=0)
            out.setflags(write=False)
            self._col_sq_norms = out
        return self._col_sq_norms

    def columns(self, idx: Sequence[int]) -> np.ndarray:
        """Dense ``N x len(idx)`` submatrix of the selected columns."""
        idx = np.asarray(idx, dtype=np.int64)
        out = np.zeros((self.n_total, idx.size))
        if idx.size == 0:
            return out
        if idx.min() < 0 or idx.max() >= self.n_cols:
            raise DataError(f"column index out of range [0, {self.n_cols})")
        blocks, feats = np.divmod(idx, self.p)
        for k, (b, f) in enumerate(zip(blocks, feats)):
            lo, hi = self.block_lo[b], self.block_hi[b]
            out[lo:hi, k] = self.rows[lo:hi, f]
        return out

    def dense(self) -> np.ndarray:
        """Materialise ``X``. Meant for tests and tiny problems only."""
        return self.columns(np.arange(self.n_cols))

    def subset_rows(self, keep) -> "StackedSystem":
        """Row-subset that keeps the existing scaling (used for CV folds)."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        keep = np.sort(keep.astype(np.int64))
        counts = [
            int(np.count_nonzero((keep >= self.group_offsets[g]) & (keep < self.group_offsets[g + 1])))
            for g in range(self.n_groups)
        ]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return StackedSystem(self.rows[keep], self.y[keep], offsets, self.group_order)

    def scaled_response(self, c: float) -> "StackedSystem":
        return StackedSystem(self.rows, c * self.y, self.group_offsets, self.group_order)

    def __repr__(self) -> str:
        return f"StackedSystem(N={self.n_total}, p={self.p}, Z={self.n_groups})"


def build_stacked(problem: MultiSourceProblem) -> StackedSystem:
    """Assemble the stacked system from a multi-source problem."""
    p = problem.p
    order = [problem.target_index] + problem.auxiliary_indices
    rows, ys, sizes = [], [], []
    for z in order:
        g = problem.groups[z]
        if g.p != p:
            raise DataError(f"group {z} has {g.p} columns, expected {p}")
        s = 1.0 / np.sqrt(g.n)
        rows.append(g.design * s)
        ys.append(g.response * s)
        sizes.append(g.n)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return StackedSystem(np.vstack(rows), np.concatenate(ys), offsets, order)


def stack_coefficients(problem: MultiSourceProblem, beta, omegas) -> np.ndarray:
    """Concatenate ``beta`` and the auxiliary offsets into a stacked ``phi``.

    ``omegas`` maps auxiliary group index to its offset vector, or is a
    sequence aligned with ``problem.auxiliary_indices``.
    """
    aux = problem.auxiliary_indices
    if isinstance(omegas, dict):
        parts = [omegas[z] for z in aux]
    else:
        parts = list(omegas)
        if len(parts) != len(aux):
            raise DataError(f"expected {len(aux)} omega vectors, got {len(parts)}")
    out = [np.asarray(beta, dtype=np.float64)] + [np.asarray(w, dtype=np.float64) for w in parts]
    for v in out:
        if v.shape != (problem.p,):
            raise DataError(f"coefficient block has shape {v.shape}, expected ({problem.p},)")
    return np.concatenate(out)


def grouped_objective(problem: MultiSourceProblem, beta, omegas) -> float:
    """Sum over groups of ``(1/n_z) ||y_z - X_z (beta + omega_z)||^2`` with omega_t = 0."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (problem.p,):
        raise DataError(f"beta has shape {beta.shape}, expected ({problem.p},)")
    phi = stack_coefficients(problem, beta, omegas)
    total = 0.0
    for b, z in enumerate([problem.target_index] + problem.auxiliary_indices):
        g = problem.groups[z]
        coef = beta if b == 0 else beta + phi[b * problem.p : (b + 1) * problem.p]
        r = g.response - g.design @ coef
        total += float(r @ r) / g.n
    return total
