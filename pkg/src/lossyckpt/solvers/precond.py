"""Preconditioners: identity, point Jacobi and ILU(0)."""
from __future__ import annotations

import numpy as np

from .. import kernels
from .._accel import USE_NUMBA
from ..errors import ZeroPivotError
from ..sparse import CsrMatrix


def ilu0(A: CsrMatrix) -> tuple[CsrMatrix, CsrMatrix]:
    """Incomplete LU with zero fill.

    Returns ``(L, U)`` where ``L`` is unit lower triangular (diagonal stored
    explicitly) and ``U`` is upper triangular. ``L - I + U`` has exactly the
    sparsity pattern of ``A``.
    """
    if A.nrows != A.ncols:
        raise ValueError("ILU(0) needs a square matrix")
    diag_ptr = A.diag_positions()
    if np.any(diag_ptr < 0):
        raise ZeroPivotError(int(np.flatnonzero(diag_ptr < 0)[0]))
    vals, bad = kernels.ilu0_factor(A.row_ptr, A.col_idx, A.values, diag_ptr)
    if bad >= 0:
        raise ZeroPivotError(bad)

    rows = A._row_ids
    cols = A.col_idx
    lower = cols < rows
    upper = cols >= rows
    n = A.nrows
    # unit diagonal appended after the strictly-lower part keeps rows sorted
    Lr = np.concatenate([rows[lower], np.arange(n)])
    Lc = np.concatenate([cols[lower], np.arange(n)])
    Lv = np.concatenate([vals[lower], np.ones(n)])
    L = CsrMatrix.from_coo(Lr, Lc, Lv, A.shape)
    U = CsrMatrix.from_coo(rows[upper], cols[upper], vals[upper], A.shape)
    return L, U


class Identity:
    name = "none"

    def apply(self, r):
        return r.copy()


class PointJacobi:
    name = "jacobi"

    def __init__(self, A: CsrMatrix):
        d = A.diagonal()
        if np.any(d == 0):
            raise ZeroPivotError(int(np.flatnonzero(d == 0)[0]))
        self.inv_diag = 1.0 / d

    def apply(self, r):
        return r * self.inv_diag


class ILU0:
    name = "ilu0"

    def __init__(self, A: CsrMatrix):
        self.L, self.U = ilu0(A)
        self._lsched = self._usched = None
        if not USE_NUMBA:
            self._lsched = kernels.LevelSchedule(self.L.row_ptr, self.L.col_idx, lower=True)
            self._usched = kernels.LevelSchedule(self.U.row_ptr, self.U.col_idx, lower=False)

    def apply(self, r):
        L, U = self.L, self.U
        y = kernels.lower_solve(L.row_ptr, L.col_idx, L.values, r, self._lsched)
        return kernels.upper_solve(U.row_ptr, U.col_idx, U.values, y, self._usched)


def make_preconditioner(kind: str, A: CsrMatrix):
    if kind == "none":
        return Identity()
    if kind == "jacobi":
        return PointJacobi(A)
    if kind == "ilu0":
        return ILU0(A)
    raise ValueError(f"unknown preconditioner {kind!r}")
