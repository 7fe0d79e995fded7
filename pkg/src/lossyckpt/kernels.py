"""Hot inner loops, each in a numba and a pure-numpy flavour.

Every public function dispatches on :data:`lossyckpt._accel.USE_NUMBA`. The
two flavours are written so that they perform the same floating-point
operations in the same order, so switching paths does not change results
bit for bit. Both flavours stay importable (``*_numba`` / ``*_numpy``) for
the equivalence tests and the benchmark script.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# sparse matrix-vector product


@njit
def _spmv_numba(row_ptr, col_idx, values, x):
    n = row_ptr.shape[0] - 1
    y = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for p in range(row_ptr[i], row_ptr[i + 1]):
            acc += values[p] * x[col_idx[p]]
        y[i] = acc
    return y


def _spmv_numpy(row_ptr, col_idx, values, x, row_ids=None):
    n = row_ptr.shape[0] - 1
    if row_ids is None:
        row_ids = np.repeat(np.arange(n), np.diff(row_ptr))
    # bincount accumulates left to right from 0.0, same as the loop above
    return np.bincount(row_ids, weights=values * x[col_idx], minlength=n)


def spmv_numba(row_ptr, col_idx, values, x, row_ids=None):
    return _spmv_numba(row_ptr, col_idx, values, x)


spmv_numpy = _spmv_numpy


def spmv(row_ptr, col_idx, values, x, row_ids=None):
    """y = A x for CSR arrays. ``row_ids`` is only used by the numpy path."""
    if USE_NUMBA:
        return _spmv_numba(row_ptr, col_idx, values, x)
    return _spmv_numpy(row_ptr, col_idx, values, x, row_ids)


# ---------------------------------------------------------------------------
# triangular solves
#
# Lower factors keep their diagonal as the last entry of each row, upper
# factors as the first. Off-diagonal products are summed first and then
# subtracted from the right-hand side, which is what lets the level-scheduled
# numpy version reproduce the sequential loop exactly.


@njit
def _lower_solve_numba(row_ptr, col_idx, values, b):
    n = row_ptr.shape[0] - 1
    x = np.empty(n, dtype=np.float64)
    for i in range(n):
        last = row_ptr[i + 1] - 1
        acc = 0.0
        for p in range(row_ptr[i], last):
            acc += values[p] * x[col_idx[p]]
        x[i] = (b[i] - acc) / values[last]
    return x


@njit
def _upper_solve_numba(row_ptr, col_idx, values, b):
    n = row_ptr.shape[0] - 1
    x = np.empty(n, dtype=np.float64)
    for i in range(n - 1, -1, -1):
        first = row_ptr[i]
        acc = 0.0
        for p in range(first + 1, row_ptr[i + 1]):
            acc += values[p] * x[col_idx[p]]
        x[i] = (b[i] - acc) / values[first]
    return x


class LevelSchedule:
    """Wavefront ordering of a triangular factor for the numpy solve path.

    Rows in one level depend only on rows of earlier levels, so a level is
    solved with a single vectorised update.
    """

    def __init__(self, row_ptr, col_idx, lower):
        n = row_ptr.shape[0] - 1
        counts = np.diff(row_ptr)
        row_of = np.repeat(np.arange(n), counts)
        diag_pos = row_ptr[1:] - 1 if lower else row_ptr[:-1].copy()
        off = np.ones(col_idx.shape[0], dtype=bool)
        off[diag_pos] = False
        src_rows = row_of[off]
        dep_cols = col_idx[off]

        level = np.zeros(n, dtype=np.int64)
        # relax until fixed point; sweeps = depth of the dependency DAG
        while True:
            cand = np.zeros(n, dtype=np.int64)
            np.maximum.at(cand, src_rows, level[dep_cols] + 1)
            if np.array_equal(cand, level):
                break
            level = cand

        order = np.argsort(level, kind="stable")
        bounds = np.searchsorted(level[order], np.arange(level.max() + 2 if n else 1))
        entry_level = level[row_of]
        self.levels = []
        for lv in range(len(bounds) - 1):
            rows = order[bounds[lv]:bounds[lv + 1]]
            if rows.size == 0:
                continue
            ents = np.flatnonzero(off & (entry_level == lv))
            local = np.searchsorted(rows, row_of[ents])
            self.levels.append((rows, ents, local, diag_pos[rows]))
        self.n = n


def _tri_solve_numpy(row_ptr, col_idx, values, b, schedule):
    x = np.empty(schedule.n, dtype=np.float64)
    for rows, ents, local, dpos in schedule.levels:
        acc = np.bincount(local, weights=values[ents] * x[col_idx[ents]],
                          minlength=rows.shape[0])
        x[rows] = (b[rows] - acc) / values[dpos]
    return x


def lower_solve_numpy(row_ptr, col_idx, values, b, schedule=None):
    if schedule is None:
        schedule = LevelSchedule(row_ptr, col_idx, lower=True)
    return _tri_solve_numpy(row_ptr, col_idx, values, b, schedule)


def upper_solve_numpy(row_ptr, col_idx, values, b, schedule=None):
    if schedule is None:
        schedule = LevelSchedule(row_ptr, col_idx, lower=False)
    return _tri_solve_numpy(row_ptr, col_idx, values, b, schedule)


def lower_solve_numba(row_ptr, col_idx, values, b, schedule=None):
    return _lower_solve_numba(row_ptr, col_idx, values, b)


def upper_solve_numba(row_ptr, col_idx, values, b, schedule=None):
    return _upper_solve_numba(row_ptr, col_idx, values, b)


def lower_solve(row_ptr, col_idx, values, b, schedule=None):
    if USE_NUMBA:
        return _lower_solve_numba(row_ptr, col_idx, values, b)
    return lower_solve_numpy(row_ptr, col_idx, values, b, schedule)


def upper_solve(row_ptr, col_idx, values, b, schedule=None):
    if USE_NUMBA:
        return _upper_solve_numba(row_ptr, col_idx, values, b)
    return upper_solve_numpy(row_ptr, col_idx, values, b, schedule)


# ---------------------------------------------------------------------------
# ILU(0) factorisation, in place on a copy of the CSR values.
# Returns (factored values, failing row or -1).


@njit
def _ilu0_numba(row_ptr, col_idx, values, diag_ptr):
    n = row_ptr.shape[0] - 1
    vals = values.copy()
    iw = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for p in range(row_ptr[i], row_ptr[i + 1]):
            iw[col_idx[p]] = p
        for p in range(row_ptr[i], diag_ptr[i]):
            k = col_idx[p]
            piv = vals[diag_ptr[k]]
            if piv == 0.0:
                return vals, k
            vals[p] = vals[p] / piv
            lik = vals[p]
            for q in range(diag_ptr[k] + 1, row_ptr[k + 1]):
                jpos = iw[col_idx[q]]
                if jpos != -1:
                    vals[jpos] -= lik * vals[q]
        for p in range(row_ptr[i], row_ptr[i + 1]):
            iw[col_idx[p]] = -1
        if vals[diag_ptr[i]] == 0.0:
            return vals, i
    return vals, -1


def ilu0_numpy(row_ptr, col_idx, values, diag_ptr):
    n = row_ptr.shape[0] - 1
    vals = values.copy()
    iw = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        lo, hi = row_ptr[i], row_ptr[i + 1]
        iw[col_idx[lo:hi]] = np.arange(lo, hi)
        for p in range(lo, diag_ptr[i]):
            k = col_idx[p]
            piv = vals[diag_ptr[k]]
            if piv == 0.0:
                return vals, int(k)
            vals[p] = vals[p] / piv
            qs = np.arange(diag_ptr[k] + 1, row_ptr[k + 1])
            jpos = iw[col_idx[qs]]
            hit = jpos != -1
            vals[jpos[hit]] -= vals[p] * vals[qs[hit]]
        iw[col_idx[lo:hi]] = -1
        if vals[diag_ptr[i]] == 0.0:
            return vals, i
    return vals, -1


def ilu0_numba(row_ptr, col_idx, values, diag_ptr):
    vals, bad = _ilu0_numba(row_ptr, col_idx, values, diag_ptr)
    return vals, int(bad)


def ilu0_factor(row_ptr, col_idx, values, diag_ptr):
    if USE_NUMBA:
        return ilu0_numba(row_ptr, col_idx, values, diag_ptr)
    return ilu0_numpy(row_ptr, col_idx, values, diag_ptr)


# ---------------------------------------------------------------------------
# codec predictor: integer grid indices -> residual codes, per-block order.
# Order 1 predicts the previous reconstructed index, order 2 extrapolates
# linearly from the previous two. Indices before the start count as 0.


@njit
def _predict_codes_numba(q, block):
    n = q.shape[0]
    nblocks = (n + block - 1) // block
    codes = np.empty(n, dtype=np.int64)
    orders = np.empty(nblocks, dtype=np.uint8)
    for bi in range(nblocks):
        lo = bi * block
        hi = min(n, lo + block)
        s1 = 0
        s2 = 0
        for i in range(lo, hi):
            p1 = q[i - 1] if i >= 1 else 0
            p2 = q[i - 2] if i >= 2 else 0
            s1 += abs(q[i] - p1)
            s2 += abs(q[i] - 2 * p1 + p2)
        use2 = s2 < s1
        orders[bi] = 2 if use2 else 1
        for i in range(lo, hi):
            p1 = q[i - 1] if i >= 1 else 0
            if use2:
                p2 = q[i - 2] if i >= 2 else 0
                codes[i] = q[i] - 2 * p1 + p2
            else:
                codes[i] = q[i] - p1
    return codes, orders


def predict_codes_numpy(q, block):
    n = q.shape[0]
    nblocks = (n + block - 1) // block
    d1 = np.diff(q, prepend=np.int64(0))
    d2 = np.diff(d1, prepend=np.int64(0))
    pad = nblocks * block - n
    s1 = np.abs(np.concatenate([d1, np.zeros(pad, np.int64)])).reshape(nblocks, block).sum(1)
    s2 = np.abs(np.concatenate([d2, np.zeros(pad, np.int64)])).reshape(nblocks, block).sum(1)
    use2 = s2 < s1
    orders = np.where(use2, 2, 1).astype(np.uint8)
    codes = np.where(np.repeat(use2, block)[:n], d2, d1)
    return codes, orders


@njit
def _reconstruct_numba(codes, orders, block):
    n = codes.shape[0]
    q = np.empty(n, dtype=np.int64)
    for i in range(n):
        p1 = q[i - 1] if i >= 1 else 0
        if orders[i // block] == 2:
            p2 = q[i - 2] if i >= 2 else 0
            q[i] = codes[i] + 2 * p1 - p2
        else:
            q[i] = codes[i] + p1
    return q


def reconstruct_numpy(codes, orders, block):
    n = codes.shape[0]
    q = np.empty(n, dtype=np.int64)
    prev = np.int64(0)   # q[lo-1]
    slope = np.int64(0)  # q[lo-1] - q[lo-2]
    for bi, order in enumerate(orders):
        lo = bi * block
        hi = min(n, lo + block)
        c = codes[lo:hi]
        if order == 2:
            d = slope + np.cumsum(c)
            q[lo:hi] = prev + np.cumsum(d)
        else:
            q[lo:hi] = prev + np.cumsum(c)
        if hi - lo >= 2:
            slope = q[hi - 1] - q[hi - 2]
        else:
            slope = q[hi - 1] - prev
        prev = q[hi - 1]
    return q


def predict_codes_numba(q, block):
    return _predict_codes_numba(q, block)


def reconstruct_numba(codes, orders, block):
    return _reconstruct_numba(codes, orders, block)


def predict_codes(q, block):
    if USE_NUMBA:
        return _predict_codes_numba(q, block)
    return predict_codes_numpy(q, block)


def reconstruct(codes, orders, block):
    if USE_NUMBA:
        return _reconstruct_numba(codes, orders, block)
    return reconstruct_numpy(codes, orders, block)
