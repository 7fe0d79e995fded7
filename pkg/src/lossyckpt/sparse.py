"""CSR matrices, dense-vector helpers, the 3D Poisson generator and Matrix Market I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DimensionError

_INDEX_LIMIT = np.iinfo(np.int32).max


def as_vector(values) -> np.ndarray:
    """Return ``values`` as a read-only 1-D float64 array, rejecting NaN/Inf."""
    v = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains NaN or Inf")
    v.flags.writeable = False
    return v


def _same_length(x, y):
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")


def dot(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_length(x, y)
    return float(np.dot(x, y))


def norm2(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.dot(x, x)))


def axpy(alpha, x, y) -> np.ndarray:
    """Return ``y + alpha * x`` as a new array."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_length(x, y)
    return y + alpha * x


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Immutable compressed-sparse-row matrix with sorted, duplicate-free rows."""

    nrows: int
    ncols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    _row_ids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int32)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if row_ptr.shape != (self.nrows + 1,):
            raise ValueError("row_ptr must have nrows + 1 entries")
        if row_ptr[0] != 0 or row_ptr[-1] != values.shape[0] or col_idx.shape != values.shape:
            raise ValueError("row_ptr does not match col_idx/values length")
        counts = np.diff(row_ptr)
        if np.any(counts < 0):
            raise ValueError("row_ptr must be non-decreasing")
        if col_idx.size:
            if col_idx.min() < 0 or col_idx.max() >= self.ncols:
                raise ValueError("column index out of range")
            # strictly increasing inside each row
            step = np.diff(col_idx.astype(np.int64))
            row_start = np.zeros(col_idx.size, dtype=bool)
            row_start[row_ptr[:-1][counts > 0]] = True
            if np.any(step[~row_start[1:]] <= 0):
                raise ValueError("column indices must be strictly increasing within a row")
        row_ids = np.repeat(np.arange(self.nrows, dtype=np.int64), counts)
        for arr in (row_ptr, col_idx, values, row_ids):
            arr.flags.writeable = False
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_row_ids", row_ids)

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self):
        return int(self.values.shape[0])

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "CsrMatrix":
        """Build from triplets; duplicates are summed, explicit zeros kept."""
        nrows, ncols = shape
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            key_change = np.ones(rows.size, dtype=bool)
            key_change[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(key_change)
            vals = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
        row_ptr = np.zeros(nrows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=nrows), out=row_ptr[1:])
        return cls(nrows, ncols, row_ptr, cols, vals)

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self._row_ids, self.col_idx] = self.values
        return out

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_coo(self.col_idx, self._row_ids, self.values,
                                  (self.ncols, self.nrows))

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.shape))
        on = self._row_ids == self.col_idx
        d[self._row_ids[on]] = self.values[on]
        return d

    def diag_positions(self) -> np.ndarray:
        """Index into ``values`` of each row's diagonal entry, or -1 if absent."""
        pos = np.full(self.nrows, -1, dtype=np.int64)
        on = np.flatnonzero(self._row_ids == self.col_idx)
        pos[self._row_ids[on]] = on
        return pos

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.ncols,):
            raise DimensionError(f"matrix has {self.ncols} columns, vector has {x.shape}")
        return kernels.spmv(self.row_ptr, self.col_idx, self.values, x, self._row_ids)

    __matmul__ = matvec

    def pattern_equal(self, other: "CsrMatrix") -> bool:
        return (self.shape == other.shape
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx))

    def nbytes(self) -> int:
        return self.row_ptr.nbytes + self.col_idx.nbytes + self.values.nbytes


def spmv(A: CsrMatrix, x) -> np.ndarray:
    """Sparse matrix-vector product ``A @ x``."""
    return A.matvec(x)


def poisson3d(n: int) -> CsrMatrix:
    """7-point Laplacian on an n x n x n grid with Dirichlet boundaries.

    Diagonal +6, -1 for each axis neighbour, lexicographic ordering with the
    first grid axis fastest. This is the negated form of the usual
    block-tridiagonal "-6 / +1" operator, which makes it SPD.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    size = n ** 3
    if size > _INDEX_LIMIT:
        raise OverflowError(f"poisson3d({n}) has {size} unknowns, above the int32 index limit")
    idx = np.arange(size, dtype=np.int64)
    i = idx % n
    j = (idx // n) % n
    k = idx // (n * n)
    rows = [idx]
    cols = [idx]
    vals = [np.full(size, 6.0)]
    for coord, stride in ((i, 1), (j, n), (k, n * n)):
        for direction in (-1, 1):
            ok = (coord + direction >= 0) & (coord + direction < n)
            rows.append(idx[ok])
            cols.append(idx[ok] + direction * stride)
            vals.append(np.full(int(ok.sum()), -1.0))
    return CsrMatrix.from_coo(np.concatenate(rows), np.concatenate(cols),
                              np.concatenate(vals), (size, size))


# ---------------------------------------------------------------------------
# Matrix Market coordinate format


def read_mtx(path) -> CsrMatrix:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().split()
        if len(header) < 5 or header[0] != "%%MatrixMarket" or header[1].lower() != "matrix":
            raise ValueError(f"{path}: not a Matrix Market file")
        fmt, field_, symmetry = (h.lower() for h in header[2:5])
        if fmt != "coordinate":
            raise ValueError(f"{path}: only coordinate format is supported")
        if field_ not in ("real", "integer", "pattern"):
            raise ValueError(f"{path}: unsupported field type {field_!r}")
        if symmetry not in ("general", "symmetric"):
            raise ValueError(f"{path}: unsupported symmetry {symmetry!r}")
        line = fh.readline()
        while line.startswith("%") or not line.strip():
            line = fh.readline()
        nrows, ncols, nnz = (int(t) for t in line.split())
        ncol_data = 2 if field_ == "pattern" else 3
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, ncol_data))
    if data.shape[0] != nnz:
        raise ValueError(f"{path}: expected {nnz} entries, found {data.shape[0]}")
    r = data[:, 0].astype(np.int64) - 1
    c = data[:, 1].astype(np.int64) - 1
    v = np.ones(nnz) if field_ == "pattern" else data[:, 2]
    if symmetry == "symmetric":
        off = r != c
        r, c, v = (np.concatenate([r, c[off]]), np.concatenate([c, r[off]]),
                   np.concatenate([v, v[off]]))
    return CsrMatrix.from_coo(r, c, v, (nrows, ncols))


def write_mtx(path, A: CsrMatrix, symmetric: bool = False) -> None:
    """Write ``A`` in coordinate real format. With ``symmetric`` only the lower
    triangle is written; the caller is responsible for A actually being symmetric."""
    rows = A._row_ids
    cols = A.col_idx.astype(np.int64)
    vals = A.values
    if symmetric:
        keep = cols <= rows
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    kind = "symmetric" if symmetric else "general"
    with Path(path).open("w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {kind}\n")
        fh.write(f"{A.nrows} {A.ncols} {rows.size}\n")
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r + 1} {c + 1} {float(v)!r}\n")
