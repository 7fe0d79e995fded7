import numpy as np

from ..errors import ZeroPivotError
from ..sparse import CsrMatrix
from .base import IterativeSolver


def jacobi_step(A: CsrMatrix, b, x) -> np.ndarray:
    """One Jacobi sweep, D^-1 (b - (A - D) x)."""
    d = A.diagonal()
    if np.any(d == 0):
        raise ZeroPivotError(int(np.flatnonzero(d == 0)[0]))
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return (b - (A.matvec(x) - d * x)) / d


class Jacobi(IterativeSolver):
    """x <- x + D^-1 (b - A x); the residual doubles as the convergence measure."""

    method = "jacobi"

    def __init__(self, A, b, config):
        super().__init__(A, b, config)
        d = A.diagonal()
        if np.any(d == 0):
            raise ZeroPivotError(int(np.flatnonzero(d == 0)[0]))
        self.inv_diag = 1.0 / d

    def restart(self, x, iteration):
        self.x = np.array(x, dtype=np.float64)
        self.r = self.b - self.A.matvec(self.x)
        self._reset_history(iteration, float(np.sqrt(np.dot(self.r, self.r))))

    def step(self):
        self.x = self.x + self.r * self.inv_diag
        self.r = self.b - self.A.matvec(self.x)
        self.iteration += 1
        self.history.append(float(np.sqrt(np.dot(self.r, self.r))))

    def current_x(self):
        return self.x
