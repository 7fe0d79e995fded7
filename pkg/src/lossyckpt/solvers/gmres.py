import numpy as np

from ..errors import BreakdownError
from .base import IterativeSolver


def _back_substitute(R, g):
    k = g.shape[0]
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - np.dot(R[i, i + 1:k], y[i + 1:k])) / R[i, i]
    return y


class GMRES(IterativeSolver):
    """Left-preconditioned GMRES(m): modified Gram-Schmidt Arnoldi, Givens least squares.

    One call to :meth:`step` is one Arnoldi iteration. A cycle closes when the
    residual estimate meets rtol, after m iterations, or on a lucky breakdown;
    the approximate solution is then formed and a new cycle starts from it.
    Convergence is only declared on the true preconditioned residual of a
    closed cycle. Nothing but x survives a cycle, so x is the only dynamic
    variable.
    """

    method = "gmres"

    def __init__(self, A, b, config):
        super().__init__(A, b, config)
        m = config.restart
        n = A.nrows
        self.m = m
        self.V = np.zeros((m + 1, n))
        self.H = np.zeros((m + 1, m))
        self.cs = np.zeros(m)
        self.sn = np.zeros(m)
        self.g = np.zeros(m + 1)

    def _begin_cycle(self, x0):
        self.x0 = x0
        z = self.M.apply(self.b - self.A.matvec(x0))
        beta = float(np.sqrt(np.dot(z, z)))
        self.j = 0
        self.cycle_residual = beta
        self.g[:] = 0.0
        self.g[0] = beta
        if beta > 0:
            self.V[0] = z / beta
        return beta

    def restart(self, x, iteration):
        beta = self._begin_cycle(np.array(x, dtype=np.float64))
        self._reset_history(iteration, beta)

    @property
    def converged(self):
        return self.j == 0 and self._relative(self.cycle_residual) <= self.config.rtol

    def step(self):
        j = self.j
        V, H = self.V, self.H
        w = self.M.apply(self.A.matvec(V[j]))
        for l in range(j + 1):
            h = float(np.dot(w, V[l]))
            H[l, j] = h
            w -= h * V[l]
        hn = float(np.sqrt(np.dot(w, w)))
        H[j + 1, j] = hn
        for l in range(j):
            a, b_ = H[l, j], H[l + 1, j]
            H[l, j] = self.cs[l] * a + self.sn[l] * b_
            H[l + 1, j] = -self.sn[l] * a + self.cs[l] * b_
        denom = float(np.hypot(H[j, j], hn))
        if denom == 0.0:
            raise BreakdownError(f"singular Hessenberg column at iteration {self.iteration}")
        self.cs[j] = H[j, j] / denom
        self.sn[j] = hn / denom
        H[j, j] = denom
        H[j + 1, j] = 0.0
        self.g[j + 1] = -self.sn[j] * self.g[j]
        self.g[j] = self.cs[j] * self.g[j]

        self.j = j + 1
        self.iteration += 1
        estimate = abs(self.g[j + 1])
        self.history.append(estimate)

        lucky = hn <= 1e-14 * denom
        if not lucky:
            V[j + 1] = w / hn
        if lucky or self.j == self.m or self._relative(estimate) <= self.config.rtol:
            self._begin_cycle(self._form_x())

    def _form_x(self):
        k = self.j
        if k == 0:
            return self.x0.copy()
        y = _back_substitute(self.H[:k, :k], self.g[:k])
        return self.x0 + self.V[:k].T @ y

    def current_x(self):
        return self._form_x() if self.j else self.x0

    @property
    def relative_residual(self):
        if self.j == 0:
            return self._relative(self.cycle_residual)
        return self._relative(self.history[-1])
