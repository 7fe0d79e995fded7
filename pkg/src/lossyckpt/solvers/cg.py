import numpy as np

from ..errors import BreakdownError
from .base import IterativeSolver
from .precond import Identity


class CG(IterativeSolver):
    """Preconditioned conjugate gradient.

    Dynamic state is {i, rho, p, x}; r is recomputed from x on restore.
    """

    method = "cg"

    def _norm(self):
        if self.z is self.r:
            return float(np.sqrt(np.dot(self.r, self.r)))
        return float(np.sqrt(np.dot(self.z, self.z)))

    def _precondition(self, r):
        return r if isinstance(self.M, Identity) else self.M.apply(r)

    def restart(self, x, iteration):
        self.x = np.array(x, dtype=np.float64)
        self.r = self.b - self.A.matvec(self.x)
        self.z = self._precondition(self.r)
        self.p = self.z.copy()
        self.rho = float(np.dot(self.r, self.z))
        self._reset_history(iteration, self._norm())

    def step(self):
        q = self.A.matvec(self.p)
        pq = float(np.dot(self.p, q))
        if not pq > 0.0:
            raise BreakdownError(f"p^T A p = {pq:.3e} at iteration {self.iteration}; "
                                 "matrix is not SPD")
        alpha = self.rho / pq
        self.x = self.x + alpha * self.p
        self.r = self.r - alpha * q
        self.z = self._precondition(self.r)
        rho_new = float(np.dot(self.r, self.z))
        beta = rho_new / self.rho
        self.p = self.z + beta * self.p
        self.rho = rho_new
        self.iteration += 1
        self.history.append(self._norm())
        self._after_step()

    def _after_step(self):
        pass

    def current_x(self):
        return self.x

    @property
    def aux(self):
        return {"rho": self.rho, "p": self.p.copy()}

    def load_state(self, state):
        if "p" not in state.aux:
            return super().load_state(state)
        self.x = np.array(state.x, dtype=np.float64)
        self.p = np.array(state.aux["p"], dtype=np.float64)
        self.rho = float(state.aux["rho"])
        self.r = self.b - self.A.matvec(self.x)
        self.z = self._precondition(self.r)
        self._reset_history(state.iteration, self._norm())


class RestartedCG(CG):
    """CG whose only dynamic variable is x: every restart rebuilds r, z, p and rho."""

    method = "restarted_cg"

    def _after_step(self):
        period = self.config.restart
        if period and self.iteration % period == 0:
            self.restart(self.x, self.iteration)

    @property
    def aux(self):
        return {}
