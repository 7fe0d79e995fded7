"""Solver configuration, state containers and the shared iteration driver."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, EstimationError
from ..sparse import CsrMatrix
from .precond import Identity, make_preconditioner

METHODS = ("jacobi", "cg", "restarted_cg", "gmres")
PRECONDITIONERS = ("none", "jacobi", "ilu0")

# relative tolerances used for the 3D Poisson runs in the original study
DEFAULT_RTOL = {"jacobi": 1e-4, "gmres": 7e-5, "cg": 1e-7, "restarted_cg": 1e-7}
DEFAULT_GMRES_RESTART = 30


@dataclass(frozen=True)
class SolverConfig:
    """What to run and when to stop.

    ``restart`` is the GMRES cycle length (default 30) or, for
    ``restarted_cg``, the period of forced restarts (``None``: restart only
    when a checkpoint is restored).
    """

    method: str = "cg"
    rtol: float | None = None
    max_iters: int = 10_000
    preconditioner: str = "none"
    restart: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.rtol is None:
            object.__setattr__(self, "rtol", DEFAULT_RTOL[self.method])
        if not 0.0 < self.rtol < 1.0:
            raise ValueError("rtol must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.method == "jacobi" and self.preconditioner != "none":
            raise ValueError("the Jacobi iteration takes no preconditioner")
        if self.method == "gmres" and self.restart is None:
            object.__setattr__(self, "restart", DEFAULT_GMRES_RESTART)
        if self.restart is not None and self.restart < 1:
            raise ValueError("restart must be >= 1")


@dataclass
class SolverState:
    """Snapshot of a solver between iterations.

    ``aux`` carries method-specific dynamic variables that a lossless
    checkpoint must keep (``rho`` and ``p`` for classic CG); it is empty for
    restarted methods, which rebuild everything from ``x``.
    """

    iteration: int
    x: np.ndarray
    aux: dict = field(default_factory=dict)
    residual_history: list = field(default_factory=list)


@dataclass
class SolveOutcome:
    converged: bool
    iterations: int
    final_relative_residual: float
    x: np.ndarray
    residual_history: list


class SolverHooks:
    """Callbacks fired by :func:`solve` after every iteration.

    ``on_restore`` is polled after each iteration; returning a
    :class:`SolverState` makes the solver roll back to it.
    """

    def on_iteration(self, i, state):
        pass

    def checkpoint_due(self, i):
        return False

    def on_checkpoint(self, i, state):
        pass

    def on_restore(self, state):
        return None


class IterativeSolver:
    """Base stepper. Subclasses implement ``restart``, ``step`` and ``current_x``."""

    method = ""

    def __init__(self, A: CsrMatrix, b, config: SolverConfig):
        b = np.asarray(b, dtype=np.float64)
        if A.nrows != A.ncols:
            raise DimensionError("matrix must be square")
        if b.shape != (A.nrows,):
            raise DimensionError(f"rhs has shape {b.shape}, matrix is {A.shape}")
        self.A = A
        self.b = b
        self.config = config
        self.M = make_preconditioner(config.preconditioner, A)
        self.iteration = 0
        self.history: list[float] = []
        # x0 = 0, so the reference residual is M^-1 b
        self.ref_norm = self.pnorm(b)

    # -- helpers ---------------------------------------------------------
    def pnorm(self, r):
        """Norm used for the convergence test: ||M^-1 r||, or ||r|| unpreconditioned."""
        if isinstance(self.M, Identity):
            return float(np.sqrt(np.dot(r, r)))
        z = self.M.apply(r)
        return float(np.sqrt(np.dot(z, z)))

    def true_residual(self, x=None):
        return self.b - self.A.matvec(self.current_x() if x is None else x)

    def _relative(self, value):
        return value / self.ref_norm if self.ref_norm > 0 else 0.0

    def _reset_history(self, iteration, norm):
        self.iteration = iteration
        del self.history[iteration:]
        while len(self.history) < iteration:
            # restored without history (fresh process): pad with NaN
            self.history.append(float("nan"))
        self.history.append(norm)

    # -- interface -------------------------------------------------------
    def start(self, x0=None):
        x = np.zeros(self.A.nrows) if x0 is None else np.array(x0, dtype=np.float64)
        self.history.clear()
        self.restart(x, 0)
        return self

    def restart(self, x, iteration):
        raise NotImplementedError

    def step(self):
        raise NotImplementedError

    def current_x(self):
        raise NotImplementedError

    @property
    def relative_residual(self):
        return self._relative(self.history[-1])

    @property
    def converged(self):
        return self.relative_residual <= self.config.rtol

    @property
    def aux(self):
        return {}

    @property
    def state(self) -> SolverState:
        return SolverState(self.iteration, self.current_x().copy(), self.aux,
                           list(self.history))

    def load_state(self, state: SolverState):
        """Resume from a (possibly restored) state; default is a restart from x."""
        self.restart(np.array(state.x, dtype=np.float64), state.iteration)


def solve(A, b, config: SolverConfig, hooks: SolverHooks | None = None, x0=None,
          solver: IterativeSolver | None = None) -> SolveOutcome:
    """Run ``config.method`` from ``x0`` (zero by default) to convergence."""
    from . import make_solver

    if solver is None:
        solver = make_solver(A, b, config)
        solver.start(x0)
    while not solver.converged and solver.iteration < config.max_iters:
        solver.step()
        if hooks is None:
            continue
        i = solver.iteration
        state = solver.state
        hooks.on_iteration(i, state)
        if hooks.checkpoint_due(i):
            hooks.on_checkpoint(i, state)
        restored = hooks.on_restore(state)
        if restored is not None:
            solver.load_state(restored)
    return SolveOutcome(solver.converged, solver.iteration, solver.relative_residual,
                        solver.current_x().copy(), list(solver.history))


def estimate_spectral_radius(residual_history) -> float:
    """Geometric-mean contraction factor (||r_N|| / ||r_0||) ** (1 / N)."""
    h = np.asarray(residual_history, dtype=np.float64)
    if h.size < 2:
        raise EstimationError("need at least two residual norms")
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise EstimationError("residual norms must be positive and finite")
    n = h.size - 1
    R = (h[-1] / h[0]) ** (1.0 / n)
    if R >= 1.0:
        raise EstimationError(f"history does not converge (R = {R:.6g})")
    return float(max(R, np.finfo(float).tiny))
