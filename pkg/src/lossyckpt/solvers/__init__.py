"""Jacobi, CG (classic and restarted) and GMRES(m) steppers with checkpoint hooks."""
import numpy as np

from .base import (DEFAULT_RTOL, METHODS, IterativeSolver, SolveOutcome, SolverConfig,
                   SolverHooks, SolverState, estimate_spectral_radius, solve)
from .cg import CG, RestartedCG
from .gmres import GMRES
from .jacobi import Jacobi, jacobi_step
from .precond import ILU0, Identity, PointJacobi, ilu0, make_preconditioner

_SOLVERS = {"jacobi": Jacobi, "cg": CG, "restarted_cg": RestartedCG, "gmres": GMRES}


def make_solver(A, b, config: SolverConfig) -> IterativeSolver:
    return _SOLVERS[config.method](A, b, config)


def restart_from(state: SolverState, A, b, config: SolverConfig) -> IterativeSolver:
    """Rebuild every recomputed variable from ``state.x`` alone.

    Returns a solver positioned at ``state.iteration``, ready to ``step()``.
    For CG this is r = b - Ax, z = M^-1 r, p = z, rho = r.z; for GMRES a new
    Arnoldi cycle starts from x.
    """
    x = np.asarray(state.x, dtype=np.float64)
    if x.shape != (A.ncols,):
        from ..errors import DimensionError
        raise DimensionError(f"x has shape {x.shape}, matrix is {A.shape}")
    solver = make_solver(A, b, config)
    solver.history = list(state.residual_history[:state.iteration])
    solver.restart(x, state.iteration)
    return solver


__all__ = [
    "CG", "DEFAULT_RTOL", "GMRES", "ILU0", "Identity", "IterativeSolver", "Jacobi", "METHODS",
    "PointJacobi", "RestartedCG", "SolveOutcome", "SolverConfig", "SolverHooks", "SolverState",
    "estimate_spectral_radius", "ilu0", "jacobi_step", "make_preconditioner", "make_solver",
    "restart_from", "solve",
]
