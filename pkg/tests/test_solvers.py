import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from lossyckpt.codec import CodecSpec, compress, decompress
from lossyckpt.errors import BreakdownError, DimensionError, EstimationError, ZeroPivotError
from lossyckpt.solvers import (SolverConfig, SolverHooks, SolverState, estimate_spectral_radius,
                               ilu0, jacobi_step, make_solver, restart_from, solve)
from lossyckpt.sparse import CsrMatrix, poisson3d

A2 = CsrMatrix.from_dense([[4.0, 1.0], [1.0, 4.0]])


# -- configuration ----------------------------------------------------------

def test_config_defaults():
    assert SolverConfig("jacobi").rtol == 1e-4
    assert SolverConfig("gmres").rtol == 7e-5 and SolverConfig("gmres").restart == 30
    assert SolverConfig("cg").rtol == 1e-7


@pytest.mark.parametrize("kwargs", [dict(method="bicg"), dict(rtol=1.0), dict(rtol=0.0),
                                    dict(max_iters=0), dict(preconditioner="amg"),
                                    dict(method="gmres", restart=0),
                                    dict(method="jacobi", preconditioner="ilu0")])
def test_config_rejects(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


# -- Jacobi -----------------------------------------------------------------

def test_jacobi_step_examples():
    np.testing.assert_array_equal(jacobi_step(A2, [5, 5], [0, 0]), [1.25, 1.25])
    np.testing.assert_array_equal(jacobi_step(A2, [5, 5], [1, 1]), [1, 1])
    np.testing.assert_array_equal(jacobi_step(poisson3d(2), 3 * np.ones(8), np.zeros(8)),
                                  0.5 * np.ones(8))


def test_jacobi_step_zero_diagonal():
    with pytest.raises(ZeroPivotError):
        jacobi_step(CsrMatrix.from_dense([[0.0, 1.0], [1.0, 2.0]]), [1, 1], [0, 0])


def test_jacobi_matches_dense_iteration_matrix(poisson8):
    A, b = poisson8
    d = A.to_dense()
    G = np.eye(A.nrows) - d / np.diag(d)[:, None]
    c = b / np.diag(d)
    x = np.zeros(A.nrows)
    s = make_solver(A, b, SolverConfig("jacobi")).start()
    for _ in range(5):
        x = G @ x + c
        s.step()
    np.testing.assert_allclose(s.current_x(), x, rtol=1e-12)


def test_jacobi_iteration_count_from_spectral_radius(poisson8):
    A, b = poisson8
    out = solve(A, b, SolverConfig("jacobi", rtol=1e-4))
    assert out.converged
    R = estimate_spectral_radius(out.residual_history)
    predicted = math.ceil(math.log(1e-4) / math.log(R))
    assert abs(out.iterations - predicted) <= 2


def test_jacobi_spectral_radius_matches_analytic(poisson8):
    A, b = poisson8
    out = solve(A, b, SolverConfig("jacobi", rtol=1e-4))
    assert abs(estimate_spectral_radius(out.residual_history) - math.cos(math.pi / 9)) <= 0.02


@pytest.mark.parametrize("n", [4, 8])
def test_jacobi_error_decay(n):
    A = poisson3d(n)
    xs = np.ones(A.nrows)
    b = A.matvec(xs)
    s = make_solver(A, b, SolverConfig("jacobi")).start()
    errs = [np.linalg.norm(s.current_x() - xs)]
    while not s.converged:
        s.step()
        errs.append(np.linalg.norm(s.current_x() - xs))
    R = estimate_spectral_radius(s.history)
    i = np.arange(len(errs))
    assert np.all(np.array(errs) <= (R + 0.02) ** i * np.linalg.norm(xs) * (1 + 1e-12))


# -- CG ---------------------------------------------------------------------

@pytest.mark.parametrize("method", ["cg", "restarted_cg"])
def test_cg_two_by_two(method):
    out = solve(A2, [5.0, 5.0], SolverConfig(method))
    assert out.converged and out.iterations <= 2
    np.testing.assert_allclose(out.x, [1, 1], atol=1e-12)


@settings(max_examples=40)
@given(st.integers(1, 20), st.integers(0, 2 ** 32 - 1))
def test_cg_finite_termination_on_random_spd(k, seed):
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.standard_normal((k, k)))[0]
    d = Q @ np.diag(rng.uniform(1.0, 10.0, k)) @ Q.T
    A = CsrMatrix.from_dense((d + d.T) / 2)
    b = rng.standard_normal(k)
    out = solve(A, b, SolverConfig("cg", rtol=1e-10, max_iters=k + 2))
    assert out.converged
    np.testing.assert_allclose(out.x, scipy.linalg.solve(A.to_dense(), b, assume_a="pos"),
                               rtol=1e-6, atol=1e-8)


def test_cg_breakdown_on_indefinite():
    A = CsrMatrix.from_dense([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(BreakdownError):
        solve(A, [1.0, 1.0], SolverConfig("cg"))


@pytest.mark.parametrize("pc", ["none", "jacobi", "ilu0"])
@pytest.mark.parametrize("method", ["cg", "restarted_cg", "gmres"])
def test_krylov_solves_poisson(poisson8, method, pc):
    A, b = poisson8
    out = solve(A, b, SolverConfig(method, preconditioner=pc))
    assert out.converged and out.final_relative_residual <= SolverConfig(method).rtol
    np.testing.assert_allclose(out.x, np.ones(A.nrows), atol=1e-2)


def test_ilu_preconditioning_cuts_iterations(poisson8):
    A, b = poisson8
    plain = solve(A, b, SolverConfig("cg")).iterations
    assert solve(A, b, SolverConfig("cg", preconditioner="ilu0")).iterations < plain


def test_preconditioned_convergence_uses_preconditioned_norm(poisson8):
    A, b = poisson8
    s = make_solver(A, b, SolverConfig("cg", preconditioner="jacobi")).start()
    np.testing.assert_allclose(s.history[0], np.linalg.norm(b / 6.0))


# -- GMRES ------------------------------------------------------------------

def test_gmres_poisson4_example():
    A = poisson3d(4)
    b = A.matvec(np.ones(A.nrows))
    out = solve(A, b, SolverConfig("gmres", rtol=7e-5))
    assert out.converged
    assert np.linalg.norm(b - A.matvec(out.x)) / np.linalg.norm(b) <= 7e-5 * 1.01
    np.testing.assert_allclose(out.x, 1.0, atol=1e-3)


def test_gmres_monotone_within_cycle(rng):
    A = poisson3d(6)
    b = A.matvec(rng.standard_normal(A.nrows))
    cfg = SolverConfig("gmres", restart=10, rtol=1e-8)
    s = make_solver(A, b, cfg).start()
    while not s.converged:
        start = s.history[-1]
        prev = start
        for _ in range(cfg.restart):
            s.step()
            assert s.history[-1] <= prev * (1 + 1e-12)
            prev = s.history[-1]
            if s.converged:
                break


def test_gmres_estimate_matches_true_residual(rng):
    A = poisson3d(5)
    b = A.matvec(rng.standard_normal(A.nrows))
    s = make_solver(A, b, SolverConfig("gmres", restart=8)).start()
    for _ in range(6):
        s.step()
        true = np.linalg.norm(b - A.matvec(s.current_x()))
        assert abs(s.history[-1] - true) <= 1e-8 * np.linalg.norm(b)


def test_gmres_lucky_breakdown_on_identity():
    I = CsrMatrix.from_dense(np.eye(5))
    out = solve(I, np.arange(1.0, 6.0), SolverConfig("gmres"))
    assert out.converged and out.iterations == 1
    np.testing.assert_allclose(out.x, np.arange(1.0, 6.0))


def test_gmres_nonsymmetric(rng):
    d = rng.standard_normal((30, 30)) * (rng.random((30, 30)) < 0.2) + 8 * np.eye(30)
    A = CsrMatrix.from_dense(d)
    b = rng.standard_normal(30)
    out = solve(A, b, SolverConfig("gmres", restart=5, rtol=1e-10, preconditioner="ilu0"))
    assert out.converged
    np.testing.assert_allclose(out.x, np.linalg.solve(d, b), atol=1e-8)


# -- driver and hooks ------------------------------------------------------

def test_solve_dimension_checks():
    with pytest.raises(DimensionError):
        solve(poisson3d(2), np.ones(7), SolverConfig("cg"))
    with pytest.raises(DimensionError):
        solve(CsrMatrix.from_dense(np.ones((2, 3))), np.ones(2), SolverConfig("cg"))


def test_zero_rhs_converges_immediately():
    out = solve(poisson3d(2), np.zeros(8), SolverConfig("gmres"))
    assert out.converged and out.iterations == 0


def test_solve_reports_nonconvergence(poisson8):
    A, b = poisson8
    out = solve(A, b, SolverConfig("jacobi", max_iters=5))
    assert not out.converged and out.iterations == 5


@pytest.mark.parametrize("method", ["jacobi", "cg", "gmres"])
def test_solve_is_deterministic(poisson8, method):
    A, b = poisson8
    a = solve(A, b, SolverConfig(method))
    c = solve(A, b, SolverConfig(method))
    assert np.array_equal(a.residual_history, c.residual_history)
    assert a.x.tobytes() == c.x.tobytes()


def test_history_length_tracks_iteration(poisson8):
    A, b = poisson8
    s = make_solver(A, b, SolverConfig("cg")).start()
    for _ in range(7):
        s.step()
        assert len(s.state.residual_history) == s.iteration + 1


class Recorder(SolverHooks):
    def __init__(self, every, rollback_at=None):
        self.every = every
        self.rollback_at = rollback_at
        self.iterations = []
        self.saved = None
        self.rolled = False

    def on_iteration(self, i, state):
        self.iterations.append(i)

    def checkpoint_due(self, i):
        return i % self.every == 0

    def on_checkpoint(self, i, state):
        self.saved = state

    def on_restore(self, state):
        if not self.rolled and state.iteration == self.rollback_at:
            self.rolled = True
            return self.saved
        return None


def test_hooks_fire_and_rollback_resumes(poisson8):
    A, b = poisson8
    plain = solve(A, b, SolverConfig("cg"))
    hooks = Recorder(every=5, rollback_at=12)
    out = solve(A, b, SolverConfig("cg"), hooks)
    assert out.converged
    assert hooks.iterations[:12] == list(range(1, 13))
    assert hooks.iterations[12] == 11  # resumed from the checkpoint at 10
    # classic CG restored with rho and p retraces the original run exactly
    assert out.iterations == plain.iterations
    np.testing.assert_allclose(out.x, plain.x, rtol=1e-12)


# -- restart_from -------------------------------------------------------------

@pytest.mark.parametrize("method", ["jacobi", "cg", "restarted_cg", "gmres"])
def test_restart_from_exact_solution_converges_immediately(method):
    A = poisson3d(4)
    b = A.matvec(np.ones(A.nrows))
    s = restart_from(SolverState(3, np.ones(A.nrows)), A, b, SolverConfig(method))
    assert s.iteration == 3 and s.converged
    assert s.history[-1] == 0.0


def test_restart_from_dimension_error():
    A = poisson3d(2)
    with pytest.raises(DimensionError):
        restart_from(SolverState(0, np.ones(3)), A, np.ones(8), SolverConfig("cg"))


@pytest.mark.parametrize("method", ["restarted_cg", "gmres", "jacobi"])
def test_restart_with_unperturbed_x_still_converges(poisson8, method):
    A, b = poisson8
    cfg = SolverConfig(method)
    s = make_solver(A, b, cfg).start()
    for _ in range(9):
        s.step()
    r = restart_from(s.state, A, b, cfg)
    while not r.converged and r.iteration < 2000:
        r.step()
    assert r.converged
    assert len(r.history) == r.iteration + 1


def test_restart_keeps_history_prefix(poisson8):
    A, b = poisson8
    s = make_solver(A, b, SolverConfig("cg")).start()
    for _ in range(6):
        s.step()
    r = restart_from(s.state, A, b, SolverConfig("restarted_cg"))
    assert r.history[:6] == s.history[:6]


def test_perturbed_restart_residual_chain(poisson8, rng):
    A, b = poisson8
    s = make_solver(A, b, SolverConfig("cg")).start()
    for _ in range(8):
        s.step()
    x = s.current_x()
    r_norm = np.linalg.norm(b - A.matvec(x))
    # perturbation in the direction of x keeps ||Ae|| <= eb ||Ax||
    for eb in (1e-2, 1e-4):
        xp = x * (1 + eb * rng.uniform(-1, 1))
        r2 = restart_from(SolverState(8, xp), A, b, SolverConfig("restarted_cg"))
        assert np.linalg.norm(r2.true_residual()) <= (1 + eb) * r_norm + eb * np.linalg.norm(b)


@pytest.mark.parametrize("method", ["restarted_cg", "gmres"])
def test_forced_lossless_restarts_still_converge(poisson8, method):
    A, b = poisson8
    cfg = SolverConfig(method)
    s = make_solver(A, b, cfg).start()
    while not s.converged and s.iteration < 3000:
        s.step()
        if s.iteration % 7 == 0:
            x = decompress(compress(s.current_x(), CodecSpec.lossless()))
            s = restart_from(SolverState(s.iteration, x, {}, s.history), A, b, cfg)
    assert s.converged


def test_restarted_cg_periodic_restart(poisson8):
    A, b = poisson8
    out = solve(A, b, SolverConfig("restarted_cg", restart=10))
    assert out.converged


# -- spectral radius ---------------------------------------------------------

def test_spectral_radius_examples():
    assert estimate_spectral_radius([1, 0.5, 0.25]) == pytest.approx(0.5, rel=1e-15)
    assert estimate_spectral_radius([1, 1e-4]) == pytest.approx(1e-4, rel=1e-15)


@pytest.mark.parametrize("hist", [[1.0], [1.0, 2.0], [1.0, 1.0], [1.0, 0.0], [1.0, np.nan]])
def test_spectral_radius_errors(hist):
    with pytest.raises(EstimationError):
        estimate_spectral_radius(hist)


# -- ILU(0) -----------------------------------------------------------------

def test_ilu0_two_by_two():
    L, U = ilu0(A2)
    np.testing.assert_allclose(L.to_dense(), [[1, 0], [0.25, 1]])
    np.testing.assert_allclose(U.to_dense(), [[4, 1], [0, 3.75]])


def test_ilu0_equals_exact_lu_for_tridiagonal(rng):
    n = 12
    d = np.diag(4 + rng.random(n)) + np.diag(-np.ones(n - 1), 1) + np.diag(-np.ones(n - 1), -1)
    L, U = ilu0(CsrMatrix.from_dense(d))
    P, Lx, Ux = scipy.linalg.lu(d)
    np.testing.assert_array_equal(P, np.eye(n))
    np.testing.assert_allclose(L.to_dense(), Lx, atol=1e-14)
    np.testing.assert_allclose(U.to_dense(), Ux, atol=1e-14)


def test_ilu0_pattern_and_poisson_accuracy():
    A = poisson3d(3)
    L, U = ilu0(A)
    Ld, Ud = L.to_dense(), U.to_dense()
    assert np.all(np.diag(Ld) == 1) and np.allclose(Ld, np.tril(Ld)) and np.allclose(Ud, np.triu(Ud))
    pattern = (Ld - np.eye(A.nrows) + Ud) != 0
    np.testing.assert_array_equal(pattern, A.to_dense() != 0)
    rel = np.linalg.norm(A.to_dense() - Ld @ Ud) / np.linalg.norm(A.to_dense())
    assert rel < 0.2
    assert rel == pytest.approx(0.045256, abs=1e-6)  # dense IKJ oracle gives the same


def test_ilu0_lu_matches_a_on_its_pattern(rng):
    d = rng.standard_normal((25, 25)) * (rng.random((25, 25)) < 0.25) + 6 * np.eye(25)
    A = CsrMatrix.from_dense(d)
    L, U = ilu0(A)
    prod = L.to_dense() @ U.to_dense()
    mask = d != 0
    np.testing.assert_allclose(prod[mask], d[mask], atol=1e-12)


def test_ilu0_zero_pivot():
    with pytest.raises(ZeroPivotError):
        ilu0(CsrMatrix.from_dense([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ZeroPivotError):
        ilu0(CsrMatrix.from_dense([[0.0, 1.0], [1.0, 1.0]]))
