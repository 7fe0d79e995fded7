import math

import numpy as np
import pytest

from lossyckpt.checkpoint import DirectoryStore
from lossyckpt.codec import CodecSpec
from lossyckpt.harness import (CSV_FIELDS, CostModel, FailureSchedule, NonConvergenceError,
                               Scheme, baseline_iterations, calibrate, compare_schemes,
                               make_scheme, probe_restart_delay, run_experiment, run_seeds,
                               sample_failures)
from lossyckpt.perfmodel import breakeven_extra_iters, stationary_extra_bound
from lossyckpt.solvers import SolverConfig, estimate_spectral_radius, make_solver, solve

LAM = 1.0 / 3600.0
NO_FAILURES = FailureSchedule(0, 0.0, math.inf)


# -- failure schedules ---------------------------------------------------------

def test_zero_rate_is_empty():
    s = sample_failures(3, 0.0, 1e9)
    assert s.failure_times == () and len(s) == 0


def test_schedule_is_deterministic_and_sorted():
    a = sample_failures(42, LAM, 1e6)
    assert a == sample_failures(42, LAM, 1e6)
    assert a != sample_failures(43, LAM, 1e6)
    t = np.array(a.failure_times)
    assert np.all(np.diff(t) > 0) and t[-1] <= 1e6


def test_schedule_prefix_property():
    long = sample_failures(5, LAM, 1e6).failure_times
    short = sample_failures(5, LAM, 1e5).failure_times
    assert long[:len(short)] == short


def test_pooled_mean_gap():
    gaps = np.concatenate([np.diff((0.0,) + sample_failures(s, LAM, 100 * 3600).failure_times)
                           for s in range(64)])
    assert abs(gaps.mean() - 3600) <= 0.05 * 3600


def test_schedule_rejects_negative():
    with pytest.raises(ValueError):
        sample_failures(0, -1.0, 10)


# -- cost model and schemes ---------------------------------------------------------

def test_scaled_cost_model():
    cost = CostModel.scaled(1000, 50)
    assert cost.T_it == 7200 / 50
    assert cost.checkpoint_time(8000, 8000, False) == pytest.approx(120.0)
    assert cost.checkpoint_time(800, 8000, True) == pytest.approx(12.0 + 0.5)
    assert cost.recovery_time(800, 8000, True) == pytest.approx(12.0 + 0.2)
    with pytest.raises(ValueError):
        CostModel(T_it=0, bandwidth=1)


def test_make_scheme():
    assert make_scheme("traditional", "cg").keep_direction
    lossy_cg = make_scheme("lossy", "cg")
    assert lossy_cg.method == "restarted_cg" and not lossy_cg.keep_direction
    assert lossy_cg.eb == 1e-4
    assert make_scheme("lossy", "gmres").adaptive
    assert not make_scheme("lossy", "gmres", eb=1e-3).adaptive
    with pytest.raises(ValueError):
        make_scheme("partial", "cg")


# -- single experiments ------------------------------------------------------------

@pytest.fixture(scope="module")
def gmres_setup():
    from lossyckpt.sparse import poisson3d
    A = poisson3d(10)
    b = A.matvec(np.ones(A.nrows))
    cfg = SolverConfig("gmres")
    base = baseline_iterations(A, b, cfg)
    return A, b, cfg, base, CostModel.scaled(A.nrows, base)


def test_no_failures_identity_costs_only_checkpoints(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    rep = run_experiment(A, b, cfg, make_scheme("traditional", "gmres"), 3, cost, NO_FAILURES, base)
    assert rep.converged and rep.extra_iterations == 0 and rep.failures == 0
    assert rep.overhead == pytest.approx(rep.checkpoint_time, rel=1e-12)
    assert rep.checkpoints == (base - 1) // 3
    assert rep.recovery_time == rep.rollback_time == 0.0


def test_no_failure_overhead_follows_checkpoint_cost(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    over = {name: run_experiment(A, b, cfg, make_scheme(name, "gmres"), 3, cost, NO_FAILURES,
                                 base).overhead
            for name in ("traditional", "lossless", "lossy")}
    assert over["lossy"] <= over["lossless"] <= over["traditional"]


@pytest.mark.parametrize("name", ["traditional", "lossless", "lossy"])
def test_accounting_identity_and_determinism(gmres_setup, name):
    A, b, cfg, base, cost = gmres_setup
    scheme = make_scheme(name, "gmres")
    for seed in range(6):
        schedule = sample_failures(seed, LAM, 30 * base * cost.T_it)
        rep = run_experiment(A, b, cfg, scheme, 2, cost, schedule, base)
        assert rep.accounting_gap() <= 1e-6
        assert rep == run_experiment(A, b, cfg, scheme, 2, cost, schedule, base)


def test_rollback_bound(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    for name in ("traditional", "lossy"):
        scheme = make_scheme(name, "gmres")
        for seed in range(8):
            rep = run_experiment(A, b, cfg, scheme, 3, cost,
                                 sample_failures(seed, 3 * LAM, 40 * base * cost.T_it), base)
            worst_ckpt = max(rep.mean_checkpoint_seconds * 2, cost.checkpoint_time(
                8 * A.nrows, 8 * A.nrows, True))
            assert rep.rollback_time <= rep.failures * (3 * cost.T_it + worst_ckpt) + 1e-9


def test_traditional_failures_add_no_extra_iterations(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    # GMRES restarts from x, so even exact recovery may change the count; CG retraces exactly
    from lossyckpt.sparse import poisson3d
    A = poisson3d(8)
    b = A.matvec(np.ones(A.nrows))
    cfg = SolverConfig("cg")
    base = baseline_iterations(A, b, cfg)
    cost = CostModel.scaled(A.nrows, base)
    for seed in range(5):
        rep = run_experiment(A, b, cfg, make_scheme("traditional", "cg"), 5, cost,
                             sample_failures(seed, LAM, 40 * base * cost.T_it), base)
        assert rep.converged and rep.extra_iterations == 0


def test_failure_during_checkpoint_is_not_committed(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    scheme = make_scheme("traditional", "gmres")
    T_ckp = run_experiment(A, b, cfg, scheme, 2, cost, NO_FAILURES, base).mean_checkpoint_seconds
    # the first checkpoint starts after two iterations; fail halfway through it
    at = 2 * cost.T_it + T_ckp / 2
    rep = run_experiment(A, b, cfg, scheme, 2, cost, FailureSchedule(0, LAM, math.inf, (at,)), base)
    assert rep.failures == 1 and rep.recoveries == 1
    assert rep.lost_iterations == 2
    # nothing was committed, so recovery restarts from scratch at no cost
    assert rep.recovery_time == 0.0
    # image sizes differ by a few manifest digits, hence the loose tolerance
    assert rep.checkpoint_time == pytest.approx(T_ckp / 2 + rep.checkpoints * T_ckp, rel=1e-4)
    assert rep.accounting_gap() <= 1e-12


def test_failure_during_recovery_restarts_recovery(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    scheme = make_scheme("traditional", "gmres")
    clean = run_experiment(A, b, cfg, scheme, 4, cost, NO_FAILURES, base)
    T_ckp = clean.mean_checkpoint_seconds
    T_rc = cost.recovery_time(clean.mean_checkpoint_bytes, 8 * A.nrows, False)
    first = 4 * cost.T_it + T_ckp + cost.T_it / 2
    second = first + T_rc / 2
    rep = run_experiment(A, b, cfg, scheme, 4, cost,
                         FailureSchedule(0, LAM, math.inf, (first, second)), base)
    assert rep.failures == 2 and rep.recoveries == 1
    assert rep.recovery_time == pytest.approx(T_rc / 2 + T_rc, rel=1e-4)
    assert rep.mean_recovery_seconds == pytest.approx(T_rc, rel=1e-4)
    assert rep.accounting_gap() <= 1e-12


def test_failure_before_any_checkpoint_restarts_from_scratch(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    rep = run_experiment(A, b, cfg, make_scheme("lossy", "gmres"), 5, cost,
                         FailureSchedule(0, LAM, math.inf, (2.5 * cost.T_it,)), base)
    assert rep.converged and rep.lost_iterations == 2 and rep.extra_iterations == 0


def test_horizon_stops_the_run(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    rep = run_experiment(A, b, cfg, make_scheme("traditional", "gmres"), 1, cost,
                         FailureSchedule(0, 0.0, 3 * cost.T_it), base)
    assert not rep.converged


def test_directory_store_backend(gmres_setup, tmp_path):
    A, b, cfg, base, cost = gmres_setup
    sched = sample_failures(1, 4 * LAM, 30 * base * cost.T_it)
    mem = run_experiment(A, b, cfg, make_scheme("lossy", "gmres"), 3, cost, sched, base)
    disk = run_experiment(A, b, cfg, make_scheme("lossy", "gmres"), 3, cost, sched, base,
                          store=DirectoryStore(tmp_path))
    assert mem == disk


def test_interval_must_be_positive(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    with pytest.raises(ValueError):
        run_experiment(A, b, cfg, make_scheme("lossy", "gmres"), 0, cost, NO_FAILURES, base)


def test_run_seeds_threads_match_sequential(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    scheme = make_scheme("lossless", "gmres")
    horizon = 30 * base * cost.T_it
    seq = run_seeds(A, b, cfg, scheme, 2, cost, LAM, horizon, range(6), base, workers=1)
    par = run_seeds(A, b, cfg, scheme, 2, cost, LAM, horizon, range(6), base, workers=3)
    assert seq == par and [r.seed for r in par] == list(range(6))


def test_report_row_has_every_field(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    rep = run_experiment(A, b, cfg, make_scheme("lossy", "gmres"), 3, cost, NO_FAILURES, base)
    assert list(rep.as_row()) == CSV_FIELDS


def test_calibrate_orders_checkpoint_costs(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    T = {name: calibrate(A, b, cfg, make_scheme(name, "gmres"), cost, base)[0]
         for name in ("traditional", "lossless", "lossy")}
    assert T["lossy"] < T["lossless"] < T["traditional"]
    # one raw vector costs 120 s; manifest and frame headers add a little
    assert 120.0 < T["traditional"] < 125.0


# -- Jacobi under failures ---------------------------------------------------------

@pytest.fixture(scope="module")
def jacobi_setup():
    from lossyckpt.sparse import poisson3d
    A = poisson3d(16)
    b = A.matvec(np.ones(A.nrows))
    cfg = SolverConfig("jacobi")
    out = solve(A, b, cfg)
    R = estimate_spectral_radius(out.residual_history)
    return A, b, cfg, out.iterations, CostModel.scaled(A.nrows, out.iterations), R


def test_jacobi_single_failure_within_pointwise_bound(jacobi_setup):
    A, b, cfg, base, cost, R = jacobi_setup
    scheme = make_scheme("lossy", "jacobi", eb=1e-4)
    interval = 20
    rng = np.random.default_rng(0)
    for _ in range(8):
        k = int(rng.integers(1, base // interval))
        t = k * interval  # iteration of the image that gets restored
        ckpt_secs = run_experiment(A, b, cfg, scheme, interval, cost, NO_FAILURES,
                                   base).mean_checkpoint_seconds
        at = t * cost.T_it + k * ckpt_secs + cost.T_it / 2
        rep = run_experiment(A, b, cfg, scheme, interval, cost,
                             FailureSchedule(0, LAM, math.inf, (at,)), base)
        assert rep.recoveries == 1
        assert rep.extra_iterations <= math.ceil(stationary_extra_bound(R, 1e-4, t))


@pytest.mark.xfail(strict=True, reason="rough quantization error excites the slow checkerboard "
                                       "mode; see decisions ledger, criterion 5")
def test_jacobi_lossy_recovery_adds_no_iterations(jacobi_setup):
    A, b, cfg, base, cost, R = jacobi_setup
    scheme = make_scheme("lossy", "jacobi", eb=1e-4)
    for seed in range(6):
        rep = run_experiment(A, b, cfg, scheme, 20, cost,
                             sample_failures(seed, LAM, 20 * base * cost.T_it), base)
        assert rep.extra_iterations == 0


# -- scheme comparison ------------------------------------------------------------

@pytest.fixture(scope="module")
def comparison(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    return compare_schemes(A, b, cfg, cost, LAM, range(12), workers=2)


def test_comparison_structure(comparison):
    d = comparison.as_dict()
    assert set(d["schemes"]) == {"traditional", "lossless", "lossy"}
    assert set(d["paired_differences"]) == {"traditional-lossless", "traditional-lossy",
                                            "lossless-lossy"}
    assert len(list(comparison.rows())) == 36
    for s in comparison.summaries.values():
        assert s.converged_runs == 12
        assert s.predicted_overhead > 0


def test_lossy_beats_traditional(comparison):
    s = comparison.summaries
    assert s["lossy"].mean_overhead < s["traditional"].mean_overhead


def test_breakeven_consistency_in_simulation(comparison):
    s = comparison.summaries
    lam, T_it = comparison.lam, comparison.T_it
    for other in ("traditional", "lossless"):
        bound = breakeven_extra_iters(lam, s[other].T_ckp, s["lossy"].T_ckp, T_it)
        if s["lossy"].N_prime <= bound:
            assert (s["lossy"].mean_overhead
                    <= s[other].mean_overhead + 2 * s["lossy"].se_overhead)


def test_pinned_intervals(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    c = compare_schemes(A, b, cfg, cost, LAM, range(2), schemes=("lossy",),
                        intervals={"lossy": 3})
    assert c.summaries["lossy"].interval == 3


def test_compare_requires_failures(gmres_setup):
    A, b, cfg, base, cost = gmres_setup
    with pytest.raises(ValueError):
        compare_schemes(A, b, cfg, cost, 0.0, range(2))


# -- restart-delay probe ------------------------------------------------------------

def test_probe_identity_codec(poisson8):
    A, b = poisson8
    res = probe_restart_delay(A, b, SolverConfig("jacobi"), 0.0, 10, seed=1)
    assert np.all(res.extras == 0)
    for method in ("restarted_cg", "gmres"):
        res = probe_restart_delay(A, b, SolverConfig(method), 0.0, 10, seed=1)
        assert all(t.extra_vs_exact_restart == 0 for t in res.trials)


def test_probe_is_deterministic(poisson8):
    A, b = poisson8
    a = probe_restart_delay(A, b, SolverConfig("cg"), 1e-4, 5, seed=3)
    c = probe_restart_delay(A, b, SolverConfig("cg"), 1e-4, 5, seed=3)
    assert a.as_dict() == c.as_dict()
    assert all(1 <= t.t < a.baseline_iterations for t in a.trials)


def test_probe_adaptive_eb_follows_residual(poisson8):
    A, b = poisson8
    res = probe_restart_delay(A, b, SolverConfig("gmres"), None, 8, seed=0)
    for t in res.trials:
        assert t.eb == pytest.approx(min(0.1, max(1e-12, t.residual_before / t.b_norm)))


@pytest.mark.xfail(strict=True, reason="a GMRES restart alone costs several iterations at this "
                                       "size; see decisions ledger")
def test_probe_gmres_adaptive_does_not_delay():
    from lossyckpt.sparse import poisson3d
    A = poisson3d(12)
    b = A.matvec(np.ones(A.nrows))
    res = probe_restart_delay(A, b, SolverConfig("gmres"), None, 20, seed=0)
    assert res.mean_extra <= 0.02 * res.baseline_iterations


def test_probe_errors(poisson8):
    A, b = poisson8
    with pytest.raises(ValueError):
        probe_restart_delay(A, b, SolverConfig("cg"), 1e-4, 0, seed=0)
    with pytest.raises(NonConvergenceError):
        probe_restart_delay(A, b, SolverConfig("jacobi", max_iters=3), 1e-4, 2, seed=0)
    with pytest.raises(NonConvergenceError):
        baseline_iterations(A, b, SolverConfig("jacobi", max_iters=3))
