"""Failure injection on a virtual clock, scheme comparison and restart-delay probes.

The clock advances by ``T_it`` per iteration and by byte-derived costs per
checkpoint and recovery, so an hour-scale MTTI experiment runs in seconds.
Every advance of the clock is booked to exactly one of: productive work,
extra iterations, checkpointing, recovery or rollback, and the books balance.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .codec import CodecSpec, compress, decompress
from .errors import LossyCkptError
from .perfmodel import (gmres_adaptive_eb, overhead_lossy, overhead_traditional,
                        residual_jump_bound, stationary_extra_bound, young_interval)
from .solvers import (SolverConfig, SolverState, estimate_spectral_radius, make_solver,
                      restart_from)

SCHEMES = ("traditional", "lossless", "lossy")
DEFAULT_LOSSY_EB = 1e-4


class NonConvergenceError(LossyCkptError):
    pass


# -- failures -------------------------------------------------------------

@dataclass(frozen=True)
class FailureSchedule:
    seed: int
    lam: float
    horizon: float
    failure_times: tuple = ()

    def __len__(self):
        return len(self.failure_times)


def sample_failures(seed: int, lam: float, horizon: float) -> FailureSchedule:
    """Failure times with seeded exponential gaps of mean ``1/lam`` up to ``horizon``."""
    if lam < 0 or horizon < 0:
        raise ValueError("lam and horizon must be non-negative")
    if lam == 0:
        return FailureSchedule(seed, lam, horizon, ())
    rng = np.random.default_rng(seed)
    times, t = [], 0.0
    chunk = max(16, int(2 * lam * horizon) + 16)
    while True:
        for gap in rng.exponential(1.0 / lam, size=chunk):
            t += gap
            if t > horizon:
                return FailureSchedule(seed, lam, horizon, tuple(times))
            times.append(t)


# -- costs ----------------------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    """Virtual-time prices.

    Checkpoint: ``image_bytes / bandwidth`` plus ``raw_bytes /
    compress_throughput`` for compressed codecs. Recovery: ``static_rebuild``
    plus ``image_bytes / bandwidth`` plus ``raw_bytes / decompress_throughput``.
    """

    T_it: float
    bandwidth: float
    compress_throughput: float = math.inf
    decompress_throughput: float = math.inf
    static_rebuild: float = 0.0

    def __post_init__(self):
        if not (self.T_it > 0 and self.bandwidth > 0 and self.compress_throughput > 0
                and self.decompress_throughput > 0 and self.static_rebuild >= 0):
            raise ValueError("cost model entries must be positive")

    def checkpoint_time(self, image_bytes: int, raw_bytes: int, compressed: bool) -> float:
        t = image_bytes / self.bandwidth
        return t + raw_bytes / self.compress_throughput if compressed else t

    def recovery_time(self, image_bytes: int, raw_bytes: int, compressed: bool) -> float:
        t = self.static_rebuild + image_bytes / self.bandwidth
        return t + raw_bytes / self.decompress_throughput if compressed else t

    @classmethod
    def scaled(cls, n: int, baseline_iterations: int, baseline_seconds: float = 7200.0,
               vector_checkpoint_seconds: float = 120.0, compress_seconds: float = 0.5,
               decompress_seconds: float = 0.2, static_rebuild: float = 0.0) -> "CostModel":
        """Prices that make a desk-size run look like a cluster run.

        ``T_it`` is set so the failure-free solve takes ``baseline_seconds``;
        bandwidth so that writing one raw vector of length ``n`` takes
        ``vector_checkpoint_seconds``; throughputs so that compressing or
        decompressing one vector takes the given seconds.
        """
        raw = 8.0 * n
        return cls(T_it=baseline_seconds / baseline_iterations,
                   bandwidth=raw / vector_checkpoint_seconds,
                   compress_throughput=raw / compress_seconds if compress_seconds else math.inf,
                   decompress_throughput=raw / decompress_seconds if decompress_seconds else math.inf,
                   static_rebuild=static_rebuild)


# -- schemes --------------------------------------------------------------

@dataclass(frozen=True)
class Scheme:
    """How one checkpointing strategy stores the solver.

    ``eb`` is the lossy bound, or ``None`` for the residual-adaptive bound
    used with GMRES.
    """

    name: str
    method: str
    codec: CodecSpec
    keep_direction: bool
    eb: float | None = None
    safety: float = 1.0

    @property
    def adaptive(self) -> bool:
        return self.codec.kind == "lossy" and self.eb is None


def make_scheme(name: str, method: str, eb: float | None = None,
                safety: float = 1.0) -> Scheme:
    """Traditional and lossless keep every dynamic variable; lossy keeps only x.

    Lossy CG runs as restarted CG. ``eb=None`` picks the method's default:
    the residual-adaptive bound for GMRES, 1e-4 otherwise.
    """
    if name not in SCHEMES:
        raise ValueError(f"unknown scheme {name!r}; expected one of {SCHEMES}")
    if name == "traditional":
        return Scheme(name, method, CodecSpec.identity(), method == "cg")
    if name == "lossless":
        return Scheme(name, method, CodecSpec.lossless(), method == "cg")
    if method == "gmres" and eb is None:
        return Scheme(name, method, CodecSpec.lossy(0.5), False, None, safety)
    eb = DEFAULT_LOSSY_EB if eb is None else eb
    lossy_method = "restarted_cg" if method == "cg" else method
    return Scheme(name, lossy_method, CodecSpec.lossy(eb), False, eb, safety)


# -- one experiment -------------------------------------------------------

@dataclass
class ExperimentReport:
    scheme: str
    seed: int
    converged: bool
    interval: int
    total_time: float
    productive_time: float
    extra_iteration_time: float
    checkpoint_time: float
    recovery_time: float
    rollback_time: float
    failures: int
    recoveries: int
    checkpoints: int
    iterations: int
    baseline_iterations: int
    extra_iterations: int
    lost_iterations: int
    mean_checkpoint_bytes: float
    mean_checkpoint_seconds: float
    mean_recovery_seconds: float

    @property
    def overhead(self) -> float:
        return self.total_time - self.productive_time

    def accounting_gap(self) -> float:
        parts = (self.productive_time + self.extra_iteration_time + self.checkpoint_time
                 + self.recovery_time + self.rollback_time)
        return abs(parts - self.total_time) / max(self.total_time, 1e-300)

    def as_row(self) -> dict:
        row = asdict(self)
        row["overhead"] = self.overhead
        return row


CSV_FIELDS = list(ExperimentReport.__dataclass_fields__) + ["overhead"]


def baseline_iterations(A, b, config: SolverConfig) -> int:
    solver = make_solver(A, b, config).start()
    while not solver.converged and solver.iteration < config.max_iters:
        solver.step()
    if not solver.converged:
        raise NonConvergenceError(f"{config.method} did not converge in {config.max_iters} iterations")
    return solver.iteration


def run_experiment(A, b, config: SolverConfig, scheme: Scheme, interval: int, cost: CostModel,
                   schedule: FailureSchedule, baseline: int | None = None,
                   store=None) -> ExperimentReport:
    """Solve under injected failures and book every virtual second.

    A failure during an iteration, a checkpoint or a recovery rolls the
    solver back to the last committed image (or to x = 0 if there is none);
    an interrupted checkpoint is never committed and an interrupted recovery
    starts over.
    """
    if interval < 1:
        raise ValueError("interval must be >= 1 iteration")
    cfg = SolverConfig(scheme.method, config.rtol, config.max_iters, config.preconditioner,
                       config.restart)
    if baseline is None:
        baseline = baseline_iterations(A, b, cfg)
    store = ckpt.MemoryStore() if store is None else store
    registry = ckpt.solver_registry(scheme.method, scheme.codec, keep_direction=scheme.keep_direction)
    compressed = scheme.codec.kind != "identity"
    b_norm = float(np.linalg.norm(b))
    raw_bytes = 8 * A.nrows * (2 if scheme.keep_direction else 1)

    failures = list(schedule.failure_times)
    fi = 0
    clock = 0.0
    book = dict(checkpoint=0.0, recovery=0.0, rollback=0.0)
    n_fail = n_rec = n_ckpt = lost = 0
    ckpt_bytes, ckpt_secs, rc_secs = [], [], []
    last_ckpt_iter = 0
    last_image_bytes = 0

    solver = make_solver(A, b, cfg).start()

    def next_failure():
        return failures[fi] if fi < len(failures) else math.inf

    def fail_and_recover(at):
        nonlocal clock, fi, n_fail, n_rec, lost, solver
        n_fail += 1
        fi += 1
        clock = at
        # iterations since the last image are lost; they were booked as work
        lost_now = solver.iteration - last_ckpt_iter
        lost += lost_now
        book["rollback"] += lost_now * cost.T_it
        while True:
            if last_image_bytes:
                T_rc = cost.recovery_time(last_image_bytes, raw_bytes, compressed)
            else:
                T_rc = cost.static_rebuild
            if clock + T_rc > next_failure():
                n_fail += 1
                book["recovery"] += next_failure() - clock
                clock = next_failure()
                fi += 1
                continue
            clock += T_rc
            book["recovery"] += T_rc
            rc_secs.append(T_rc)
            break
        n_rec += 1
        restored = ckpt.restore(store, registry)
        if restored.from_scratch:
            solver.history = []
            solver.restart(np.zeros(A.nrows), 0)
        else:
            state = ckpt.restored_state(restored, registry)
            state.residual_history = solver.history
            solver.load_state(state)

    while not solver.converged and solver.iteration < cfg.max_iters and clock < schedule.horizon:
        nf = next_failure()
        if clock + cost.T_it > nf:
            book["rollback"] += nf - clock
            fail_and_recover(nf)
            continue
        solver.step()
        clock += cost.T_it
        if solver.converged or solver.iteration % interval:
            continue
        state = solver.state
        ckpt.bind_state(registry, state)
        if scheme.adaptive:
            r = float(np.linalg.norm(solver.true_residual()))
            eb = gmres_adaptive_eb(r, b_norm, scheme.safety)
            registry.set_codec("x", CodecSpec.lossy(eb))
        image = ckpt.build_image(registry, solver.iteration, virtual_time=clock)
        T_ckp = cost.checkpoint_time(image.nbytes, raw_bytes, compressed)
        nf = next_failure()
        if clock + T_ckp > nf:
            book["checkpoint"] += nf - clock
            fail_and_recover(nf)
            continue
        ckpt.commit(store, image)
        clock += T_ckp
        book["checkpoint"] += T_ckp
        n_ckpt += 1
        ckpt_bytes.append(image.nbytes)
        ckpt_secs.append(T_ckp)
        last_ckpt_iter = solver.iteration
        last_image_bytes = image.nbytes

    final = solver.iteration
    productive = baseline * cost.T_it
    extra_time = (final - baseline) * cost.T_it
    # booked work = (final + lost) iterations; the parts are productive, extra and rollback
    return ExperimentReport(
        scheme=scheme.name, seed=schedule.seed, converged=bool(solver.converged),
        interval=interval, total_time=clock, productive_time=productive,
        extra_iteration_time=extra_time, checkpoint_time=book["checkpoint"],
        recovery_time=book["recovery"], rollback_time=book["rollback"], failures=n_fail,
        recoveries=n_rec, checkpoints=n_ckpt, iterations=final, baseline_iterations=baseline,
        extra_iterations=final - baseline, lost_iterations=lost,
        mean_checkpoint_bytes=float(np.mean(ckpt_bytes)) if ckpt_bytes else 0.0,
        mean_checkpoint_seconds=float(np.mean(ckpt_secs)) if ckpt_secs else 0.0,
        mean_recovery_seconds=float(np.mean(rc_secs)) if rc_secs else 0.0,
    )


def run_seeds(A, b, config, scheme, interval, cost, lam, horizon, seeds, baseline=None,
              workers: int | None = None) -> list[ExperimentReport]:
    """One experiment per seed, fanned out to threads, returned in seed order."""
    def one(seed):
        return run_experiment(A, b, config, scheme, interval, cost,
                              sample_failures(seed, lam, horizon), baseline)
    seeds = list(seeds)
    if workers == 1 or len(seeds) < 2:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, seeds))


# -- scheme comparison ----------------------------------------------------

def _mean_se(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()) if v.size else float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


@dataclass
class SchemeSummary:
    scheme: str
    method: str
    interval: int
    T_ckp: float
    T_rc: float
    mean_overhead: float
    se_overhead: float
    N_prime: float
    predicted_overhead: float
    predicted_overhead_full: float
    converged_runs: int
    reports: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "reports"}
        d["runs"] = len(self.reports)
        return d


@dataclass
class Comparison:
    lam: float
    T_it: float
    baseline_iterations: int
    summaries: dict
    paired: dict

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "T_it": self.T_it,
                "baseline_iterations": self.baseline_iterations,
                "schemes": {k: s.as_dict() for k, s in self.summaries.items()},
                "paired_differences": self.paired}

    def rows(self):
        for s in self.summaries.values():
            for r in s.reports:
                yield r.as_row()


def calibrate(A, b, config, scheme: Scheme, cost: CostModel, baseline: int, probe_interval=1):
    """Mean checkpoint and recovery seconds of a failure-free run."""
    report = run_experiment(A, b, config, scheme, probe_interval, cost,
                            FailureSchedule(0, 0.0, math.inf), baseline)
    raw = 8 * A.nrows * (2 if scheme.keep_direction else 1)
    compressed = scheme.codec.kind != "identity"
    T_ckp = report.mean_checkpoint_seconds
    T_rc = cost.recovery_time(report.mean_checkpoint_bytes, raw, compressed)
    return T_ckp, T_rc


def compare_schemes(A, b, config: SolverConfig, cost: CostModel, lam: float, seeds,
                    schemes=SCHEMES, eb: float | None = None, safety: float = 1.0,
                    horizon_factor: float = 20.0, intervals: dict | None = None,
                    workers: int | None = None) -> Comparison:
    """Run every scheme at its own Young interval over the same failure seeds.

    The interval comes from the scheme's measured checkpoint time, unless
    ``intervals`` pins it. Predictions: the traditional and lossless schemes
    use the expected-overhead formula with their T_ckp and T_rc; the lossy
    scheme uses the lossy formula with the pooled measured N' per recovery,
    once with T_rc approximated by T_ckp and once with the measured T_rc.
    """
    if lam <= 0:
        raise ValueError("scheme comparison needs a positive failure rate")
    seeds = list(seeds)
    base = baseline_iterations(A, b, config)
    horizon = horizon_factor * base * cost.T_it
    summaries = {}
    for name in schemes:
        scheme = make_scheme(name, config.method, eb, safety)
        T_ckp, T_rc = calibrate(A, b, config, scheme, cost, base)
        k = (intervals or {}).get(name) or young_interval(1.0 / lam, T_ckp, cost.T_it).k
        reports = run_seeds(A, b, config, scheme, k, cost, lam, horizon, seeds, base, workers)
        mean, se = _mean_se([r.overhead for r in reports])
        recs = sum(r.recoveries for r in reports)
        n_prime = sum(r.extra_iterations for r in reports) / recs if recs else 0.0
        n_model = max(n_prime, 0.0)
        try:
            if name == "lossy":
                pred = overhead_lossy(lam, T_ckp, None, n_model, cost.T_it, base)
                full = overhead_lossy(lam, T_ckp, T_rc, n_model, cost.T_it, base)
            else:
                pred = overhead_traditional(lam, T_ckp, cost.T_it, base)
                full = overhead_traditional(lam, T_ckp, cost.T_it, base, T_rc)
        except LossyCkptError:
            pred = full = float("nan")
        summaries[name] = SchemeSummary(name, scheme.method, k, T_ckp, T_rc, mean, se, n_prime,
                                        pred, full, sum(r.converged for r in reports), reports)
    paired = {}
    names = list(summaries)
    for i, a in enumerate(names):
        for c in names[i + 1:]:
            diff = [ra.overhead - rc.overhead
                    for ra, rc in zip(summaries[a].reports, summaries[c].reports)]
            m, se = _mean_se(diff)
            paired[f"{a}-{c}"] = {"mean": m, "se": se}
    return Comparison(lam, cost.T_it, base, summaries, paired)


# -- restart-delay probe --------------------------------------------------

@dataclass
class ProbeTrial:
    t: int
    eb: float
    extra: int
    extra_vs_exact_restart: int
    residual_before: float
    residual_after: float
    b_norm: float
    jump_bound: float
    stationary_bound: float | None = None


@dataclass
class ProbeResult:
    method: str
    baseline_iterations: int
    spectral_radius: float | None
    trials: list

    @property
    def extras(self) -> np.ndarray:
        return np.array([t.extra for t in self.trials])

    @property
    def mean_extra(self) -> float:
        return float(self.extras.mean())

    def as_dict(self) -> dict:
        return {"method": self.method, "baseline_iterations": self.baseline_iterations,
                "spectral_radius": self.spectral_radius, "mean_extra": self.mean_extra,
                "trials": [asdict(t) for t in self.trials]}


def _run_to_convergence(solver, limit):
    while not solver.converged and solver.iteration < limit:
        solver.step()
    return solver


def probe_restart_delay(A, b, config: SolverConfig, eb: float | None, trials: int, seed: int,
                        safety: float = 1.0) -> ProbeResult:
    """Extra iterations caused by one lossy restart at a random iteration.

    Each trial draws t uniformly from [1, N-1], pushes x^(t) through
    compress and decompress, restarts from the result and records
    ``N_perturbed - N`` (negative values mean the restart helped). ``eb=0``
    uses the identity codec, ``eb=None`` the residual-adaptive bound.
    ``extra_vs_exact_restart`` compares against a restart from the exact
    x^(t) instead, which isolates the compression error from the cost of
    restarting itself.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    solver = make_solver(A, b, config).start()
    xs = [solver.current_x().copy()]
    while not solver.converged and solver.iteration < config.max_iters:
        solver.step()
        xs.append(solver.current_x().copy())
    if not solver.converged:
        raise NonConvergenceError("baseline run did not converge")
    N = solver.iteration
    history = list(solver.history)
    try:
        R = estimate_spectral_radius(history) if config.method == "jacobi" else None
    except LossyCkptError:
        R = None
    if N < 2:
        raise NonConvergenceError("baseline converged too fast to probe")
    limit = config.max_iters + N
    b_norm = float(np.linalg.norm(b))
    rng = np.random.default_rng(seed)
    out = []
    for t in rng.integers(1, N, size=trials):
        t = int(t)
        x = xs[t]
        r_before = float(np.linalg.norm(b - A.matvec(x)))
        if eb is None:
            e = gmres_adaptive_eb(r_before, b_norm, safety)
        else:
            e = float(eb)
        spec = CodecSpec.lossy(e) if e > 0 else CodecSpec.identity()
        x_pert = decompress(compress(x, spec))
        r_after = float(np.linalg.norm(b - A.matvec(x_pert)))
        pert = _run_to_convergence(
            restart_from(SolverState(t, x_pert, {}, history[:t + 1]), A, b, config), limit)
        exact = _run_to_convergence(
            restart_from(SolverState(t, x, {}, history[:t + 1]), A, b, config), limit)
        bound = stationary_extra_bound(R, e, t) if R is not None else None
        out.append(ProbeTrial(t, e, pert.iteration - N, pert.iteration - exact.iteration,
                              r_before, r_after, b_norm, residual_jump_bound(r_before, b_norm, e),
                              bound))
    return ProbeResult(config.method, N, R, out)


def measure_wallclock(A, b, config: SolverConfig, codec: CodecSpec, repeats: int = 3) -> dict:
    """Real seconds per iteration, compression and decompression at desk scale."""
    solver = make_solver(A, b, config).start()
    start = time.perf_counter()
    steps = 0
    while not solver.converged and steps < 50:
        solver.step()
        steps += 1
    T_it = (time.perf_counter() - start) / max(steps, 1)
    x = solver.current_x().copy()
    t0 = time.perf_counter()
    for _ in range(repeats):
        frame = compress(x, codec)
    t1 = time.perf_counter()
    for _ in range(repeats):
        decompress(frame)
    t2 = time.perf_counter()
    return {"T_it": T_it, "T_comp": (t1 - t0) / repeats, "T_decomp": (t2 - t1) / repeats,
            "frame_bytes": frame.nbytes}
