"""Command-line entry point: ``lossyckpt {solve,model,simulate,compress-bench,probe}``.

Exit codes: 0 success, 1 usage/config/IO error, 2 non-convergence,
3 parameters outside the performance model's valid domain.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import harness, perfmodel
from .codec import CodecSpec, compress, compression_ratio, decompress, max_relative_error
from .config import ExperimentConfig
from .errors import ConfigError, LossyCkptError, ModelInvalidError
from .solvers import SolverConfig, make_solver
from .sparse import poisson3d, read_mtx

log = logging.getLogger("lossyckpt")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_MODEL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers --------------------------------------------------------------

def build_system(cfg: ExperimentConfig):
    A = poisson3d(cfg.n) if cfg.matrix == "poisson3d" else read_mtx(cfg.mtx_path)
    if cfg.rhs == "ones":
        b = A.matvec(np.ones(A.ncols))
    else:
        b = A.matvec(np.random.default_rng(cfg.rhs_seed).standard_normal(A.ncols))
    return A, b


def solver_config(cfg: ExperimentConfig) -> SolverConfig:
    try:
        return SolverConfig(cfg.method, cfg.rtol, cfg.max_iters, cfg.preconditioner, cfg.restart)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _output_dir(cfg) -> Path:
    out = cfg.resolved_output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sidecar(out: Path, command: str, argv):
    """Timestamps go here only, so every other output is reproducible."""
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    log.info("%s %s", command, " ".join(argv))
    return handler


def _write_csv(path: Path, rows, fieldnames):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _emit(args, obj, text):
    print(json.dumps(obj, indent=2, sort_keys=True) if args.json else text)


def _parse_set(items):
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except ValueError:
            out[key] = raw
    return out


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    data = cfg.to_dict()
    data.update(_parse_set(getattr(args, "set", None)))
    for key in ("n", "method", "rtol", "preconditioner", "restart", "eb", "trials", "codec",
                "interval"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "lam", None) is not None:
        data["lam"] = args.lam
    if getattr(args, "seeds", None) is not None:
        data["seeds"] = list(range(args.seeds))
    if getattr(args, "seed", None) is not None:
        data["seeds"] = [args.seed]
        data["probe_seed"] = args.seed
    if getattr(args, "codecs", None):
        data["codecs"] = args.codecs.split(",")
    if isinstance(data.get("interval"), str) and data["interval"].isdigit():
        data["interval"] = int(data["interval"])
    return ExperimentConfig.from_dict(data)


# -- subcommands ----------------------------------------------------------

def cmd_solve(args) -> int:
    cfg = load_config(args)
    A, b = build_system(cfg)
    scfg = solver_config(cfg)
    out = _output_dir(cfg)
    handler = _sidecar(out, "solve", sys.argv[1:])
    try:
        solver = make_solver(A, b, scfg).start()
        while not solver.converged and solver.iteration < scfg.max_iters:
            solver.step()
        hist = np.asarray(solver.history) / solver.ref_norm
        _write_csv(out / "residuals.csv",
                   ({"iteration": i, "relative_residual": repr(float(r))} for i, r in enumerate(hist)),
                   ["iteration", "relative_residual"])
        _write_json(out / "config.json", cfg.to_dict())
        result = {"method": scfg.method, "n": A.nrows, "converged": bool(solver.converged),
                  "iterations": solver.iteration, "rtol": scfg.rtol,
                  "final_relative_residual": float(solver.relative_residual),
                  "residuals_csv": str(out / "residuals.csv")}
        _emit(args, result,
              f"{scfg.method}: {'converged' if solver.converged else 'NOT converged'} after "
              f"{solver.iteration} iterations, relative residual "
              f"{solver.relative_residual:.3e} (rtol {scfg.rtol:g})")
        log.info("done converged=%s", solver.converged)
    finally:
        log.removeHandler(handler)
        handler.close()
    return EXIT_OK if solver.converged else EXIT_NONCONVERGED


def cmd_model(args) -> int:
    report = perfmodel.model_report(
        lam=args.lam, T_ckp_trad=args.T_ckp_trad, T_ckp_lossy=args.T_ckp_lossy, T_it=args.T_it,
        N=args.N, N_prime=args.N_prime, T_rc_lossy=args.T_rc_lossy, R=args.R, eb=args.eb,
        N_stationary=args.N_stationary)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _cost_model(cfg: ExperimentConfig, A, b, scfg, baseline, wallclock: bool):
    if wallclock:
        lossy = CodecSpec.parse(cfg.codec) if cfg.codec.startswith("lossy") else CodecSpec.lossy(1e-4)
        m = harness.measure_wallclock(A, b, scfg, lossy)
        raw = 8.0 * A.nrows
        # measured desk-scale T_it and codec speeds, cluster-scale storage bandwidth
        return harness.CostModel(
            T_it=cfg.T_it or m["T_it"], bandwidth=raw / cfg.vector_checkpoint_seconds,
            compress_throughput=raw / max(m["T_comp"], 1e-9),
            decompress_throughput=raw / max(m["T_decomp"], 1e-9),
            static_rebuild=cfg.static_rebuild)
    cost = harness.CostModel.scaled(A.nrows, baseline, cfg.baseline_seconds,
                                    cfg.vector_checkpoint_seconds, cfg.compress_seconds,
                                    cfg.decompress_seconds, cfg.static_rebuild)
    if cfg.T_it:
        cost = harness.CostModel(cfg.T_it, cost.bandwidth, cost.compress_throughput,
                                 cost.decompress_throughput, cost.static_rebuild)
    return cost


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    A, b = build_system(cfg)
    scfg = solver_config(cfg)
    out = _output_dir(cfg)
    handler = _sidecar(out, "simulate", sys.argv[1:])
    try:
        base = harness.baseline_iterations(A, b, scfg)
        cost = _cost_model(cfg, A, b, scfg, base, args.wallclock)
        intervals = None
        if cfg.interval != "young":
            intervals = {s: cfg.interval for s in cfg.schemes}
        if cfg.lam == 0:
            rows, summary = _simulate_failure_free(A, b, scfg, cfg, cost, base, intervals)
        else:
            comp = harness.compare_schemes(A, b, scfg, cost, cfg.lam, cfg.seeds, cfg.schemes,
                                           cfg.eb, cfg.safety, cfg.horizon_factor, intervals,
                                           cfg.workers)
            rows, summary = list(comp.rows()), comp.as_dict()
        _write_csv(out / "simulate.csv", rows, harness.CSV_FIELDS)
        _write_json(out / "summary.json", summary)
        _write_json(out / "config.json", cfg.to_dict())
        lines = [f"{'scheme':<12} {'k':>4} {'T_ckp':>9} {'overhead':>10} {'se':>8} "
                 f"{'predicted':>10} {'N_prime':>8}"]
        for name, s in summary["schemes"].items():
            lines.append(f"{name:<12} {s['interval']:>4} {s['T_ckp']:>9.2f} "
                         f"{s['mean_overhead']:>10.1f} {s['se_overhead']:>8.1f} "
                         f"{s['predicted_overhead']:>10.1f} {s['N_prime']:>8.2f}")
        _emit(args, summary, "\n".join(lines))
        log.info("done")
    finally:
        log.removeHandler(handler)
        handler.close()
    unconverged = sum(int(not r["converged"]) for r in rows)
    return EXIT_NONCONVERGED if unconverged else EXIT_OK


def _simulate_failure_free(A, b, scfg, cfg, cost, base, intervals):
    rows, schemes = [], {}
    empty = harness.FailureSchedule(0, 0.0, cfg.horizon_factor * base * cost.T_it)
    for name in cfg.schemes:
        scheme = harness.make_scheme(name, scfg.method, cfg.eb, cfg.safety)
        T_ckp, T_rc = harness.calibrate(A, b, scfg, scheme, cost, base)
        k = (intervals or {}).get(name) or perfmodel.young_interval(3600.0, T_ckp, cost.T_it).k
        rep = harness.run_experiment(A, b, scfg, scheme, k, cost, empty, base)
        rows.append(rep.as_row())
        schemes[name] = {"interval": k, "T_ckp": T_ckp, "T_rc": T_rc,
                         "mean_overhead": rep.overhead, "se_overhead": 0.0,
                         "predicted_overhead": rep.checkpoint_time, "N_prime": 0.0,
                         "checkpoint_time": rep.checkpoint_time}
    return rows, {"lambda": 0.0, "T_it": cost.T_it, "baseline_iterations": base,
                  "schemes": schemes, "note": "no failures: interval from a 1 h MTTI"}


def _bench_vector(source: str, cfg: ExperimentConfig):
    if source == "solution":
        A, b = build_system(cfg)
        scfg = solver_config(cfg)
        solver = make_solver(A, b, scfg).start()
        while not solver.converged and solver.iteration < scfg.max_iters:
            solver.step()
        return solver.current_x().copy()
    if source == "sin":
        return np.sin(0.01 * np.arange(4096))
    path = Path(source)
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, dtype=np.float64).ravel()


def cmd_compress_bench(args) -> int:
    cfg = load_config(args)
    try:
        data = np.asarray(_bench_vector(args.input, cfg), dtype=np.float64)
    except OSError as exc:
        raise ConfigError(f"cannot read input {args.input}: {exc}") from None
    rows = []
    for text in cfg.codecs:
        spec = CodecSpec.parse(text)
        t0 = time.perf_counter()
        frame = compress(data, spec)
        t1 = time.perf_counter()
        restored = decompress(frame.to_bytes())
        t2 = time.perf_counter()
        rows.append({"codec": str(spec), "ratio": compression_ratio(frame),
                     "compress_Bps": data.nbytes / max(t1 - t0, 1e-12),
                     "decompress_Bps": data.nbytes / max(t2 - t1, 1e-12),
                     "max_rel_error": max_relative_error(data, restored)})
    lines = [f"{'codec':<14} {'ratio':>8} {'comp MB/s':>10} {'decomp MB/s':>12} {'max rel err':>12}"]
    for r in rows:
        lines.append(f"{r['codec']:<14} {r['ratio']:>8.2f} {r['compress_Bps'] / 1e6:>10.1f} "
                     f"{r['decompress_Bps'] / 1e6:>12.1f} {r['max_rel_error']:>12.3e}")
    _emit(args, {"input": args.input, "elements": int(data.size), "codecs": rows}, "\n".join(lines))
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = load_config(args)
    A, b = build_system(cfg)
    scfg = solver_config(cfg)
    out = _output_dir(cfg)
    handler = _sidecar(out, "probe", sys.argv[1:])
    try:
        if cfg.eb is not None:
            eb = cfg.eb
        elif scfg.method == "gmres":
            eb = None
        else:
            eb = harness.DEFAULT_LOSSY_EB
        res = harness.probe_restart_delay(A, b, scfg, eb, cfg.trials, cfg.probe_seed, cfg.safety)
        trials = res.as_dict()["trials"]
        _write_csv(out / "probe.csv", trials, list(trials[0]))
        summary = {k: v for k, v in res.as_dict().items() if k != "trials"}
        summary["extras"] = [t["extra"] for t in trials]
        _write_json(out / "probe.json", summary)
        _emit(args, summary,
              f"{res.method}: baseline {res.baseline_iterations} iterations; "
              f"mean extra {res.mean_extra:.2f} over {len(trials)} trials "
              f"(min {min(summary['extras'])}, max {max(summary['extras'])})")
    finally:
        log.removeHandler(handler)
        handler.close()
    return EXIT_OK


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lossyckpt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (value parsed as JSON)")
        sp.add_argument("--json", action="store_true", help="print JSON instead of text")
        sp.add_argument("--seed", type=int, help="single seed for simulate/probe")
        sp.add_argument("--n", type=int, help="poisson3d grid size")
        sp.add_argument("--method", choices=["jacobi", "cg", "restarted_cg", "gmres"])
        sp.add_argument("--rtol", type=float)
        sp.add_argument("--preconditioner", choices=["none", "jacobi", "ilu0"])
        sp.add_argument("--restart", type=int, help="GMRES cycle length")
        return sp

    common(sub.add_parser("solve", help="solve once, write the residual history"))

    m = sub.add_parser("model", help="evaluate the performance model")
    m.add_argument("--json", action="store_true", help="accepted for symmetry; output is JSON")
    m.add_argument("--lambda", dest="lam", type=float, default=1 / 3600)
    m.add_argument("--T-ckp-trad", dest="T_ckp_trad", type=float, default=120.0)
    m.add_argument("--T-ckp-lossy", dest="T_ckp_lossy", type=float, default=25.0)
    m.add_argument("--T-rc-lossy", dest="T_rc_lossy", type=float)
    m.add_argument("--T-it", dest="T_it", type=float, default=1.2)
    m.add_argument("--N", type=int, default=5875)
    m.add_argument("--N-prime", dest="N_prime", type=float)
    m.add_argument("--R", type=float, help="spectral radius for the stationary bound")
    m.add_argument("--eb", type=float)
    m.add_argument("--N-stationary", dest="N_stationary", type=int)

    s = common(sub.add_parser("simulate", help="compare checkpointing schemes under failures"))
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--seeds", type=int, help="use seeds 0..SEEDS-1")
    s.add_argument("--eb", type=float, help="lossy bound (default: adaptive for GMRES)")
    s.add_argument("--interval", help="'young' or a fixed number of iterations")
    s.add_argument("--wallclock", action="store_true",
                   help="measure T_it and codec speed on this machine instead of scaled costs")

    c = common(sub.add_parser("compress-bench", help="ratio, speed and error per codec"))
    c.add_argument("--input", default="solution",
                   help="'solution' (converged solve), 'sin', or a .npy/.txt file")
    c.add_argument("--codecs", help="comma-separated, e.g. identity,lossless,lossy:1e-4")

    r = common(sub.add_parser("probe", help="extra iterations after one lossy restart"))
    r.add_argument("--eb", type=float, help="error bound (default: adaptive for GMRES, 1e-4 else)")
    r.add_argument("--trials", type=int)
    return p


COMMANDS = {"solve": cmd_solve, "model": cmd_model, "simulate": cmd_simulate,
            "compress-bench": cmd_compress_bench, "probe": cmd_probe}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except ModelInvalidError as exc:
        print(f"lossyckpt: model invalid: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except harness.NonConvergenceError as exc:
        print(f"lossyckpt: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (ConfigError, OSError, ValueError, LossyCkptError) as exc:
        print(f"lossyckpt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
