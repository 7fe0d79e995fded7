"""Closed-form checkpoint/restart performance model.

Notation: ``lam`` is the failure rate (1/MTTI), ``T_it`` seconds per
iteration, ``T_ckp`` and ``T_rc`` seconds per checkpoint and recovery, ``N``
failure-free iterations, ``N_prime`` extra iterations caused by one lossy
recovery. The recurring quantity is ``f(t, lam) = sqrt(2 lam t) + lam t``,
the expected overhead per unit of productive time at Young's interval.
"""
from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .errors import ModelInvalidError

YoungInterval = namedtuple("YoungInterval", "k seconds")

EB_MIN = 1e-12
EB_MAX = 0.1


@dataclass(frozen=True)
class ModelParams:
    T_it: float
    T_ckp: float
    lam: float
    N: int
    T_rc: float | None = None

    def __post_init__(self):
        for name in ("T_it", "lam", "N"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.T_ckp < 0 or (self.T_rc is not None and self.T_rc < 0):
            raise ValueError("checkpoint and recovery times must be non-negative")


def f(t: float, lam: float) -> float:
    return math.sqrt(2.0 * lam * t) + lam * t


def young_interval(T_f: float, T_ckp: float, T_it: float | None = None) -> YoungInterval:
    """Optimal interval sqrt(2 T_f T_ckp), in seconds and (if ``T_it``) iterations."""
    if T_f <= 0 or T_ckp < 0:
        raise ValueError("T_f must be positive and T_ckp non-negative")
    seconds = math.sqrt(2.0 * T_f * T_ckp)
    k = None
    if T_it is not None:
        if T_it <= 0:
            raise ValueError("T_it must be positive")
        k = max(1, int(round(seconds / T_it)))
    return YoungInterval(k, seconds)


def _checked(numerator: float, denominator: float, what: str) -> float:
    if not denominator > 0:
        raise ModelInvalidError(f"{what}: overhead undefined, denominator {denominator:.4g} <= 0")
    return numerator / denominator


def overhead_ratio_traditional(lam: float, T_ckp: float) -> float:
    """Expected overhead over productive time, f / (1 - f), at Young's interval."""
    if lam < 0 or T_ckp < 0:
        raise ValueError("lam and T_ckp must be non-negative")
    v = f(T_ckp, lam)
    return _checked(v, 1.0 - v, "traditional")


def overhead_traditional(lam: float, T_ckp: float, T_it: float, N: float,
                         T_rc: float | None = None) -> float:
    """Expected overhead seconds; with ``T_rc`` the recovery term uses it instead of T_ckp."""
    return overhead_lossy(lam, T_ckp, T_rc, 0.0, T_it, N)


def overhead_lossy(lam: float, T_ckp_lossy: float, T_rc_lossy: float | None, N_prime: float,
                   T_it: float, N: float) -> float:
    """Expected overhead seconds of lossy checkpointing.

    With ``T_rc_lossy=None`` recovery is taken to cost one checkpoint, which
    gives ``N T_it (f(T) + lam N' T_it) / (1 - f(T) - lam N' T_it)``.
    Passing ``T_rc_lossy`` replaces the ``lam T`` recovery term with
    ``lam T_rc``.
    """
    if min(lam, T_ckp_lossy, T_it, N) < 0 or N_prime < 0:
        raise ValueError("parameters must be non-negative")
    T_rc = T_ckp_lossy if T_rc_lossy is None else T_rc_lossy
    per_unit = math.sqrt(2.0 * lam * T_ckp_lossy) + lam * T_rc + lam * N_prime * T_it
    return N * T_it * _checked(per_unit, 1.0 - per_unit, "lossy")


def overhead_ratio_lossy(lam, T_ckp_lossy, T_rc_lossy, N_prime, T_it) -> float:
    return overhead_lossy(lam, T_ckp_lossy, T_rc_lossy, N_prime, T_it, 1.0) / T_it


def breakeven_extra_iters(lam: float, T_ckp_trad: float, T_ckp_lossy: float, T_it: float) -> float:
    """Largest N' per recovery at which lossy checkpointing still breaks even.

    ``(f(T_trad) - f(T_lossy)) / (lam T_it)``. A negative value means lossy
    checkpointing never pays off.
    """
    if lam <= 0 or T_it <= 0:
        raise ValueError("lam and T_it must be positive")
    if T_ckp_lossy > T_ckp_trad:
        raise ValueError("lossy checkpoints must not cost more than traditional ones")
    return (f(T_ckp_trad, lam) - f(T_ckp_lossy, lam)) / (lam * T_it)


def stationary_extra_bound(R: float, eb: float, t) -> np.ndarray | float:
    """Extra iterations caused by a restart at iteration ``t``: ``t - log_R(R^t + eb)``."""
    if not 0.0 < R < 1.0:
        raise ValueError("R must lie in (0, 1)")
    if not 0.0 <= eb < 1.0:
        raise ValueError("eb must lie in [0, 1)")
    t = np.asarray(t, dtype=np.float64)
    lnR = math.log(R)
    # log_R(R^t + eb) = t + log(1 + eb R^-t) / ln R; the log1p term is taken
    # as logaddexp(0, ln eb - t ln R) so large t cannot overflow R^-t
    with np.errstate(divide="ignore"):
        log_eb = np.log(eb)
    out = -np.logaddexp(0.0, log_eb - t * lnR) / lnR
    return float(out) if out.ndim == 0 else out


ExpectedBound = namedtuple("ExpectedBound", "expected lo hi")


def stationary_expected_bound_interval(R: float, eb: float, N: int,
                                       weighting: str = "uniform",
                                       lam: float | None = None,
                                       T_it: float | None = None) -> ExpectedBound:
    """Expected extra iterations of one restart, plus the closed-form interval.

    ``expected`` averages the pointwise bound over t = 1..N. With
    ``weighting="exponential"`` t is weighted by the density of the first
    failure, ``lam T_it exp(-lam T_it t)``, instead of uniformly. ``lo`` and
    ``hi`` are the bound at t = (N+1)/2 and t = N.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    t = np.arange(1, N + 1, dtype=np.float64)
    pointwise = stationary_extra_bound(R, eb, t)
    pointwise = np.atleast_1d(pointwise)
    if weighting == "uniform":
        expected = float(pointwise.mean())
    elif weighting == "exponential":
        if not lam or not T_it:
            raise ValueError("exponential weighting needs lam and T_it")
        w = np.exp(-lam * T_it * t)
        expected = float(np.sum(w * pointwise) / np.sum(w))
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    lo = stationary_extra_bound(R, eb, (N + 1) / 2.0)
    hi = stationary_extra_bound(R, eb, float(N))
    return ExpectedBound(expected, float(lo), float(hi))


def gmres_adaptive_eb(r_norm: float, b_norm: float, safety: float = 1.0,
                      eb_min: float = EB_MIN, eb_max: float = EB_MAX) -> float:
    """Error bound proportional to the current relative residual, clamped to [eb_min, eb_max]."""
    if not b_norm > 0:
        raise ValueError("b_norm must be positive")
    if r_norm < 0 or safety <= 0:
        raise ValueError("r_norm must be non-negative and safety positive")
    return float(min(eb_max, max(eb_min, safety * r_norm / b_norm)))


def residual_jump_bound(r_norm: float, b_norm: float, eb: float) -> float:
    """Post-restart residual ceiling (1 + eb) ||r|| + eb ||b||."""
    return (1.0 + eb) * r_norm + eb * b_norm


def model_report(lam: float = 1 / 3600, T_ckp_trad: float = 120.0, T_ckp_lossy: float = 25.0,
                 T_it: float = 1.2, N: int = 5875, N_prime: float | None = None,
                 T_rc_lossy: float | None = None, R: float | None = None,
                 eb: float | None = None, N_stationary: int | None = None) -> dict:
    """Every derived model quantity for one parameter set, JSON-ready."""
    out = {
        "inputs": {"lambda": lam, "T_ckp_trad": T_ckp_trad, "T_ckp_lossy": T_ckp_lossy,
                   "T_it": T_it, "N": N},
        "f_trad": f(T_ckp_trad, lam),
        "f_lossy": f(T_ckp_lossy, lam),
    }
    for tag, T in (("trad", T_ckp_trad), ("lossy", T_ckp_lossy)):
        yi = young_interval(1.0 / lam, T, T_it)
        out[f"young_{tag}"] = {"k": yi.k, "seconds": yi.seconds, "minutes": yi.seconds / 60}
    out["overhead_ratio_traditional"] = overhead_ratio_traditional(lam, T_ckp_trad)
    out["overhead_traditional_s"] = overhead_traditional(lam, T_ckp_trad, T_it, N)
    out["breakeven_extra_iters"] = breakeven_extra_iters(lam, T_ckp_trad, T_ckp_lossy, T_it)
    out["lossy_never_profitable"] = out["breakeven_extra_iters"] < 0
    if N_prime is not None:
        out["inputs"]["N_prime"] = N_prime
        out["overhead_lossy_s"] = overhead_lossy(lam, T_ckp_lossy, T_rc_lossy, N_prime, T_it, N)
        out["overhead_ratio_lossy"] = out["overhead_lossy_s"] / (N * T_it)
    if R is not None and eb is not None:
        n_st = N_stationary or N
        eb_ = stationary_expected_bound_interval(R, eb, n_st)
        out["stationary"] = {"R": R, "eb": eb, "N": n_st, "expected": eb_.expected,
                             "lo": eb_.lo, "hi": eb_.hi,
                             "at_N": stationary_extra_bound(R, eb, n_st)}
    return out
