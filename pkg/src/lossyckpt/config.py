"""Flat experiment configuration with a strict JSON loader."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

OUTPUT_ENV = "LOSSYCKPT_OUTPUT_DIR"
DEFAULT_OUTPUT = "lossyckpt-out"


@dataclass
class ExperimentConfig:
    # matrix and right-hand side
    matrix: str = "poisson3d"          # "poisson3d" or "mtx"
    n: int = 16
    mtx_path: str | None = None
    rhs: str = "ones"                  # b = A @ ones, or "random" (seeded by rhs_seed)
    rhs_seed: int = 0
    # solver
    method: str = "gmres"
    rtol: float | None = None
    max_iters: int = 10_000
    preconditioner: str = "none"
    restart: int | None = None
    # compression
    codec: str = "lossy:1e-4"
    codecs: list = field(default_factory=lambda: ["identity", "lossless", "lossy:1e-4"])
    eb: float | None = None            # lossy scheme bound; None: method default
    safety: float = 1.0
    # failures and schedule
    lam: float = 1.0 / 3600.0
    seeds: list = field(default_factory=lambda: list(range(32)))
    schemes: list = field(default_factory=lambda: ["traditional", "lossless", "lossy"])
    interval: str | int = "young"
    horizon_factor: float = 20.0
    # cost model (virtual seconds)
    T_it: float | None = None
    baseline_seconds: float = 7200.0
    vector_checkpoint_seconds: float = 120.0
    compress_seconds: float = 0.5
    decompress_seconds: float = 0.2
    static_rebuild: float = 0.0
    # probe
    trials: int = 20
    probe_seed: int = 0
    # output
    output_dir: str | None = None
    workers: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.matrix not in ("poisson3d", "mtx"):
            raise ConfigError(f"matrix: expected 'poisson3d' or 'mtx', got {self.matrix!r}")
        if self.matrix == "mtx" and not self.mtx_path:
            raise ConfigError("mtx_path: required when matrix is 'mtx'")
        if self.n < 1:
            raise ConfigError("n: must be >= 1")
        if self.rhs not in ("ones", "random"):
            raise ConfigError(f"rhs: expected 'ones' or 'random', got {self.rhs!r}")
        if self.interval != "young" and not (isinstance(self.interval, int) and self.interval >= 1):
            raise ConfigError("interval: expected 'young' or a positive integer")
        if self.lam < 0:
            raise ConfigError("lam: must be non-negative")
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds: need at least one seed")
        for name in ("baseline_seconds", "vector_checkpoint_seconds", "horizon_factor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive")
        for name in ("compress_seconds", "decompress_seconds", "static_rebuild"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be non-negative")

    @property
    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.field_names())
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def updated(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        data.update({k: v for k, v in changes.items() if v is not None})
        return type(self).from_dict(data)
