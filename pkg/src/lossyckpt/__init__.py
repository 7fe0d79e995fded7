"""Lossy-compressed checkpoint/restart for iterative sparse solvers."""
from .codec import CodecSpec, CompressedFrame, compress, compression_ratio, decompress
from .errors import (BreakdownError, ConfigError, CorruptFrameError, DimensionError,
                     DuplicateIdError, EstimationError, LossyCkptError, ModelInvalidError,
                     StorageError, UnknownCodecError, ZeroPivotError)
from .solvers import (SolveOutcome, SolverConfig, SolverHooks, SolverState, make_solver,
                      restart_from, solve)
from .sparse import CsrMatrix, as_vector, axpy, dot, norm2, poisson3d, spmv

__version__ = "0.1.0"
