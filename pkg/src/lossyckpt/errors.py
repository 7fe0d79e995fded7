"""Exception types raised across the package."""


class LossyCkptError(Exception):
    """Base class for package errors."""


class DimensionError(LossyCkptError, ValueError):
    """Operand shapes do not agree."""


class BreakdownError(LossyCkptError, ArithmeticError):
    """An iterative method cannot continue (e.g. p^T A p <= 0 in CG)."""


class ZeroPivotError(BreakdownError):
    """ILU(0) hit a zero pivot."""

    def __init__(self, row):
        super().__init__(f"zero pivot in ILU(0) at row {row}")
        self.row = row


class EstimationError(LossyCkptError, ValueError):
    """A residual history does not describe a converging iteration."""


class CorruptFrameError(LossyCkptError, ValueError):
    """Compressed frame failed validation (magic, version, checksum, length)."""


class UnknownCodecError(CorruptFrameError):
    pass


class DuplicateIdError(LossyCkptError, KeyError):
    pass


class StorageError(LossyCkptError, OSError):
    pass


class ModelInvalidError(LossyCkptError, ValueError):
    """Performance-model parameters fall outside the formula's valid domain."""


class ConfigError(LossyCkptError, ValueError):
    pass
