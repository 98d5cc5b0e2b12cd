"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class BoundsError(ContractError):
    """An index is out of range."""


class NoFeasibleActionError(ContractError):
    """Every candidate entry is masked out."""


class BatchTooSmallError(ContractError):
    """Batch statistics requested over fewer than two rows."""


class NonFiniteError(RuntimeError):
    """A forward pass produced NaN or Inf."""


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss or gradient.

    Carries a diagnostic snapshot of the failing iteration.
    """

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class ParseError(ValueError):
    """An input file is malformed; message names file and, if known, line."""

    def __init__(self, path, line_no: int | None, message: str):
        where = f"{path}:{line_no}" if line_no is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line_no = line_no
