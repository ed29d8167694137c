class EvoADError(Exception):
    """Base class for recoverable, reportable failures."""


class ParseError(EvoADError, ValueError):
    """Malformed document. ``line`` is 1-based, 0 when unknown."""

    def __init__(self, message: str, line: int = 0, field: str = ""):
        self.line = line
        self.field = field
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{message}")


class InvalidGenome(EvoADError):
    def __init__(self, violations):
        self.violations = list(violations)
        msgs = "; ".join(f"{v.code}: {v.message}" for v in self.violations)
        super().__init__(f"invalid genome: {msgs}")


class SubspaceMismatch(EvoADError):
    pass


class ShapeMismatch(EvoADError):
    pass


class LengthMismatch(EvoADError):
    pass


class SeriesTooShort(EvoADError):
    pass


class DivergedTraining(EvoADError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class ArchitectureMismatch(EvoADError):
    pass


class FamilyMismatch(EvoADError):
    pass


class DataError(EvoADError):
    """Bad or unusable input data (unparsable header, missing labels, ...)."""


class CheckpointWriteError(EvoADError):
    pass
