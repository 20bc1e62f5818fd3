"""Exception types raised across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition (shape, range, label state)."""


class SamplerDivergence(RuntimeError):
    """A Langevin chain produced a non-finite state."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"SGLD chain diverged at step {step}")

    def __reduce__(self):
        return type(self), (self.step, str(self))


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")

    def __reduce__(self):
        return type(self), (self.epoch, str(self))


class CsvParseError(ValueError):
    def __init__(self, path, line, reason):
        self.path = path
        self.line = line
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")

    def __reduce__(self):
        return type(self), (self.path, self.line, self.reason)
