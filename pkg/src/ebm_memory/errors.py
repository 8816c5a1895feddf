"""Exception hierarchy shared by all modules."""


class EBMError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgument(EBMError, ValueError):
    pass


class InvalidState(EBMError, RuntimeError):
    pass


class BoundViolation(EBMError):
    """The L-infinity monitor caught a state above the a-priori bound."""

    def __init__(self, t, x, value, bound):
        self.t, self.x, self.value, self.bound = t, x, value, bound
        super().__init__(
            f"|u| = {value:.6g} at t = {t:.6g}, x = {x:.6g} exceeds bound M = {bound:.6g}"
        )


class NoConvergence(EBMError):
    def __init__(self, message, history=None):
        self.history = list(history) if history is not None else []
        super().__init__(message)


class DivisionUnstable(EBMError):
    def __init__(self, cells, floor):
        self.cells = list(cells)
        super().__init__(
            f"|r*beta| below floor {floor:g} at cells {self.cells}"
        )


class Unsupported(EBMError):
    pass


class ParseError(EBMError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)


class IntegrityError(EBMError):
    pass


class ValidationError(EBMError, ValueError):
    """Scenario document failed schema or semantic validation."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)
