from pathlib import Path


class ConfidenceError(Exception):
    """Base error. ``exit_code`` is what the CLI returns when it escapes a command."""

    exit_code = 2

    def __init__(self, detail: str) -> None:
        super().__init__(detail)
        self.detail = detail


class UsageError(ConfidenceError):
    exit_code = 1


class ConfigurationError(ConfidenceError):
    pass


class InputError(ConfidenceError, ValueError):
    pass


class FittingError(ConfidenceError):
    def __init__(self, detail: str, label: int | None = None) -> None:
        super().__init__(detail)
        self.label = label


class StateError(ConfidenceError):
    pass


class DegenerateModelError(ConfidenceError):
    pass


class FormatError(ConfidenceError):
    def __init__(self, path: str | Path, offset: int, detail: str) -> None:
        super().__init__(f"{path} @ offset {offset}: {detail}")
        self.path = str(path)
        self.offset = offset
