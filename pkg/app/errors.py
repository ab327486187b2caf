"""Domain error types shared by the services and the CLI."""

from __future__ import annotations


class InvalidArgument(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, message: str, *, line: int | None = None, key_path: str = "") -> None:
        self.line = line
        self.key_path = key_path
        prefix = ""
        if line is not None:
            prefix = f"line {line}: "
        elif key_path:
            prefix = f"{key_path}: "
        super().__init__(prefix + message)


class NumericalFailure(RuntimeError):
    pass


class InfeasibleTightening(RuntimeError):
    pass


class NoRciExists(RuntimeError):
    pass


class RmpcInfeasible(RuntimeError):
    pass


class AssumptionViolation(RuntimeError):
    pass


class ReportError(RuntimeError):
    pass
