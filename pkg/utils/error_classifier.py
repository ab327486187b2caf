"""Solver and run error classifier.

Maps exceptions and raw solver/status text to a category, a short message,
an actionable suggestion and the CLI exit code.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from app.constants import EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE
from app.errors import (
    AssumptionViolation,
    ConfigError,
    InfeasibleTightening,
    InvalidArgument,
    NoRciExists,
    NumericalFailure,
    ReportError,
    RmpcInfeasible,
)


@dataclass(frozen=True)
class ErrorClassification:
    category: str  # "usage", "infeasible", "numerical", "io", "unknown"
    message: str
    suggestion: str = ""
    raw_line: str = ""
    exit_code: int = EXIT_NUMERICAL


# (compiled pattern, category, message, suggestion, exit code)
_RULES: list[tuple[re.Pattern[str], str, str, str, int]] = [
    (
        re.compile(r"tightened (state|input) set .* is empty", re.IGNORECASE),
        "infeasible",
        "Constraint tightening is infeasible",
        "Shorten the horizon or shrink W (check mpc.disturbance_scaling).",
        EXIT_INFEASIBLE,
    ),
    (
        re.compile(r"robust invariant set is empty|disturbance alone leaves", re.IGNORECASE),
        "infeasible",
        "No robust invariant terminal set exists",
        "Shrink W or relax the terminal constraint sets.",
        EXIT_INFEASIBLE,
    ),
    (
        re.compile(r"outside the state constraints|problem is infeasible|\binfeasible\b", re.IGNORECASE),
        "infeasible",
        "Optimal-control problem is infeasible",
        "Check x0 and the constraint boxes against the disturbance set.",
        EXIT_INFEASIBLE,
    ),
    (
        re.compile(r"(DARE|RCI) .*(did not converge|diverged)", re.IGNORECASE),
        "numerical",
        "Set computation did not converge",
        "Check stabilizability of (A, B) and the weights.",
        EXIT_NUMERICAL,
    ),
    (
        re.compile(r"factorization failed", re.IGNORECASE),
        "numerical",
        "Matrix factorization failed",
        "Increase gp.jitter or adjust the kernel hyperparameters.",
        EXIT_NUMERICAL,
    ),
    (
        re.compile(r"numerical_failure|non-finite|\bnan\b", re.IGNORECASE),
        "numerical",
        "Solver hit a numerical failure",
        "Run with --trace and inspect the iteration log.",
        EXIT_NUMERICAL,
    ),
    (
        re.compile(r"max_iter", re.IGNORECASE),
        "numerical",
        "Solver reached its iteration cap",
        "Raise solver.max_iter or loosen solver.kkt_tol.",
        EXIT_NUMERICAL,
    ),
    (
        re.compile(r"^line \d+:|unknown (section|key)|missing section", re.IGNORECASE),
        "usage",
        "Configuration error",
        "Fix the config file; write a template with --write-config.",
        EXIT_USAGE,
    ),
    (
        re.compile(r"Permission denied|No space left on device|Read-only file system", re.IGNORECASE),
        "io",
        "Cannot write results",
        "Pick a writable --output-dir.",
        EXIT_USAGE,
    ),
]

# exception type -> (category, message, suggestion, exit code); first match wins
_EXCEPTION_RULES: list[tuple[type[BaseException], str, str, str, int]] = [
    (ConfigError, "usage", "Configuration error", "Fix the config file; write a template with --write-config.", EXIT_USAGE),
    (InvalidArgument, "usage", "Invalid argument", "Check the values passed on the command line or in the config.", EXIT_USAGE),
    (InfeasibleTightening, "infeasible", "Constraint tightening is infeasible", "Shorten the horizon or shrink W.", EXIT_INFEASIBLE),
    (NoRciExists, "infeasible", "No robust invariant terminal set exists", "Shrink W or relax the terminal sets.", EXIT_INFEASIBLE),
    (RmpcInfeasible, "infeasible", "Optimal-control problem is infeasible", "Check x0 and the constraint boxes.", EXIT_INFEASIBLE),
    (AssumptionViolation, "infeasible", "Learning problem infeasible at zero deterioration", "Inspect the ledger columns of the run log.", EXIT_INFEASIBLE),
    (NumericalFailure, "numerical", "Numerical failure", "Run with --trace and inspect the iteration log.", EXIT_NUMERICAL),
    (ReportError, "io", "Cannot write results", "Pick a writable --output-dir.", EXIT_USAGE),
    (OSError, "io", "File system error", "Check paths and permissions.", EXIT_USAGE),
]


def classify_error(text: str) -> ErrorClassification:
    """Classify a status string or error message."""
    if not text or not text.strip():
        return ErrorClassification(category="unknown", message="Unknown error", suggestion="Check the log for details.")

    for pattern, category, message, suggestion, exit_code in _RULES:
        if pattern.search(text):
            return ErrorClassification(category, message, suggestion, raw_line=text.strip(), exit_code=exit_code)

    return ErrorClassification(
        category="unknown",
        message="Unknown error",
        suggestion="Check the full log for diagnostics.",
        raw_line=text.strip(),
    )


def classify_exception(exc: BaseException | None) -> ErrorClassification:
    if exc is None:
        return ErrorClassification(category="ok", message="", exit_code=EXIT_OK)
    for exc_type, category, message, suggestion, exit_code in _EXCEPTION_RULES:
        if isinstance(exc, exc_type):
            return ErrorClassification(category, f"{message}: {exc}", suggestion, raw_line=str(exc), exit_code=exit_code)
    fallback = classify_error(str(exc))
    if fallback.category != "unknown":
        return fallback
    return ErrorClassification("unknown", f"{type(exc).__name__}: {exc}", "Check the log for details.", str(exc), EXIT_NUMERICAL)


def exit_code_for_kind(kind: str) -> int:
    return {"": EXIT_OK, "usage": EXIT_USAGE, "io": EXIT_USAGE, "infeasible": EXIT_INFEASIBLE}.get(kind, EXIT_NUMERICAL)


def error_summary(text_block: str) -> str:
    """Single-line summary of the first classified line in a block."""
    results = [classify_error(line) for line in text_block.splitlines() if line.strip()]
    if not results:
        return ""
    for item in results:
        if item.category != "unknown":
            return f"{item.message}. {item.suggestion}"
    return f"{results[0].message}. {results[0].suggestion}"
