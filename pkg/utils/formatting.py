import math
import re

_VECTOR_RE = re.compile(r"^\(?\s*(.*?)\s*\)?$")
_BOX_RE = re.compile(r"^box\(\s*([^,]+?)\s*,\s*([^,]+?)\s*\)$", re.IGNORECASE)


def format_time(seconds: float | None) -> str:
    if seconds is None or seconds < 0 or not math.isfinite(seconds):
        return "--:--"
    if seconds < 60:
        return f"{seconds:.2f} s"
    total = round(seconds)
    h = total // 3600
    m = (total % 3600) // 60
    s = total % 60
    if h > 0:
        return f"{h:02d}:{m:02d}:{s:02d}"
    return f"{m:02d}:{s:02d}"


def parse_float(text: str) -> float | None:
    raw = text.strip().lower()
    if not raw:
        return None
    if raw in {"inf", "+inf", "infinity"}:
        return math.inf
    if raw in {"-inf", "-infinity"}:
        return -math.inf
    try:
        value = float(raw)
    except ValueError:
        return None
    return None if math.isnan(value) else value


def parse_int(text: str) -> int | None:
    raw = text.strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        return None


def parse_vector(text: str) -> tuple[float, ...] | None:
    """Parse ``a, b`` or ``(a, b)`` into a float tuple."""
    match = _VECTOR_RE.match(text.strip())
    body = match.group(1) if match else ""
    if not body:
        return None
    values = [parse_float(part) for part in body.split(",")]
    if any(value is None for value in values):
        return None
    return tuple(values)  # type: ignore[arg-type]


def parse_box(text: str) -> tuple[float, float] | None:
    match = _BOX_RE.match(text.strip())
    if not match:
        return None
    low, high = parse_float(match.group(1)), parse_float(match.group(2))
    if low is None or high is None:
        return None
    return low, high


def format_number(value: float | int) -> str:
    """Shortest text that parses back to the same value."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def format_vector(values: tuple[float, ...]) -> str:
    return ", ".join(format_number(value) for value in values)
