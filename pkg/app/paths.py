import os
from pathlib import Path

from app.errors import ReportError

PROJECT_ROOT = Path(__file__).resolve().parents[1]
BENCHMARK_CONFIG_PATH = PROJECT_ROOT / "benchmark.cfg"
DEFAULT_OUTPUT_DIR = Path("results")

TRUTHY = {"1", "true", "yes", "on"}


def env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in TRUTHY


def find_config(explicit: str | Path | None = None) -> Path:
    """Explicit path, then ``DUAL_GPMPC_CONFIG``, then the shipped benchmark."""
    if explicit:
        return Path(explicit).expanduser()
    configured = os.environ.get("DUAL_GPMPC_CONFIG", "").strip()
    if configured:
        return Path(configured).expanduser()
    return BENCHMARK_CONFIG_PATH


def resolve_output_dir(explicit: str | Path | None = None) -> Path:
    if explicit:
        base = Path(explicit).expanduser()
    else:
        configured = os.environ.get("DUAL_GPMPC_OUTPUT_DIR", "").strip()
        base = Path(configured).expanduser() if configured else DEFAULT_OUTPUT_DIR
    try:
        base.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {base}: {exc.strerror or exc}") from exc
    return base
