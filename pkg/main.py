import sys
from pathlib import Path

REQUIREMENTS = Path(__file__).resolve().parent / "requirements.txt"


def _bootstrap_dependencies() -> None:
    from app.dependency_bootstrap import OPTIONAL_PACKAGES, check_dependencies, ensure_runtime_dependencies

    try:
        installed = ensure_runtime_dependencies(REQUIREMENTS)
    except Exception as exc:
        print(f"Dependency check failed: {exc}", file=sys.stderr)
        raise
    if installed:
        print("Installed Python libraries: " + ", ".join(installed))
    for name in check_dependencies(REQUIREMENTS).optional_missing:
        print(f"note: {name} not installed; {OPTIONAL_PACKAGES[name]} disabled", file=sys.stderr)


def main() -> None:
    _bootstrap_dependencies()

    from cli import main as cli_main

    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
