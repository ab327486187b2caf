"""Startup check of the numerical stack named in requirements.txt."""

from __future__ import annotations

import importlib.metadata
import importlib.util
import re
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

from app.paths import env_flag

# packages the solvers run without; missing ones only disable a feature
OPTIONAL_PACKAGES = {"psutil": "host facts in metrics.json"}

SKIP_ENV_VAR = "DUAL_GPMPC_SKIP_DEP_BOOTSTRAP"
AUTO_INSTALL_ENV_VAR = "DUAL_GPMPC_AUTO_INSTALL_DEPS"

_NAME_RE = re.compile(r"^\s*([A-Za-z0-9][A-Za-z0-9._-]*)")
_MINIMUM_RE = re.compile(r">=\s*([0-9][0-9.]*)")


class DependencyBootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class Requirement:
    name: str
    minimum: tuple[int, ...] = ()

    @property
    def module(self) -> str:
        return self.name.lower().replace("-", "_")

    @property
    def optional(self) -> bool:
        return self.name in OPTIONAL_PACKAGES


@dataclass
class DependencyReport:
    missing: list[str] = field(default_factory=list)
    outdated: list[str] = field(default_factory=list)
    optional_missing: list[str] = field(default_factory=list)

    @property
    def blocking(self) -> list[str]:
        return self.missing + self.outdated


def parse_requirement(line: str) -> Requirement | None:
    text = line.split("#", 1)[0].strip()
    if not text or text.startswith(("-", "git+", "http://", "https://")):
        return None
    name = _NAME_RE.match(text)
    if not name:
        return None
    floor = _MINIMUM_RE.search(text)
    return Requirement(name.group(1), _version_tuple(floor.group(1)) if floor else ())


def read_requirements(requirements_path: Path) -> list[Requirement]:
    if not requirements_path.exists():
        return []
    parsed = (parse_requirement(line) for line in requirements_path.read_text(encoding="utf-8").splitlines())
    return [item for item in parsed if item is not None]


def _version_tuple(text: str) -> tuple[int, ...]:
    parts = []
    for chunk in text.split("."):
        digits = re.match(r"\d+", chunk)
        if not digits:
            break
        parts.append(int(digits.group()))
    return tuple(parts)


def _installed_version(requirement: Requirement) -> tuple[int, ...] | None:
    try:
        return _version_tuple(importlib.metadata.version(requirement.name))
    except importlib.metadata.PackageNotFoundError:
        return None


def check_dependencies(requirements_path: Path) -> DependencyReport:
    report = DependencyReport()
    for requirement in read_requirements(requirements_path):
        if importlib.util.find_spec(requirement.module) is None:
            (report.optional_missing if requirement.optional else report.missing).append(requirement.name)
            continue
        installed = _installed_version(requirement)
        if requirement.minimum and installed is not None and installed < requirement.minimum:
            report.outdated.append(requirement.name)
    return report


def ensure_runtime_dependencies(requirements_path: Path, *, stdout=None, stderr=None) -> list[str]:
    """Return the packages installed; raise when the solver stack is missing or too old and auto-install is off."""
    if env_flag(SKIP_ENV_VAR):
        return []
    requirements_path = requirements_path.expanduser().resolve()
    if not requirements_path.exists():
        raise DependencyBootstrapError(f"requirements.txt not found: {requirements_path}")
    report = check_dependencies(requirements_path)
    if not report.blocking:
        return []
    problems = ", ".join(report.missing + [f"{name} (too old)" for name in report.outdated])
    if not env_flag(AUTO_INSTALL_ENV_VAR):
        raise DependencyBootstrapError(
            f"Missing Python libraries: {problems}. Install them with: {sys.executable} -m pip install -r {requirements_path}"
        )
    cmd = [sys.executable, "-m", "pip", "install", "--upgrade", "-r", str(requirements_path)]
    result = subprocess.run(cmd, stdout=stdout, stderr=stderr, text=True)
    if result.returncode != 0:
        raise DependencyBootstrapError(f"Failed to install Python libraries: {problems}. Command failed: {' '.join(cmd)}")
    remaining = check_dependencies(requirements_path).blocking
    if remaining:
        raise DependencyBootstrapError("Python libraries are still missing after install: " + ", ".join(remaining))
    return report.blocking
