"""Host facts recorded next to solve-time metrics."""

from __future__ import annotations

import os
import platform
from dataclasses import dataclass


@dataclass
class HostCapabilities:
    cpu_count: int = 0
    physical_cores: int = 0
    cpu_freq_mhz: float = 0.0
    memory_gb: float = 0.0
    platform: str = ""
    python: str = ""
    detection_error: str = ""

    @property
    def laptop_class(self) -> bool:
        """Rough check that solve times are comparable with a desk machine."""
        return 0 < self.cpu_count <= 16 and 0.0 < self.memory_gb <= 64.0

    def summary(self) -> str:
        parts = [f"{self.cpu_count} CPU"]
        if self.physical_cores:
            parts.append(f"{self.physical_cores} cores")
        if self.cpu_freq_mhz:
            parts.append(f"{self.cpu_freq_mhz:.0f} MHz")
        if self.memory_gb:
            parts.append(f"{self.memory_gb:.1f} GB RAM")
        return " | ".join(parts)

    def as_dict(self) -> dict[str, object]:
        return {
            "cpu_count": self.cpu_count,
            "physical_cores": self.physical_cores,
            "cpu_freq_mhz": self.cpu_freq_mhz,
            "memory_gb": self.memory_gb,
            "platform": self.platform,
            "python": self.python,
            "detection_error": self.detection_error,
        }


class HardwareService:
    def __init__(self) -> None:
        self._cache: HostCapabilities | None = None

    def detect(self) -> HostCapabilities:
        if self._cache is not None:
            return self._cache

        caps = HostCapabilities(
            cpu_count=os.cpu_count() or 0,
            platform=platform.platform(),
            python=platform.python_version(),
        )
        try:
            import psutil  # type: ignore

            caps.physical_cores = int(psutil.cpu_count(logical=False) or 0)
            freq = psutil.cpu_freq()
            caps.cpu_freq_mhz = float(freq.current) if freq else 0.0
            caps.memory_gb = float(psutil.virtual_memory().total) / 1024**3
        except ImportError:
            caps.detection_error = "psutil not installed"
        except Exception as exc:
            caps.detection_error = str(exc)

        self._cache = caps
        return caps

    def host_info(self) -> dict[str, object]:
        return self.detect().as_dict()

    def invalidate_cache(self) -> None:
        self._cache = None

    @property
    def cached(self) -> HostCapabilities | None:
        return self._cache
