import sys
import unittest
from types import SimpleNamespace
from unittest.mock import patch

from services.hardware_service import HardwareService, HostCapabilities


class HostCapabilitiesTest(unittest.TestCase):
    def test_defaults(self) -> None:
        caps = HostCapabilities()
        self.assertFalse(caps.laptop_class)
        self.assertEqual(caps.summary(), "0 CPU")

    def test_summary_and_class(self) -> None:
        caps = HostCapabilities(cpu_count=8, physical_cores=4, cpu_freq_mhz=2400.0, memory_gb=16.0)
        self.assertTrue(caps.laptop_class)
        self.assertEqual(caps.summary(), "8 CPU | 4 cores | 2400 MHz | 16.0 GB RAM")
        self.assertEqual(caps.as_dict()["memory_gb"], 16.0)


class HardwareServiceTest(unittest.TestCase):
    def test_detect_with_psutil(self) -> None:
        fake = SimpleNamespace(
            cpu_count=lambda logical=True: 4,
            cpu_freq=lambda: SimpleNamespace(current=3000.0),
            virtual_memory=lambda: SimpleNamespace(total=8 * 1024**3),
        )
        with patch.dict(sys.modules, {"psutil": fake}):
            caps = HardwareService().detect()
        self.assertEqual(caps.physical_cores, 4)
        self.assertEqual(caps.cpu_freq_mhz, 3000.0)
        self.assertAlmostEqual(caps.memory_gb, 8.0)
        self.assertEqual(caps.detection_error, "")

    def test_missing_psutil_is_recorded(self) -> None:
        with patch.dict(sys.modules, {"psutil": None}):
            caps = HardwareService().detect()
        self.assertEqual(caps.detection_error, "psutil not installed")
        self.assertEqual(caps.physical_cores, 0)

    def test_cache_and_invalidate(self) -> None:
        service = HardwareService()
        self.assertIsNone(service.cached)
        first = service.detect()
        self.assertIs(service.detect(), first)
        service.invalidate_cache()
        self.assertIsNone(service.cached)
        self.assertIn("cpu_count", service.host_info())


if __name__ == "__main__":
    unittest.main()
