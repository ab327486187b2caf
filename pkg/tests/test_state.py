import json
import math
import tempfile
import unittest
from pathlib import Path

from utils.state import json_safe, save_json_file


class JsonStateTest(unittest.TestCase):
    def test_json_safe_replaces_non_finite(self) -> None:
        payload = {"a": math.nan, "b": [1.0, math.inf, (2, -math.inf)], "c": "text"}
        self.assertEqual(json_safe(payload), {"a": None, "b": [1.0, None, [2, None]], "c": "text"})

    def test_save_replaces_existing_file(self) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "out" / "metrics.json"
            save_json_file(path, {"e_ss": math.nan})
            save_json_file(path, {"e_ss": 2.74})
            self.assertEqual(json.loads(path.read_text(encoding="utf-8")), {"e_ss": 2.74})
            self.assertEqual([p.name for p in path.parent.iterdir()], ["metrics.json"])


if __name__ == "__main__":
    unittest.main()
