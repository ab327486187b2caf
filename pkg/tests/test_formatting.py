import math
import unittest

from utils.formatting import format_number, format_time, format_vector, parse_box, parse_float, parse_int, parse_vector


class FormattingTest(unittest.TestCase):
    def test_format_time(self) -> None:
        self.assertEqual(format_time(None), "--:--")
        self.assertEqual(format_time(math.nan), "--:--")
        self.assertEqual(format_time(1.5), "1.50 s")
        self.assertEqual(format_time(75), "01:15")
        self.assertEqual(format_time(3725), "01:02:05")

    def test_parse_float(self) -> None:
        self.assertEqual(parse_float(" 1e-3 "), 1e-3)
        self.assertEqual(parse_float("inf"), math.inf)
        self.assertEqual(parse_float("-Infinity"), -math.inf)
        self.assertIsNone(parse_float("nan"))
        self.assertIsNone(parse_float("abc"))
        self.assertIsNone(parse_float(""))

    def test_parse_int(self) -> None:
        self.assertEqual(parse_int("20"), 20)
        self.assertIsNone(parse_int("2.5"))

    def test_parse_vector(self) -> None:
        self.assertEqual(parse_vector("20.0, 1.0"), (20.0, 1.0))
        self.assertEqual(parse_vector("(-0.1, -5)"), (-0.1, -5.0))
        self.assertIsNone(parse_vector("1.0, x"))
        self.assertIsNone(parse_vector(""))

    def test_parse_box(self) -> None:
        self.assertEqual(parse_box("box(-0.01, 0.02)"), (-0.01, 0.02))
        self.assertEqual(parse_box("BOX( -1 , 1 )"), (-1.0, 1.0))
        self.assertIsNone(parse_box("box(1)"))

    def test_format_number_round_trips(self) -> None:
        self.assertEqual(format_number(True), "true")
        self.assertEqual(format_number(20), "20")
        self.assertEqual(format_number(math.inf), "inf")
        self.assertEqual(float(format_number(0.1 + 0.2)), 0.1 + 0.2)
        self.assertEqual(format_vector((20.0, 1.0)), "20.0, 1.0")


if __name__ == "__main__":
    unittest.main()
