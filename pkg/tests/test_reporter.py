import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from reporter import (
    MetricsTable,
    accuracy_payload,
    curves_csv,
    percent,
    save_accuracy_json,
    sigma_payload,
)


def _table():
    losses = np.array([[2.5, 2.4], [2.25, 0.125]], dtype=np.float64)
    accs = np.array([[10.0, 50.0], [0.0, 98.0]], dtype=np.float64)
    return MetricsTable((1, 2), losses, accs)


class TestAccuracyFormat(unittest.TestCase):
    def test_percent_keeps_two_decimals(self):
        self.assertEqual(percent(98.0), "98.00")
        self.assertEqual(percent(0.0), "0.00")
        self.assertEqual(percent(100.0), "100.00")
        self.assertEqual(percent(33.33333), "33.33")

    def test_accuracy_json_cells_have_two_decimals(self):
        payload = accuracy_payload("s", "single_dictator", 7, _table(), {1: [0, 1], 2: [2, 3]})
        self.assertEqual(payload["accuracy"], {"1": "0.00", "2": "98.00"})
        self.assertEqual(payload["rounds"], 2)
        with tempfile.TemporaryDirectory() as td:
            text = save_accuracy_json(Path(td), payload).read_text(encoding="utf-8")
        self.assertIn('"2": "98.00"', text)
        for cell in json.loads(text)["accuracy"].values():
            self.assertRegex(cell, r"^\d{1,3}\.\d{2}$")
            self.assertTrue(0.0 <= float(cell) <= 100.0)

    def test_sigma_cells_have_two_decimals(self):
        out = sigma_payload([7, 8], [{1: 0.0, 3: 98.0}, {1: 0.0, 3: 99.0}])
        self.assertEqual(out["mean"], {"1": "0.00", "3": "98.50"})
        self.assertEqual(out["sigma"], {"1": "0.00", "3": "0.50"})

    def test_curves_rows_use_the_same_cells(self):
        lines = curves_csv(_table()).splitlines()
        self.assertEqual(lines[0], "round,client_id,loss,accuracy")
        self.assertEqual(lines[-1], "2,2,0.125,98.00")


if __name__ == "__main__":
    unittest.main()
