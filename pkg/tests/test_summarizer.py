import json
import tempfile
import unittest
from pathlib import Path

from summarizer import find_run_dirs, generate_markdown


def _dump(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data), encoding="utf-8")


def _accuracy(seed, values):
    return {
        "scenario": "single_dictator_blobs",
        "scenario_kind": "single_dictator",
        "seed": seed,
        "rounds": 200,
        "accuracy": {str(cid): f"{v:.2f}" for cid, v in values.items()},
        "labels": {str(cid): [2 * (cid - 1), 2 * (cid - 1) + 1] for cid in values},
    }


class TestRunMarkdown(unittest.TestCase):
    def test_single_run(self):
        with tempfile.TemporaryDirectory() as td:
            root = Path(td)
            _dump(root / "accuracy.json", _accuracy(7, {1: 0.0, 2: 0.0, 3: 99.0}))
            _dump(
                root / "checks.json",
                {
                    "scenario": "single_dictator_blobs",
                    "seed": 7,
                    "checks": [
                        {"claim_id": "single_dictator", "diff_inf_norm": 3e-15, "tolerance": 1e-9,
                         "residual_inf_norm": 0.02, "passed": True}
                    ],
                    "negative_controls": [
                        {"claim_id": "single_dictator", "diff_inf_norm": 0.4, "tolerance": 1e-9, "checker_failed": True}
                    ],
                },
            )
            md = generate_markdown(root)

        self.assertIn("# single_dictator_blobs (seed 7)", md)
        self.assertIn("| 3 | 4,5 | 99.00 |", md)
        self.assertIn("| single_dictator | 3e-15 |", md)
        self.assertIn("(honest control)", md)
        self.assertNotIn("FAIL", md)

    def test_regular_run_has_no_checks(self):
        with tempfile.TemporaryDirectory() as td:
            root = Path(td)
            _dump(root / "accuracy.json", _accuracy(1, {1: 91.0, 2: 95.5}))
            _dump(root / "checks.json", {"scenario": "regular", "seed": 1, "checks": [], "negative_controls": []})
            md = generate_markdown(root)
        self.assertIn("No equivalence checks for this scenario.", md)

    def test_seed_directories_and_sigma(self):
        with tempfile.TemporaryDirectory() as td:
            root = Path(td)
            for seed in (7, 8):
                _dump(root / f"seed-{seed}" / "accuracy.json", _accuracy(seed, {1: 0.0, 3: 98.0 + seed - 7}))
            _dump(
                root / "accuracy_sigma.json",
                {"seeds": [7, 8], "mean": {"1": "0.00", "3": "98.50"}, "sigma": {"1": "0.00", "3": "0.50"}},
            )
            self.assertEqual([p.name for p in find_run_dirs(root)], ["seed-7", "seed-8"])
            md = generate_markdown(root)
        self.assertIn("(seed 8)", md)
        self.assertIn("# Across seeds [7, 8]", md)
        self.assertIn("| 3 | 98.50 | 0.50 |", md)

    def test_empty_directory(self):
        with tempfile.TemporaryDirectory() as td:
            self.assertIsNone(generate_markdown(td))
            self.assertIsNone(generate_markdown(Path(td) / "missing"))


if __name__ == "__main__":
    unittest.main()
