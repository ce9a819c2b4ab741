from __future__ import annotations

import json
from pathlib import Path
from typing import Any


ARTIFACT_NAMES = ("accuracy.json", "checks.json")


def _read_json(path: Path) -> dict[str, Any] | None:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None


def find_run_dirs(root: Path) -> list[Path]:
    """The directory itself if it holds artifacts, else its seed-* subdirectories."""
    if not root.is_dir():
        return []
    if any((root / name).exists() for name in ARTIFACT_NAMES):
        return [root]
    return sorted(p for p in root.glob("seed-*") if p.is_dir() and any((p / n).exists() for n in ARTIFACT_NAMES))


def _accuracy_table(acc: dict[str, Any]) -> list[str]:
    parts = ["| client | labels | accuracy (%) |", "|---|---|---|"]
    labels = acc.get("labels", {})
    for cid, value in sorted(acc.get("accuracy", {}).items(), key=lambda kv: int(kv[0])):
        label_str = ",".join(str(x) for x in labels.get(cid, []))
        parts.append(f"| {cid} | {label_str} | {float(value):.2f} |")
    return parts


def _checks_table(checks: dict[str, Any]) -> list[str]:
    rows = checks.get("checks", [])
    controls = checks.get("negative_controls", [])
    if not rows and not controls:
        return ["No equivalence checks for this scenario."]
    parts = ["| claim | diff | tolerance | residual | result |", "|---|---|---|---|---|"]
    for r in rows:
        result = "pass" if r.get("passed") else "FAIL"
        parts.append(
            f"| {r.get('claim_id')} | {r.get('diff_inf_norm', 0.0):.3g} | {r.get('tolerance', 0.0):.1g} "
            f"| {r.get('residual_inf_norm', 0.0):.3g} | {result} |"
        )
    for c in controls:
        result = "pass" if c.get("checker_failed") else "FAIL"
        parts.append(
            f"| {c.get('claim_id')} (honest control) | {c.get('diff_inf_norm', 0.0):.3g} "
            f"| {c.get('tolerance', 0.0):.1g} | - | {result} |"
        )
    return parts


def generate_markdown(root: str | Path) -> str | None:
    """Accuracy and check tables for a run directory, or None when it holds no artifacts."""
    root = Path(root)
    run_dirs = find_run_dirs(root)
    if not run_dirs:
        return None

    parts: list[str] = []
    for run_dir in run_dirs:
        acc = _read_json(run_dir / "accuracy.json") or {}
        checks = _read_json(run_dir / "checks.json") or {}
        title = acc.get("scenario") or checks.get("scenario") or run_dir.name
        parts.append(f"# {title} (seed {acc.get('seed', checks.get('seed', '?'))})")
        parts.append("")
        if acc:
            parts.append(f"Scenario kind: {acc.get('scenario_kind', '?')}, rounds: {acc.get('rounds', '?')}")
            parts.append("")
            parts.extend(_accuracy_table(acc))
            parts.append("")
        parts.extend(_checks_table(checks))
        parts.append("")

    sigma = _read_json(root / "accuracy_sigma.json")
    if sigma:
        parts.append(f"# Across seeds {sigma.get('seeds', [])}")
        parts.append("")
        parts.append("| client | mean (%) | sigma |")
        parts.append("|---|---|---|")
        for cid in sorted(sigma.get("mean", {}), key=int):
            parts.append(f"| {cid} | {float(sigma['mean'][cid]):.2f} | {float(sigma['sigma'].get(cid, 0.0)):.2f} |")
        parts.append("")
    return "\n".join(parts).rstrip("\n") + "\n"
