from __future__ import annotations

import csv
import hashlib
import io
import json
from collections.abc import Sequence
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from config import APP_VERSION
from models import EquivalenceReport, NegativeControl
from protocol import RoundRecord


CURVES_HEADER = ("round", "client_id", "loss", "accuracy")


@dataclass(frozen=True)
class MetricsTable:
    """Held-out loss/accuracy per round (rows) and client (columns)."""

    client_ids: tuple[int, ...]
    losses: np.ndarray
    accuracies: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence[RoundRecord]) -> "MetricsTable":
        if not records or not records[0].per_client_metrics:
            return cls((), np.zeros((len(records), 0)), np.zeros((len(records), 0)))
        ids = tuple(m.client_id for m in records[0].per_client_metrics)
        losses = np.array([[m.loss for m in r.per_client_metrics] for r in records], dtype=np.float64)
        accs = np.array(
            [[np.nan if m.accuracy is None else m.accuracy for m in r.per_client_metrics] for r in records],
            dtype=np.float64,
        )
        return cls(ids, losses, accs)

    @property
    def rounds(self) -> int:
        return int(self.losses.shape[0])

    def final_accuracy(self) -> dict[int, float]:
        if self.rounds == 0:
            return {}
        return {cid: float(self.accuracies[-1, j]) for j, cid in enumerate(self.client_ids)}

    def loss_of(self, client_id: int) -> np.ndarray:
        return self.losses[:, self.client_ids.index(client_id)]


def _fmt_float(x: float) -> str:
    return "" if np.isnan(x) else format(float(x), ".17g")


def percent(value: float) -> str:
    """Accuracy cell as a two-decimal string, e.g. '98.00'."""
    return f"{value:.2f}"


def curves_csv(table: MetricsTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVES_HEADER)
    for t in range(table.rounds):
        for j, cid in enumerate(table.client_ids):
            acc = table.accuracies[t, j]
            # metrics describe the model after t + 1 server updates
            writer.writerow([t + 1, cid, _fmt_float(table.losses[t, j]), "" if np.isnan(acc) else percent(acc)])
    return buf.getvalue()


def _write_text(out_path: Path, text: str) -> None:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = out_path.with_suffix(out_path.suffix + ".tmp")
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    tmp_path.replace(out_path)


def save_json(out_path: Path, data: Any) -> Path:
    _write_text(out_path, json.dumps(data, indent=2, sort_keys=True) + "\n")
    return out_path


def save_curves_csv(out_dir: Path, table: MetricsTable) -> Path:
    out_path = out_dir / "curves.csv"
    _write_text(out_path, curves_csv(table))
    return out_path


def accuracy_payload(
    scenario: str, kind: str, seed: int, table: MetricsTable, labels: dict[int, Sequence[int]]
) -> dict[str, Any]:
    final = table.final_accuracy()
    return {
        "scenario": scenario,
        "scenario_kind": kind,
        "seed": seed,
        "rounds": table.rounds,
        "accuracy": {str(cid): percent(acc) for cid, acc in final.items()},
        "labels": {str(cid): [int(x) for x in labels.get(cid, ())] for cid in table.client_ids},
    }


def save_accuracy_json(out_dir: Path, payload: dict[str, Any]) -> Path:
    return save_json(out_dir / "accuracy.json", payload)


def save_checks_json(
    out_dir: Path,
    scenario: str,
    seed: int,
    reports: Sequence[EquivalenceReport],
    controls: Sequence[NegativeControl],
) -> Path:
    return save_json(
        out_dir / "checks.json",
        {
            "scenario": scenario,
            "seed": seed,
            "checks": [r.model_dump(mode="json") for r in reports],
            "negative_controls": [c.model_dump(mode="json") for c in controls],
        },
    )


def config_hash(config_yaml: str) -> str:
    return hashlib.sha256(config_yaml.encode("utf-8")).hexdigest()


def save_stamp(out_dir: Path, config_yaml: str, seed: int) -> Path:
    # the only artifact that carries a wall-clock timestamp
    return save_json(
        out_dir / "stamp.json",
        {
            "config_sha256": config_hash(config_yaml),
            "seed": seed,
            "version": APP_VERSION,
            "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        },
    )


def sigma_payload(seeds: Sequence[int], finals: Sequence[dict[int, float]]) -> dict[str, Any]:
    """Mean and population 1-sigma of final accuracy across runs, per client."""
    if len(seeds) != len(finals) or not finals:
        raise ValueError("need one final-accuracy row per seed")
    clients = sorted({cid for acc in finals for cid in acc})
    mean: dict[str, str] = {}
    sigma: dict[str, str] = {}
    for cid in clients:
        vals = np.array([acc[cid] for acc in finals], dtype=np.float64)
        if np.all(vals == vals[0]):
            m, sd = float(vals[0]), 0.0
        else:
            m = float(np.mean(vals))
            sd = float(np.std(vals))
        mean[str(cid)] = percent(m)
        sigma[str(cid)] = percent(sd)
    return {"seeds": [int(s) for s in seeds], "mean": mean, "sigma": sigma}


def save_sigma_json(out_dir: Path, seeds: Sequence[int], finals: Sequence[dict[int, float]]) -> Path:
    return save_json(out_dir / "accuracy_sigma.json", sigma_payload(seeds, finals))
