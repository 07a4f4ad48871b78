"""Experiment reports: JSON, deterministic CSV tables and figures."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .config import SweepConfig

PASS, FAIL, FLAGGED = "PASS", "FAIL", "FLAGGED"


def to_plain(value: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


@dataclass(frozen=True)
class Verdict:
    name: str
    status: str
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in (PASS, FAIL, FLAGGED):
            raise ValueError(f"unknown verdict status {self.status!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "metrics": to_plain(self.metrics)}

    @classmethod
    def from_dict(cls, data: dict) -> "Verdict":
        return cls(data["name"], data["status"], dict(data.get("metrics", {})))


def provenance(cfg: SweepConfig) -> dict:
    from .. import __version__

    return {
        "package_version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "threads": cfg.threads,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    config_hash: str
    records: list[dict]
    profile: list[dict]
    verdicts: list[Verdict]
    provenance: dict

    @classmethod
    def build(cls, cfg: SweepConfig, records: list[dict], profile: list[dict],
              verdicts: list[Verdict]) -> "ExperimentReport":
        digest = cfg.config_hash()
        records = [{**r, "config_hash": digest} for r in records]
        return cls(cfg.experiment, cfg.to_dict(), digest, records, list(profile), list(verdicts),
                   provenance(cfg))

    @property
    def failed(self) -> bool:
        return any(v.status == FAIL for v in self.verdicts)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": to_plain(self.config),
            "config_hash": self.config_hash,
            "records": to_plain(self.records),
            "profile": to_plain(self.profile),
            "verdicts": [v.to_dict() for v in self.verdicts],
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        data = json.loads(text)
        return cls(data["experiment"], data["config"], data["config_hash"], data["records"],
                   data["profile"], [Verdict.from_dict(v) for v in data["verdicts"]], data["provenance"])

    def summary_lines(self) -> list[str]:
        return [f"{v.status} {v.name}" for v in self.verdicts]


def recompute_verdicts(report: ExperimentReport) -> list[Verdict]:
    """Verdicts re-derived from the stored records alone."""
    from .sweeps import compute_verdicts

    return compute_verdicts(report.experiment, report.records)


# ------------------------------------------------------------ CSV


def _columns(rows: list[dict]) -> list[str]:
    # key first, config_hash last, everything else sorted
    names = {k for r in rows for k in r}
    middle = sorted(names - {"key", "config_hash"})
    return (["key"] if "key" in names else []) + middle + (["config_hash"] if "config_hash" in names else [])


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ";".join(_cell(v) for v in value)
    return str(value)


def csv_text(rows: list[dict]) -> str:
    """Rows as CSV with a fixed column order and repr floats."""
    buf = io.StringIO()
    cols = _columns(rows)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        writer.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def emit_report(report: ExperimentReport, out_dir, figures: bool = True) -> dict[str, Path]:
    """Write report.json, rates.csv, profile.csv and (optionally) figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "rates": out / "rates.csv", "profile": out / "profile.csv"}
    paths["json"].write_text(report.to_json() + "\n")
    paths["rates"].write_text(csv_text(report.records), newline="")
    paths["profile"].write_text(csv_text(report.profile), newline="")
    if figures:
        from .plotting import render_figures

        paths.update(render_figures(report, out))
    return paths
