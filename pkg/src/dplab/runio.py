"""Run artifact persistence: metrics CSV, summary JSON, norm snapshots.

Artifacts are written atomically (temp file + rename) and are byte-stable:
floats go through repr, and the wall_ms / runtime_ms fields are zeroed on
disk so rerunning an identical config reproduces files exactly. Real
timings stay on the in-memory result.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .diagnostics import CSV_COLUMNS, MetricsRow
from .errors import ContractViolation
from .trainers import TrainResult

__all__ = [
    "PERP_SNAPSHOT_FILENAME",
    "build_summary",
    "read_metrics_csv",
    "write_metrics_csv",
    "write_perp_snapshot",
    "write_run",
    "write_summary_json",
]

PERP_SNAPSHOT_FILENAME = "perp_norms.txt"


def _fmt(value: float) -> str:
    return repr(float(value))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                (
                    str(r.step),
                    _fmt(r.train_loss),
                    _fmt(r.train_accuracy),
                    _fmt(r.grad_norm_median),
                    _fmt(r.perp_norm_median),
                    _fmt(r.diff_norm_median),
                    _fmt(r.alpha_vec_norm),
                    _fmt(r.cos_prev),
                    _fmt(r.eps_cum),
                    "0",  # wall time is zeroed on disk to keep reruns byte-identical
                )
            )
        )
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def read_metrics_csv(path) -> list[dict[str, float]]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [line for line in text.split("\n") if line]
    if not lines:
        raise ContractViolation(f"{path}: empty metrics file")
    header = tuple(lines[0].split(","))
    if header != CSV_COLUMNS:
        raise ContractViolation(
            f"{path}: unexpected columns {header}, expected {CSV_COLUMNS}"
        )
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise ContractViolation(f"{path}: malformed row {line!r}")
        rows.append({name: float(v) for name, v in zip(CSV_COLUMNS, parts)})
    return rows


def write_summary_json(path, summary: dict) -> None:
    _atomic_write(Path(path), json.dumps(summary, indent=2) + "\n")


def write_perp_snapshot(path, values: np.ndarray) -> None:
    _atomic_write(Path(path), "\n".join(_fmt(v) for v in values) + "\n")


def read_perp_snapshot(path) -> np.ndarray:
    lines = [line for line in Path(path).read_text(encoding="utf-8").split("\n") if line]
    return np.array([float(v) for v in lines])


def build_summary(config_echo: dict, result: TrainResult) -> dict:
    """Summary JSON payload. eps/order are null for non-private runs (the
    sgd baseline, or any zero noise multiplier the method relies on)."""
    last = result.rows[-1]
    if result.config.method == "sgd":
        privacy = {"eps": None, "delta": None, "order": None}
        resolved_noise = None
    elif result.non_private:
        privacy = {"eps": None, "delta": result.ledger.delta, "order": None}
        resolved_noise = {
            "sigma_g": result.noise.sigma_g,
            "sigma_perp": result.noise.sigma_perp,
            "sigma_alpha": result.noise.sigma_alpha,
        }
    else:
        eps, order = result.ledger.epsilon()
        privacy = {"eps": eps, "delta": result.ledger.delta, "order": order}
        resolved_noise = {
            "sigma_g": result.noise.sigma_g,
            "sigma_perp": result.noise.sigma_perp,
            "sigma_alpha": result.noise.sigma_alpha,
        }
    return {
        "config": config_echo,
        "resolved_noise": resolved_noise,
        "final": {"loss": last.train_loss, "accuracy": last.train_accuracy},
        "privacy": privacy,
        "phase_steps": dict(result.phase_steps),
        "seed": result.config.seed,
        "runtime_ms": 0,  # zeroed on disk; real timing lives on TrainResult
    }


def write_run(out_dir, result: TrainResult, config_echo: dict) -> dict[str, str]:
    """Persist one run under out_dir; returns the artifact paths."""
    out = Path(out_dir)
    metrics_path = out / "metrics.csv"
    summary_path = out / "summary.json"
    write_metrics_csv(metrics_path, result.rows)
    write_summary_json(summary_path, build_summary(config_echo, result))
    paths = {"metrics": str(metrics_path), "summary": str(summary_path)}
    if result.perp_snapshot is not None and result.perp_snapshot.size:
        snap_path = out / PERP_SNAPSHOT_FILENAME
        write_perp_snapshot(snap_path, result.perp_snapshot)
        paths["perp_snapshot"] = str(snap_path)
    return paths
