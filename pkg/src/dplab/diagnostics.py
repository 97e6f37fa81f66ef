"""Gradient-coherence telemetry and plot-data support.

Per-step records track how similar consecutive released gradients are, how
much of each per-sample gradient the orthogonal channel carries, and the
cumulative privacy spend. Medians (not means) summarize per-sample norms
since those are heavy-tailed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .decomposition import GdrBase, decompose_batch
from .errors import ContractViolation
from .vectors import LayeredVector, dot, l2_norm, sub

__all__ = [
    "CSV_COLUMNS",
    "CoherenceStats",
    "MetricsRow",
    "SensitivityProbe",
    "coherence_stats",
    "histogram",
    "sensitivity_probe",
    "steps_to_target_loss",
]

# fixed column order of the per-step metrics CSV
CSV_COLUMNS = (
    "step",
    "train_loss",
    "train_accuracy",
    "grad_norm_median",
    "perp_norm_median",
    "diff_norm_median",
    "alpha_vec_norm",
    "cos_prev",
    "eps_cum",
    "wall_ms",
)


@dataclass(frozen=True)
class MetricsRow:
    """One step of telemetry. Fields that a method does not produce are 0.0.

    ``wall_ms`` is real elapsed time in memory; persisted artifacts zero it
    so reruns of the same config are byte-identical.
    """

    step: int
    train_loss: float
    train_accuracy: float
    grad_norm_median: float
    perp_norm_median: float
    diff_norm_median: float
    alpha_vec_norm: float
    cos_prev: float
    eps_cum: float
    wall_ms: float


@dataclass(frozen=True)
class CoherenceStats:
    cosine: float
    norm_ratio: float
    degenerate: bool


def coherence_stats(prev: LayeredVector, curr: LayeredVector) -> CoherenceStats:
    """Cosine between two vectors and the relative step ||curr - prev|| / ||curr||.

    Either vector being zero makes the pair degenerate: both statistics are
    reported as 0 with the flag set.
    """
    n_prev = l2_norm(prev)
    n_curr = l2_norm(curr)
    if n_prev == 0.0 or n_curr == 0.0:
        return CoherenceStats(0.0, 0.0, True)
    cosine = dot(prev, curr) / (n_prev * n_curr)
    cosine = min(1.0, max(-1.0, cosine))
    ratio = l2_norm(sub(curr, prev)) / n_curr
    return CoherenceStats(cosine, ratio, False)


@dataclass(frozen=True)
class SensitivityProbe:
    """Batch-level quantiles of gradient norms before and after decomposition,
    with the parameter step size recorded alongside for offline smoothness
    estimation."""

    grad_norm_q25: float
    grad_norm_median: float
    grad_norm_q75: float
    perp_norm_q25: float
    perp_norm_median: float
    perp_norm_q75: float
    alpha_abs_median: tuple[float, ...]
    perp_to_grad_ratio_median: float
    w_step_norm: float


def sensitivity_probe(
    per_sample: list[LayeredVector], base: GdrBase, w_step_norm: float
) -> SensitivityProbe:
    if not per_sample:
        raise ContractViolation("sensitivity probe needs at least one gradient")
    decs = decompose_batch(per_sample, base)
    grad_norms = np.array([l2_norm(g) for g in per_sample])
    perp_norms = np.array([l2_norm(d.g_perp) for d in decs])
    alpha_abs = np.abs(np.stack([d.alphas for d in decs]))
    ratios = np.where(grad_norms > 0.0, perp_norms / np.maximum(grad_norms, 1e-300), 0.0)
    q25, q50, q75 = np.quantile(grad_norms, [0.25, 0.5, 0.75])
    p25, p50, p75 = np.quantile(perp_norms, [0.25, 0.5, 0.75])
    return SensitivityProbe(
        float(q25),
        float(q50),
        float(q75),
        float(p25),
        float(p50),
        float(p75),
        tuple(float(v) for v in np.median(alpha_abs, axis=0)),
        float(np.median(ratios)),
        float(w_step_norm),
    )


def histogram(values: Sequence[float], bins: int) -> list[tuple[float, int]]:
    """Equal-width bins over [min, max]; returns (left edge, count) pairs."""
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise ContractViolation("cannot histogram an empty list")
    if bins < 1:
        raise ContractViolation(f"bins must be >= 1, got {bins}")
    if not np.all(np.isfinite(vals)):
        raise ContractViolation("non-finite value")
    counts, edges = np.histogram(vals, bins=bins)
    return [(float(edges[i]), int(counts[i])) for i in range(bins)]


def steps_to_target_loss(losses: Sequence[float], target: float, window: int = 5) -> int | None:
    """First 1-based step whose trailing-``window`` mean loss is below target.

    Averages over the available prefix while fewer than ``window`` steps
    exist. Returns None when the run never crosses.
    """
    if window < 1:
        raise ContractViolation(f"window must be >= 1, got {window}")
    if not math.isfinite(target):
        raise ContractViolation(f"target must be finite, got {target!r}")
    for t in range(1, len(losses) + 1):
        tail = losses[max(0, t - window) : t]
        if sum(tail) / len(tail) < target:
            return t
    return None
