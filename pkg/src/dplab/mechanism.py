"""Per-sample clipping and Gaussian perturbation primitives.

Clipping bounds the L2 norm of every per-sample contribution; noise is
added once to the batch sum, then the sum is averaged. Sensitivity of the
released average is therefore clip_bound / batch_size, and the noise
multiplier sigma is the ratio of noise std to the clip bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .vectors import LayeredVector, RngStream, gaussian_sample, l2_norm

__all__ = [
    "ClipSpec",
    "NoisePlan",
    "aggregate_and_perturb",
    "aggregate_and_perturb_scalars",
    "clip_alpha_vec",
    "clip_to_norm",
]


def _require_positive(name: str, value: float) -> None:
    if not math.isfinite(value) or value <= 0:
        raise ContractViolation(f"{name} must be positive and finite, got {value!r}")


def _require_sigma(value: float) -> None:
    if not math.isfinite(value) or value < 0:
        raise ContractViolation(f"noise multiplier must be finite and >= 0, got {value!r}")


@dataclass(frozen=True)
class ClipSpec:
    """Clip bounds: full gradient, orthogonal component, parallel coefficients."""

    c_g: float
    c_perp: float
    c_alpha: float

    def __post_init__(self):
        _require_positive("c_g", self.c_g)
        _require_positive("c_perp", self.c_perp)
        _require_positive("c_alpha", self.c_alpha)


@dataclass(frozen=True)
class NoisePlan:
    """Noise multipliers per release channel. A zero multiplier means a
    non-private ablation and is flagged in run metrics."""

    sigma_g: float
    sigma_perp: float
    sigma_alpha: float

    def __post_init__(self):
        _require_sigma(self.sigma_g)
        _require_sigma(self.sigma_perp)
        _require_sigma(self.sigma_alpha)


def clip_to_norm(v: LayeredVector, c: float) -> LayeredVector:
    """Scale v down so its global L2 norm is at most c; direction preserved.

    Exactly idempotent: applying it twice returns the first result
    unchanged. After the initial rescale the norm is re-checked, since
    rounding can leave it a few ulps above the bound.
    """
    _require_positive("clip bound", c)
    w = v
    while True:
        n = l2_norm(w)
        if n <= c:
            return w
        f = c / n
        if f >= 1.0:
            # n exceeds c by less than half an ulp; no representable scale
            # can shrink it further
            return w
        new_blocks = tuple(b * f for b in w.blocks)
        if all(np.array_equal(nb, ob) for nb, ob in zip(new_blocks, w.blocks)):
            return w
        w = LayeredVector(new_blocks)


def clip_alpha_vec(alphas: np.ndarray, c: float) -> np.ndarray:
    """Clip an m-length coefficient vector to L2 norm c, preserving signs."""
    _require_positive("clip bound", c)
    a = np.asarray(alphas, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise ContractViolation("coefficient vector must be 1-d and non-empty")
    if not np.all(np.isfinite(a)):
        raise ContractViolation("non-finite coefficient")
    while True:
        n = math.sqrt(float(np.sum(a * a)))
        if n <= c:
            return a
        f = c / n
        if f >= 1.0:
            return a
        scaled = a * f
        if np.array_equal(scaled, a):
            return a
        a = scaled


def aggregate_and_perturb(
    per_sample: list[LayeredVector],
    c: float,
    sigma: float,
    stream: RngStream | None = None,
) -> LayeredVector:
    """Clip each vector to c, sum, add N(0, (sigma*c)^2 I), divide by the count.

    With sigma == 0 this is exactly the mean of the clipped vectors and the
    stream is not consumed. An empty list is a contract violation: empty
    sampled batches are the trainer's responsibility.
    """
    if not per_sample:
        raise ContractViolation("aggregate_and_perturb requires at least one vector")
    _require_sigma(sigma)
    if sigma > 0 and stream is None:
        raise ContractViolation("a stream is required when sigma > 0")
    dims = per_sample[0].layer_dims
    batch = len(per_sample)
    acc: list[np.ndarray] | None = None
    for g in per_sample:
        if g.layer_dims != dims:
            raise ContractViolation(f"shape mismatch: {g.layer_dims} vs {dims}")
        clipped = clip_to_norm(g, c)
        if acc is None:
            acc = [block.copy() for block in clipped.blocks]
        else:
            for a, block in zip(acc, clipped.blocks):
                a += block
    assert acc is not None
    if sigma > 0:
        noise = gaussian_sample(stream, dims, sigma * c)
        for a, nb in zip(acc, noise.blocks):
            a += nb
    return LayeredVector(tuple(a / batch for a in acc))


def aggregate_and_perturb_scalars(
    per_sample: list[np.ndarray],
    c: float,
    sigma: float,
    stream: RngStream | None = None,
) -> np.ndarray:
    """Coefficient-vector counterpart of :func:`aggregate_and_perturb`."""
    if not per_sample:
        raise ContractViolation("aggregate_and_perturb_scalars requires at least one vector")
    _require_sigma(sigma)
    if sigma > 0 and stream is None:
        raise ContractViolation("a stream is required when sigma > 0")
    first = np.asarray(per_sample[0], dtype=np.float64)
    m = first.size
    batch = len(per_sample)
    acc = np.zeros(m, dtype=np.float64)
    for a in per_sample:
        arr = np.asarray(a, dtype=np.float64)
        if arr.shape != (m,):
            raise ContractViolation(f"shape mismatch: {arr.shape} vs {(m,)}")
        acc += clip_alpha_vec(arr, c)
    if sigma > 0:
        acc += stream.generator().standard_normal(m) * (sigma * c)
    return acc / batch
