"""Renyi-DP accounting for Poisson-subsampled Gaussian releases.

Implements the standard integer-order upper bound on the RDP of the
subsampled Gaussian mechanism,

    RDP(lambda) = log( sum_{k=0}^{lambda} C(lambda,k) (1-q)^(lambda-k) q^k
                       exp(k(k-1) / (2 sigma^2)) ) / (lambda - 1),

evaluated in log space, composed additively over release events, and
converted to (eps, delta) by minimizing

    eps(lambda) = RDP_total(lambda) + log(1/delta) / (lambda - 1)

over the integer order grid 2..256. Calibration inverts the composition by
bisecting a single noise scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, CalibrationInfeasible, ContractViolation

__all__ = [
    "DEFAULT_ORDERS",
    "PrivacyLedger",
    "ReleaseEvent",
    "calibrate_sigma",
    "effective_sigma",
    "ledger_append",
    "rdp_subsampled_gaussian",
    "to_eps_delta",
]

DEFAULT_ORDERS: tuple[int, ...] = tuple(range(2, 257))

ROLE_FIRST = "first"
ROLE_GDR = "gdr"
ROLE_DPSGD = "dpsgd"
_ROLES = (ROLE_FIRST, ROLE_GDR, ROLE_DPSGD)

# log(i!) for i = 0..256; enough for every order on the grid
_LOG_FACT = np.array([math.lgamma(i + 1) for i in range(257)])


def _validate_q(q: float) -> None:
    if not 0.0 <= q <= 1.0:
        raise ContractViolation(f"sampling ratio must be in [0, 1], got {q!r}")


def _validate_sigma(sigma: float) -> None:
    if not math.isfinite(sigma) or sigma <= 0:
        raise ContractViolation(f"noise multiplier must be positive, got {sigma!r}")


def _rdp_one(q: float, sigma: float, order: int) -> float:
    """RDP at a single integer order; q and sigma already validated."""
    if q == 0.0:
        return 0.0
    if q == 1.0:
        return order / (2.0 * sigma * sigma)
    ks = np.arange(order + 1)
    log_binom = _LOG_FACT[order] - _LOG_FACT[ks] - _LOG_FACT[order - ks]
    log_terms = (
        log_binom
        + ks * math.log(q)
        + (order - ks) * math.log1p(-q)
        + ks * (ks - 1) / (2.0 * sigma * sigma)
    )
    peak = float(log_terms.max())
    if not math.isfinite(peak):
        return math.inf
    log_total = peak + math.log(float(np.sum(np.exp(log_terms - peak))))
    # the sum is >= 1 analytically; clamp rounding residue
    return max(log_total / (order - 1), 0.0)


def rdp_subsampled_gaussian(q: float, sigma: float, order: int) -> float:
    """RDP of one Poisson-subsampled Gaussian release at an integer order >= 2."""
    _validate_q(q)
    _validate_sigma(sigma)
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)):
        raise ContractViolation(f"order must be an integer, got {order!r}")
    if order < 2:
        raise ContractViolation(f"order must be >= 2, got {order}")
    if order > 256:
        raise ContractViolation(f"order {order} beyond the supported grid (max 256)")
    return _rdp_one(q, sigma, int(order))


def _rdp_vector(q: float, sigma: float, orders: tuple[int, ...]) -> np.ndarray:
    return np.array([_rdp_one(q, sigma, order) for order in orders])


def effective_sigma(sigma_perp: float, sigma_alpha: float) -> float:
    """Multiplier of the single Gaussian mechanism equivalent to jointly
    releasing two unit-sensitivity blocks with independent noise:
    1/sigma_eff^2 = 1/sigma_perp^2 + 1/sigma_alpha^2."""
    _validate_sigma(sigma_perp)
    _validate_sigma(sigma_alpha)
    if sigma_perp == sigma_alpha:
        # keep the symmetric case bit-exact
        return sigma_perp / math.sqrt(2.0)
    return 1.0 / math.sqrt(1.0 / (sigma_perp * sigma_perp) + 1.0 / (sigma_alpha * sigma_alpha))


@dataclass(frozen=True)
class ReleaseEvent:
    """``steps`` identical subsampled-Gaussian releases at ratio ``q`` and
    effective multiplier ``sigma_eff``."""

    q: float
    sigma_eff: float
    steps: int = 1

    def __post_init__(self):
        _validate_q(self.q)
        _validate_sigma(self.sigma_eff)
        if isinstance(self.steps, bool) or not isinstance(self.steps, (int, np.integer)):
            raise ContractViolation(f"steps must be an integer, got {self.steps!r}")
        if self.steps < 1:
            raise ContractViolation(f"steps must be >= 1, got {self.steps}")


class PrivacyLedger:
    """Ordered record of release events with accumulated RDP per order.

    Append mutates under exclusive access and also returns the ledger for
    chaining; queries are pure. Accumulated RDP is additive over events, so
    the query result does not depend on append order.
    """

    def __init__(self, delta: float, orders: tuple[int, ...] = DEFAULT_ORDERS):
        if not 0.0 < delta < 1.0:
            raise ContractViolation(f"delta must be in (0, 1), got {delta!r}")
        if len(orders) == 0 or any(
            isinstance(o, bool) or not isinstance(o, (int, np.integer)) or o < 2 for o in orders
        ):
            raise ContractViolation("orders must be integers >= 2")
        self.delta = float(delta)
        self.orders = tuple(int(o) for o in orders)
        self.events: list[ReleaseEvent] = []
        self._orders_arr = np.array(self.orders, dtype=np.float64)
        self._rdp = np.zeros(len(self.orders))
        self._per_step_cache: dict[tuple[float, float], np.ndarray] = {}

    def append(self, event: ReleaseEvent) -> "PrivacyLedger":
        key = (event.q, event.sigma_eff)
        per_step = self._per_step_cache.get(key)
        if per_step is None:
            per_step = _rdp_vector(event.q, event.sigma_eff, self.orders)
            self._per_step_cache[key] = per_step
        self._rdp = self._rdp + event.steps * per_step
        self.events.append(event)
        return self

    def rdp_values(self) -> np.ndarray:
        return self._rdp.copy()

    def epsilon(self) -> tuple[float, int]:
        """(eps, minimizing order) at the ledger's delta."""
        if not self.events:
            raise ContractViolation("cannot convert an empty ledger")
        eps_all = self._rdp + math.log(1.0 / self.delta) / (self._orders_arr - 1.0)
        idx = int(np.argmin(eps_all))
        return float(eps_all[idx]), self.orders[idx]


def ledger_append(ledger: PrivacyLedger, event: ReleaseEvent) -> PrivacyLedger:
    return ledger.append(event)


def to_eps_delta(ledger: PrivacyLedger) -> tuple[float, int]:
    return ledger.epsilon()


def _schedule_eps(
    schedule: list[tuple[float, int, str]],
    delta: float,
    scale: float,
    sigma_alpha: float,
    ratio_g: float,
) -> float:
    ledger = PrivacyLedger(delta)
    for q, steps, role in schedule:
        sigma = effective_sigma(scale, sigma_alpha) if role == ROLE_GDR else ratio_g * scale
        ledger.append(ReleaseEvent(q, sigma, steps))
    return ledger.epsilon()[0]


def calibrate_sigma(
    eps_target: float,
    delta: float,
    schedule: list[tuple[float, int, str]],
    sigma_alpha: float,
    ratio_g: float = 1.0,
    *,
    rel_tol: float = 1e-3,
    max_iter: int = 200,
) -> tuple[float, float]:
    """Find (sigma_perp, sigma_g) hitting eps_target at delta.

    One scale s is bisected with sigma_perp = s and sigma_g = ratio_g * s;
    "gdr" schedule entries are accounted at effective_sigma(s, sigma_alpha),
    "dpsgd"/"first" entries at sigma_g. sigma_alpha is fixed by the caller.

    Raises CalibrationInfeasible when the target lies below what the fixed
    sigma_alpha (or the order grid) can ever reach, CalibrationError when
    bracketing/bisection does not converge within max_iter evaluations.
    """
    if not math.isfinite(eps_target) or eps_target <= 0:
        raise ContractViolation(f"eps target must be positive, got {eps_target!r}")
    if not 0.0 < delta < 1.0:
        raise ContractViolation(f"delta must be in (0, 1), got {delta!r}")
    if not schedule:
        raise ContractViolation("schedule must be non-empty")
    _validate_sigma(sigma_alpha)
    if not math.isfinite(ratio_g) or ratio_g <= 0:
        raise ContractViolation(f"ratio_g must be positive, got {ratio_g!r}")
    for q, steps, role in schedule:
        _validate_q(q)
        if isinstance(steps, bool) or not isinstance(steps, (int, np.integer)) or steps < 1:
            raise ContractViolation(f"schedule steps must be integers >= 1, got {steps!r}")
        if role not in _ROLES:
            raise ContractViolation(f"unknown schedule role {role!r}")

    max_order = max(DEFAULT_ORDERS)
    grid_floor = math.log(1.0 / delta) / (max_order - 1)
    if eps_target <= grid_floor:
        raise CalibrationInfeasible(
            f"eps target {eps_target:g} is at or below the conversion floor "
            f"{grid_floor:.6g} of the order grid (max order {max_order})",
            grid_floor,
        )
    gdr_entries = [(q, steps) for q, steps, role in schedule if role == ROLE_GDR]
    if gdr_entries:
        floor_ledger = PrivacyLedger(delta)
        for q, steps in gdr_entries:
            floor_ledger.append(ReleaseEvent(q, sigma_alpha, steps))
        floor_eps = floor_ledger.epsilon()[0]
        if floor_eps >= eps_target:
            raise CalibrationInfeasible(
                f"eps target {eps_target:g} is unattainable: the alpha channel alone "
                f"(sigma_alpha={sigma_alpha:g}) already spends eps={floor_eps:.6g}",
                floor_eps,
            )

    def eps_at(scale: float) -> float:
        return _schedule_eps(schedule, delta, scale, sigma_alpha, ratio_g)

    tol = rel_tol * eps_target
    iters = 0

    def budget() -> None:
        nonlocal iters
        iters += 1
        if iters > max_iter:
            raise CalibrationError(f"calibration did not converge within {max_iter} iterations")

    lo = hi = 1.0
    budget()
    e = eps_at(1.0)
    if abs(e - eps_target) <= tol:
        return 1.0, ratio_g * 1.0
    if e > eps_target:
        # too much privacy loss: grow the scale
        while e > eps_target:
            lo = hi
            hi *= 2.0
            budget()
            e = eps_at(hi)
        if abs(e - eps_target) <= tol:
            return hi, ratio_g * hi
    else:
        while e < eps_target:
            hi = lo
            lo /= 2.0
            budget()
            e = eps_at(lo)
        if abs(e - eps_target) <= tol:
            return lo, ratio_g * lo

    # invariant: eps(lo) >= eps_target >= eps(hi)
    while True:
        mid = 0.5 * (lo + hi)
        budget()
        e = eps_at(mid)
        if abs(e - eps_target) <= tol:
            return mid, ratio_g * mid
        if e > eps_target:
            lo = mid
        else:
            hi = mid
