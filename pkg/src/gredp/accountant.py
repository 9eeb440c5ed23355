"""Privacy calibration and composition for the Gaussian mechanism."""

from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_ALPHAS = (1.5,) + tuple(float(a) for a in range(2, 65))


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    alpha: float | None = None
    steps: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        _check_delta(self.delta)
        if self.alpha is not None and not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")


def _check_delta(delta: float) -> None:
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def calibrate_sigma(epsilon: float, delta: float) -> float:
    """Noise multiplier ``sqrt(2 ln(1.25/delta)) / epsilon`` for one Gaussian release."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    _check_delta(delta)
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def gaussian_epsilon(sigma: float, delta: float) -> float:
    """Inverse of :func:`calibrate_sigma`."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    _check_delta(delta)
    return math.sqrt(2.0 * math.log(1.25 / delta)) / sigma


def rdp_to_dp(alpha: float, eps_rdp: float, delta: float) -> float:
    """Convert ``(alpha, eps)``-RDP to ``(eps + ln(1/delta)/(alpha-1), delta)``-DP."""
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    if eps_rdp < 0:
        raise ValueError(f"RDP epsilon must be nonnegative, got {eps_rdp}")
    _check_delta(delta)
    return eps_rdp + math.log(1.0 / delta) / (alpha - 1.0)


def compose_training(per_step_epsilon: float, steps: int, alpha: float, delta: float) -> PrivacyBudget:
    """Linear RDP composition over ``steps`` noise additions, converted once."""
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    if not per_step_epsilon > 0:
        raise ValueError(f"per-step epsilon must be positive, got {per_step_epsilon}")
    total = rdp_to_dp(alpha, steps * per_step_epsilon, delta)
    return PrivacyBudget(total, delta, alpha, steps)


def training_sigma(per_step_epsilon: float, alpha: float, delta: float) -> float:
    """Noise multiplier for the training-loop guarantee, evaluated literally.

    Uses ``eps' = eps + ln(1/delta)/(alpha-1)`` in place of epsilon in
    :func:`calibrate_sigma`.
    """
    return calibrate_sigma(rdp_to_dp(alpha, per_step_epsilon, delta), delta)


def gaussian_rdp(alpha: float, sigma: float) -> float:
    """RDP of one Gaussian release with noise multiplier ``sigma``."""
    return alpha / (2.0 * sigma * sigma)


def spent_epsilon(sigma: float, steps: int, delta: float, alphas=DEFAULT_ALPHAS) -> float:
    """Best (over ``alphas``) DP epsilon after ``steps`` Gaussian releases.

    No subsampling amplification is applied. ``sigma == 0`` spends infinite
    budget after the first step.
    """
    alphas = tuple(alphas)
    if not alphas:
        raise ValueError("alpha grid is empty")
    if steps < 0:
        raise ValueError(f"steps must be nonnegative, got {steps}")
    if steps == 0:
        return 0.0
    if sigma <= 0:
        return math.inf
    return min(rdp_to_dp(a, steps * gaussian_rdp(a, sigma), delta) for a in alphas)
