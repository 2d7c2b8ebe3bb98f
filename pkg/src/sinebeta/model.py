"""Closed-form scalars of the phase model.

Every formula reused elsewhere in the package lives here exactly once: the
exponentially decaying drift of the phase equation, its accumulated fraction,
the mixing horizons, the diffusion coefficients, and the growth constants for
the extremes of the centered eigenvalue count.

The phase alpha(lam, t) of a half-width lam evolves as

    d alpha = lam * (beta/4) * exp(-beta t / 4) dt
              + (cos alpha - 1) dB1 + sin alpha dB2,

with alpha(lam, 0) = 0 and the same planar Brownian pair (B1, B2) shared by
all half-widths.  The eigenvalue count over a symmetric window of half-width
lam is the limit of (alpha(lam, t) - alpha(-lam, t)) / (2 pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

PACKAGE_VERSION = "0.1.0"

TWO_PI = 2.0 * math.pi


class ModelError(ValueError):
    """Invalid model parameter or out-of-domain argument."""


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ModelError(f"{name} must be finite, got {value!r}")
    return value


def _check_beta(beta: float) -> float:
    beta = _check_finite("beta", beta)
    if beta <= 0.0:
        raise ModelError(f"beta must be > 0, got {beta!r}")
    return beta


@dataclass(frozen=True)
class ModelParams:
    """Inverse temperature plus the integer grid of half-widths.

    x_max is the largest half-width the run must cover; lambda_grid holds the
    sorted, distinct integer half-widths at which statistics are extracted.
    """

    beta: float
    x_max: int
    lambda_grid: tuple[int, ...]

    def __post_init__(self) -> None:
        _check_beta(self.beta)
        if int(self.x_max) != self.x_max or self.x_max < 1:
            raise ModelError(f"x_max must be an integer >= 1, got {self.x_max!r}")
        grid = tuple(int(v) for v in self.lambda_grid)
        if len(grid) == 0:
            raise ModelError("lambda_grid must be non-empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ModelError("lambda_grid must be strictly increasing")
        if grid[0] < 1 or grid[-1] > self.x_max:
            raise ModelError(
                f"lambda_grid entries must lie in [1, x_max={self.x_max}], got {grid[0]}..{grid[-1]}"
            )
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "x_max", int(self.x_max))
        object.__setattr__(self, "lambda_grid", grid)

    @classmethod
    def dense(cls, beta: float, x_max: int) -> "ModelParams":
        """Grid covering every integer half-width 1..x_max."""
        return cls(beta=beta, x_max=x_max, lambda_grid=tuple(range(1, int(x_max) + 1)))


@dataclass(frozen=True)
class ClockValue:
    """Drift clock at one time: the decay rate f and the delivered fraction H."""

    t: float
    rate: float      # (beta/4) exp(-beta t/4)
    fraction: float  # 1 - exp(-beta t/4) = 1 - (4/beta) * rate


def decay_rate(t: float, beta: float) -> float:
    """Unit-half-width drift rate (beta/4) * exp(-beta t / 4)."""
    beta = _check_beta(beta)
    t = _check_finite("t", t)
    if t < 0.0:
        raise ModelError(f"t must be >= 0, got {t!r}")
    return 0.25 * beta * math.exp(-0.25 * beta * t)


def drift_fraction(t: float, beta: float) -> float:
    """Fraction of the total drift delivered by time t: 1 - exp(-beta t / 4).

    Increases from 0 at t=0 toward 1; the total drift of the half-width-lam
    phase is lam * drift_fraction(t) at any time t.
    """
    beta = _check_beta(beta)
    t = _check_finite("t", t)
    if t < 0.0:
        raise ModelError(f"t must be >= 0, got {t!r}")
    return -math.expm1(-0.25 * beta * t)


def clock(t: float, beta: float) -> ClockValue:
    """Bundle decay rate and delivered fraction at time t."""
    return ClockValue(t=float(t), rate=decay_rate(t, beta), fraction=drift_fraction(t, beta))


def drift_rate(lam: float, t: float, beta: float) -> float:
    """Drift of the phase of half-width lam at time t: lam*(beta/4)*exp(-beta t/4)."""
    lam = _check_finite("lam", lam)
    return lam * decay_rate(t, beta)


def t_lambda(lam: float, beta: float) -> float:
    """Mixing horizon of half-width lam: (4/beta) * log(lam).

    Past this time the remaining drift of the half-width-lam phase is at most
    one radian, and its martingale part has essentially stopped moving.
    """
    beta = _check_beta(beta)
    lam = _check_finite("lam", lam)
    if lam < 1.0:
        raise ModelError(f"t_lambda requires lam >= 1, got {lam!r}")
    return (4.0 / beta) * math.log(lam)


def t_prime(lam: float, beta: float, band_r: float) -> float:
    """Shortened horizon t_lambda - band_r^2 * sqrt(log lam), clamped at 0.

    The clamp keeps the tube machinery usable at desk scale, where the
    subtracted term usually exceeds the full horizon.
    """
    band_r = _check_finite("band_r", band_r)
    if band_r <= 0.0:
        raise ModelError(f"band_r must be > 0, got {band_r!r}")
    full = t_lambda(lam, beta)
    cut = full - band_r * band_r * math.sqrt(math.log(lam))
    return cut if cut > 0.0 else 0.0


def diffusion_coeffs(alpha: float) -> tuple[float, float]:
    """Coefficients (cos alpha - 1, sin alpha) multiplying (dB1, dB2).

    Their squared norm is 4 sin^2(alpha/2): the noise vanishes exactly at
    integer multiples of 2 pi, which is what pins limiting phases to 2 pi Z.
    """
    alpha = _check_finite("alpha", alpha)
    return (math.cos(alpha) - 1.0, math.sin(alpha))


# ---------------------------------------------------------------------------
# growth constants for the extremes of the centered count
# ---------------------------------------------------------------------------

def max_growth_constant(beta: float) -> float:
    """Leading coefficient of max_{lam<=x} (N(lam) - lam/pi) over log x: 2/(sqrt(beta)*pi)."""
    beta = _check_beta(beta)
    return 2.0 / (math.sqrt(beta) * math.pi)


def martingale_growth_constant(beta: float) -> float:
    """Leading coefficient of the running maximum of the limit martingale: 4/sqrt(beta)."""
    beta = _check_beta(beta)
    return 4.0 / math.sqrt(beta)


def one_sided_growth_constant(beta: float) -> float:
    """Leading coefficient of max_{lam<=x} (alpha(lam, infinity) - lam): 4/sqrt(2*beta)."""
    beta = _check_beta(beta)
    return 4.0 / math.sqrt(2.0 * beta)


def extreme_value_centering(x: float, beta: float) -> float:
    """Predicted centering of the field maximum: (4/sqrt(beta)) * (log x - 0.75 log log x).

    The 3/4 log-log correction is the signature subleading term of
    log-correlated Gaussian extremes.
    """
    x = _check_finite("x", x)
    if x < 3.0:
        raise ModelError(f"extreme_value_centering requires x >= 3, got {x!r}")
    lx = math.log(x)
    return martingale_growth_constant(beta) * (lx - 0.75 * math.log(lx))
