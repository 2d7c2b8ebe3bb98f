"""Gaussian surrogate for the pair martingales.

The field assigns each half-width the Wiener integral of 2 sin(lam * H(t))
against the second noise component, stopped at that half-width's own horizon.
It shares the martingales' variance growth and logarithmic decorrelation but
is exactly Gaussian, which makes it the natural comparison object for
extreme-value behavior.  Covariances have a closed quadrature form, evaluated
here with an oscillatory-weight rule rather than a generic panel rule.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate as _si

from .model import (
    ModelError,
    ModelParams,
    drift_fraction,
    extreme_value_centering,
    t_lambda,
)
from .sde import StepPolicy, build_schedule, derive_stream, nearest_boundary

_LAMBDA_BLOCK = 256  # half-widths per sin-matrix block; bounds peak memory


class QuadratureError(RuntimeError):
    """The covariance quadrature missed the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(message)
        self.achieved = achieved


def _cos_over_gap(k: float, upper: float, rel_tol: float) -> float:
    """integral_0^upper cos(k u)/(1-u) du to relative tolerance rel_tol."""
    if upper == 0.0:
        return 0.0
    if k == 0.0:
        return -math.log1p(-upper)
    with warnings.catch_warnings():
        warnings.simplefilter("error", _si.IntegrationWarning)
        try:
            val, err = _si.quad(
                lambda u: 1.0 / (1.0 - u),
                0.0,
                upper,
                weight="cos",
                wvar=k,
                epsabs=0.0,
                epsrel=rel_tol,
                limit=400,
            )
        except _si.IntegrationWarning as exc:
            raise QuadratureError(
                f"oscillatory quadrature failed for k={k}, upper={upper}: {exc}",
                achieved=float("nan"),
            ) from None
    if err > rel_tol * max(abs(val), 1e-300) and err > 1e-13:
        raise QuadratureError(
            f"quadrature achieved {err:.3g} for k={k}, upper={upper}, "
            f"requested rel {rel_tol:.3g}",
            achieved=err,
        )
    return val


def g_covariance(
    lam: float, mu: float, t: float, beta: float, *, rel_tol: float = 1e-8
) -> float:
    """Cov(field(lam), field(mu)) when both are observed at time t.

    Equals (8/beta) * integral_0^{H(t)} [cos((lam-mu)u) - cos((lam+mu)u)]
    / (1-u) du by the product-to-sum identity; each piece goes through an
    oscillatory-weight quadrature.  For the fields stopped at their own
    horizons, pass t = min of the two horizons.
    """
    if not (math.isfinite(t) and t >= 0.0):
        raise ModelError(f"t must be finite and >= 0, got {t!r}")
    upper = drift_fraction(t, beta)
    near = _cos_over_gap(abs(lam - mu), upper, rel_tol)
    far = _cos_over_gap(lam + mu, upper, rel_tol)
    return (8.0 / beta) * (near - far)


@dataclass
class GaussianFieldSample:
    """One draw of the stopped field over a half-width grid."""

    params: ModelParams
    seed: Optional[int]
    stream_id: Optional[int]
    lambdas: np.ndarray
    values: np.ndarray
    cut_times: np.ndarray

    def value_at(self, lam: int) -> float:
        j = int(np.searchsorted(self.lambdas, lam))
        if j >= len(self.lambdas) or self.lambdas[j] != lam:
            raise ModelError(f"half-width {lam} not in this sample")
        return float(self.values[j])

    @property
    def max_value(self) -> float:
        return float(np.max(self.values))


def simulate_field(
    params: ModelParams, policy: StepPolicy, noise
) -> GaussianFieldSample:
    """Integrate the field for every grid half-width under one noise draw.

    Consumes planar increments like the phase integrator but uses only the
    second component, so a field draw and a phase run from the same stream
    share that component exactly.  Each half-width stops accumulating at the
    step boundary nearest its horizon; t_end must reach the largest horizon.
    """
    t_top = t_lambda(params.x_max, params.beta) if params.x_max > 1 else 0.0
    if policy.t_end + 1e-9 < t_top:
        raise ModelError(
            f"t_end={policy.t_end} below the largest horizon {t_top:.6g}"
        )
    if getattr(noise, "position", 0) != 0:
        raise ModelError("noise sources are single-use; need position 0")
    sched = build_schedule(policy, params.beta, lam_scale=float(params.x_max))
    db2 = noise.increments(sched.h)[:, 1]
    lambdas = np.asarray(params.lambda_grid, dtype=np.int64)
    cuts = np.array(
        [
            nearest_boundary(
                sched.bounds, t_lambda(int(l), params.beta), sched.n_total
            )
            for l in lambdas
        ],
        dtype=np.int64,
    )
    frac_left = np.array(
        [drift_fraction(t, params.beta) for t in sched.bounds[:-1]]
    )
    values = np.empty(len(lambdas))
    for start in range(0, len(lambdas), _LAMBDA_BLOCK):
        blk = slice(start, min(start + _LAMBDA_BLOCK, len(lambdas)))
        lam_blk = lambdas[blk].astype(float)
        sin_mat = 2.0 * np.sin(lam_blk[:, None] * frac_left[None, :])
        steps = np.arange(sched.n_total)[None, :]
        sin_mat[steps >= cuts[blk][:, None]] = 0.0
        values[blk] = sin_mat @ db2
    return GaussianFieldSample(
        params=params,
        seed=getattr(noise, "seed", None),
        stream_id=getattr(noise, "stream_id", None),
        lambdas=lambdas,
        values=values,
        cut_times=sched.bounds[cuts],
    )


@dataclass
class GaussianMaxSummary:
    """Monte Carlo summary of the field maximum at one scale."""

    x: int
    beta: float
    replicas: int
    mean_max: float
    se: float
    centering: float
    ratio: float


def gaussian_max_diagnostic(
    x: int,
    beta: float,
    *,
    replicas: int,
    seed: int,
    stream_offset: int = 0,
    h0: float = 0.01,
    refine_c: float = 0.5,
) -> GaussianMaxSummary:
    """Mean maximum of the stopped field over 1..x against the predicted
    centering (same constant and log-log correction as the martingale max)."""
    params = ModelParams.dense(beta, x)
    policy = StepPolicy(
        t_end=t_lambda(x, beta) if x > 1 else h0,
        h0=h0,
        refine_c=refine_c,
        relax_extra=0.0,
        out_stride=1 << 40,
    )
    maxima = np.empty(replicas)
    for r in range(replicas):
        sample = simulate_field(params, policy, derive_stream(seed, stream_offset + r))
        maxima[r] = sample.max_value
    mean_max = float(maxima.mean())
    se = float(maxima.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else float("nan")
    center = extreme_value_centering(x, beta)
    return GaussianMaxSummary(
        x=int(x),
        beta=beta,
        replicas=replicas,
        mean_max=mean_max,
        se=se,
        centering=center,
        ratio=mean_max / center,
    )


def field_covariance_matrix(
    samples: Sequence[GaussianFieldSample], pairs: Sequence[tuple[int, int]]
) -> list[tuple[int, int, float, float]]:
    """Sample covariance and its jackknife-free SE for selected pairs.

    Returns (lam, mu, cov, se) rows; SE treats per-replica products as iid,
    which they are across independent streams.
    """
    if len(samples) < 3:
        raise ModelError("need at least 3 field samples")
    rows = []
    for lam, mu in pairs:
        a = np.array([s.value_at(lam) for s in samples])
        b = np.array([s.value_at(mu) for s in samples])
        am = a - a.mean()
        bm = b - b.mean()
        prod = am * bm
        n = len(prod)
        cov = float(prod.sum() / (n - 1))
        se = float(prod.std(ddof=1) / math.sqrt(n))
        rows.append((int(lam), int(mu), cov, se))
    return rows
