"""Counting statistics and martingale diagnostics over recorded runs.

Everything here is a pure function of a recorded ensemble plus, where noise
increments are needed, a replay of the run's own stream.  No function here
advances a simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import TWO_PI, ModelError, drift_fraction, t_lambda
from .sde import (
    PhaseEnsemble,
    ReplayMismatchError,
    TiltedPath,
    replay_noise_for,
    replay_pair,
    replay_quad,
)


@dataclass(frozen=True)
class MarkPoint:
    """A requested evaluation time snapped to the nearest step boundary."""

    requested_t: float
    grid_t: float
    m: float
    bracket: float


@dataclass
class MartingaleTrace:
    """One half-width pair's martingale and bracket on the run's output grid.

    m is the accumulated noise part of the phase difference; bracket is its
    summed quadratic variation 4 sin^2(diff/2) h.  Both come from replaying
    the run's increments, so they are scheme-exact for the recorded run.
    """

    lam: int
    beta: float
    times: np.ndarray
    m: np.ndarray
    bracket: np.ndarray
    marks: tuple[MarkPoint, ...]

    def mark_at(self, t: float) -> MarkPoint:
        for p in self.marks:
            if p.requested_t == t:
                return p
        raise ModelError(f"no mark was requested at t={t}")

    @property
    def terminal_m(self) -> float:
        return float(self.m[-1])

    @property
    def terminal_bracket(self) -> float:
        return float(self.bracket[-1])


def martingale_trace(
    ensemble: PhaseEnsemble,
    lam: int,
    *,
    noise=None,
    mark_times: Sequence[float] = (),
) -> MartingaleTrace:
    """Replay one pair's martingale off a recorded run.

    noise defaults to a fresh re-derivation of the run's own stream; pass an
    explicit source only for runs driven by preset increments.
    """
    if noise is None:
        noise = replay_noise_for(ensemble)
    rep = replay_pair(ensemble, lam, noise, mark_times=mark_times)
    marks = tuple(
        MarkPoint(rt, gt, m, b)
        for rt, gt, m, b in zip(
            rep.mark_times, rep.mark_grid_times, rep.mark_m, rep.mark_bracket
        )
    )
    return MartingaleTrace(
        lam=rep.lam,
        beta=ensemble.params.beta,
        times=rep.times,
        m=rep.m,
        bracket=rep.bracket,
        marks=marks,
    )


def drift_subtraction_gap(trace: MartingaleTrace, ensemble: PhaseEnsemble) -> float:
    """Max gap between the replayed martingale and the drift-subtracted
    phase difference, over the output grid.

    In the continuum the two agree exactly; the scheme's drift is a left
    Riemann sum, so the gap scales like h * lam * beta / 4.  Useful as a
    replay cross-check at small half-widths.
    """
    diff = ensemble.diff_series(trace.lam)
    if len(diff) != len(trace.m):
        raise ReplayMismatchError("trace and ensemble grids differ")
    beta = ensemble.params.beta
    t_end = ensemble.policy.t_end
    delivered = 2.0 * trace.lam * np.array(
        [drift_fraction(min(t, t_end), beta) for t in trace.times]
    )
    return float(np.max(np.abs(trace.m - (diff - delivered))))


# ---------------------------------------------------------------------------
# cross-brackets
# ---------------------------------------------------------------------------

@dataclass
class CrossBracketTrace:
    """Covariation of two pair martingales as a function of time.

    Calling the object interpolates the recorded grid linearly.  Also keeps
    both own brackets and the bracket of the sum, so tests can verify the
    polarization identity [M+N] = [M] + 2[M,N] + [N] without a second pass.
    """

    lam: int
    mu: int
    times: np.ndarray
    values: np.ndarray
    bracket_lam: np.ndarray
    bracket_mu: np.ndarray
    bracket_sum: np.ndarray
    marks: tuple[MarkPoint, ...]
    marks_lam: tuple[MarkPoint, ...]
    marks_mu: tuple[MarkPoint, ...]

    def __call__(self, t: float) -> float:
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ModelError(f"t={t} outside the recorded range")
        return float(np.interp(t, self.times, self.values))

    def mark_at(self, t: float) -> MarkPoint:
        for p in self.marks:
            if p.requested_t == t:
                return p
        raise ModelError(f"no mark was requested at t={t}")


def cross_bracket(
    trace1: MartingaleTrace,
    trace2: MartingaleTrace,
    ensemble: PhaseEnsemble,
    *,
    mark_times: Sequence[float] = (),
) -> CrossBracketTrace:
    """Covariation of the two traced pair martingales.

    The traces identify which half-widths to correlate and must come from the
    given run; the covariation itself is re-accumulated jointly from the
    run's increments, not interpolated from the traces.
    """
    for tr in (trace1, trace2):
        if len(tr.times) != len(ensemble.times) or tr.times[-1] != ensemble.times[-1]:
            raise ReplayMismatchError("trace grid does not match the run")
    return cross_bracket_from_run(
        ensemble, trace1.lam, trace2.lam, mark_times=mark_times
    )


def cross_bracket_from_run(
    ensemble: PhaseEnsemble,
    lam: int,
    mu: int,
    *,
    noise=None,
    mark_times: Sequence[float] = (),
) -> CrossBracketTrace:
    """Replay the covariation sum (a_lam a_mu + b_lam b_mu) h for two pairs.

    (a, b) are each pair's two noise coefficients.  Marks capture the exact
    accumulated sums at the step boundary nearest each requested time.
    """
    if noise is None:
        noise = replay_noise_for(ensemble)
    rep = replay_quad(ensemble, lam, mu, noise, mark_times=mark_times)
    marks = tuple(
        MarkPoint(rt, gt, c, bl)
        for rt, gt, c, bl in zip(
            rep.mark_times, rep.mark_grid_times, rep.mark_cross, rep.mark_bracket_lam
        )
    )
    marks_lam = tuple(
        MarkPoint(rt, gt, float("nan"), b)
        for rt, gt, b in zip(rep.mark_times, rep.mark_grid_times, rep.mark_bracket_lam)
    )
    marks_mu = tuple(
        MarkPoint(rt, gt, float("nan"), b)
        for rt, gt, b in zip(rep.mark_times, rep.mark_grid_times, rep.mark_bracket_mu)
    )
    return CrossBracketTrace(
        lam=rep.lam,
        mu=rep.mu,
        times=rep.times,
        values=rep.cross,
        bracket_lam=rep.bracket_lam,
        bracket_mu=rep.bracket_mu,
        bracket_sum=rep.bracket_sum,
        marks=marks,
        marks_lam=marks_lam,
        marks_mu=marks_mu,
    )


def cross_bracket_heuristic(lam: int, mu: int, t: float, beta: float) -> float:
    """Leading-order prediction 2*(t - (4/beta) ln|lam - mu|), clipped at 0.

    Valid once both pair martingales have decoupled, i.e. t well past the
    splitting time of the two half-widths.
    """
    if lam == mu:
        raise ModelError("heuristic needs distinct half-widths")
    split = (4.0 / beta) * math.log(abs(lam - mu)) if abs(lam - mu) > 1 else 0.0
    return max(0.0, 2.0 * (t - split))


# ---------------------------------------------------------------------------
# counting
# ---------------------------------------------------------------------------

@dataclass
class CountingResult:
    """Integer counts and deviations for every half-width of one run."""

    lam: np.ndarray
    n: np.ndarray
    deviation: np.ndarray
    converged: np.ndarray
    max_deviation: float
    argmax_lam: float
    nonconverged: int

    def deviation_at(self, lam: int) -> float:
        idx = int(np.searchsorted(self.lam, lam))
        if idx >= len(self.lam) or self.lam[idx] != lam:
            raise ModelError(f"half-width {lam} not in this result")
        return float(self.deviation[idx])


def counting_N(ensemble: PhaseEnsemble) -> CountingResult:
    """Round each terminal phase difference to its winding number.

    The count for half-width lam is the nearest integer to diff/(2 pi); the
    deviation subtracts the expected density lam/pi.  Pairs that failed to
    settle within tolerance are flagged and excluded from the max.
    """
    grid = np.asarray(ensemble.params.lambda_grid, dtype=np.int64)
    n_pairs = len(grid)
    final = ensemble.alpha[:, -1]
    d = final[n_pairs:] - final[n_pairs - 1 :: -1]
    counts = np.round(d / TWO_PI)
    deviation = counts - grid / math.pi
    conv = ensemble.converged.copy()
    if conv.any():
        dev_masked = np.where(conv, np.abs(deviation), -np.inf)
        j = int(np.argmax(dev_masked))
        max_dev = float(np.abs(deviation[j]))
        arg = float(grid[j])
    else:
        max_dev = float("nan")
        arg = float("nan")
    return CountingResult(
        lam=grid,
        n=counts,
        deviation=deviation,
        converged=conv,
        max_deviation=max_dev,
        argmax_lam=arg,
        nonconverged=int((~conv).sum()),
    )


def max_deviation(result: CountingResult, x: int) -> tuple[float, float]:
    """Max |deviation| over half-widths up to x; needs the dense grid 1..x."""
    x = int(x)
    if x < 1:
        raise ModelError(f"x must be >= 1, got {x}")
    head = result.lam[result.lam <= x]
    if len(head) != x or head[0] != 1 or head[-1] != x:
        raise ModelError(f"grid does not cover the integers 1..{x}")
    sel = result.lam <= x
    conv = result.converged & sel
    if not conv.any():
        return float("nan"), float("nan")
    dev = np.where(conv, np.abs(result.deviation), -np.inf)
    j = int(np.argmax(dev))
    return float(np.abs(result.deviation[j])), float(result.lam[j])


def one_sided_max(ensemble: PhaseEnsemble, x: Optional[int] = None) -> float:
    """Max over positive half-widths of the centered terminal phase
    alpha_lam(end) - lam.

    The drift delivers exactly lam in expectation, so the centered terminal
    phase is the martingale part plus a vanishing drift tail; its max over
    lam <= x grows at the one-sided rate, steeper than the two-sided count
    deviation because no winding-number rounding intervenes.
    """
    grid = np.asarray(ensemble.params.lambda_grid, dtype=float)
    n_pairs = len(grid)
    final = ensemble.alpha[n_pairs:, -1]
    sel = np.ones(n_pairs, dtype=bool)
    if x is not None:
        sel = grid <= float(x)
        if not sel.any():
            raise ModelError(f"no grid half-widths at or below {x}")
    return float(np.max(final[sel] - grid[sel]))


# ---------------------------------------------------------------------------
# oscillatory integrals
# ---------------------------------------------------------------------------

def oscillatory_sup(path: TiltedPath, a: float, t_max: float) -> float:
    """sup over t <= t_max of | integral_0^t exp(i a u(s)) ds |, trapezoid rule
    on the path's recorded grid.

    Meaningful only when the path was recorded at full resolution; coarse
    grids alias the oscillation.  The phase u grows roughly linearly under
    acceleration, so the integral stays bounded while t grows, and doubling
    the half-width halves the sup to leading order.
    """
    if not (math.isfinite(a)):
        raise ModelError(f"frequency a must be finite, got {a!r}")
    sel = path.times <= t_max + 1e-12
    if sel.sum() < 2:
        raise ModelError("fewer than two grid points below t_max")
    t = path.times[sel]
    u = path.u[sel]
    c = np.cos(a * u)
    s = np.sin(a * u)
    dt = np.diff(t)
    re = np.concatenate([[0.0], np.cumsum(0.5 * dt * (c[1:] + c[:-1]))])
    im = np.concatenate([[0.0], np.cumsum(0.5 * dt * (s[1:] + s[:-1]))])
    return float(np.max(np.hypot(re, im)))


# ---------------------------------------------------------------------------
# tube events and second-moment tools
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TubeParams:
    """Band geometry for the good-path event at scale x.

    The martingale must stay within band_r*sqrt(ln x) of sqrt(beta)*t and the
    bracket within the same band of 2t, at every recorded time up to the
    reduced horizon.  (2t is the bracket's drift-phase slope: the rate
    4 sin^2(diff/2) time-averages to 2 while the difference sweeps barriers.)
    """

    x: int
    band_r: float

    def __post_init__(self) -> None:
        if int(self.x) != self.x or self.x < 3:
            raise ModelError(f"x must be an integer >= 3, got {self.x!r}")
        if not (math.isfinite(self.band_r) and self.band_r > 0):
            raise ModelError(f"band_r must be > 0, got {self.band_r!r}")

    @property
    def band(self) -> float:
        return self.band_r * math.sqrt(math.log(self.x))


def tube_indicator(
    times: np.ndarray,
    m: np.ndarray,
    bracket: np.ndarray,
    beta: float,
    params: TubeParams,
) -> bool:
    """Whether one path stays inside both bands at every supplied time."""
    band = params.band
    center = math.sqrt(beta) * np.asarray(times)
    ok_m = np.abs(np.asarray(m) - center) <= band
    ok_b = np.abs(np.asarray(bracket) - 2.0 * np.asarray(times)) <= band
    return bool(np.all(ok_m & ok_b))


def tube_indicator_matrix(
    times: np.ndarray,
    m: np.ndarray,
    bracket: np.ndarray,
    beta: float,
    params: TubeParams,
) -> np.ndarray:
    """Vectorized tube test: m and bracket are (replicas, len(times))."""
    band = params.band
    center = math.sqrt(beta) * np.asarray(times)[None, :]
    ok = np.abs(m - center) <= band
    ok &= np.abs(bracket - 2.0 * np.asarray(times)[None, :]) <= band
    return ok.all(axis=1)


def paley_zygmund_bound(mean: float, second_moment: float) -> float:
    """Lower bound mean^2 / second_moment for P(S > 0), S >= 0."""
    if not (math.isfinite(mean) and mean >= 0.0):
        raise ModelError(f"mean must be finite and >= 0, got {mean!r}")
    if not (math.isfinite(second_moment) and second_moment > 0.0):
        raise ModelError(f"second moment must be > 0, got {second_moment!r}")
    if second_moment + 1e-12 < mean * mean:
        raise ModelError("second moment below squared mean")
    # rounding can push the ratio a few ulp above 1 for near-constant data
    return min(1.0, mean * mean / second_moment)


def exceedance_curve(samples: np.ndarray, thresholds: Sequence[float]) -> np.ndarray:
    """Fraction of samples strictly above each threshold."""
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ModelError("no samples")
    return np.array([float(np.mean(s > c)) for c in thresholds])


# ---------------------------------------------------------------------------
# plain least squares
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_se: float
    r_squared: float


def fit_line(xs: np.ndarray, ys: np.ndarray) -> LineFit:
    """Ordinary least squares for y = a + b x with the usual slope SE."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ModelError("need two equal-length 1-d arrays, at least 3 points")
    n = len(x)
    xm = x.mean()
    ym = y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 0:
        raise ModelError("degenerate predictor")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - ym) ** 2))
    sigma2 = ss_res / (n - 2)
    slope_se = math.sqrt(sigma2 / sxx)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return LineFit(slope=slope, intercept=float(intercept), slope_se=slope_se, r_squared=r2)


def tail_residual(
    ensemble: PhaseEnsemble,
    lam: int,
    *,
    noise=None,
) -> float:
    """Terminal-minus-horizon martingale increment m(end) - m(t_lambda(lam)).

    The increment after the pair's own horizon is what the maximal inequality
    controls; its exceedance over fixed thresholds should decay log-linearly.
    """
    tl = t_lambda(lam, ensemble.params.beta)
    trace = martingale_trace(ensemble, lam, noise=noise, mark_times=(tl,))
    return trace.terminal_m - trace.mark_at(tl).m
