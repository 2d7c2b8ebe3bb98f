"""Exponential change of measure for the phase-difference dynamics.

The tilted equation accelerates the phase difference by adding
2*eta*sin^2(u/2) dt.  In the scheme this is exactly a Gaussian mean shift of
each increment, so the density between tilted and plain path laws is the
discrete stochastic exponential

    dQ/dP = exp(tilt * m - tilt^2/2 * bracket),   tilt = eta/2,

where m and bracket are the scheme's own martingale part and quadratic
variation under P.  Both directions of the identity (mean-one weights on
plain paths, unbiased reweighting of tilted samples) hold exactly for the
discrete chain, not just in the step-size limit.

On a path generated under the tilted measure, the plain-measure martingale
part is m + (eta/2) * bracket; that reconstruction is used for every event
defined through the martingale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .model import ModelError, ModelParams, t_lambda, t_prime
from .sde import (
    StepPolicy,
    TiltBatch,
    derive_stream,
    integrate_ensemble,
    integrate_tilted_batch,
    replay_noise_for,
)
from .stats import TubeParams, tube_indicator_matrix

_BIG_STRIDE = 1 << 40  # records only the endpoints


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo estimate with its standard error and sample size."""

    value: float
    se: float
    n: int


def girsanov_weight(m_t: float, bracket_t: float, eta: float):
    """exp(eta*m - eta^2/2 * bracket); mean one over plain paths for any eta.

    Accepts scalars or arrays.  eta here is the exponential tilt itself; the
    tilt matching acceleration a of the dynamics is a/2.
    """
    return np.exp(eta * np.asarray(m_t) - 0.5 * eta * eta * np.asarray(bracket_t))


def girsanov_log_weight(m_t, bracket_t, eta: float):
    """Log of girsanov_weight, for overflow-safe accumulation."""
    return eta * np.asarray(m_t) - 0.5 * eta * eta * np.asarray(bracket_t)


def acceleration_tilt(accel: float) -> float:
    """Exponential tilt that realizes a given drift acceleration."""
    return 0.5 * accel


def run_tilted(
    lam: float,
    accel: float,
    beta: float,
    *,
    t_end: float,
    replicas: int,
    seed: int,
    stream_offset: int = 0,
    h0: float = 0.01,
    refine_c: float = 0.5,
    out_stride: int = 1,
    const_diffusion: bool = False,
    chunk: int = 1024,
) -> TiltBatch:
    """Integrate the accelerated dynamics for many replicas.

    Replica r draws from derive_stream(seed, stream_offset + r), so disjoint
    offset ranges give independent batches and any batch can be re-derived
    exactly.  Replicas are integrated in chunks to bound the increment
    buffer; results are identical for any chunk size.
    """
    if replicas < 1:
        raise ModelError(f"replicas must be >= 1, got {replicas}")
    if chunk < 1:
        raise ModelError(f"chunk must be >= 1, got {chunk}")
    policy = StepPolicy(
        t_end=t_end, h0=h0, refine_c=refine_c, relax_extra=0.0, out_stride=out_stride
    )
    parts: list[TiltBatch] = []
    done = 0
    while done < replicas:
        size = min(chunk, replicas - done)
        noises = [derive_stream(seed, stream_offset + done + i) for i in range(size)]
        parts.append(
            integrate_tilted_batch(
                lam, accel, beta, policy, noises, const_diffusion=const_diffusion
            )
        )
        done += size
    first = parts[0]
    if len(parts) == 1:
        return first
    return TiltBatch(
        lam=first.lam,
        eta=first.eta,
        beta=first.beta,
        policy=first.policy,
        times=first.times,
        u=np.vstack([p.u for p in parts]),
        m_part=np.vstack([p.m_part for p in parts]),
        bracket=np.vstack([p.bracket for p in parts]),
        n_steps=first.n_steps,
        const_diffusion=first.const_diffusion,
    )


def _mean_se(values: np.ndarray) -> Estimate:
    v = np.asarray(values, dtype=float)
    n = len(v)
    mean = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return Estimate(value=mean, se=se, n=n)


def untilted_weight_mean(
    lam: float,
    eta: float,
    beta: float,
    *,
    t_end: float,
    replicas: int,
    seed: int,
    stream_offset: int = 0,
    h0: float = 0.01,
) -> Estimate:
    """Mean of girsanov_weight over plain (acceleration-zero) paths.

    The scheme-exact expectation is one for every eta; the spread of the
    estimate grows with exp(eta^2 * t_end), so keep horizons modest.
    """
    batch = run_tilted(
        lam,
        0.0,
        beta,
        t_end=t_end,
        replicas=replicas,
        seed=seed,
        stream_offset=stream_offset,
        h0=h0,
        out_stride=_BIG_STRIDE,
    )
    w = girsanov_weight(batch.m_part[:, -1], batch.bracket[:, -1], eta)
    return _mean_se(w)


# ---------------------------------------------------------------------------
# event probabilities, direct and importance-sampled
# ---------------------------------------------------------------------------

def terminal_exceedance_direct(
    lam: float,
    beta: float,
    *,
    t_end: float,
    threshold: float,
    replicas: int,
    seed: int,
    stream_offset: int = 0,
    h0: float = 0.01,
) -> Estimate:
    """Plain-measure frequency of {martingale at t_end > threshold}."""
    batch = run_tilted(
        lam,
        0.0,
        beta,
        t_end=t_end,
        replicas=replicas,
        seed=seed,
        stream_offset=stream_offset,
        h0=h0,
        out_stride=_BIG_STRIDE,
    )
    hits = batch.m_part[:, -1] > threshold
    return _mean_se(hits.astype(float))


def importance_estimate(
    batch: TiltBatch,
    event: Callable[[TiltBatch], np.ndarray],
) -> Estimate:
    """Plain-measure probability of an event from tilted samples.

    event maps the batch to one boolean per replica.  Each hit is weighted by
    the inverse density exp(-(tilt*M - tilt^2/2*bracket)) with M the
    reconstructed plain-measure martingale, which unbiases the frequency
    exactly for the discrete chain.
    """
    hits = np.asarray(event(batch), dtype=bool)
    if hits.shape != (batch.n_replicas,):
        raise ModelError(
            f"event produced shape {hits.shape}, need {(batch.n_replicas,)}"
        )
    tilt = acceleration_tilt(batch.eta)
    m_plain = batch.m_part[:, -1] + tilt * batch.bracket[:, -1]
    log_w = girsanov_log_weight(m_plain, batch.bracket[:, -1], tilt)
    terms = np.where(hits, np.exp(-log_w), 0.0)
    return _mean_se(terms)


def terminal_exceedance_tilted(
    lam: float,
    beta: float,
    *,
    t_end: float,
    threshold: float,
    accel: float,
    replicas: int,
    seed: int,
    stream_offset: int = 0,
    h0: float = 0.01,
) -> Estimate:
    """Importance-sampled version of terminal_exceedance_direct.

    Runs the dynamics with the given acceleration, reconstructs the
    plain-measure martingale on each path, and reweights.
    """
    batch = run_tilted(
        lam,
        accel,
        beta,
        t_end=t_end,
        replicas=replicas,
        seed=seed,
        stream_offset=stream_offset,
        h0=h0,
        out_stride=_BIG_STRIDE,
    )
    tilt = acceleration_tilt(accel)

    def event(b: TiltBatch) -> np.ndarray:
        m_plain = b.m_part[:, -1] + tilt * b.bracket[:, -1]
        return m_plain > threshold

    return importance_estimate(batch, event)


# ---------------------------------------------------------------------------
# tube probabilities and the two-moment machinery
# ---------------------------------------------------------------------------

def tube_probability_under_q(
    lam: int,
    beta: float,
    params: TubeParams,
    *,
    replicas: int,
    seed: int,
    stream_offset: int = 0,
    h0: float = 0.01,
    chunk: int = 1024,
) -> Estimate:
    """Frequency of the tube event under the sqrt(beta)-accelerated law.

    The tube asks the reconstructed plain-measure martingale to track
    sqrt(beta)*t and the bracket to track 2t, both within the band, at every
    recorded step up to the reduced horizon of the given half-width.  Under
    the matched acceleration the tracking is typical, so the frequency stays
    order one as x grows.
    """
    horizon = t_prime(lam, beta, params.band_r)
    accel = math.sqrt(beta)
    tilt = acceleration_tilt(accel)
    hits = np.empty(replicas, dtype=bool)
    done = 0
    while done < replicas:
        size = min(chunk, replicas - done)
        batch = run_tilted(
            lam,
            accel,
            beta,
            t_end=horizon,
            replicas=size,
            seed=seed,
            stream_offset=stream_offset + done,
            h0=h0,
            out_stride=1,
            chunk=size,
        )
        m_plain = batch.m_part + tilt * batch.bracket
        hits[done : done + size] = tube_indicator_matrix(
            batch.times, m_plain, batch.bracket, beta, params
        )
        done += size
    p = float(hits.mean())
    se = math.sqrt(max(p * (1.0 - p), 0.0) / replicas)
    return Estimate(value=p, se=se, n=replicas)


def compute_s_x(weights: np.ndarray, indicators: np.ndarray) -> float:
    """The weighted good-path count: sum over half-widths of w * indicator."""
    w = np.asarray(weights, dtype=float)
    ind = np.asarray(indicators, dtype=bool)
    if w.shape != ind.shape:
        raise ModelError("weights and indicators must align")
    return float(np.sum(np.where(ind, w, 0.0)))


@dataclass
class SxMoments:
    """Both moments of the weighted good-path count over [x, 2x].

    mean_sum is assembled from per-half-width tilted runs (each term is a
    probability under the matched tilt); second_moment comes from plain-law
    ensembles sharing one noise across the whole grid.  pz_bound is the
    ratio mean^2/second moment, a lower bound for the probability that at
    least one good path exists, and positive_freq is that probability's
    direct plain-law frequency.
    """

    x: int
    band_r: float
    beta: float
    horizons: np.ndarray
    lambdas: np.ndarray
    per_lambda_q: np.ndarray
    per_lambda_q_se: np.ndarray
    mean_sum: float
    mean_sum_se: float
    direct_mean: float
    direct_mean_se: float
    second_moment: float
    second_moment_se: float
    pz_bound: float
    positive_freq: float
    n_mean: int
    n_second: int


def s_x_moments(
    x: int,
    band_r: float,
    beta: float,
    *,
    seed: int,
    replicas_mean: int = 2000,
    replicas_second: int = 1000,
    h0: float = 0.01,
    refine_c: float = 0.5,
    chunk: int = 1024,
) -> SxMoments:
    """Estimate E[S_x] and E[S_x^2] for the weighted good-path count.

    Per-half-width tilted batches use stream ids partitioned by half-width
    (block 0 for lam=x, block 1 for lam=x+1, ...); the plain ensembles for
    the second moment use a disjoint id range above those blocks.
    """
    x = int(x)
    params_tube = TubeParams(x=x, band_r=band_r)
    lambdas = np.arange(x, 2 * x + 1, dtype=np.int64)
    horizons = np.array([t_prime(int(l), beta, band_r) for l in lambdas])
    tilt = acceleration_tilt(math.sqrt(beta))

    q_vals = np.empty(len(lambdas))
    q_ses = np.empty(len(lambdas))
    for i, lam in enumerate(lambdas):
        est = tube_probability_under_q(
            int(lam),
            beta,
            params_tube,
            replicas=replicas_mean,
            seed=seed,
            stream_offset=i * replicas_mean,
            h0=h0,
            chunk=chunk,
        )
        q_vals[i] = est.value
        q_ses[i] = est.se
    mean_sum = float(q_vals.sum())
    mean_sum_se = float(math.sqrt(np.sum(q_ses**2)))

    # Plain-law side: one coupled ensemble per replica over the whole grid.
    params = ModelParams(beta=beta, x_max=int(lambdas[-1]), lambda_grid=tuple(int(l) for l in lambdas))
    t_end = float(horizons.max())
    policy = StepPolicy(
        t_end=t_end, h0=h0, refine_c=refine_c, relax_extra=0.0, out_stride=1
    )
    base_offset = len(lambdas) * replicas_mean
    n_pairs = len(lambdas)
    band = params_tube.band
    s_samples = np.empty(replicas_second)
    for r in range(replicas_second):
        stream = derive_stream(seed, base_offset + r)
        ens = integrate_ensemble(params, policy, stream)
        db = replay_noise_for(ens).increments(ens.schedule.h)
        A = ens.alpha
        pos = A[n_pairs:, :]
        neg = A[n_pairs - 1 :: -1, :]
        left_p = pos[:, :-1]
        left_n = neg[:, :-1]
        a_co = np.cos(left_p) - np.cos(left_n)
        b_co = np.sin(left_p) - np.sin(left_n)
        dm = a_co * db[:, 0][None, :] + b_co * db[:, 1][None, :]
        m_series = np.concatenate(
            [np.zeros((n_pairs, 1)), np.cumsum(dm, axis=1)], axis=1
        )
        half_d = 0.5 * (left_p - left_n)
        br_inc = 4.0 * np.sin(half_d) ** 2 * ens.schedule.h[None, :]
        b_series = np.concatenate(
            [np.zeros((n_pairs, 1)), np.cumsum(br_inc, axis=1)], axis=1
        )
        times = ens.times
        center = math.sqrt(beta) * times[None, :]
        in_band = (np.abs(m_series - center) <= band) & (
            np.abs(b_series - 2.0 * times[None, :]) <= band
        )
        beyond = times[None, :] > horizons[:, None] + 1e-12
        ok = np.all(in_band | beyond, axis=1)
        cut = np.array(
            [int(np.argmin(np.abs(times - hz))) for hz in horizons]
        )
        rows = np.arange(n_pairs)
        w = girsanov_weight(m_series[rows, cut], b_series[rows, cut], tilt)
        s_samples[r] = compute_s_x(w, ok)

    second = float(np.mean(s_samples**2))
    second_se = float(np.std(s_samples**2, ddof=1) / math.sqrt(replicas_second))
    pz = (mean_sum**2 / second) if second > 0 else float("nan")
    positive = float(np.mean(s_samples > 0))
    direct_mean = float(s_samples.mean())
    direct_se = float(np.std(s_samples, ddof=1) / math.sqrt(replicas_second))
    return SxMoments(
        x=x,
        band_r=band_r,
        beta=beta,
        horizons=horizons,
        lambdas=lambdas,
        per_lambda_q=q_vals,
        per_lambda_q_se=q_ses,
        mean_sum=mean_sum,
        mean_sum_se=mean_sum_se,
        direct_mean=direct_mean,
        direct_mean_se=direct_se,
        second_moment=second,
        second_moment_se=second_se,
        pz_bound=pz,
        positive_freq=positive,
        n_mean=replicas_mean,
        n_second=replicas_second,
    )
