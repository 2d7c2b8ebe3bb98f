"""Euler integration of the coupled phase system and its tilted variant.

One planar Brownian pair drives every half-width simultaneously, so phases of
different half-widths stay coupled the way the model demands.  The integrator
is an explicit first-order scheme on a deterministic step schedule; the
schedule refines early steps so the decaying drift never moves a phase by more
than about `refine_c` radians per step.

Noise is counter-based: a (seed, stream_id) pair maps through splitmix64 to a
Philox key, so any stream can be re-derived from scratch, independent streams
come from distinct ids, and replaying a run's increments is a pure function of
its recorded inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .model import (
    TWO_PI,
    ModelError,
    ModelParams,
    t_lambda,
)

_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15
_INV_2PI = 1.0 / TWO_PI

# Signed-phase counts at or below this use the pure-Python step loop; larger
# systems use vectorized numpy.  Both paths implement the identical scheme.
_SCALAR_PATH_MAX = 4

# Absolute slack when deciding whether the schedule has reached a horizon;
# keeps uniform-step schedules at exactly t_end/h0 steps despite float drift.
_TIME_EPS = 1e-9


class IntegrationError(RuntimeError):
    """Integration produced a non-finite state; carries the failing step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class ReplayMismatchError(RuntimeError):
    """A replay was asked to reproduce a run it cannot match."""


# ---------------------------------------------------------------------------
# noise sources
# ---------------------------------------------------------------------------

def splitmix64(x: int) -> int:
    """One application of the splitmix64 finalizer (public-domain constants)."""
    x = (x + _GOLDEN64) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class NoiseStream:
    """Reproducible Gaussian increments for one (seed, stream_id) pair.

    The Philox key is splitmix64(seed XOR stream_id*golden) followed by a
    second chained splitmix64 word, all mod 2^64, so derivation is stateless
    and platform-independent.  Streams are single-use: integrators insist on
    position 0 and consume draws in one deterministic order.
    """

    kind = "stream"

    def __init__(self, seed: int, stream_id: int):
        if not (0 <= int(seed) <= _MASK64):
            raise ModelError(f"seed must fit in 64 bits, got {seed!r}")
        if not (0 <= int(stream_id) <= _MASK64):
            raise ModelError(f"stream_id must fit in 64 bits, got {stream_id!r}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.position = 0
        base = self.seed ^ ((self.stream_id * _GOLDEN64) & _MASK64)
        k0 = splitmix64(base)
        k1 = splitmix64(k0)
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([k0, k1], dtype=np.uint64))
        )

    def increments(self, h: np.ndarray) -> np.ndarray:
        """Brownian pair increments for step sizes h: shape (len(h), 2)."""
        n = len(h)
        xi = self._gen.standard_normal((n, 2))
        self.position += 2 * n
        return xi * np.sqrt(np.asarray(h, dtype=float))[:, None]

    def increments1(self, h: np.ndarray) -> np.ndarray:
        """Scalar Brownian increments for step sizes h: shape (len(h),)."""
        n = len(h)
        xi = self._gen.standard_normal(n)
        self.position += n
        return xi * np.sqrt(np.asarray(h, dtype=float))


class ZeroNoise:
    """Degenerate source: every increment is zero (ODE mode for oracles)."""

    kind = "zero"
    seed = None
    stream_id = None

    def __init__(self):
        self.position = 0

    def increments(self, h: np.ndarray) -> np.ndarray:
        self.position += 2 * len(h)
        return np.zeros((len(h), 2))

    def increments1(self, h: np.ndarray) -> np.ndarray:
        self.position += len(h)
        return np.zeros(len(h))


class ArrayNoise:
    """Preset increments, already scaled; used by refinement tests that need
    coarse increments aggregated from finer ones."""

    kind = "array"
    seed = None
    stream_id = None

    def __init__(self, values: np.ndarray):
        self.values = np.asarray(values, dtype=float)
        self.position = 0

    def increments(self, h: np.ndarray) -> np.ndarray:
        if self.values.ndim != 2 or self.values.shape != (len(h), 2):
            raise ReplayMismatchError(
                f"preset increments have shape {self.values.shape}, need {(len(h), 2)}"
            )
        self.position += 2 * len(h)
        return self.values

    def increments1(self, h: np.ndarray) -> np.ndarray:
        if self.values.ndim != 1 or self.values.shape != (len(h),):
            raise ReplayMismatchError(
                f"preset increments have shape {self.values.shape}, need {(len(h),)}"
            )
        self.position += len(h)
        return self.values


class ScaledNoise:
    """Multiplies another source's increments by a constant factor.

    Test hook for linearity checks; scaling by a power of two commutes with
    rounding, so doubling increments doubles any linear accumulation exactly.
    """

    kind = "scaled"

    def __init__(self, inner, factor: float):
        self.inner = inner
        self.factor = float(factor)
        self.seed = getattr(inner, "seed", None)
        self.stream_id = getattr(inner, "stream_id", None)

    @property
    def position(self) -> int:
        return self.inner.position

    def increments(self, h: np.ndarray) -> np.ndarray:
        return self.factor * self.inner.increments(h)

    def increments1(self, h: np.ndarray) -> np.ndarray:
        return self.factor * self.inner.increments1(h)


def derive_stream(seed: int, stream_id: int) -> NoiseStream:
    """Stateless derivation of an independent stream; same inputs, same draws."""
    return NoiseStream(seed, stream_id)


# ---------------------------------------------------------------------------
# step policy and schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepPolicy:
    """Step-size and horizon control for one integration.

    The effective step at time t is min(h0, refine_c / (1 + L*f(t))) with L
    the largest drift scale on the grid and f the decaying rate, so early
    steps shrink exactly when the drift is fast.  After t_end the drift is
    dropped and the system relaxes for up to relax_extra more time, stopping
    early once every phase difference sits within converge_tol of 2*pi*Z.
    States are recorded every out_stride steps plus the terminal state.
    """

    t_end: float
    h0: float = 0.01
    refine_c: float = 0.5
    relax_extra: float = 0.0
    converge_tol: float = 0.05 * TWO_PI
    out_stride: int = 32

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_end) and self.t_end >= 0.0):
            raise ModelError(f"t_end must be finite and >= 0, got {self.t_end!r}")
        if not (math.isfinite(self.h0) and self.h0 > 0.0):
            raise ModelError(f"h0 must be > 0, got {self.h0!r}")
        if not (math.isfinite(self.refine_c) and self.refine_c > 0.0):
            raise ModelError(f"refine_c must be > 0, got {self.refine_c!r}")
        if not (math.isfinite(self.relax_extra) and self.relax_extra >= 0.0):
            raise ModelError(f"relax_extra must be >= 0, got {self.relax_extra!r}")
        if not (math.isfinite(self.converge_tol) and self.converge_tol > 0.0):
            raise ModelError(f"converge_tol must be > 0, got {self.converge_tol!r}")
        if int(self.out_stride) != self.out_stride or self.out_stride < 1:
            raise ModelError(f"out_stride must be an integer >= 1, got {self.out_stride!r}")

    @classmethod
    def for_model(
        cls,
        params: ModelParams,
        *,
        h0: float = 0.01,
        refine_c: float = 0.5,
        out_stride: int = 32,
        drift_margin: float = 6.0,
        relax_mult: float = 10.0,
        converge_tol: float = 0.05 * TWO_PI,
    ) -> "StepPolicy":
        """Default horizons for counting runs.

        t_end = t_lambda(x_max) + drift_margin*(4/beta) leaves the dropped
        drift tail below exp(-drift_margin) of a radian; relax_extra defaults
        to ten drift time constants.
        """
        unit = 4.0 / params.beta
        base = t_lambda(params.x_max, params.beta) if params.x_max > 1 else 0.0
        return cls(
            t_end=base + drift_margin * unit,
            h0=h0,
            refine_c=refine_c,
            relax_extra=relax_mult * unit,
            converge_tol=converge_tol,
            out_stride=out_stride,
        )


@dataclass
class Schedule:
    """Concrete step sequence for one (policy, beta, drift-scale) triple."""

    h: np.ndarray        # step sizes, main phase then relaxation
    bounds: np.ndarray   # boundary times, len(h)+1, bounds[0] = 0
    n_main: int          # steps with drift active
    rate_h: np.ndarray   # decay_rate(bounds[k]) * h[k] for the main steps
    lam_scale: float
    beta: float

    @property
    def n_total(self) -> int:
        return len(self.h)


def build_schedule(policy: StepPolicy, beta: float, lam_scale: float) -> Schedule:
    """Materialize the deterministic step sequence for a run."""
    if not (math.isfinite(lam_scale) and lam_scale >= 0.0):
        raise ModelError(f"lam_scale must be >= 0, got {lam_scale!r}")
    hs: list[float] = []
    t = 0.0
    quarter_beta = 0.25 * beta
    while policy.t_end - t > _TIME_EPS:
        f = quarter_beta * math.exp(-quarter_beta * t)
        h = min(policy.h0, policy.refine_c / (1.0 + lam_scale * f))
        rem = policy.t_end - t
        if h > rem:
            h = rem
        hs.append(h)
        t += h
    n_main = len(hs)
    end = policy.t_end + policy.relax_extra
    while end - t > _TIME_EPS:
        h = policy.h0
        rem = end - t
        if h > rem:
            h = rem
        hs.append(h)
        t += h
    h_arr = np.asarray(hs, dtype=float)
    bounds = np.empty(len(hs) + 1)
    bounds[0] = 0.0
    np.cumsum(h_arr, out=bounds[1:])
    rate = quarter_beta * np.exp(-quarter_beta * bounds[:n_main])
    return Schedule(
        h=h_arr,
        bounds=bounds,
        n_main=n_main,
        rate_h=rate * h_arr[:n_main],
        lam_scale=float(lam_scale),
        beta=float(beta),
    )


def record_boundaries(n_taken: int, stride: int) -> list[int]:
    """Boundary indices kept on the output grid: 0, every stride-th, terminal."""
    out = list(range(0, n_taken, stride))
    if not out or out[-1] != n_taken:
        out.append(n_taken)
    return out


def nearest_boundary(bounds: np.ndarray, t: float, n_taken: int) -> int:
    """Index of the step boundary closest to time t among the first n_taken+1."""
    view = bounds[: n_taken + 1]
    j = int(np.searchsorted(view, t))
    if j <= 0:
        return 0
    if j > n_taken:
        return n_taken
    return j if (view[j] - t) <= (t - view[j - 1]) else j - 1


# ---------------------------------------------------------------------------
# coupled phase ensemble
# ---------------------------------------------------------------------------

@dataclass
class PhaseEnsemble:
    """Recorded state of one coupled integration.

    alpha has one row per signed half-width (ascending order: negatives first)
    and one column per recorded time.  violations counts, per row, the steps
    on which the phase crossed a 2*pi barrier downward; the continuum flow
    cannot do that, so the count is a discretization diagnostic, recorded and
    never corrected.
    """

    params: ModelParams
    policy: StepPolicy
    noise_kind: str
    seed: Optional[int]
    stream_id: Optional[int]
    signed_lambdas: np.ndarray
    times: np.ndarray
    alpha: np.ndarray
    violations: np.ndarray
    converged: np.ndarray
    n_steps: int
    n_steps_main: int
    schedule: Schedule = field(repr=False)

    @property
    def n_pairs(self) -> int:
        return len(self.params.lambda_grid)

    def index_of(self, lam_signed: float) -> int:
        j = int(np.searchsorted(self.signed_lambdas, lam_signed))
        if j >= len(self.signed_lambdas) or self.signed_lambdas[j] != lam_signed:
            raise ModelError(f"half-width {lam_signed} not on the signed grid")
        return j

    def pair_indices(self, lam: int) -> tuple[int, int]:
        return self.index_of(float(lam)), self.index_of(-float(lam))

    def diff_series(self, lam: int) -> np.ndarray:
        ip, im = self.pair_indices(lam)
        return self.alpha[ip] - self.alpha[im]

    def terminal_diff(self, lam: int) -> float:
        ip, im = self.pair_indices(lam)
        return float(self.alpha[ip, -1] - self.alpha[im, -1])

    def terminal_alpha(self, lam_signed: float) -> float:
        return float(self.alpha[self.index_of(lam_signed), -1])

    def pair_converged(self, lam: int) -> bool:
        grid = self.params.lambda_grid
        return bool(self.converged[grid.index(int(lam))])

    def order_violation_fraction(self, mono_tol: float = 1e-3) -> float:
        """Fraction of (time, adjacent-half-width) cells out of order by > mono_tol.

        The continuum phases are monotone in the signed half-width at every
        time; the scheme may break ties by tiny amounts, which the tolerance
        absorbs.
        """
        gaps = np.diff(self.alpha, axis=0)
        return float(np.mean(gaps < -mono_tol))


def _signed_grid(params: ModelParams) -> np.ndarray:
    pos = np.asarray(params.lambda_grid, dtype=float)
    return np.concatenate([-pos[::-1], pos])


def integrate_ensemble(
    params: ModelParams,
    policy: StepPolicy,
    noise,
    *,
    require_counting_horizon: bool = False,
) -> PhaseEnsemble:
    """Integrate every signed half-width under one shared Brownian pair.

    The update per step is

        alpha <- alpha + lam * rate(t) * h + (cos alpha - 1) dB1 + sin alpha dB2

    with the trig coefficients evaluated at the step's left endpoint.  After
    t_end the drift term is dropped; the relaxation ends early once every
    phase difference is within converge_tol of a multiple of 2*pi.

    Counting runs need t_end >= t_lambda(x_max); pass
    require_counting_horizon=True to enforce that.  Shorter horizons are legal
    for martingale-only diagnostics.
    """
    if require_counting_horizon and params.x_max > 1:
        need = t_lambda(params.x_max, params.beta)
        if policy.t_end + _TIME_EPS < need:
            raise ModelError(
                f"t_end={policy.t_end} below the counting horizon {need:.6g} for x_max={params.x_max}"
            )
    if getattr(noise, "position", 0) != 0:
        raise ModelError("noise sources are single-use; need position 0")

    sched = build_schedule(policy, params.beta, lam_scale=float(params.x_max))
    n_total = sched.n_total
    db = noise.increments(sched.h)
    if db.shape != (n_total, 2):
        raise ReplayMismatchError(f"noise produced shape {db.shape}, need {(n_total, 2)}")

    signed = _signed_grid(params)
    n_signed = len(signed)
    stride = policy.out_stride
    n_pairs = len(params.lambda_grid)
    tol = policy.converge_tol

    if n_signed <= _SCALAR_PATH_MAX:
        taken, rec_idx, cols, viol = _ensemble_loop_scalar(
            signed, sched, db, stride, n_pairs, tol
        )
        alpha_mat = np.array(cols, dtype=float).T
    else:
        taken, rec_idx, cols, viol = _ensemble_loop_numpy(
            signed, sched, db, stride, n_pairs, tol
        )
        alpha_mat = np.stack(cols, axis=1)

    times = sched.bounds[rec_idx]
    final = alpha_mat[:, -1]
    d = final[n_pairs:] - final[n_pairs - 1 :: -1]
    dist = np.abs(d - TWO_PI * np.round(d * _INV_2PI))
    converged = dist < tol

    return PhaseEnsemble(
        params=params,
        policy=policy,
        noise_kind=noise.kind,
        seed=getattr(noise, "seed", None),
        stream_id=getattr(noise, "stream_id", None),
        signed_lambdas=signed,
        times=times,
        alpha=alpha_mat,
        violations=np.asarray(viol, dtype=np.int64),
        converged=converged,
        n_steps=taken,
        n_steps_main=min(taken, sched.n_main),
        schedule=sched,
    )


def _ensemble_loop_numpy(signed, sched, db, stride, n_pairs, tol):
    n_total = sched.n_total
    n_main = sched.n_main
    h = sched.h
    rate_h = sched.rate_h
    db1 = db[:, 0]
    db2 = db[:, 1]
    n_signed = len(signed)

    alpha = np.zeros(n_signed)
    kfloor = np.zeros(n_signed)
    viol = np.zeros(n_signed, dtype=np.int64)
    cbuf = np.empty(n_signed)
    sbuf = np.empty(n_signed)
    tmp = np.empty(n_signed)
    mask = np.empty(n_signed, dtype=bool)
    # Barrier crossings are forbidden against each phase's drift direction;
    # tracking floor(sign * alpha) makes "floor decreased" the violation for
    # both signs at once.
    direction = np.sign(signed)

    pos_slice = slice(n_pairs, 2 * n_pairs)
    neg_rev = slice(n_pairs - 1, None, -1)

    rec_idx = [0]
    cols = [alpha.copy()]
    taken = n_total
    for k in range(n_total):
        np.cos(alpha, out=cbuf)
        np.sin(alpha, out=sbuf)
        cbuf -= 1.0
        if k < n_main:
            np.multiply(signed, rate_h[k], out=tmp)
            alpha += tmp
        cbuf *= db1[k]
        sbuf *= db2[k]
        alpha += cbuf
        alpha += sbuf
        np.multiply(alpha, direction, out=tmp)
        tmp *= _INV_2PI
        np.floor(tmp, out=tmp)
        np.less(tmp, kfloor, out=mask)
        viol += mask
        kfloor, tmp = tmp, kfloor

        j = k + 1
        stop = False
        if k >= n_main:
            d = alpha[pos_slice] - alpha[neg_rev]
            dist = np.abs(d - TWO_PI * np.round(d * _INV_2PI))
            stop = bool(dist.max() < tol)
        if j % stride == 0 or j == n_total or stop:
            if not np.isfinite(alpha).all():
                raise IntegrationError(f"non-finite phase at step {j}", step=j)
            if rec_idx[-1] != j:
                rec_idx.append(j)
                cols.append(alpha.copy())
            if stop:
                taken = j
                break
    return taken, rec_idx, cols, viol


def _ensemble_loop_scalar(signed, sched, db, stride, n_pairs, tol):
    n_total = sched.n_total
    n_main = sched.n_main
    rate_h = sched.rate_h.tolist()
    db1 = db[:, 0].tolist()
    db2 = db[:, 1].tolist()
    lam = signed.tolist()
    n_signed = len(lam)

    alpha = [0.0] * n_signed
    kfloor = [0.0] * n_signed
    viol = [0] * n_signed

    rec_idx = [0]
    cols = [tuple(alpha)]
    taken = n_total
    for k in range(n_total):
        b1 = db1[k]
        b2 = db2[k]
        drift_on = k < n_main
        rh = rate_h[k] if drift_on else 0.0
        for i in range(n_signed):
            a = alpha[i]
            c = math.cos(a) - 1.0
            s = math.sin(a)
            if drift_on:
                a += lam[i] * rh
            a += c * b1 + s * b2
            nf = math.floor((a if lam[i] > 0 else -a) * _INV_2PI)
            if nf < kfloor[i]:
                viol[i] += 1
            kfloor[i] = nf
            alpha[i] = a

        j = k + 1
        stop = False
        if k >= n_main:
            stop = True
            for i in range(n_pairs):
                d = alpha[n_pairs + i] - alpha[n_pairs - 1 - i]
                if abs(d - TWO_PI * round(d * _INV_2PI)) >= tol:
                    stop = False
                    break
        if j % stride == 0 or j == n_total or stop:
            if not all(math.isfinite(a) for a in alpha):
                raise IntegrationError(f"non-finite phase at step {j}", step=j)
            if rec_idx[-1] != j:
                rec_idx.append(j)
                cols.append(tuple(alpha))
            if stop:
                taken = j
                break
    return taken, rec_idx, cols, viol


# ---------------------------------------------------------------------------
# tilted single-phase dynamics
# ---------------------------------------------------------------------------

@dataclass
class TiltedPath:
    """One trajectory of the accelerated phase-difference equation.

    m_part accumulates the local martingale 2 sin(u/2) dX and bracket its
    quadratic variation, both exactly as summed by the scheme, so exponential
    change-of-measure factors computed from them are scheme-exact.
    """

    lam: float
    eta: float
    beta: float
    times: np.ndarray
    u: np.ndarray
    m_part: np.ndarray
    bracket: np.ndarray

    def reconstructed_martingale(self) -> np.ndarray:
        """Drift-free part of u under the untilted measure: m + (eta/2)*bracket.

        This is the scheme-exact decomposition; in the continuum it equals
        u(t) - 2*lam*(delivered drift fraction)(t).
        """
        return self.m_part + 0.5 * self.eta * self.bracket

    @property
    def terminal_m(self) -> float:
        return float(self.m_part[-1])

    @property
    def terminal_bracket(self) -> float:
        return float(self.bracket[-1])


@dataclass
class TiltBatch:
    """Replica-stacked tilted paths sharing one schedule and output grid."""

    lam: float
    eta: float
    beta: float
    policy: StepPolicy
    times: np.ndarray
    u: np.ndarray        # (replicas, n_recorded)
    m_part: np.ndarray
    bracket: np.ndarray
    n_steps: int
    const_diffusion: bool

    @property
    def n_replicas(self) -> int:
        return self.u.shape[0]

    def path(self, i: int) -> TiltedPath:
        return TiltedPath(
            lam=self.lam,
            eta=self.eta,
            beta=self.beta,
            times=self.times,
            u=self.u[i],
            m_part=self.m_part[i],
            bracket=self.bracket[i],
        )

    def reconstructed_martingale(self) -> np.ndarray:
        return self.m_part + 0.5 * self.eta * self.bracket


def integrate_tilted_batch(
    lam: float,
    eta: float,
    beta: float,
    policy: StepPolicy,
    noises: Sequence,
    *,
    const_diffusion: bool = False,
) -> TiltBatch:
    """Integrate du = 2 lam rate dt + 2 eta sin^2(u/2) dt + 2 sin(u/2) dX
    for one noise source per replica.

    eta is the acceleration of the tilted dynamics; eta=0 recovers the plain
    phase-difference equation driven by scalar noise.  With
    const_diffusion=True the diffusion is frozen at 2 and sin^2(u/2) at 1,
    which turns the equation into Brownian motion with constant drift, a
    closed-form test target.  Relaxation never applies here: the horizon is
    exactly policy.t_end.
    """
    if not (math.isfinite(eta) and math.isfinite(lam)):
        raise ModelError("lam and eta must be finite")
    sched = build_schedule(
        replace(policy, relax_extra=0.0), beta, lam_scale=2.0 * abs(lam)
    )
    n = sched.n_total
    n_rep = len(noises)
    if n_rep == 0:
        raise ModelError("need at least one noise source")
    dx = np.empty((n_rep, n))
    for r, src in enumerate(noises):
        if getattr(src, "position", 0) != 0:
            raise ModelError("noise sources are single-use; need position 0")
        dx[r] = src.increments1(sched.h)

    rate_h_full = np.zeros(n)
    rate_h_full[: sched.n_main] = sched.rate_h
    stride = policy.out_stride
    rec = record_boundaries(n, stride)
    n_rec = len(rec)

    u = np.zeros(n_rep)
    m = np.zeros(n_rep)
    br = np.zeros(n_rep)
    u_out = np.empty((n_rep, n_rec))
    m_out = np.empty((n_rep, n_rec))
    b_out = np.empty((n_rep, n_rec))
    u_out[:, 0] = 0.0
    m_out[:, 0] = 0.0
    b_out[:, 0] = 0.0
    col = 1

    two_lam = 2.0 * lam
    two_eta = 2.0 * eta
    for k in range(n):
        hk = sched.h[k]
        if const_diffusion:
            noise_term = 2.0 * dx[:, k]
            drift = two_lam * rate_h_full[k] + two_eta * hk
            u += drift
            u += noise_term
            m += noise_term
            br += 4.0 * hk
        else:
            s = np.sin(0.5 * u)
            s2 = s * s
            noise_term = (2.0 * s) * dx[:, k]
            u += two_lam * rate_h_full[k] + (two_eta * hk) * s2
            u += noise_term
            m += noise_term
            br += (4.0 * hk) * s2
        j = k + 1
        if j % stride == 0 or j == n:
            if not np.isfinite(u).all():
                raise IntegrationError(f"non-finite tilted phase at step {j}", step=j)
            u_out[:, col] = u
            m_out[:, col] = m
            b_out[:, col] = br
            col += 1

    return TiltBatch(
        lam=float(lam),
        eta=float(eta),
        beta=float(beta),
        policy=policy,
        times=sched.bounds[rec],
        u=u_out,
        m_part=m_out,
        bracket=b_out,
        n_steps=n,
        const_diffusion=const_diffusion,
    )


def integrate_tilted(
    lam: float,
    eta: float,
    beta: float,
    policy: StepPolicy,
    noise,
    *,
    const_diffusion: bool = False,
) -> TiltedPath:
    """Single-path form of integrate_tilted_batch."""
    batch = integrate_tilted_batch(
        lam, eta, beta, policy, [noise], const_diffusion=const_diffusion
    )
    return batch.path(0)


# ---------------------------------------------------------------------------
# noise replay over a recorded ensemble
# ---------------------------------------------------------------------------

@dataclass
class PairReplay:
    """Martingale and bracket of one half-width pair, re-accumulated from the
    run's own increments on the run's own output grid."""

    lam: int
    times: np.ndarray
    m: np.ndarray
    bracket: np.ndarray
    mark_times: tuple[float, ...]
    mark_grid_times: tuple[float, ...]
    mark_m: tuple[float, ...]
    mark_bracket: tuple[float, ...]


@dataclass
class QuadReplay:
    """Cross-bracket accumulation for two half-width pairs."""

    lam: int
    mu: int
    times: np.ndarray
    cross: np.ndarray
    bracket_lam: np.ndarray
    bracket_mu: np.ndarray
    bracket_sum: np.ndarray
    mark_times: tuple[float, ...]
    mark_grid_times: tuple[float, ...]
    mark_cross: tuple[float, ...]
    mark_bracket_lam: tuple[float, ...]
    mark_bracket_mu: tuple[float, ...]


def replay_noise_for(ensemble: PhaseEnsemble):
    """Fresh noise source reproducing the increments of a recorded run."""
    if ensemble.noise_kind == "stream":
        return derive_stream(ensemble.seed, ensemble.stream_id)
    if ensemble.noise_kind == "zero":
        return ZeroNoise()
    raise ReplayMismatchError(
        f"runs driven by {ensemble.noise_kind!r} noise cannot be re-derived; "
        "pass the increments explicitly"
    )


def _replay_increments(ensemble: PhaseEnsemble, noise) -> np.ndarray:
    if noise.kind == "stream":
        if ensemble.noise_kind != "stream" or noise.seed != ensemble.seed or (
            noise.stream_id != ensemble.stream_id
        ):
            raise ReplayMismatchError(
                "replay stream does not match the run: "
                f"run ({ensemble.noise_kind}, seed={ensemble.seed}, id={ensemble.stream_id}) "
                f"vs replay (seed={noise.seed}, id={noise.stream_id})"
            )
    if noise.kind == "zero" and ensemble.noise_kind != "zero":
        raise ReplayMismatchError("zero-noise replay against a noisy run")
    if getattr(noise, "position", 0) != 0:
        raise ReplayMismatchError("replay noise must start at position 0")
    db = noise.increments(ensemble.schedule.h)
    if db.shape != (ensemble.schedule.n_total, 2):
        raise ReplayMismatchError(
            f"replay produced {db.shape[0]} steps, run used {ensemble.schedule.n_total}"
        )
    return db


_TERMINAL_CHECK_TOL = 1e-6


def _check_terminal(ensemble: PhaseEnsemble, lam: float, value: float) -> None:
    ref = ensemble.terminal_alpha(lam)
    if abs(value - ref) > _TERMINAL_CHECK_TOL * max(1.0, abs(ref)):
        raise ReplayMismatchError(
            f"replayed phase for half-width {lam} ended at {value!r}, run recorded {ref!r}; "
            "the increments do not reproduce the run"
        )


def replay_pair(
    ensemble: PhaseEnsemble,
    lam: int,
    noise,
    mark_times: Sequence[float] = (),
) -> PairReplay:
    """Re-run one half-width pair under the recorded increments, accumulating

        m       += (cos a+ - cos a-) dB1 + (sin a+ - sin a-) dB2
        bracket += 4 sin^2((a+ - a-)/2) h

    with coefficients at step left endpoints, exactly as the ensemble stepped.
    Values are returned on the run's output grid plus at the step boundaries
    nearest each requested mark time.
    """
    lam = int(lam)
    if lam not in ensemble.params.lambda_grid:
        raise ModelError(f"half-width {lam} not on the grid")
    db = _replay_increments(ensemble, noise)
    sched = ensemble.schedule
    n_taken = ensemble.n_steps
    n_main = ensemble.n_steps_main
    stride = ensemble.policy.out_stride

    h = sched.h.tolist()
    rate_h = sched.rate_h.tolist()
    db1 = db[:, 0].tolist()
    db2 = db[:, 1].tolist()

    mark_idx = [nearest_boundary(sched.bounds, t, n_taken) for t in mark_times]
    capture: dict[int, tuple[float, float]] = {}

    ap = 0.0
    am = 0.0
    m = 0.0
    br = 0.0
    times = [0.0]
    m_grid = [0.0]
    b_grid = [0.0]
    if 0 in mark_idx:
        capture[0] = (0.0, 0.0)
    flam = float(lam)
    for k in range(n_taken):
        cp = math.cos(ap)
        sp = math.sin(ap)
        cm = math.cos(am)
        sm = math.sin(am)
        b1 = db1[k]
        b2 = db2[k]
        m += (cp - cm) * b1 + (sp - sm) * b2
        sd = math.sin(0.5 * (ap - am))
        br += 4.0 * sd * sd * h[k]
        if k < n_main:
            rh = rate_h[k]
            ap += flam * rh
            am -= flam * rh
        ap += (cp - 1.0) * b1 + sp * b2
        am += (cm - 1.0) * b1 + sm * b2
        j = k + 1
        if j in mark_idx:
            capture[j] = (m, br)
        if j % stride == 0 or j == n_taken:
            if times[-1] != sched.bounds[j]:
                times.append(float(sched.bounds[j]))
                m_grid.append(m)
                b_grid.append(br)

    _check_terminal(ensemble, flam, ap)
    _check_terminal(ensemble, -flam, am)

    marks_m = []
    marks_b = []
    marks_t = []
    for t, j in zip(mark_times, mark_idx):
        vm, vb = capture[j]
        marks_m.append(vm)
        marks_b.append(vb)
        marks_t.append(float(sched.bounds[j]))
    return PairReplay(
        lam=lam,
        times=np.asarray(times),
        m=np.asarray(m_grid),
        bracket=np.asarray(b_grid),
        mark_times=tuple(float(t) for t in mark_times),
        mark_grid_times=tuple(marks_t),
        mark_m=tuple(marks_m),
        mark_bracket=tuple(marks_b),
    )


def replay_quad(
    ensemble: PhaseEnsemble,
    lam: int,
    mu: int,
    noise,
    mark_times: Sequence[float] = (),
) -> QuadReplay:
    """Re-run two half-width pairs jointly and accumulate the cross-bracket

        cross += (a_lam * a_mu + b_lam * b_mu) h

    where (a, b) are each pair's noise coefficients, together with both own
    brackets and the bracket of the summed martingale (for polarization
    checks)."""
    lam = int(lam)
    mu = int(mu)
    for v in (lam, mu):
        if v not in ensemble.params.lambda_grid:
            raise ModelError(f"half-width {v} not on the grid")
    db = _replay_increments(ensemble, noise)
    sched = ensemble.schedule
    n_taken = ensemble.n_steps
    n_main = ensemble.n_steps_main
    stride = ensemble.policy.out_stride

    h = sched.h.tolist()
    rate_h = sched.rate_h.tolist()
    db1 = db[:, 0].tolist()
    db2 = db[:, 1].tolist()

    mark_idx = [nearest_boundary(sched.bounds, t, n_taken) for t in mark_times]
    capture: dict[int, tuple[float, float, float]] = {}
    if 0 in mark_idx:
        capture[0] = (0.0, 0.0, 0.0)

    # phases: lam+, lam-, mu+, mu-
    a = [0.0, 0.0, 0.0, 0.0]
    sgn = [float(lam), -float(lam), float(mu), -float(mu)]
    cross = 0.0
    brl = 0.0
    brm = 0.0
    brs = 0.0
    times = [0.0]
    cross_grid = [0.0]
    brl_grid = [0.0]
    brm_grid = [0.0]
    brs_grid = [0.0]
    for k in range(n_taken):
        c0 = math.cos(a[0]); s0 = math.sin(a[0])
        c1 = math.cos(a[1]); s1 = math.sin(a[1])
        c2 = math.cos(a[2]); s2 = math.sin(a[2])
        c3 = math.cos(a[3]); s3 = math.sin(a[3])
        al = c0 - c1
        bl = s0 - s1
        am_ = c2 - c3
        bm_ = s2 - s3
        hk = h[k]
        cross += (al * am_ + bl * bm_) * hk
        brl += (al * al + bl * bl) * hk
        brm += (am_ * am_ + bm_ * bm_) * hk
        asum = al + am_
        bsum = bl + bm_
        brs += (asum * asum + bsum * bsum) * hk
        b1 = db1[k]
        b2 = db2[k]
        if k < n_main:
            rh = rate_h[k]
            a[0] += sgn[0] * rh
            a[1] += sgn[1] * rh
            a[2] += sgn[2] * rh
            a[3] += sgn[3] * rh
        a[0] += (c0 - 1.0) * b1 + s0 * b2
        a[1] += (c1 - 1.0) * b1 + s1 * b2
        a[2] += (c2 - 1.0) * b1 + s2 * b2
        a[3] += (c3 - 1.0) * b1 + s3 * b2
        j = k + 1
        if j in mark_idx:
            capture[j] = (cross, brl, brm)
        if j % stride == 0 or j == n_taken:
            if times[-1] != sched.bounds[j]:
                times.append(float(sched.bounds[j]))
                cross_grid.append(cross)
                brl_grid.append(brl)
                brm_grid.append(brm)
                brs_grid.append(brs)

    _check_terminal(ensemble, float(lam), a[0])
    _check_terminal(ensemble, float(mu), a[2])

    marks_t = []
    marks_c = []
    marks_bl = []
    marks_bm = []
    for t, j in zip(mark_times, mark_idx):
        vc, vl, vm = capture[j]
        marks_t.append(float(sched.bounds[j]))
        marks_c.append(vc)
        marks_bl.append(vl)
        marks_bm.append(vm)
    return QuadReplay(
        lam=lam,
        mu=mu,
        times=np.asarray(times),
        cross=np.asarray(cross_grid),
        bracket_lam=np.asarray(brl_grid),
        bracket_mu=np.asarray(brm_grid),
        bracket_sum=np.asarray(brs_grid),
        mark_times=tuple(float(t) for t in mark_times),
        mark_grid_times=tuple(marks_t),
        mark_cross=tuple(marks_c),
        mark_bracket_lam=tuple(marks_bl),
        mark_bracket_mu=tuple(marks_bm),
    )
