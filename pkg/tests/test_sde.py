"""Integrator, noise protocol, schedule, and replay checks."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinebeta.model import ModelParams, ModelError, drift_fraction, t_lambda, TWO_PI
from sinebeta.sde import (
    ArrayNoise,
    IntegrationError,
    NoiseStream,
    ReplayMismatchError,
    ScaledNoise,
    Schedule,
    StepPolicy,
    ZeroNoise,
    build_schedule,
    derive_stream,
    integrate_ensemble,
    integrate_tilted,
    integrate_tilted_batch,
    nearest_boundary,
    record_boundaries,
    replay_noise_for,
    replay_pair,
    splitmix64,
)


# ---------------------------------------------------------------------------
# noise protocol
# ---------------------------------------------------------------------------

def test_splitmix_pinned_vectors():
    # reference outputs of the standard 64-bit mix from states 0 and 1
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(1) == 0x910A2DEC89025CC1


def test_stream_repeatable():
    h = np.full(64, 0.01)
    a = NoiseStream(7, 0).increments(h)
    b = NoiseStream(7, 0).increments(h)
    assert np.array_equal(a, b)


def test_stream_ids_decorrelated():
    n = 100_000
    h = np.full(n, 0.01)
    a = NoiseStream(7, 0).increments(h)[:, 0]
    b = NoiseStream(7, 1).increments(h)[:, 0]
    corr = float(np.corrcoef(a, b)[0, 1])
    assert abs(corr) < 3.0 / math.sqrt(n)


def test_stream_mean_bound():
    # 1e6 scaled draws; the sample mean stays inside 3 sigma of zero
    n = 500_000
    h0 = 0.04
    h = np.full(n, h0)
    draws = NoiseStream(11, 3).increments(h)
    assert abs(float(draws.mean())) <= 3e-3 * math.sqrt(h0)


def test_stream_increment_scale():
    n = 200_000
    h0 = 0.25
    draws = NoiseStream(5, 2).increments(np.full(n, h0))
    sd = float(draws.std())
    # variance h per scalar increment, 3 sigma window for the sample sd
    assert sd == pytest.approx(math.sqrt(h0), rel=5e-3)


def test_streams_are_single_use():
    params = ModelParams(beta=2.0, x_max=2, lambda_grid=(2,))
    pol = StepPolicy(t_end=1.0)
    src = NoiseStream(3, 0)
    src.increments(np.full(4, 0.01))
    with pytest.raises(ModelError, match="single-use"):
        integrate_ensemble(params, pol, src)


def test_array_noise_validates_shape():
    src = ArrayNoise(np.zeros((5, 2)))
    with pytest.raises(ReplayMismatchError):
        src.increments(np.full(4, 0.01))


def test_scaled_noise_scales_exactly():
    h = np.full(16, 0.01)
    base = NoiseStream(9, 0).increments(h)
    doubled = ScaledNoise(NoiseStream(9, 0), 2.0).increments(h)
    assert np.array_equal(doubled, 2.0 * base)


# ---------------------------------------------------------------------------
# policy and schedule
# ---------------------------------------------------------------------------

def test_policy_validation():
    with pytest.raises(ModelError):
        StepPolicy(t_end=-1.0)
    with pytest.raises(ModelError):
        StepPolicy(t_end=1.0, h0=0.0)
    with pytest.raises(ModelError):
        StepPolicy(t_end=1.0, refine_c=0.0)
    with pytest.raises(ModelError):
        StepPolicy(t_end=1.0, out_stride=0)


def test_for_model_horizons():
    params = ModelParams.dense(beta=2.0, x_max=64)
    pol = StepPolicy.for_model(params)
    unit = 4.0 / 2.0
    assert pol.t_end == pytest.approx(t_lambda(64, 2.0) + 6.0 * unit, abs=1e-12)
    assert pol.relax_extra == pytest.approx(10.0 * unit, abs=1e-12)


def test_schedule_caps_and_total():
    pol = StepPolicy(t_end=3.0, h0=0.01, refine_c=0.5)
    sched = build_schedule(pol, 2.0, 64.0)
    assert np.all(sched.h <= 0.01 + 1e-15)
    assert sched.bounds[0] == 0.0
    assert sched.bounds[sched.n_main] == pytest.approx(3.0, abs=1e-9)
    # left-evaluated first step: rate at t=0 decides h[0]
    f0 = 0.5 * math.exp(0.0)
    assert sched.h[0] == pytest.approx(min(0.01, 0.5 / (1.0 + 64.0 * f0)), abs=1e-15)


def test_schedule_step_count_doubles_when_h0_halves():
    pol1 = StepPolicy(t_end=2.0, h0=0.02, refine_c=1e9)
    pol2 = StepPolicy(t_end=2.0, h0=0.01, refine_c=1e9)
    n1 = build_schedule(pol1, 2.0, 0.0).n_total
    n2 = build_schedule(pol2, 2.0, 0.0).n_total
    assert abs(n2 - 2 * n1) <= 1


@settings(max_examples=30)
@given(
    t_end=st.floats(min_value=0.01, max_value=10.0),
    h0=st.sampled_from([0.005, 0.01, 0.05]),
    lam_scale=st.sampled_from([0.0, 8.0, 256.0]),
)
def test_schedule_covers_horizon(t_end, h0, lam_scale):
    pol = StepPolicy(t_end=t_end, h0=h0, relax_extra=0.5)
    sched = build_schedule(pol, 2.0, lam_scale)
    assert sched.bounds[-1] == pytest.approx(t_end + 0.5, abs=1e-6)
    assert np.all(sched.h > 0)


def test_boundary_helpers():
    bounds = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    out = record_boundaries(4, 2)
    assert out[0] == 0
    assert out[-1] == 4
    assert nearest_boundary(bounds, 0.6, 4) == 1
    assert nearest_boundary(bounds, 0.76, 4) == 2
    assert nearest_boundary(bounds, 99.0, 4) == 4
    assert nearest_boundary(bounds, 0.0, 4) == 0


def test_zero_horizon_policy():
    params = ModelParams(beta=2.0, x_max=2, lambda_grid=(2,))
    pol = StepPolicy(t_end=0.0)
    ens = integrate_ensemble(params, pol, ZeroNoise())
    assert ens.times[0] == 0.0
    assert float(np.abs(ens.alpha).max()) == 0.0


# ---------------------------------------------------------------------------
# zero-noise drift checks against the clock
# ---------------------------------------------------------------------------

def _zero_noise_terminal(lam, beta, t_end, h0):
    params = ModelParams(beta=beta, x_max=lam, lambda_grid=(lam,))
    pol = StepPolicy(t_end=t_end, h0=h0, relax_extra=0.0)
    ens = integrate_ensemble(params, pol, ZeroNoise())
    return float(ens.terminal_alpha(lam))


def test_zero_noise_tracks_clock_scalar_path():
    # two-level check: default step vs the clock, and a 100x finer oracle
    lam, beta, t_end, h0 = 4, 2.0, 3.0, 0.01
    coarse = _zero_noise_terminal(lam, beta, t_end, h0)
    fine = _zero_noise_terminal(lam, beta, t_end, h0 / 100.0)
    exact = lam * drift_fraction(t_end, beta)
    assert abs(coarse - exact) <= 0.3 * h0 * lam
    assert abs(fine - exact) <= 0.3 * (h0 / 100.0) * lam


def test_zero_noise_tracks_clock_vector_path():
    params = ModelParams(beta=2.0, x_max=32, lambda_grid=(2, 4, 8, 16, 32))
    pol = StepPolicy(t_end=3.0, relax_extra=0.0)
    ens = integrate_ensemble(params, pol, ZeroNoise())
    for lam in params.lambda_grid:
        exact = lam * drift_fraction(3.0, 2.0)
        assert abs(float(ens.terminal_alpha(lam)) - exact) <= 0.3 * 0.01 * lam


def test_scalar_and_vector_paths_agree():
    # same phases integrated alone (scalar loop) and inside a larger grid
    # (vectorized loop); identical increments, agreement to rounding noise
    pol = StepPolicy(t_end=2.0, relax_extra=0.0)
    small = ModelParams(beta=2.0, x_max=5, lambda_grid=(3, 5))
    big = ModelParams(beta=2.0, x_max=5, lambda_grid=(2, 3, 4, 5))
    e1 = integrate_ensemble(small, pol, NoiseStream(21, 0))
    e2 = integrate_ensemble(big, pol, NoiseStream(21, 0))
    for lam in (3, 5):
        a = float(e1.terminal_alpha(lam))
        b = float(e2.terminal_alpha(lam))
        assert a == pytest.approx(b, abs=1e-10)


# ---------------------------------------------------------------------------
# determinism and replay
# ---------------------------------------------------------------------------

def test_same_seed_bitwise_identical():
    params = ModelParams.dense(beta=2.0, x_max=8)
    pol = StepPolicy(t_end=4.0)
    e1 = integrate_ensemble(params, pol, NoiseStream(42, 5))
    e2 = integrate_ensemble(params, pol, NoiseStream(42, 5))
    assert np.array_equal(e1.alpha, e2.alpha)
    assert np.array_equal(e1.times, e2.times)


def test_preset_increment_replay_is_bitwise():
    params = ModelParams.dense(beta=2.0, x_max=6)
    pol = StepPolicy(t_end=2.5)
    e1 = integrate_ensemble(params, pol, NoiseStream(13, 2))
    sched = e1.schedule
    db = NoiseStream(13, 2).increments(sched.h)
    e2 = integrate_ensemble(params, pol, ArrayNoise(db))
    assert np.array_equal(e1.alpha, e2.alpha)


def test_replay_rejects_wrong_stream():
    params = ModelParams(beta=2.0, x_max=4, lambda_grid=(4,))
    pol = StepPolicy(t_end=2.0)
    ens = integrate_ensemble(params, pol, NoiseStream(1, 0))
    with pytest.raises(ReplayMismatchError):
        replay_pair(ens, 4, NoiseStream(2, 0))


def test_replay_matches_ensemble_terminal():
    params = ModelParams(beta=2.0, x_max=4, lambda_grid=(4,))
    pol = StepPolicy(t_end=2.0)
    ens = integrate_ensemble(params, pol, NoiseStream(1, 0))
    rep = replay_pair(ens, 4, replay_noise_for(ens))
    assert rep.lam == 4
    assert rep.times[-1] == pytest.approx(ens.times[-1], abs=1e-12)


def test_replay_off_grid_rejected():
    params = ModelParams(beta=2.0, x_max=4, lambda_grid=(4,))
    pol = StepPolicy(t_end=1.0)
    ens = integrate_ensemble(params, pol, NoiseStream(1, 0))
    with pytest.raises(ModelError):
        replay_pair(ens, 3, replay_noise_for(ens))


# ---------------------------------------------------------------------------
# ensemble accessors and convergence
# ---------------------------------------------------------------------------

def test_accessors_and_diff_series():
    params = ModelParams(beta=2.0, x_max=8, lambda_grid=(4, 8))
    pol = StepPolicy(t_end=3.0)
    ens = integrate_ensemble(params, pol, NoiseStream(30, 0))
    ip, im = ens.pair_indices(4)
    assert ens.signed_lambdas[ip] == 4
    assert ens.signed_lambdas[im] == -4
    d = ens.diff_series(4)
    assert np.array_equal(d, ens.alpha[ip] - ens.alpha[im])
    with pytest.raises(ModelError):
        ens.pair_indices(5)


def test_counting_run_settles_onto_winding_lattice():
    params = ModelParams.dense(beta=2.0, x_max=8)
    pol = StepPolicy.for_model(params)
    ens = integrate_ensemble(params, pol, NoiseStream(77, 0))
    assert bool(ens.converged.all())
    for lam in params.lambda_grid:
        d = float(ens.terminal_diff(lam))
        assert abs(d / TWO_PI - round(d / TWO_PI)) <= 0.05
    assert ens.order_violation_fraction() == 0.0


# ---------------------------------------------------------------------------
# tilted dynamics
# ---------------------------------------------------------------------------

def test_tilted_zero_noise_follows_doubled_clock():
    lam, beta, t_end = 6, 2.0, 3.0
    pol = StepPolicy(t_end=t_end, relax_extra=0.0)
    path = integrate_tilted(lam, 0.0, beta, pol, ZeroNoise())
    expect = 2.0 * lam * drift_fraction(t_end, beta)
    # doubled drift doubles the first-order constant of the plain bound
    assert abs(float(path.u[-1]) - expect) <= 0.6 * 0.01 * lam
    assert float(np.abs(path.m_part).max()) == 0.0


def test_tilted_matches_pair_diff_in_distribution():
    # acceleration zero: terminal tilted phase and the ensemble pair
    # difference follow the same law; two-sample KS over fresh streams
    from scipy.stats import ks_2samp

    lam, beta, t_end, n = 8, 2.0, 2.0, 2000
    params = ModelParams(beta=beta, x_max=lam, lambda_grid=(lam,))
    pol = StepPolicy(t_end=t_end, relax_extra=0.0)
    diffs = np.empty(n)
    for r in range(n):
        ens = integrate_ensemble(params, pol, derive_stream(501, r))
        diffs[r] = ens.terminal_diff(lam)
    batch = integrate_tilted_batch(
        lam, 0.0, beta, pol, [derive_stream(502, r) for r in range(n)]
    )
    u_end = batch.u[:, -1]
    stat = ks_2samp(diffs, u_end).statistic
    assert stat < 3.0 * math.sqrt((n + n) / (n * n))


def test_tilted_chunking_invariance():
    from sinebeta.tilt import run_tilted

    a = run_tilted(5, 0.8, 2.0, t_end=2.0, replicas=23, seed=3, chunk=7)
    b = run_tilted(5, 0.8, 2.0, t_end=2.0, replicas=23, seed=3, chunk=1000)
    assert np.array_equal(a.u, b.u)
    assert np.array_equal(a.m_part, b.m_part)
    assert np.array_equal(a.bracket, b.bracket)


def test_tilted_reconstruction_shifts_by_half_bracket():
    pol = StepPolicy(t_end=1.5, relax_extra=0.0)
    path = integrate_tilted(4, 1.0, 2.0, pol, NoiseStream(8, 1))
    m = path.reconstructed_martingale()
    assert np.allclose(m, path.m_part + 0.5 * path.bracket)
