"""Replica engine: determinism, aggregation, persistence, failure policy."""
import json
import math

import numpy as np
import pytest

from sinebeta.model import ModelError, ModelParams, t_lambda
from sinebeta.sde import StepPolicy
from sinebeta.engine import (
    EngineFailureError,
    RunConfig,
    corrected_predictor,
    default_count_lambdas,
    load_summary,
    persist,
    run,
    scaling_sweep,
    summary_json,
)


def _small_config(**kw):
    params = ModelParams.dense(2.0, 8)
    policy = StepPolicy.for_model(params, h0=0.02, refine_c=1.0, out_stride=1 << 40)
    defaults = dict(params=params, policy=policy, replicas=4, seed=99)
    defaults.update(kw)
    return RunConfig(**defaults)


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_repeat_run_identical_bytes():
    cfg = _small_config(replicas=2)
    a = summary_json(run(cfg))
    b = summary_json(run(cfg))
    assert a == b


def test_worker_count_does_not_change_results():
    cfg = _small_config(
        replicas=8,
        bracket_pairs=((4, 8),),
        tail_lambdas=(8,),
    )
    serial = run(cfg, workers=1)
    pooled = run(cfg, workers=8)
    assert summary_json(serial) == summary_json(pooled)
    for s, p in zip(serial.summaries, pooled.summaries):
        assert s == p


def test_stream_offset_shifts_replicas():
    base = run(_small_config(replicas=3))
    shifted = run(_small_config(replicas=2, stream_offset=1))
    # shifted replica r uses stream id r+1: same draws as base replica r+1
    assert shifted.summaries[0].max_dev == base.summaries[1].max_dev
    assert shifted.summaries[1].max_dev == base.summaries[2].max_dev


# ---------------------------------------------------------------------------
# config validation and hashing
# ---------------------------------------------------------------------------

def test_config_rejects_off_grid_requests():
    with pytest.raises(ModelError, match="grid"):
        _small_config(bracket_pairs=((4, 9),))
    with pytest.raises(ModelError, match="grid"):
        _small_config(tail_lambdas=(11,))
    with pytest.raises(ModelError, match="grid"):
        _small_config(count_lambdas=(3, 100))
    with pytest.raises(ModelError, match="replicas"):
        _small_config(replicas=0)


def test_config_hash_tracks_content():
    a = _small_config()
    b = _small_config()
    assert a.config_hash() == b.config_hash()
    c = _small_config(seed=100)
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 8


def test_config_round_trip_dict():
    cfg = _small_config(bracket_pairs=((4, 8),), tail_lambdas=(8,))
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_default_count_lambdas_small_grid_is_whole_grid():
    params = ModelParams.dense(2.0, 8)
    assert default_count_lambdas(params) == params.lambda_grid


def test_default_count_lambdas_large_grid_keeps_powers_and_endpoint():
    params = ModelParams.dense(2.0, 100)
    kept = default_count_lambdas(params)
    assert kept == (1, 2, 4, 8, 16, 32, 64, 100)


# ---------------------------------------------------------------------------
# aggregation and failure policy
# ---------------------------------------------------------------------------

def test_aggregates_cover_requested_quantities():
    cfg = _small_config(
        replicas=3,
        bracket_pairs=((4, 8),),
        tail_lambdas=(8,),
        count_lambdas=(2, 8),
    )
    res = run(cfg)
    keys = set(res.aggregates)
    assert {"max_dev", "one_sided_max", "nonconverged"} <= keys
    assert {"N[lam=2]", "N[lam=8]", "deviation[lam=2]", "deviation[lam=8]"} <= keys
    assert {"bracket[lam=4,mu=8]", "cross_bracket[lam=4,mu=8]"} <= keys
    assert "tail_residual[lam=8]" in keys
    for agg in res.aggregates.values():
        assert agg.count == 3
    # tails table: one row per (lam, threshold), fractions in [0, 1]
    assert len(res.tails_table) == 4
    for lam, c, fr in res.tails_table:
        assert lam == 8 and 0.0 <= fr <= 1.0


def test_failure_threshold_raises():
    # t_end far below the largest width's horizon: every replica fails fast
    params = ModelParams.dense(2.0, 8)
    policy = StepPolicy(t_end=0.5, relax_extra=0.0)
    cfg = RunConfig(params=params, policy=policy, replicas=3, seed=1)
    with pytest.raises(EngineFailureError) as e:
        run(cfg)
    assert e.value.failures == 3
    assert e.value.total == 3


def test_degenerate_bracket_pair_allowed():
    cfg = _small_config(replicas=2, bracket_pairs=((8, 8),))
    res = run(cfg)
    own = res.aggregates["bracket[lam=8,mu=8]"]
    cross = res.aggregates["cross_bracket[lam=8,mu=8]"]
    assert own.mean == cross.mean


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_persist_writes_canonical_files(tmp_path):
    cfg = _small_config(
        replicas=2,
        bracket_pairs=((4, 8),),
        tail_lambdas=(8,),
    )
    res = run(cfg)
    written = persist(res, tmp_path)
    assert set(written) == {"replicas", "counts", "brackets", "tails", "summary"}

    header = (tmp_path / "replicas.csv").read_text().splitlines()[0]
    assert header == "replica,max_dev,argmax_lambda,one_sided_max,nonconverged,failed"
    header = (tmp_path / "counts.csv").read_text().splitlines()[0]
    assert header == "replica,lambda,N,deviation"
    header = (tmp_path / "brackets.csv").read_text().splitlines()[0]
    assert header == "replica,lambda,mu,t,bracket,cross_bracket"
    header = (tmp_path / "tails.csv").read_text().splitlines()[0]
    assert header == "lambda,C,exceed_frac"

    doc = load_summary(tmp_path / "summary.json")
    assert set(doc) >= {"config", "seed", "aggregates", "fits", "version"}
    assert doc["seed"] == 99
    assert doc["config"]["replicas"] == 2
    # full float round trip through the csv
    rows = (tmp_path / "replicas.csv").read_text().splitlines()[1:]
    assert len(rows) == 2
    first = rows[0].split(",")
    assert float(first[1]) == res.summaries[0].max_dev


def test_persist_without_optional_tables(tmp_path):
    res = run(_small_config(replicas=1))
    written = persist(res, tmp_path)
    assert set(written) == {"replicas", "counts", "summary"}
    assert not (tmp_path / "brackets.csv").exists()
    assert not (tmp_path / "tails.csv").exists()


def test_dump_paths_requires_directory(tmp_path):
    cfg = _small_config(replicas=1, dump_paths=True)
    with pytest.raises(ModelError, match="dump_dir"):
        run(cfg)
    run(cfg, dump_dir=tmp_path)
    dumped = sorted(tmp_path.glob("replica_*.csv"))
    assert len(dumped) == 1
    header = dumped[0].read_text().splitlines()[0]
    assert header.startswith("t,")
    # one column per signed half-width on the dense grid over [-8, 8]
    assert len(header.split(",")) == 1 + 16


# ---------------------------------------------------------------------------
# sweep scaffolding
# ---------------------------------------------------------------------------

def test_corrected_predictor_frozen_formula():
    for x in (64, 4096):
        expected = math.log(x) - 0.75 * math.log(math.log(x))
        assert corrected_predictor(x) == pytest.approx(expected, rel=1e-12)


def test_scaling_sweep_rejects_bad_scale_lists():
    with pytest.raises(ModelError, match="increasing"):
        scaling_sweep(2.0, (8, 16), 2, 1)
    with pytest.raises(ModelError, match="increasing"):
        scaling_sweep(2.0, (8, 16, 16), 2, 1)


def test_scaling_sweep_tiny_end_to_end():
    sw = scaling_sweep(2.0, (4, 8, 16), 3, 5, h0=0.02, refine_c=1.0)
    assert sw.x_list == (4, 8, 16)
    assert set(sw.fits) == {
        "log_slope",
        "corrected_slope",
        "one_sided_slope",
        "one_sided_log_slope",
    }
    assert len(sw.ratios) == 3
    for x, ratio, se in sw.ratios:
        assert math.isfinite(ratio) and se >= 0.0
    # per-scale stream blocks make scale ensembles independent but
    # reproducible: scale i replica r uses stream id i*replicas + r
    again = scaling_sweep(2.0, (4, 8, 16), 3, 5, h0=0.02, refine_c=1.0)
    assert [a.mean for a in sw.aggregates.values()] == [
        a.mean for a in again.aggregates.values()
    ]
