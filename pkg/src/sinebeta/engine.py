"""Replica orchestration, aggregation, and on-disk result schemas.

A run is a pure function of its RunConfig: replica r always draws from
derive_stream(seed, stream_offset + r), workers only schedule, and the parent
folds results in replica order, so outputs are byte-identical for any worker
count.  Persistence is atomic (temp file + rename) and uses repr for floats,
which round-trips exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import (
    PACKAGE_VERSION,
    ModelError,
    ModelParams,
    t_lambda,
)
from .sde import StepPolicy, derive_stream, integrate_ensemble
from .stats import (
    LineFit,
    counting_N,
    cross_bracket_from_run,
    exceedance_curve,
    fit_line,
    one_sided_max,
    tail_residual,
)


class EngineFailureError(RuntimeError):
    """Too many replicas failed for the aggregates to be trustworthy."""

    def __init__(self, failures: int, total: int, first_error: str):
        super().__init__(
            f"{failures} of {total} replicas failed (threshold 10%); first error: {first_error}"
        )
        self.failures = failures
        self.total = total


_FAILURE_FRACTION = 0.1


def default_count_lambdas(params: ModelParams) -> tuple[int, ...]:
    """Half-widths whose counts are recorded per replica: the whole grid when
    it is small, otherwise the powers of two on it plus the endpoint."""
    grid = params.lambda_grid
    if len(grid) <= 64:
        return grid
    kept = [l for l in grid if (l & (l - 1)) == 0]
    if grid[-1] not in kept:
        kept.append(grid[-1])
    return tuple(kept)


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run's outputs.

    Worker count is deliberately not part of the config; it cannot change
    results.  stream_offset shifts the noise stream ids so that several
    configs under one seed stay independent.
    """

    params: ModelParams
    policy: StepPolicy
    replicas: int
    seed: int
    stream_offset: int = 0
    bracket_pairs: tuple[tuple[int, int], ...] = ()
    count_lambdas: Optional[tuple[int, ...]] = None
    tail_lambdas: tuple[int, ...] = ()
    tail_thresholds: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    dump_paths: bool = False

    def __post_init__(self) -> None:
        if int(self.replicas) != self.replicas or self.replicas < 1:
            raise ModelError(f"replicas must be an integer >= 1, got {self.replicas!r}")
        if not (0 <= int(self.seed) < (1 << 64)):
            raise ModelError(f"seed must fit in 64 bits, got {self.seed!r}")
        if int(self.stream_offset) != self.stream_offset or self.stream_offset < 0:
            raise ModelError(f"stream_offset must be >= 0, got {self.stream_offset!r}")
        grid = set(self.params.lambda_grid)
        for lam, mu in self.bracket_pairs:
            for v in (lam, mu):
                if v not in grid:
                    raise ModelError(f"bracket half-width {v} not on the grid")
        for v in self.tail_lambdas:
            if v not in grid:
                raise ModelError(f"tail half-width {v} not on the grid")
        if self.count_lambdas is not None:
            for v in self.count_lambdas:
                if v not in grid:
                    raise ModelError(f"count half-width {v} not on the grid")
        for c in self.tail_thresholds:
            if not (math.isfinite(c)):
                raise ModelError(f"tail threshold {c!r} not finite")

    def effective_count_lambdas(self) -> tuple[int, ...]:
        if self.count_lambdas is not None:
            return self.count_lambdas
        return default_count_lambdas(self.params)

    def to_dict(self) -> dict:
        return {
            "beta": self.params.beta,
            "x_max": self.params.x_max,
            "lambda_grid": list(self.params.lambda_grid),
            "t_end": self.policy.t_end,
            "h0": self.policy.h0,
            "refine_c": self.policy.refine_c,
            "relax_extra": self.policy.relax_extra,
            "converge_tol": self.policy.converge_tol,
            "out_stride": self.policy.out_stride,
            "replicas": self.replicas,
            "seed": self.seed,
            "stream_offset": self.stream_offset,
            "bracket_pairs": [list(p) for p in self.bracket_pairs],
            "count_lambdas": (
                None if self.count_lambdas is None else list(self.count_lambdas)
            ),
            "tail_lambdas": list(self.tail_lambdas),
            "tail_thresholds": list(self.tail_thresholds),
            "dump_paths": self.dump_paths,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        params = ModelParams(
            beta=float(d["beta"]),
            x_max=int(d["x_max"]),
            lambda_grid=tuple(int(v) for v in d["lambda_grid"]),
        )
        policy = StepPolicy(
            t_end=float(d["t_end"]),
            h0=float(d.get("h0", 0.01)),
            refine_c=float(d.get("refine_c", 0.5)),
            relax_extra=float(d.get("relax_extra", 0.0)),
            converge_tol=float(d.get("converge_tol", StepPolicy.__dataclass_fields__["converge_tol"].default)),
            out_stride=int(d.get("out_stride", 32)),
        )
        return cls(
            params=params,
            policy=policy,
            replicas=int(d["replicas"]),
            seed=int(d["seed"]),
            stream_offset=int(d.get("stream_offset", 0)),
            bracket_pairs=tuple(
                (int(p[0]), int(p[1])) for p in d.get("bracket_pairs", [])
            ),
            count_lambdas=(
                None
                if d.get("count_lambdas") is None
                else tuple(int(v) for v in d["count_lambdas"])
            ),
            tail_lambdas=tuple(int(v) for v in d.get("tail_lambdas", [])),
            tail_thresholds=tuple(float(v) for v in d.get("tail_thresholds", (1.0, 2.0, 3.0, 4.0))),
            dump_paths=bool(d.get("dump_paths", False)),
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:8]


@dataclass(frozen=True)
class ReplicaSummary:
    """Scalar outcomes of one replica; self-contained and cheap to pickle."""

    replica: int
    failed: bool
    error: Optional[str]
    max_dev: float
    argmax_lam: float
    one_sided: float
    nonconverged: int
    counts: tuple[tuple[int, float, float], ...]      # (lam, N, deviation)
    tails: tuple[tuple[int, float], ...]              # (lam, residual)
    brackets: tuple[tuple[int, int, float, float, float], ...]
    # bracket row: (lam, mu, t, own bracket, cross bracket)


@dataclass(frozen=True)
class Aggregate:
    mean: float
    se: float
    count: int


@dataclass
class ResultSet:
    config: RunConfig
    summaries: list[ReplicaSummary]
    aggregates: dict[str, Aggregate]
    fits: dict[str, LineFit]
    tails_table: list[tuple[int, float, float]]       # (lam, C, exceed_frac)
    version: str
    config_hash: str


_WORKER_CONFIG: Optional[RunConfig] = None
_WORKER_DUMP: Optional[str] = None


def _init_worker(config: RunConfig, dump_dir: Optional[str]) -> None:
    global _WORKER_CONFIG, _WORKER_DUMP
    _WORKER_CONFIG = config
    _WORKER_DUMP = dump_dir


def _failed_summary(replica: int, exc: Exception) -> ReplicaSummary:
    return ReplicaSummary(
        replica=replica,
        failed=True,
        error=f"{type(exc).__name__}: {exc}",
        max_dev=float("nan"),
        argmax_lam=float("nan"),
        one_sided=float("nan"),
        nonconverged=-1,
        counts=(),
        tails=(),
        brackets=(),
    )


def _dump_ensemble(ensemble, path: Path) -> None:
    cols = ["t"] + [repr(float(v)) for v in ensemble.signed_lambdas]
    lines = [",".join(cols)]
    for j, t in enumerate(ensemble.times):
        row = [repr(float(t))] + [repr(float(v)) for v in ensemble.alpha[:, j]]
        lines.append(",".join(row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _run_one(replica: int) -> ReplicaSummary:
    config = _WORKER_CONFIG
    assert config is not None, "worker not initialized"
    try:
        stream = derive_stream(config.seed, config.stream_offset + replica)
        ens = integrate_ensemble(
            config.params, config.policy, stream, require_counting_horizon=True
        )
        counting = counting_N(ens)
        count_rows = tuple(
            (int(l), float(counting.n[i]), float(counting.deviation[i]))
            for i, l in enumerate(counting.lam)
            if int(l) in set(config.effective_count_lambdas())
        )
        tail_rows = []
        for lam in config.tail_lambdas:
            tail_rows.append((int(lam), tail_residual(ens, int(lam))))
        bracket_rows = []
        for lam, mu in config.bracket_pairs:
            t_mark = t_lambda(max(lam, mu), config.params.beta)
            tr = cross_bracket_from_run(ens, lam, mu, mark_times=(t_mark,))
            bracket_rows.append(
                (
                    int(lam),
                    int(mu),
                    float(t_mark),
                    float(tr.marks_lam[0].bracket),
                    float(tr.marks[0].m),
                )
            )
        if config.dump_paths and _WORKER_DUMP is not None:
            _dump_ensemble(ens, Path(_WORKER_DUMP) / f"replica_{replica:04d}.csv")
        return ReplicaSummary(
            replica=replica,
            failed=False,
            error=None,
            max_dev=counting.max_deviation,
            argmax_lam=counting.argmax_lam,
            one_sided=one_sided_max(ens),
            nonconverged=counting.nonconverged,
            counts=count_rows,
            tails=tuple(tail_rows),
            brackets=tuple(bracket_rows),
        )
    except Exception as exc:  # noqa: BLE001 - failures become data, counted below
        return _failed_summary(replica, exc)


def _aggregate(values: Sequence[float]) -> Aggregate:
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
    if len(v) == 0:
        return Aggregate(mean=float("nan"), se=float("nan"), count=0)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")
    return Aggregate(mean=float(v.mean()), se=se, count=len(v))


def run(config: RunConfig, *, workers: Optional[int] = None, dump_dir=None) -> ResultSet:
    """Execute all replicas and aggregate.

    workers=None or 1 runs serially in-process; more workers spread replicas
    over a process pool.  Either way the parent folds summaries in replica
    order, so the ResultSet is identical.  Raises EngineFailureError when
    more than 10% of replicas fail.
    """
    if config.dump_paths and dump_dir is None:
        raise ModelError("dump_paths requires a dump_dir")
    dump = str(dump_dir) if dump_dir is not None else None
    if dump is not None:
        Path(dump).mkdir(parents=True, exist_ok=True)
    n = config.replicas
    if workers is None or workers <= 1 or n == 1:
        _init_worker(config, dump)
        summaries = [_run_one(i) for i in range(n)]
    else:
        chunk = max(1, n // (workers * 4))
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(config, dump)
        ) as pool:
            summaries = list(pool.map(_run_one, range(n), chunksize=chunk))

    failures = sum(1 for s in summaries if s.failed)
    if failures > _FAILURE_FRACTION * n:
        first = next(s.error for s in summaries if s.failed)
        raise EngineFailureError(failures, n, first or "unknown")

    ok = [s for s in summaries if not s.failed]
    aggregates: dict[str, Aggregate] = {}
    aggregates["max_dev"] = _aggregate([s.max_dev for s in ok])
    aggregates["one_sided_max"] = _aggregate([s.one_sided for s in ok])
    aggregates["nonconverged"] = _aggregate([float(s.nonconverged) for s in ok])

    for lam in config.effective_count_lambdas():
        ns = []
        devs = []
        for s in ok:
            for l, nval, dev in s.counts:
                if l == lam:
                    ns.append(nval)
                    devs.append(dev)
        aggregates[f"N[lam={lam}]"] = _aggregate(ns)
        aggregates[f"deviation[lam={lam}]"] = _aggregate(devs)

    for lam, mu in config.bracket_pairs:
        own = []
        cross = []
        for s in ok:
            for row in s.brackets:
                if row[0] == lam and row[1] == mu:
                    own.append(row[3])
                    cross.append(row[4])
        aggregates[f"bracket[lam={lam},mu={mu}]"] = _aggregate(own)
        aggregates[f"cross_bracket[lam={lam},mu={mu}]"] = _aggregate(cross)

    tails_table: list[tuple[int, float, float]] = []
    for lam in config.tail_lambdas:
        res = [r for s in ok for l, r in s.tails if l == lam]
        aggregates[f"tail_residual[lam={lam}]"] = _aggregate(res)
        if res:
            fracs = exceedance_curve(np.asarray(res), config.tail_thresholds)
            for c, fr in zip(config.tail_thresholds, fracs):
                tails_table.append((int(lam), float(c), float(fr)))

    ch = config.config_hash()
    return ResultSet(
        config=config,
        summaries=summaries,
        aggregates=aggregates,
        fits={},
        tails_table=tails_table,
        version=f"{PACKAGE_VERSION}+cfg.{ch}",
        config_hash=ch,
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return repr(float(v))


def _fit_dict(f: LineFit) -> dict:
    return {
        "slope": f.slope,
        "intercept": f.intercept,
        "slope_se": f.slope_se,
        "r_squared": f.r_squared,
    }


def persist(result: ResultSet, out_dir) -> dict[str, Path]:
    """Write the canonical file set; returns name -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    lines = ["replica,max_dev,argmax_lambda,one_sided_max,nonconverged,failed"]
    for s in result.summaries:
        lines.append(
            f"{s.replica},{_fmt(s.max_dev)},{_fmt(s.argmax_lam)},{_fmt(s.one_sided)},"
            f"{s.nonconverged},{int(s.failed)}"
        )
    p = out / "replicas.csv"
    _atomic_write_text(p, "\n".join(lines) + "\n")
    written["replicas"] = p

    lines = ["replica,lambda,N,deviation"]
    for s in result.summaries:
        for lam, nval, dev in s.counts:
            lines.append(f"{s.replica},{lam},{_fmt(nval)},{_fmt(dev)}")
    p = out / "counts.csv"
    _atomic_write_text(p, "\n".join(lines) + "\n")
    written["counts"] = p

    if result.config.bracket_pairs:
        lines = ["replica,lambda,mu,t,bracket,cross_bracket"]
        for s in result.summaries:
            for lam, mu, t, own, cross in s.brackets:
                lines.append(
                    f"{s.replica},{lam},{mu},{_fmt(t)},{_fmt(own)},{_fmt(cross)}"
                )
        p = out / "brackets.csv"
        _atomic_write_text(p, "\n".join(lines) + "\n")
        written["brackets"] = p

    if result.tails_table:
        lines = ["lambda,C,exceed_frac"]
        for lam, c, fr in result.tails_table:
            lines.append(f"{lam},{_fmt(c)},{_fmt(fr)}")
        p = out / "tails.csv"
        _atomic_write_text(p, "\n".join(lines) + "\n")
        written["tails"] = p

    p = out / "summary.json"
    _atomic_write_text(p, summary_json(result))
    written["summary"] = p
    return written


def summary_json(result: ResultSet) -> str:
    doc = {
        "config": result.config.to_dict(),
        "seed": result.config.seed,
        "config_hash": result.config_hash,
        "version": result.version,
        "aggregates": {
            k: {"mean": a.mean, "se": a.se, "count": a.count}
            for k, a in result.aggregates.items()
        },
        "fits": {k: _fit_dict(f) for k, f in result.fits.items()},
    }
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"


def load_summary(path) -> dict:
    with open(path) as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# scaling sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    beta: float
    x_list: tuple[int, ...]
    results: tuple[ResultSet, ...]
    aggregates: dict[str, Aggregate]
    fits: dict[str, LineFit]
    ratios: tuple[tuple[int, float, float], ...]   # (x, ratio, ratio_se)
    seed: int
    version: str


def corrected_predictor(x: int) -> float:
    """ln x - 0.75 ln ln x, the corrected growth variable for maxima."""
    if x < 3:
        raise ModelError(f"x must be >= 3, got {x}")
    return math.log(x) - 0.75 * math.log(math.log(x))


def scaling_sweep(
    beta: float,
    x_list: Sequence[int],
    replicas: int,
    seed: int,
    *,
    workers: Optional[int] = None,
    h0: float = 0.01,
    refine_c: float = 0.5,
    drift_margin: float = 6.0,
    relax_mult: float = 10.0,
) -> SweepResult:
    """Run one counting ensemble per scale and fit the max-growth laws.

    Scale i uses stream ids [i * replicas, (i+1) * replicas) under the shared
    seed, so scales are mutually independent.  Ensembles record endpoints
    only; counting needs nothing else and memory stays flat in x.
    """
    xs = tuple(int(v) for v in x_list)
    if len(xs) < 3 or any(b <= a for a, b in zip(xs, xs[1:])):
        raise ModelError("x_list must be at least 3 strictly increasing scales")
    results = []
    aggregates: dict[str, Aggregate] = {}
    for i, x in enumerate(xs):
        params = ModelParams.dense(beta, x)
        policy = StepPolicy.for_model(
            params,
            h0=h0,
            refine_c=refine_c,
            out_stride=1 << 40,
            drift_margin=drift_margin,
            relax_mult=relax_mult,
        )
        config = RunConfig(
            params=params,
            policy=policy,
            replicas=replicas,
            seed=seed,
            stream_offset=i * replicas,
            count_lambdas=(),
        )
        res = run(config, workers=workers)
        results.append(res)
        aggregates[f"max_dev[x={x}]"] = res.aggregates["max_dev"]
        aggregates[f"one_sided_max[x={x}]"] = res.aggregates["one_sided_max"]
        aggregates[f"nonconverged[x={x}]"] = res.aggregates["nonconverged"]

    log_x = np.array([math.log(x) for x in xs])
    corr = np.array([corrected_predictor(x) for x in xs])
    mean_dev = np.array([aggregates[f"max_dev[x={x}]"].mean for x in xs])
    mean_one = np.array([aggregates[f"one_sided_max[x={x}]"].mean for x in xs])
    fits = {
        "log_slope": fit_line(log_x, mean_dev),
        "corrected_slope": fit_line(corr, mean_dev),
        "one_sided_slope": fit_line(corr, mean_one),
        "one_sided_log_slope": fit_line(log_x, mean_one),
    }
    # Ratio diagnostic against plain ln x: should rise toward the limiting
    # constant as the log-log correction's relative weight fades.
    ratios = []
    for x in xs:
        agg = aggregates[f"max_dev[x={x}]"]
        pred = math.log(x)
        ratios.append((x, agg.mean / pred, agg.se / pred))

    return SweepResult(
        beta=beta,
        x_list=xs,
        results=tuple(results),
        aggregates=aggregates,
        fits=fits,
        ratios=tuple(ratios),
        seed=seed,
        version=f"{PACKAGE_VERSION}+sweep",
    )


def persist_sweep(sweep: SweepResult, out_dir) -> dict[str, Path]:
    """Write the sweep summary plus one replicas file per scale."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for x, res in zip(sweep.x_list, sweep.results):
        lines = ["replica,max_dev,argmax_lambda,one_sided_max,nonconverged,failed"]
        for s in res.summaries:
            lines.append(
                f"{s.replica},{_fmt(s.max_dev)},{_fmt(s.argmax_lam)},{_fmt(s.one_sided)},"
                f"{s.nonconverged},{int(s.failed)}"
            )
        p = out / f"replicas_x{x}.csv"
        _atomic_write_text(p, "\n".join(lines) + "\n")
        written[f"replicas_x{x}"] = p

    doc = {
        "beta": sweep.beta,
        "x_list": list(sweep.x_list),
        "seed": sweep.seed,
        "version": sweep.version,
        "replicas": sweep.results[0].config.replicas,
        "aggregates": {
            k: {"mean": a.mean, "se": a.se, "count": a.count}
            for k, a in sweep.aggregates.items()
        },
        "fits": {k: _fit_dict(f) for k, f in sweep.fits.items()},
        "ratios": [
            {"x": x, "ratio": r, "ratio_se": se} for x, r, se in sweep.ratios
        ],
    }
    p = out / "summary.json"
    _atomic_write_text(p, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    written["summary"] = p
    return written
