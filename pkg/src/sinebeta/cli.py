"""Command-line front end.

Every subcommand reads an optional JSON config file and long-option
overrides, echoes the effective configuration into its summary output, and
writes results under --out.  Exit codes: 0 success, 2 configuration problem,
3 runtime failure (too many replicas failed).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .engine import (
    EngineFailureError,
    RunConfig,
    persist,
    persist_sweep,
    run,
    scaling_sweep,
)
from .gaussian import g_covariance, field_covariance_matrix, simulate_field
from .model import ModelError, ModelParams, t_lambda, t_prime
from .sde import StepPolicy, derive_stream, splitmix64
from .stats import TubeParams, exceedance_curve, oscillatory_sup
from .tilt import (
    run_tilted,
    terminal_exceedance_direct,
    terminal_exceedance_tilted,
    tube_probability_under_q,
    untilted_weight_mean,
)


class ConfigError(ValueError):
    pass


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _parse_pairs(text: str) -> tuple[tuple[int, int], ...]:
    pairs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        if len(bits) != 2:
            raise ConfigError(f"expected lam:mu pairs, got {part!r}")
        try:
            pairs.append((int(bits[0]), int(bits[1])))
        except ValueError:
            raise ConfigError(f"expected lam:mu pairs, got {part!r}") from None
    if not pairs:
        raise ConfigError("empty pair list")
    return tuple(pairs)


def _effective(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags; unknown keys are errors."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        for k, v in loaded.items():
            if k not in defaults:
                raise ConfigError(f"unknown config key {k!r}")
            cfg[k] = v
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _add_common(p: argparse.ArgumentParser, *, out_required: bool = True) -> None:
    p.add_argument("--config", type=str, help="JSON config file")
    p.add_argument("--out", type=str, required=out_required, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--h0", type=float)
    p.add_argument("--workers", type=int)


_SIM_DEFAULTS = dict(
    beta=2.0,
    x=64,
    replicas=100,
    seed=1,
    stream_offset=0,
    h0=0.01,
    refine_c=0.5,
    out_stride=32,
    drift_margin=6.0,
    relax_mult=10.0,
    lambda_grid=None,
    pairs=(),
    count_lambdas=None,
    tail_lambdas=(),
    tail_thresholds=(1.0, 2.0, 3.0, 4.0),
    dump_paths=False,
    workers=1,
)


def _build_run_config(cfg: dict) -> RunConfig:
    beta = float(cfg["beta"])
    x = int(cfg["x"])
    if cfg.get("lambda_grid"):
        params = ModelParams(
            beta=beta, x_max=x, lambda_grid=tuple(int(v) for v in cfg["lambda_grid"])
        )
    else:
        params = ModelParams.dense(beta, x)
    policy = StepPolicy.for_model(
        params,
        h0=float(cfg["h0"]),
        refine_c=float(cfg["refine_c"]),
        out_stride=int(cfg["out_stride"]),
        drift_margin=float(cfg["drift_margin"]),
        relax_mult=float(cfg["relax_mult"]),
    )
    pairs = cfg["pairs"]
    if isinstance(pairs, str):
        pairs = _parse_pairs(pairs)
    else:
        pairs = tuple((int(p[0]), int(p[1])) for p in pairs)
    return RunConfig(
        params=params,
        policy=policy,
        replicas=int(cfg["replicas"]),
        seed=int(cfg["seed"]),
        stream_offset=int(cfg["stream_offset"]),
        bracket_pairs=pairs,
        count_lambdas=(
            None
            if cfg["count_lambdas"] is None
            else tuple(int(v) for v in cfg["count_lambdas"])
        ),
        tail_lambdas=tuple(int(v) for v in cfg["tail_lambdas"]),
        tail_thresholds=tuple(float(v) for v in cfg["tail_thresholds"]),
        dump_paths=bool(cfg["dump_paths"]),
    )


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _effective(args, _SIM_DEFAULTS)
    config = _build_run_config(cfg)
    dump_dir = Path(cfg_out(args)) / "paths" if config.dump_paths else None
    result = run(config, workers=int(cfg["workers"]), dump_dir=dump_dir)
    written = persist(result, cfg_out(args))
    print(f"wrote {written['summary']}")
    return 0


_SWEEP_DEFAULTS = dict(
    beta=2.0,
    x_list=(64, 128, 256),
    replicas=200,
    seed=1,
    h0=0.01,
    refine_c=0.5,
    drift_margin=6.0,
    relax_mult=10.0,
    workers=1,
)


def _cmd_max_scaling(args: argparse.Namespace) -> int:
    cfg = _effective(args, _SWEEP_DEFAULTS)
    x_list = cfg["x_list"]
    if isinstance(x_list, str):
        x_list = _parse_int_list(x_list)
    sweep = scaling_sweep(
        float(cfg["beta"]),
        tuple(int(v) for v in x_list),
        int(cfg["replicas"]),
        int(cfg["seed"]),
        workers=int(cfg["workers"]),
        h0=float(cfg["h0"]),
        refine_c=float(cfg["refine_c"]),
        drift_margin=float(cfg["drift_margin"]),
        relax_mult=float(cfg["relax_mult"]),
    )
    written = persist_sweep(sweep, cfg_out(args))
    slope = sweep.fits["corrected_slope"].slope
    print(f"wrote {written['summary']} (corrected slope {slope:.4f})")
    return 0


_COV_DEFAULTS = dict(
    beta=2.0,
    pairs="55:56,55:58,55:63,55:76",
    replicas=500,
    seed=1,
    h0=0.01,
    refine_c=0.5,
    workers=1,
)


def _cmd_covariance(args: argparse.Namespace) -> int:
    cfg = _effective(args, _COV_DEFAULTS)
    pairs = cfg["pairs"]
    if isinstance(pairs, str):
        pairs = _parse_pairs(pairs)
    else:
        pairs = tuple((int(p[0]), int(p[1])) for p in pairs)
    members = sorted({v for p in pairs for v in p})
    beta = float(cfg["beta"])
    params = ModelParams(beta=beta, x_max=members[-1], lambda_grid=tuple(members))
    policy = StepPolicy(
        t_end=t_lambda(members[-1], beta),
        h0=float(cfg["h0"]),
        refine_c=float(cfg["refine_c"]),
        relax_extra=0.0,
        out_stride=1 << 40,
    )
    config = RunConfig(
        params=params,
        policy=policy,
        replicas=int(cfg["replicas"]),
        seed=int(cfg["seed"]),
        bracket_pairs=pairs,
        count_lambdas=(),
    )
    result = run(config, workers=int(cfg["workers"]))
    written = persist(result, cfg_out(args))
    print(f"wrote {written['brackets']}")
    return 0


_GAUSS_DEFAULTS = dict(
    beta=2.0,
    x=64,
    replicas=1000,
    seed=1,
    h0=0.01,
    refine_c=0.5,
    n_pairs=10,
    pairs=None,
    workers=1,
)


def _random_pairs(x: int, n: int, seed: int) -> tuple[tuple[int, int], ...]:
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [splitmix64(seed ^ 0xA5A5), splitmix64(seed ^ 0x5A5A)], dtype=np.uint64
    )))
    pairs = set()
    while len(pairs) < n:
        lam = int(rng.integers(1, x))
        mu = int(rng.integers(lam + 1, x + 1))
        pairs.add((lam, mu))
    return tuple(sorted(pairs))


def _cmd_gaussian(args: argparse.Namespace) -> int:
    cfg = _effective(args, _GAUSS_DEFAULTS)
    beta = float(cfg["beta"])
    x = int(cfg["x"])
    seed = int(cfg["seed"])
    replicas = int(cfg["replicas"])
    pairs = cfg["pairs"]
    if isinstance(pairs, str):
        pairs = _parse_pairs(pairs)
    elif pairs is None:
        pairs = _random_pairs(x, int(cfg["n_pairs"]), seed)
    else:
        pairs = tuple((int(p[0]), int(p[1])) for p in pairs)
    params = ModelParams.dense(beta, x)
    policy = StepPolicy(
        t_end=t_lambda(x, beta) if x > 1 else float(cfg["h0"]),
        h0=float(cfg["h0"]),
        refine_c=float(cfg["refine_c"]),
        relax_extra=0.0,
        out_stride=1 << 40,
    )
    samples = [
        simulate_field(params, policy, derive_stream(seed, r)) for r in range(replicas)
    ]
    rows = field_covariance_matrix(samples, pairs)
    lines = ["lambda,mu,t,sim_cov,sim_se,quad_cov"]
    for lam, mu, cov, se in rows:
        t = min(t_lambda(lam, beta), t_lambda(mu, beta))
        quad = g_covariance(lam, mu, t, beta)
        lines.append(f"{lam},{mu},{t!r},{cov!r},{se!r},{quad!r}")
    out = Path(cfg_out(args))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "gaussian_cov.csv"
    path.write_text("\n".join(lines) + "\n")
    doc = {"beta": beta, "x": x, "replicas": replicas, "seed": seed,
           "pairs": [list(p) for p in pairs]}
    (out / "summary.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"wrote {path}")
    return 0


_TILT_DEFAULTS = dict(
    beta=2.0,
    x=21,
    R=1.5,
    eta=None,
    replicas=2000,
    seed=1,
    h0=0.01,
    workers=1,
)


def _cmd_tilt(args: argparse.Namespace) -> int:
    cfg = _effective(args, _TILT_DEFAULTS)
    beta = float(cfg["beta"])
    lam = int(cfg["x"])
    band_r = float(cfg["R"])
    eta = math.sqrt(beta) if cfg["eta"] is None else float(cfg["eta"])
    replicas = int(cfg["replicas"])
    seed = int(cfg["seed"])
    h0 = float(cfg["h0"])

    horizon = t_prime(lam, beta, band_r)
    weight = untilted_weight_mean(
        lam, eta, beta, t_end=max(horizon, 1.0), replicas=replicas, seed=seed, h0=h0
    )
    tube = tube_probability_under_q(
        lam,
        beta,
        TubeParams(x=lam, band_r=band_r),
        replicas=replicas,
        seed=seed,
        stream_offset=replicas,
        h0=h0,
    )
    t_full = t_lambda(lam, beta)
    threshold = 0.5 * t_full
    direct = terminal_exceedance_direct(
        lam, beta, t_end=t_full, threshold=threshold,
        replicas=replicas, seed=seed, stream_offset=2 * replicas, h0=h0,
    )
    tilted = terminal_exceedance_tilted(
        lam, beta, t_end=t_full, threshold=threshold, accel=math.sqrt(beta),
        replicas=replicas, seed=seed, stream_offset=3 * replicas, h0=h0,
    )
    doc = {
        "beta": beta, "x": lam, "R": band_r, "eta": eta,
        "replicas": replicas, "seed": seed, "h0": h0,
        "weight_mean": weight.value, "weight_se": weight.se,
        "tube_prob": tube.value, "tube_se": tube.se,
        "exceedance_direct": direct.value, "exceedance_direct_se": direct.se,
        "exceedance_tilted": tilted.value, "exceedance_tilted_se": tilted.se,
    }
    out = Path(cfg_out(args))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "summary.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"wrote {path}")
    return 0


_TAILS_DEFAULTS = dict(
    beta=2.0,
    lambdas=(16, 64, 256),
    thresholds=(1.0, 2.0, 3.0, 4.0),
    replicas=500,
    seed=1,
    h0=0.01,
    refine_c=0.5,
    drift_margin=6.0,
    workers=1,
)


def _cmd_tails(args: argparse.Namespace) -> int:
    cfg = _effective(args, _TAILS_DEFAULTS)
    lambdas = cfg["lambdas"]
    if isinstance(lambdas, str):
        lambdas = _parse_int_list(lambdas)
    lambdas = tuple(sorted(int(v) for v in lambdas))
    beta = float(cfg["beta"])
    params = ModelParams(beta=beta, x_max=lambdas[-1], lambda_grid=lambdas)
    policy = StepPolicy.for_model(
        params,
        h0=float(cfg["h0"]),
        refine_c=float(cfg["refine_c"]),
        out_stride=1 << 40,
        drift_margin=float(cfg["drift_margin"]),
        relax_mult=0.0,
    )
    config = RunConfig(
        params=params,
        policy=policy,
        replicas=int(cfg["replicas"]),
        seed=int(cfg["seed"]),
        count_lambdas=(),
        tail_lambdas=lambdas,
        tail_thresholds=tuple(float(v) for v in cfg["thresholds"]),
    )
    result = run(config, workers=int(cfg["workers"]))
    written = persist(result, cfg_out(args))
    print(f"wrote {written['tails']}")
    return 0


_OSC_DEFAULTS = dict(
    beta=2.0,
    lambdas=(64, 128, 256),
    a=1.0,
    T=4.0,
    replicas=200,
    seed=1,
    h0=0.01,
    workers=1,
)


def _cmd_osc(args: argparse.Namespace) -> int:
    cfg = _effective(args, _OSC_DEFAULTS)
    lambdas = cfg["lambdas"]
    if isinstance(lambdas, str):
        lambdas = _parse_int_list(lambdas)
    beta = float(cfg["beta"])
    a = float(cfg["a"])
    t_max = float(cfg["T"])
    replicas = int(cfg["replicas"])
    seed = int(cfg["seed"])
    lines = ["lambda,a,T,mean_sup,se"]
    for i, lam in enumerate(lambdas):
        batch = run_tilted(
            float(lam), 0.0, beta,
            t_end=t_max, replicas=replicas, seed=seed,
            stream_offset=i * replicas, h0=float(cfg["h0"]), out_stride=1,
        )
        sups = np.array(
            [oscillatory_sup(batch.path(r), a, t_max) for r in range(replicas)]
        )
        se = float(sups.std(ddof=1) / math.sqrt(replicas))
        lines.append(f"{int(lam)},{a!r},{t_max!r},{float(sups.mean())!r},{se!r}")
    out = Path(cfg_out(args))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "osc.csv"
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path}")
    return 0


def cfg_out(args: argparse.Namespace) -> str:
    return args.out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sinebeta",
        description="Monte Carlo laboratory for coupled phase diffusions and their counting statistics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="counting ensemble at one scale")
    _add_common(p)
    p.add_argument("--x", type=int, help="largest half-width")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("max-scaling", help="max growth across scales")
    _add_common(p)
    p.add_argument("--x-list", dest="x_list", type=str, help="comma-separated scales")
    p.set_defaults(fn=_cmd_max_scaling)

    p = sub.add_parser("covariance", help="bracket and cross-bracket study")
    _add_common(p)
    p.add_argument("--pairs", type=str, help="lam:mu pairs, comma-separated")
    p.set_defaults(fn=_cmd_covariance)

    p = sub.add_parser("gaussian", help="comparison field covariance check")
    _add_common(p)
    p.add_argument("--x", type=int)
    p.add_argument("--pairs", type=str, help="lam:mu pairs, comma-separated")
    p.set_defaults(fn=_cmd_gaussian)

    p = sub.add_parser("tilt", help="change-of-measure diagnostics")
    _add_common(p)
    p.add_argument("--x", type=int, help="half-width under study")
    p.add_argument("--R", type=float, help="band parameter")
    p.add_argument("--eta", type=float, help="tilt for the weight check")
    p.set_defaults(fn=_cmd_tilt)

    p = sub.add_parser("tails", help="post-horizon martingale residual tails")
    _add_common(p)
    p.add_argument("--lambdas", type=str, help="half-widths, comma-separated")
    p.set_defaults(fn=_cmd_tails)

    p = sub.add_parser("osc", help="oscillatory integral decay")
    _add_common(p)
    p.add_argument("--lambdas", type=str, help="half-widths, comma-separated")
    p.set_defaults(fn=_cmd_osc)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EngineFailureError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
