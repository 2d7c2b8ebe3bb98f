"""Figure construction.

Each kind is split into two pure stages: extract() reduces the input files
to a plain-data dict (the "dump"), draw() turns a dump into matplotlib
calls.  The dump is written next to the image with sorted keys, so repeated
renders of the same inputs are byte-identical there even when the image
encoder is not.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be pinned first

from .io import SchemaError, floats, read_csv_columns, read_summary, summary_beta

KINDS = ("scaling", "covariance", "tails", "gaussian")

_REPLICA_COLUMNS = (
    "replica",
    "max_dev",
    "argmax_lambda",
    "one_sided_max",
    "nonconverged",
    "failed",
)


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    in_dir: Path
    out_path: Path

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}, expected one of {KINDS}")
        if Path(self.out_path).suffix.lower() not in (".svg", ".png"):
            raise SchemaError(f"output must end in .svg or .png, got {self.out_path}")


def _reference_slope(beta: float) -> float:
    # leading growth constant of the two-sided counting deviation
    return 2.0 / (math.sqrt(beta) * math.pi)


def _corrected(x: float) -> float:
    return math.log(x) - 0.75 * math.log(math.log(x))


def _mean_se(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


# ---------------------------------------------------------------------------
# extract stage: input files -> plain dict
# ---------------------------------------------------------------------------

def _scale_files(in_dir: Path) -> list[tuple[int, Path]]:
    found = []
    for p in sorted(in_dir.glob("replicas_x*.csv")):
        m = re.fullmatch(r"replicas_x(\d+)\.csv", p.name)
        if m:
            found.append((int(m.group(1)), p))
    return sorted(found)


def _extract_scaling(in_dir: Path) -> dict:
    doc = read_summary(in_dir / "summary.json")
    beta = summary_beta(doc)
    per_scale = _scale_files(in_dir)
    if not per_scale:
        # single-run layout: one replicas.csv at the summary's own scale
        x = int(doc.get("config", {}).get("x_max", 0))
        if x <= 0:
            raise SchemaError("summary.json carries no x_max for a single-scale plot")
        per_scale = [(x, in_dir / "replicas.csv")]
    points = []
    for x, path in per_scale:
        cols = read_csv_columns(path, _REPLICA_COLUMNS)
        devs = [
            d
            for d, failed in zip(floats(cols, "max_dev"), floats(cols, "failed"))
            if failed == 0.0
        ]
        if not devs:
            continue
        mean, se = _mean_se(devs)
        points.append(
            {"x": x, "log_x": math.log(x), "corrected": _corrected(x),
             "mean_max_dev": mean, "se": se}
        )
    slope = _reference_slope(beta)
    return {
        "kind": "scaling",
        "beta": beta,
        "empty": not points,
        "points": points,
        "reference_slope": slope,
        "reference_label": f"reference slope {slope:.4f}",
    }


def _extract_covariance(in_dir: Path) -> dict:
    doc = read_summary(in_dir / "summary.json")
    beta = summary_beta(doc)
    cols = read_csv_columns(
        in_dir / "brackets.csv",
        ("replica", "lambda", "mu", "t", "bracket", "cross_bracket"),
    )
    lams = floats(cols, "lambda")
    mus = floats(cols, "mu")
    ts = floats(cols, "t")
    crosses = floats(cols, "cross_bracket")
    grouped: dict[tuple[float, float, float], list[float]] = {}
    for lam, mu, t, cross in zip(lams, mus, ts, crosses):
        grouped.setdefault((lam, mu, t), []).append(cross)
    points = []
    for (lam, mu, t), vals in sorted(grouped.items()):
        mean, se = _mean_se(vals)
        gap = abs(mu - lam)
        log_plus = math.log(gap) if gap >= 1.0 else 0.0
        pred = 2.0 * (t - (4.0 / beta) * log_plus)
        points.append(
            {"lambda": lam, "mu": mu, "gap": gap, "t": t,
             "mean_cross": mean, "se": se, "reference": pred}
        )
    return {"kind": "covariance", "beta": beta, "empty": not points, "points": points}


def _extract_tails(in_dir: Path) -> dict:
    cols = read_csv_columns(in_dir / "tails.csv", ("lambda", "C", "exceed_frac"))
    lams = floats(cols, "lambda")
    cs = floats(cols, "C")
    fracs = floats(cols, "exceed_frac")
    curves: dict[float, list[tuple[float, float]]] = {}
    for lam, c, fr in zip(lams, cs, fracs):
        curves.setdefault(lam, []).append((c, fr))
    out_curves = []
    for lam in sorted(curves):
        pts = sorted(curves[lam])
        positive = [(c, fr) for c, fr in pts if fr > 0.0]
        slope = None
        if len(positive) >= 2:
            xs = [c for c, _ in positive]
            ys = [math.log(fr) for _, fr in positive]
            n = len(xs)
            mx = sum(xs) / n
            my = sum(ys) / n
            den = sum((v - mx) ** 2 for v in xs)
            slope = sum((a - mx) * (b - my) for a, b in zip(xs, ys)) / den if den else None
        out_curves.append(
            {"lambda": lam,
             "thresholds": [c for c, _ in pts],
             "fractions": [fr for _, fr in pts],
             "log_slope": slope}
        )
    return {"kind": "tails", "empty": not out_curves, "curves": out_curves}


def _extract_gaussian(in_dir: Path) -> dict:
    cols = read_csv_columns(
        in_dir / "gaussian_cov.csv",
        ("lambda", "mu", "t", "sim_cov", "sim_se", "quad_cov"),
    )
    points = []
    for lam, mu, sim, se, quad in zip(
        floats(cols, "lambda"), floats(cols, "mu"), floats(cols, "sim_cov"),
        floats(cols, "sim_se"), floats(cols, "quad_cov"),
    ):
        z = (sim - quad) / se if se > 0 else 0.0
        points.append(
            {"lambda": lam, "mu": mu, "sim": sim, "se": se, "quad": quad, "z": z}
        )
    return {"kind": "gaussian", "empty": not points, "points": points}


_EXTRACTORS = {
    "scaling": _extract_scaling,
    "covariance": _extract_covariance,
    "tails": _extract_tails,
    "gaussian": _extract_gaussian,
}


# ---------------------------------------------------------------------------
# draw stage: dict -> figure
# ---------------------------------------------------------------------------

def _new_axes():
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=100)
    return fig, ax


def _draw_empty(ax, kind: str) -> None:
    ax.text(0.5, 0.5, "no data", ha="center", va="center", fontsize=14,
            transform=ax.transAxes)
    ax.set_title(kind)
    ax.set_xticks([])
    ax.set_yticks([])


def _draw_scaling(ax, dump: dict) -> None:
    pts = dump["points"]
    xs = [p["corrected"] for p in pts]
    ys = [p["mean_max_dev"] for p in pts]
    es = [p["se"] for p in pts]
    ax.errorbar(xs, ys, yerr=es, fmt="o", capsize=3, label="mean max deviation")
    c = dump["reference_slope"]
    if len(pts) >= 2:
        ax.plot(xs, [c * v for v in xs], "--", label=dump["reference_label"])
    else:
        ax.axline((0.0, 0.0), slope=c, linestyle="--", label=dump["reference_label"])
    ax.annotate(dump["reference_label"], xy=(0.02, 0.95), xycoords="axes fraction",
                va="top")
    ax.set_xlabel("log x - 0.75 log log x")
    ax.set_ylabel("max deviation")
    ax.set_title("max deviation growth")
    ax.legend(loc="lower right")


def _draw_covariance(ax, dump: dict) -> None:
    pts = dump["points"]
    gaps = [p["gap"] for p in pts]
    ax.errorbar(gaps, [p["mean_cross"] for p in pts], yerr=[p["se"] for p in pts],
                fmt="o", capsize=3, label="measured cross bracket")
    ax.plot(gaps, [p["reference"] for p in pts], "x--", label="log-gap prediction")
    ax.set_xlabel("half-width gap")
    ax.set_ylabel("cross bracket at the shared horizon")
    ax.set_title("covariance decay with gap")
    if any(g > 0 for g in gaps):
        ax.set_xscale("symlog", linthresh=1.0)
    ax.legend()


def _draw_tails(ax, dump: dict) -> None:
    for curve in dump["curves"]:
        label = f"half-width {curve['lambda']:g}"
        if curve["log_slope"] is not None:
            label += f" (log slope {curve['log_slope']:.2f})"
        ax.plot(curve["thresholds"], curve["fractions"], "o-", label=label)
    ax.set_yscale("log")
    ax.set_xlabel("threshold")
    ax.set_ylabel("exceedance fraction")
    ax.set_title("post-horizon residual tails")
    ax.legend()


def _draw_gaussian(ax, dump: dict) -> None:
    pts = dump["points"]
    sims = [p["sim"] for p in pts]
    quads = [p["quad"] for p in pts]
    ax.errorbar(quads, sims, yerr=[p["se"] for p in pts], fmt="o", capsize=3,
                label="simulated")
    lo = min(quads + sims)
    hi = max(quads + sims)
    ax.plot([lo, hi], [lo, hi], "--", label="quadrature = simulation")
    worst = max(abs(p["z"]) for p in pts)
    ax.annotate(f"max |z| = {worst:.2f}", xy=(0.02, 0.95),
                xycoords="axes fraction", va="top")
    ax.set_xlabel("quadrature covariance")
    ax.set_ylabel("simulated covariance")
    ax.set_title("comparison field covariance")
    ax.legend(loc="lower right")


_DRAWERS = {
    "scaling": _draw_scaling,
    "covariance": _draw_covariance,
    "tails": _draw_tails,
    "gaussian": _draw_gaussian,
}


def dump_path(out_path) -> Path:
    return Path(str(out_path) + ".data.json")


def render(spec: FigureSpec) -> Path:
    """Extract, dump, draw, save.  Returns the image path."""
    in_dir = Path(spec.in_dir)
    if not in_dir.is_dir():
        raise SchemaError(f"input directory not found: {in_dir}")
    dump = _EXTRACTORS[spec.kind](in_dir)

    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_path(out).write_text(
        json.dumps(dump, sort_keys=True, indent=1, allow_nan=False) + "\n"
    )

    fig, ax = _new_axes()
    try:
        if dump["empty"]:
            _draw_empty(ax, spec.kind)
        else:
            _DRAWERS[spec.kind](ax, dump)
        fig.tight_layout()
        # strip encoder timestamps so the image too is as stable as the
        # backend allows; byte-level assertions belong on the dump
        meta = {"Date": None} if out.suffix.lower() == ".svg" else {}
        fig.savefig(out, metadata=meta)
    finally:
        plt.close(fig)
    return out
