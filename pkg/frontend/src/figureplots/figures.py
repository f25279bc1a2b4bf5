"""Figure renderers for the batchbandit CSV schemas.

Every renderer reads one of the simulator's documented CSV outputs and
writes a static image (SVG by default).  Density overlays are drawn from
exact closed forms with the parameters taken verbatim from the input or the
request; nothing is fitted here.  Output is deterministic for identical
inputs (fixed SVG hash salt, no embedded timestamps).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "figureplots"

import matplotlib.pyplot as plt
import numpy as np


class FigureSchemaError(ValueError):
    """The input CSV does not carry the columns the figure kind needs."""


@dataclass(frozen=True)
class FigureRequest:
    """One rendering job: figure kind, input CSV, output path, overlays."""

    kind: str
    input_path: str
    output_path: str
    k_prime: int | None = None
    statistic: str | None = None
    metric: str = "power"
    nominal: float = 0.10
    bins: int | None = None
    title: str | None = None
    extra: dict = field(default_factory=dict)


def _read_csv(path: str) -> tuple[list[str], list[dict]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FigureSchemaError(f"{path}: empty CSV")
        rows = list(reader)
    return list(reader.fieldnames), rows


def _require_columns(path: str, header: list[str], needed: list[str]) -> None:
    missing = [c for c in needed if c not in header]
    if missing:
        raise FigureSchemaError(
            f"{path}: missing column(s) {', '.join(repr(c) for c in missing)}; "
            f"found {header}"
        )


def _save(fig, request: FigureRequest) -> None:
    out = Path(request.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, metadata={"Date": None} if out.suffix == ".svg" else None)
    plt.close(fig)


def _normal_pdf(x: np.ndarray, mean: float, sd: float) -> np.ndarray:
    return np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))


def _beta_1_b_pdf(x: np.ndarray, b: int) -> np.ndarray:
    # Beta(1, b): density b * (1 - x)^(b - 1) on [0, 1]
    return b * (1.0 - x) ** (b - 1)


# ---------------------------------------------------------------------------
# z-hist: studentized-error histogram with a Normal overlay.
# ---------------------------------------------------------------------------

def render_z_hist(request: FigureRequest) -> None:
    header, rows = _read_csv(request.input_path)
    _require_columns(request.input_path, header,
                     ["statistic", "bin_lo", "bin_hi", "count", "mean", "sd"])
    statistics = [request.statistic] if request.statistic else \
        sorted({r["statistic"] for r in rows})
    fig, axes = plt.subplots(1, len(statistics), figsize=(5 * len(statistics), 4),
                             squeeze=False)
    for ax, statistic in zip(axes[0], statistics):
        group = [r for r in rows if r["statistic"] == statistic]
        if not group:
            raise FigureSchemaError(
                f"{request.input_path}: no rows with statistic={statistic!r}"
            )
        lo = np.array([float(r["bin_lo"]) for r in group])
        hi = np.array([float(r["bin_hi"]) for r in group])
        counts = np.array([float(r["count"]) for r in group])
        mean = float(group[0]["mean"])
        sd = float(group[0]["sd"])
        total = counts.sum()
        widths = hi - lo
        density = np.divide(counts, total * widths, out=np.zeros_like(counts),
                            where=widths > 0)
        ax.bar(lo, density, width=widths, align="edge", color="#7fbf7f",
               edgecolor="white", linewidth=0.3, label="runs")
        xs = np.linspace(lo.min(), hi.max(), 400)
        overlay = f"Normal(mean={mean!r}, sd={sd!r})"
        ax.plot(xs, _normal_pdf(xs, mean, sd), color="#1f4e9c", lw=1.8,
                label=overlay)
        rule = group[0].get("rule", "")
        ax.set_title(request.title or f"{rule} {statistic}".strip())
        ax.set_xlabel("studentized error")
        ax.set_ylabel("density")
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, request)


# ---------------------------------------------------------------------------
# simplex: ternary scatter of three-component optimal probabilities.
# ---------------------------------------------------------------------------

def render_simplex(request: FigureRequest) -> None:
    header, rows = _read_csv(request.input_path)
    _require_columns(request.input_path, header, ["alpha_1", "alpha_2", "alpha_3"])
    a1 = np.array([float(r["alpha_1"]) for r in rows])
    a2 = np.array([float(r["alpha_2"]) for r in rows])
    a3 = np.array([float(r["alpha_3"]) for r in rows])
    # project the 2-simplex to the plane
    x = a2 + 0.5 * a3
    y = (math.sqrt(3) / 2) * a3
    fig, ax = plt.subplots(figsize=(5, 4.6))
    ax.plot([0, 1, 0.5, 0], [0, 0, math.sqrt(3) / 2, 0], color="black", lw=1)
    ax.scatter(x, y, s=4, alpha=0.35, color="#2a7f2a", edgecolors="none")
    for label, (lx, ly) in {
        "arm 1": (-0.04, -0.03), "arm 2": (1.0, -0.03), "arm 3": (0.5, math.sqrt(3) / 2 + 0.02),
    }.items():
        ax.text(lx, ly, label, fontsize=9, ha="center")
    ax.set_title(request.title or f"final optimal probabilities ({len(rows)} runs)")
    ax.set_aspect("equal")
    ax.axis("off")
    fig.tight_layout()
    _save(fig, request)


# ---------------------------------------------------------------------------
# alpha-hist: marginal histogram of alpha_1 with an exact Beta overlay.
# ---------------------------------------------------------------------------

def render_alpha_hist(request: FigureRequest) -> None:
    header, rows = _read_csv(request.input_path)
    _require_columns(request.input_path, header, ["alpha_1"])
    if request.k_prime is None or request.k_prime < 2:
        raise FigureSchemaError("alpha-hist needs --k-prime >= 2 for the Beta overlay")
    values = np.array([float(r["alpha_1"]) for r in rows])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(values, bins=request.bins or 50, range=(0.0, 1.0), density=True,
            color="#7fbf7f", edgecolor="white", linewidth=0.3, label="runs")
    xs = np.linspace(0.0, 1.0, 400)
    b = request.k_prime - 1
    overlay = f"Beta(1, {b})"
    ax.plot(xs, _beta_1_b_pdf(xs, b), color="#c03030", lw=1.8, label=overlay)
    ax.set_xlabel("optimal probability of arm 1")
    ax.set_ylabel("density")
    ax.set_title(request.title or f"marginal vs flat-Dirichlet {overlay}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, request)


# ---------------------------------------------------------------------------
# Metrics-CSV charts: fpr-eta lines, fpr-kprime bars, metric bars.
# ---------------------------------------------------------------------------

def _metrics_rows(request: FigureRequest, metric: str) -> list[dict]:
    header, rows = _read_csv(request.input_path)
    _require_columns(request.input_path, header,
                     ["metric", "policy", "dataset", "eta", "value"])
    out = [r for r in rows if r["metric"] == metric and r["value"] != ""]
    if not out:
        raise FigureSchemaError(
            f"{request.input_path}: no rows with metric={metric!r}"
        )
    return out


def render_fpr_eta(request: FigureRequest) -> None:
    rows = _metrics_rows(request, "fpr")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for policy in sorted({r["policy"] for r in rows}):
        group = sorted((r for r in rows if r["policy"] == policy),
                       key=lambda r: float(r["eta"]))
        etas = [float(r["eta"]) for r in group]
        values = [float(r["value"]) for r in group]
        ax.plot(etas, values, marker="o", ms=4, label=policy)
        if all(r.get("ci_lo") and r.get("ci_hi") for r in group):
            ax.fill_between(etas, [float(r["ci_lo"]) for r in group],
                            [float(r["ci_hi"]) for r in group], alpha=0.15)
    nominal = request.nominal
    ax.axhline(nominal, color="black", ls="--", lw=1,
               label=f"nominal rate {nominal!r}")
    ax.set_xlabel("posterior reshaping factor")
    ax.set_ylabel("false positive rate")
    ax.set_title(request.title or "false positive rate vs reshaping")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, request)


def _grouped_bars(ax, rows: list[dict], value_key: str = "value") -> None:
    datasets = sorted({r["dataset"] for r in rows})
    policies = sorted({r["policy"] for r in rows})
    width = 0.8 / len(policies)
    for pi, policy in enumerate(policies):
        xs, ys, errs = [], [], []
        for di, dataset in enumerate(datasets):
            match = [r for r in rows if r["policy"] == policy and r["dataset"] == dataset]
            if not match:
                continue
            row = match[0]
            xs.append(di + pi * width)
            ys.append(float(row[value_key]))
            if row.get("ci_lo") and row.get("ci_hi"):
                errs.append((float(row[value_key]) - float(row["ci_lo"]),
                             float(row["ci_hi"]) - float(row[value_key])))
            else:
                errs.append((0.0, 0.0))
        yerr = np.array(errs).T if errs else None
        ax.bar(xs, ys, width=width, label=policy,
               yerr=yerr if yerr is not None and yerr.any() else None, capsize=2)
    ax.set_xticks([d + 0.4 - width / 2 for d in range(len(datasets))])
    ax.set_xticklabels(datasets, fontsize=8)
    ax.legend(fontsize=8)


def render_fpr_kprime(request: FigureRequest) -> None:
    rows = _metrics_rows(request, "fpr")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    _grouped_bars(ax, rows)
    nominal = request.nominal
    ax.axhline(nominal, color="black", ls="--", lw=1,
               label=f"nominal rate {nominal!r}")
    ax.set_ylabel("false positive rate")
    ax.set_title(request.title or "false positive rate by equivalent-best count")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, request)


def render_metric_bars(request: FigureRequest) -> None:
    rows = _metrics_rows(request, request.metric)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    _grouped_bars(ax, rows)
    ax.set_ylabel(request.metric)
    ax.set_title(request.title or f"{request.metric} by policy and dataset")
    fig.tight_layout()
    _save(fig, request)


RENDERERS = {
    "z-hist": render_z_hist,
    "simplex": render_simplex,
    "alpha-hist": render_alpha_hist,
    "fpr-eta": render_fpr_eta,
    "fpr-kprime": render_fpr_kprime,
    "metric-bars": render_metric_bars,
}


def render(request: FigureRequest) -> None:
    """Render one figure; raises FigureSchemaError on input mismatches."""
    try:
        renderer = RENDERERS[request.kind]
    except KeyError:
        raise FigureSchemaError(
            f"unknown figure kind {request.kind!r}; known: {', '.join(sorted(RENDERERS))}"
        ) from None
    renderer(request)
