"""Matplotlib rendering of report data to PNG files next to the CSVs.

Built on Figure objects directly (no pyplot, no global backend state), so
importing this module never touches an interactive backend.
"""

from __future__ import annotations

from pathlib import Path

from matplotlib.figure import Figure

DPI = 150
METHOD_COLORS = {
    "mi": "#888888",
    "ni": "#b8860b",
    "vmi": "#2e8b57",
    "emi": "#4682b4",
    "pgn": "#6a5acd",
    "ncs": "#cd5c5c",
    "awt": "#c02020",
}


def _color(method: str) -> str:
    return METHOD_COLORS.get(method, "#333333")


def _new_axes(width=5.4, height=3.4):
    fig = Figure(figsize=(width, height), dpi=DPI)
    ax = fig.subplots()
    ax.grid(True, alpha=0.3, linewidth=0.6)
    return fig, ax


def _save(fig: Figure, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="png")
    return path


def render_asr_figure(report, path) -> Path:
    """Grouped bars: per-target success rate for each (surrogate, method)."""
    fig, ax = _new_axes(7.0, 3.6)
    rows = list(report.asr)
    pairs = sorted({(r["surrogate"], r["target"]) for r in rows})
    methods = sorted({r["method"] for r in rows})
    width = 0.8 / max(len(methods), 1)
    for k, method in enumerate(methods):
        xs, ys = [], []
        for i, (s, t) in enumerate(pairs):
            for r in rows:
                if (r["surrogate"], r["target"], r["method"]) == (s, t, method):
                    xs.append(i + k * width)
                    ys.append(r["asr"])
        ax.bar(xs, ys, width=width, label=method, color=_color(method))
    ax.set_xticks(range(len(pairs)))
    ax.set_xticklabels([f"{t}" for _, t in pairs], rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("attack success rate")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=7, ncols=min(len(methods), 4))
    return _save(fig, Path(path))


def render_metric_figure(report, path) -> Path:
    """Transfer score vs parameter-noise scale, one line per method."""
    fig, ax = _new_axes()
    rows = list(report.transfer_scores)
    surrogates = sorted({r["surrogate"] for r in rows})
    methods = sorted({r["method"] for r in rows})
    for method in methods:
        for s in surrogates:
            pts = sorted(
                [(r["eps"], r["score"]) for r in rows if r["method"] == method and r["surrogate"] == s]
            )
            if pts:
                ax.plot(
                    [p[0] for p in pts],
                    [p[1] for p in pts],
                    marker="o",
                    markersize=3,
                    label=f"{method} ({s})" if len(surrogates) > 1 else method,
                    color=_color(method),
                    alpha=0.9 if s == surrogates[0] else 0.5,
                )
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("parameter noise scale")
    ax.set_ylabel("transfer score (lower is flatter)")
    ax.legend(fontsize=7)
    return _save(fig, Path(path))


def render_scatter_figure(report, path) -> Path:
    """Per-sample metric contribution vs held-out empirical gap."""
    fig, ax = _new_axes()
    rows = list(report.scatter)
    for method in sorted({r["method"] for r in rows}):
        xs = [r["score"] for r in rows if r["method"] == method]
        ys = [r["gap"] for r in rows if r["method"] == method]
        ax.scatter(xs, ys, s=8, alpha=0.55, label=method, color=_color(method))
    corr = [r for r in report.correlations if r["analysis"] == "metric_vs_gap"]
    if corr:
        ax.set_title(f"pearson={corr[0]['pearson']:.3f}", fontsize=8)
    ax.set_xlabel("per-sample transfer score")
    ax.set_ylabel("empirical gap on held-out target")
    ax.legend(fontsize=7)
    return _save(fig, Path(path))


def render_flatness_figure(report, path) -> Path:
    """Final input-gradient norm per method (smaller = flatter maxima)."""
    fig, ax = _new_axes()
    rows = list(report.flatness)
    labels = [f"{r['method']}\n{r['surrogate']}" for r in rows]
    ax.bar(
        range(len(rows)),
        [r["mean_grad_norm"] for r in rows],
        color=[_color(r["method"]) for r in rows],
    )
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("mean final input-grad L2")
    return _save(fig, Path(path))


def render_gradnorm_figure(profile, path, title: str = "") -> Path:
    """Standardized input-grad vs param-grad norms for one model."""
    fig, ax = _new_axes(4.6, 4.2)
    ax.scatter(profile.normalized[:, 0], profile.normalized[:, 1], s=8, alpha=0.6, color="#c02020")
    ax.set_xlabel("input-gradient norm (standardized)")
    ax.set_ylabel("parameter-gradient norm (standardized)")
    if title:
        ax.set_title(title, fontsize=9)
    return _save(fig, Path(path))
