"""Figure rendering for harness reports.

Figures are a convenience view; report.csv stays the contract and the only
artifact covered by the bitwise-reproducibility guarantee.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_STYLE = {
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


def _method_rows(report, predicate):
    by_method: dict[str, list] = {}
    for row in report.rows:
        if predicate(row):
            by_method.setdefault(row.method, []).append(row)
    return by_method


def _render_sweep(report, out: Path) -> list[Path]:
    by_method = _method_rows(report, lambda r: r.lam is not None and r.cider_mean is not None)
    if not by_method:
        return []
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for method, rows in sorted(by_method.items()):
        rows = sorted(rows, key=lambda r: r.lam)
        lams = [r.lam for r in rows]
        ax1.errorbar(
            lams,
            [r.cider_mean for r in rows],
            yerr=[r.cider_sem for r in rows],
            marker="o",
            capsize=3,
            label=method,
        )
        ax2.plot(lams, [r.twoafc_mean for r in rows], marker="o", label=method)
    ax1.set_xlabel("lambda")
    ax1.set_ylabel("CIDEr-D (mean ± SEM)")
    ax2.set_xlabel("lambda")
    ax2.set_ylabel("2AFC accuracy")
    ax2.set_ylim(0.0, 1.05)
    for ax in (ax1, ax2):
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = out / "sweep.png"
    fig.savefig(path)
    plt.close(fig)
    return [path]


def _render_rs_sweep(report, out: Path) -> list[Path]:
    rs_rows = sorted(
        (r for r in report.rows if r.method == "RS" and r.samples is not None),
        key=lambda r: r.samples,
    )
    if not rs_rows:
        return []
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.errorbar(
        [r.samples for r in rs_rows],
        [r.cider_mean for r in rs_rows],
        yerr=[r.cider_sem for r in rs_rows],
        marker="o",
        capsize=3,
        label="RS",
    )
    is_rows = [r for r in report.rows if r.method == "IS"]
    if is_rows:
        ax.axhline(is_rows[0].cider_mean, linestyle="--", color="gray", label="IS (beam 10)")
    ax.set_xscale("log")
    ax.set_xticks([r.samples for r in rs_rows])
    ax.get_xaxis().set_major_formatter(plt.ScalarFormatter())
    ax.set_xlabel("sample budget")
    ax.set_ylabel("CIDEr-D (mean ± SEM)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out / "rs_sweep.png"
    fig.savefig(path)
    plt.close(fig)
    return [path]


def _render_discrim(report, out: Path) -> list[Path]:
    splits = ("easy", "hard")
    methods = sorted({r.method for r in report.rows if r.split is not None})
    if not methods:
        return []
    fig, ax = plt.subplots(figsize=(5, 3.4))
    width = 0.8 / len(methods)
    for i, method in enumerate(methods):
        values = []
        for split in splits:
            rows = [r for r in report.rows if r.method == method and r.split == split]
            values.append(rows[0].twoafc_mean if rows else 0.0)
        xs = [j + i * width for j in range(len(splits))]
        ax.bar(xs, values, width=width, label=method)
    ax.axhline(0.5, linestyle=":", color="gray", linewidth=1)
    ax.set_xticks([j + width * (len(methods) - 1) / 2 for j in range(len(splits))])
    ax.set_xticklabels(splits)
    ax.set_ylabel("2AFC accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out / "discrim.png"
    fig.savefig(path)
    plt.close(fig)
    return [path]


def render(report, out_dir: str | Path) -> list[Path]:
    """Render the figures matching a report's kind next to its CSV."""
    out = Path(out_dir)
    with plt.rc_context(_STYLE):
        if report.kind == "sweep":
            return _render_sweep(report, out)
        if report.kind == "rs-sweep":
            return _render_rs_sweep(report, out)
        if report.kind == "discrim":
            return _render_discrim(report, out)
    return []
