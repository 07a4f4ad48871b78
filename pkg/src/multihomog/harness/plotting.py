"""Figures for experiment reports (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .report import ExperimentReport  # noqa: E402

STYLE = {"font.size": 10, "axes.grid": True, "grid.alpha": 0.3, "legend.fontsize": 8, "figure.dpi": 120}


def _ok(rows: list[dict]) -> list[dict]:
    return [r for r in rows if r.get("status", "ok") == "ok"]


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_cz(report: ExperimentReport, path: Path) -> Path:
    """R against 1/eps_n, one line per (forcing, p)."""
    groups: dict[tuple, list[dict]] = {}
    for r in _ok(report.records):
        groups.setdefault((r["forcing"], r["p"]), []).append(r)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 4))
        for (forcing, p), rows in sorted(groups.items()):
            rows = sorted(rows, key=lambda r: r["eps_n"], reverse=True)
            ax.loglog([1 / r["eps_n"] for r in rows], [r["R"] for r in rows], "o-", label=f"{forcing}, p={p:g}")
        ax.set_xlabel(r"$1/\varepsilon_n$")
        ax.set_ylabel(r"$\|\nabla u\|_p / \|f\|_p$")
        ax.legend()
        return _save(fig, path)


def plot_profile(report: ExperimentReport, path: Path) -> Path:
    """Ball averages against radius, window highlighted."""
    curves: dict[str, list[dict]] = {}
    for row in report.profile:
        curves.setdefault(row["key"], []).append(row)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 4))
        for key, rows in sorted(curves.items()):
            r = [row["r"] for row in rows]
            v = [row["value"] for row in rows]
            (line,) = ax.loglog(r, v, "-", lw=1, label=key)
            win = [(row["r"], row["value"]) for row in rows if row["in_window"]]
            if win:
                ax.loglog(*zip(*win), "o", ms=3, color=line.get_color())
        ax.set_xlabel("r")
        ax.set_ylabel(r"$M_r(\nabla u)$ at centre")
        ax.legend(ncol=2)
        return _save(fig, path)


def plot_rate(report: ExperimentReport, path: Path) -> Path:
    rows = sorted(report.records, key=lambda r: r["eps"])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 4))
        eps = [r["eps"] for r in rows]
        ax.loglog(eps, [r["l2_error"] for r in rows], "o-", label=r"$\|u_\varepsilon - u_0\|_{L^2}$")
        ax.loglog(eps, [r["corrected_gradient_error"] for r in rows], "s-", label="corrected gradient")
        anchor = rows[-1]["l2_error"] / eps[-1]
        ax.loglog(eps, [anchor * e for e in eps], "k--", lw=0.8, label="slope 1")
        ax.set_xlabel(r"$\varepsilon$")
        ax.set_ylabel("error")
        ax.legend()
        return _save(fig, path)


def plot_reduction(report: ExperimentReport, path: Path) -> Path:
    rows = sorted(_ok(report.records), key=lambda r: r["eps_n"])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 4))
        ax.loglog([r["eps_n"] for r in rows], [r["error"] for r in rows], "o-", label="error")
        if rows and "bound_proxy" in rows[0]:
            ax.loglog([r["eps_n"] for r in rows], [r["bound_proxy"] for r in rows], "--", label="bound proxy")
        ax.set_xlabel(r"$\varepsilon_n$")
        ax.set_ylabel(r"$\|\nabla u_\varepsilon - \nabla u^\flat - U\|_{L^2(B_r)}$")
        ax.legend()
        return _save(fig, path)


PLOTS = {"cz": plot_cz, "quasiperiodic": plot_cz, "lipschitz": plot_profile, "rate": plot_rate,
         "reduction": plot_reduction}


def render_figures(report: ExperimentReport, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    plot = PLOTS[report.experiment]
    if not _ok(report.records):
        return {}
    return {"figure": plot(report, out / f"{report.experiment}.png")}
