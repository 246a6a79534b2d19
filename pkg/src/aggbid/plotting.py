"""Static figures for run and sweep reports.

Uses the object-oriented Agg API (no pyplot state), so it is safe to call
from worker threads and never opens a window.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .model import ScenarioConfig

_STYLE = {"linewidth": 1.6}
_PNG_META = {"Software": None}


def _figure(nrows: int, ncols: int = 1, width: float = 7.0, height_per_row: float = 2.2):
    fig = Figure(figsize=(width, height_per_row * nrows + 0.6), dpi=110, layout="constrained")
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    return fig, axes


def _hour_axis(ax, T: int):
    ax.set_xlim(0.5, T + 0.5)
    ax.set_xticks(range(1, T + 1, max(1, T // 12)))
    ax.grid(True, alpha=0.3)


def render_run_figures(result, config: ScenarioConfig, out_dir, name: str = "dispatch.png") -> Path:
    """Charge level, station injection, and EV vs wholesale price per hour."""
    sol, schedule, _ = result
    T = config.T
    hours = np.arange(1, T + 1)
    fig, axes = _figure(3)
    ax_soc, ax_p, ax_lam = axes[:, 0]
    for k in range(config.n_stations):
        label = f"station {k + 1}"
        ax_soc.plot(hours, sol.soc[k], marker="o", markersize=3, label=label, **_STYLE)
        ax_p.bar(hours + 0.8 * (k - (config.n_stations - 1) / 2) / max(config.n_stations, 1),
                 sol.p_cs[k], width=0.8 / config.n_stations, label=label)
        ax_lam.step(hours, schedule.lam[k], where="mid", label=f"EV price, {label}", **_STYLE)
    st = config.stations[0]
    ax_soc.axhline(st.terminal_floor, color="0.4", linestyle="--", linewidth=1, label="terminal floor")
    ax_soc.set_ylabel("charge level [MWh]")
    ax_p.axhline(0.0, color="black", linewidth=0.8)
    ax_p.set_ylabel("injection [MW]")
    ax_lam.step(hours, config.prices.as_array(), where="mid", color="black", linestyle=":",
                label="wholesale", **_STYLE)
    ax_lam.set_ylabel("price [$/MWh]")
    ax_lam.set_xlabel("hour")
    for ax in axes[:, 0]:
        _hour_axis(ax, T)
        ax.legend(fontsize=7, loc="best")
    path = Path(out_dir) / name
    fig.savefig(path, metadata=_PNG_META)
    return path


def render_sweep_figures(report, out_dir, name: str = "sweep.png") -> Path:
    """Total profit and its wholesale / EV split against the price scale K."""
    modes = []
    for r in report.records:
        if r.mode not in modes:
            modes.append(r.mode)
    fig, axes = _figure(len(modes), 2, width=9.0, height_per_row=2.8)
    for i, mode in enumerate(modes):
        recs = report.for_mode(mode)
        k = np.array([r.k for r in recs])
        ax_tot, ax_split = axes[i]
        ax_tot.plot(k, [r.total for r in recs], marker="o", markersize=3, **_STYLE)
        ax_tot.set_title(f"{mode.value}: total profit", fontsize=9)
        ax_tot.set_ylabel("$")
        ax_split.plot(k, [r.wholesale for r in recs], label="wholesale", **_STYLE)
        ax_split.plot(k, [r.ev_trading for r in recs], label="EV trading", **_STYLE)
        ax_split.set_title(f"{mode.value}: profit split", fontsize=9)
        ax_split.legend(fontsize=7)
        for ax in (ax_tot, ax_split):
            ax.set_xlabel("price scale K")
            ax.grid(True, alpha=0.3)
    path = Path(out_dir) / name
    fig.savefig(path, metadata=_PNG_META)
    return path
