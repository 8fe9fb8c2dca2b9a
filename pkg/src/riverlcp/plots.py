"""Figure rendering for the report paths (written next to the CSV/JSON)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .basin import BasinConfig
from .deferment import DefermentStudy
from .formulations import EquilibriumSolution
from .metrics import display_quantities

__all__ = ["save_flow_profile", "save_sweep_figure", "save_deferment_figure"]


def save_flow_profile(cfg: BasinConfig, sol: EquilibriumSolution, path: Path) -> list[Path]:
    """Profile view per period: actual inflow split into freely available
    and purchased water, against the unaided and with-market river levels
    and each player's maximum usable inflow."""
    dq = display_quantities(cfg, sol)
    names = [p.name for p in cfg.players]
    x = np.arange(cfg.n_players)
    out = []
    for t in range(cfg.periods):
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        free = dq.freely_available_inflow[:, t]
        purchased = np.maximum(dq.inflow_with_market[:, t] - dq.inflow_without_market[:, t], 0.0)
        ax.bar(x, free, width=0.55, label="freely available inflow", color="#7fb3d5")
        ax.bar(x, purchased, width=0.55, bottom=free, label="purchased inflow", color="#f5b041")
        ax.plot(x, dq.inflow_with_market[:, t], "o-", color="#1a5276", label="inflow with market")
        ax.plot(x, dq.inflow_without_market[:, t], "s--", color="#884ea0", label="inflow without market")
        ax.plot(x, dq.max_usable_inflow[:, t], "^:", color="#b03a2e", label="max usable inflow")
        ax.set_xticks(x, names, rotation=20)
        ax.set_ylabel("flow (MGD)")
        label = cfg.period_labels[t] if cfg.period_labels else t + 1
        ax.set_title(f"{sol.structure.value.upper()} river profile, period {label}")
        ax.legend(fontsize=8)
        fig.tight_layout()
        p = path.with_name(f"{path.stem}_t{label}.png")
        fig.savefig(p, dpi=130)
        plt.close(fig)
        out.append(p)
    return out


def save_sweep_figure(summary, path: Path) -> Path:
    """Scatter of both structures' characteristic values, preference-coded."""
    fig, ax = plt.subplots(figsize=(5.4, 5.0))
    for key, color in (("csm", "#7fb3d5"), ("gcm", "#b03a2e"), ("tie", "#999999")):
        rows = [r for r in summary.rows if r.preferred == key]
        if not rows:
            continue
        ax.scatter(
            [r.metrics_gcm.characteristic for r in rows],
            [r.metrics_csm.characteristic for r in rows],
            s=7,
            alpha=0.5,
            color=color,
            label=f"{key} preferred ({len(rows)})",
        )
    lim = ax.get_xlim() + ax.get_ylim()
    lo, hi = min(lim), max(lim)
    ax.plot([lo, hi], [lo, hi], "k-", lw=0.6)
    ax.set_xlabel("commodity-market characteristic value ($M)")
    ax.set_ylabel("cost-sharing characteristic value ($M)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_deferment_figure(study: DefermentStudy, path: Path) -> Path:
    """Total welfare against installation year, market versus no market."""
    years = [r.year for r in study.results]
    fig, ax = plt.subplots(figsize=(6.2, 4.2))
    ax.plot(years, [r.total_gcm for r in study.results], "o-", label="water-release market")
    ax.plot(years, [r.total_no_market for r in study.results], "s--", label="no market")
    ax.set_xlabel("installation year")
    ax.set_ylabel("total welfare ($M)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
