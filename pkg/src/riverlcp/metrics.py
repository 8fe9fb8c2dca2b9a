"""Cooperative-game evaluation of the non-cooperative market solutions.

Rewards are welfare differences against the no-market baseline, the
characteristic value is their sum, and a nonnegative reward vector is the
sufficient imputation condition.  ``display_quantities`` computes the
per-node inflow/utilization quantities used by the detailed profile views.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basin import BasinConfig, upstream_set
from .formulations import EquilibriumSolution, MarketStructure, purchases_by_player

__all__ = [
    "IMPUTATION_TOL",
    "MetricsReport",
    "DisplayQuantities",
    "rewards",
    "structure_gap",
    "display_quantities",
]

IMPUTATION_TOL = 1e-6


@dataclass(frozen=True)
class MetricsReport:
    rewards: tuple[float, ...]
    characteristic: float
    is_imputation: bool
    structure: MarketStructure


def rewards(market: EquilibriumSolution, base: EquilibriumSolution) -> MetricsReport:
    """Per-player rewards of a market solution over the no-market baseline."""
    if base.structure is not MarketStructure.NO_MARKET:
        raise ValueError(f"baseline must be a no-market solution, got {base.structure}")
    if market.structure is MarketStructure.NO_MARKET:
        raise ValueError("market solution must be GCM or CSM")
    if len(market.welfare) != len(base.welfare):
        raise ValueError("solutions are for different basins")
    r = tuple(m - b for m, b in zip(market.welfare, base.welfare))
    return MetricsReport(
        rewards=r,
        characteristic=float(sum(r)),
        is_imputation=bool(min(r) >= -IMPUTATION_TOL),
        structure=market.structure,
    )


def structure_gap(a: MetricsReport, b: MetricsReport) -> float:
    """Absolute difference of the two structures' characteristic values."""
    return abs(a.characteristic - b.characteristic)


def effective_characteristic(report: MetricsReport) -> float:
    """Characteristic value a structure actually delivers: zero unless it is
    an imputation (a structure leaving some player worse off than acting
    alone would not be adopted)."""
    return report.characteristic if report.is_imputation else 0.0


@dataclass(frozen=True)
class DisplayQuantities:
    """Per (player, period) profile quantities D1-D5 of the detailed views."""

    inflow_with_market: np.ndarray
    inflow_without_market: np.ndarray
    freely_available_inflow: np.ndarray
    max_usable_inflow: np.ndarray
    resource_utilization: np.ndarray


def display_quantities(cfg: BasinConfig, sol: EquilibriumSolution) -> DisplayQuantities:
    """Inflow and utilization quantities per (player, period).

    D1 adds every upstream player's same-period releases (loss reductions
    plus storage) to the unaided inflow D2; D3 is what the player consumed
    net of purchases; D4 is the nominal ceiling; D5 turns the smaller of
    the two normalized slacks into a utilization fraction.  A zero D1 or
    D4 with a matching zero numerator reports utilization 1; a nonzero
    numerator over a zero denominator is an error.
    """
    if not sol.report.converged:
        raise ValueError("display quantities require a converged solution")
    N, T, C = cfg.n_players, cfg.periods, cfg.classes
    market = sol.structure is not MarketStructure.NO_MARKET
    wp = purchases_by_player(cfg, sol.structure, sol.values)

    d1 = np.zeros((N, T))
    d2 = np.zeros((N, T))
    d3 = np.zeros((N, T))
    d4 = np.zeros((N, T))
    d5 = np.zeros((N, T))
    for i, p in enumerate(cfg.players):
        for t in range(T):
            o_prev = sol.get("O_min", i - 1, t) if i > 0 else 0.0
            base = p.n + o_prev
            released = 0.0
            if market:
                for j in upstream_set(cfg, i):
                    released += sum(sol.get("L_R", j, t, c) for c in range(C))
                    released += sol.get("W_S", j, t)
            d1[i, t] = base + released
            d2[i, t] = base
            d3[i, t] = sol.value("Q", i, t) - wp[i, t] + p.r_fc[t]
            d4[i, t] = p.demand[t] + p.r_fc[t]
            used = sol.value("Q", i, t) + p.r_fc[t]
            slacks = []
            for denom in (d1[i, t], d4[i, t]):
                if denom == 0.0:
                    if abs(denom - used) > 1e-12:
                        raise ZeroDivisionError(
                            f"utilization undefined for player {p.name!r} period {t}: "
                            f"zero inflow but usage {used}"
                        )
                    slacks.append(0.0)
                else:
                    slacks.append((denom - used) / denom)
            d5[i, t] = 1.0 - min(slacks)
    return DisplayQuantities(
        inflow_with_market=d1,
        inflow_without_market=d2,
        freely_available_inflow=d3,
        max_usable_inflow=d4,
        resource_utilization=d5,
    )
