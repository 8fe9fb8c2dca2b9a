"""Capital-installation deferment study on a basin with a designated project.

For each candidate installation year, the capital player's required
augmentation is set to the project capacity from that year onward and the
per-period capital cost is derived from the annualized payment (five-year
planning periods).  Both market structures and the no-market baseline are
solved per year, producing the welfare-versus-year series, the
consumption-versus-nominal-demand table (total withdrawals and supply
shadow prices), and the common-price diagnostics of the bilateral market.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .basin import BasinConfig, upstream_set
from .formulations import (
    EquilibriumSolution,
    MarketStructure,
    purchases_by_player,
    solve_no_market_recursive,
    solve_structure,
)
from .theory import ACTIVITY_TOL, verify_theorem3

__all__ = ["YearResult", "DefermentStudy", "run_deferment", "configure_installation"]


class MissingProjectError(Exception):
    """The basin file carries no capital project definition."""


def configure_installation(basin: BasinConfig, install_year: int) -> BasinConfig:
    """Set the capital player's augmentation and capital cost for one year."""
    project = basin.capital_project
    if project is None:
        raise MissingProjectError("basin has no capital_project block")
    if not basin.period_labels:
        raise MissingProjectError("basin has no period_labels to place the installation year")
    idx = basin.player_index(project.player)
    c_cap_rate = basin.years_per_period * project.annual_payment / project.capacity_mgd
    player = basin.players[idx]
    a_req = tuple(
        project.capacity_mgd if label >= install_year else 0.0
        for label in basin.period_labels
    )
    players = list(basin.players)
    players[idx] = replace(player, a_req=a_req, c_cap=(c_cap_rate,) * basin.periods)
    return replace(basin, players=tuple(players))


@dataclass(frozen=True)
class YearResult:
    year: int
    total_gcm: float
    total_csm: float
    total_no_market: float
    welfare_gcm: tuple[float, ...]
    welfare_csm: tuple[float, ...]
    welfare_no_market: tuple[float, ...]
    gcm: EquilibriumSolution
    csm: EquilibriumSolution
    no_market: EquilibriumSolution
    common_prices: tuple  # (period, price, sellers) whenever the capital player buys
    price_findings: int

    @property
    def market_vs_none(self) -> float:
        return self.total_gcm - self.total_no_market

    @property
    def gcm_csm_welfare_gap(self) -> float:
        return max(abs(a - b) for a, b in zip(self.welfare_gcm, self.welfare_csm))


@dataclass(frozen=True)
class DefermentStudy:
    basin_name: str
    years: tuple[int, ...]
    results: tuple[YearResult, ...]

    def best_market_year(self) -> int:
        return max(self.results, key=lambda r: r.total_gcm).year

    def best_no_market_year(self) -> int:
        return max(self.results, key=lambda r: r.total_no_market).year


def _common_prices(cfg: BasinConfig, sol: EquilibriumSolution, buyer: int):
    d = cfg.discounts()
    out = []
    for t in range(cfg.periods):
        sellers = tuple(
            j for j in upstream_set(cfg, buyer) if sol.get("W_P", buyer, t, j) > ACTIVITY_TOL
        )
        if sellers:
            out.append((t, float(sol.value("gamma_flow", buyer, t) / d[t]), sellers))
    return tuple(out)


def run_deferment(
    basin: BasinConfig,
    years: list[int] | None = None,
    *,
    start: float = 1.0,
    basin_name: str = "duck_river",
) -> DefermentStudy:
    if basin.capital_project is None:
        raise MissingProjectError("basin has no capital_project block")
    if years is None:
        years = list(basin.period_labels[:-1])
    buyer = basin.player_index(basin.capital_project.player)

    results = []
    for year in years:
        cfg = configure_installation(basin, int(year))
        gcm = solve_structure(cfg, MarketStructure.GCM, start=start)
        csm = solve_structure(cfg, MarketStructure.CSM, start=start)
        none = solve_no_market_recursive(cfg)
        findings = verify_theorem3(cfg, gcm) if gcm.report.converged else []
        results.append(
            YearResult(
                year=int(year),
                total_gcm=float(sum(gcm.welfare)),
                total_csm=float(sum(csm.welfare)),
                total_no_market=float(sum(none.welfare)),
                welfare_gcm=gcm.welfare,
                welfare_csm=csm.welfare,
                welfare_no_market=none.welfare,
                gcm=gcm,
                csm=csm,
                no_market=none,
                common_prices=_common_prices(cfg, gcm, buyer),
                price_findings=len(findings),
            )
        )
    return DefermentStudy(basin_name=basin_name, years=tuple(int(y) for y in years), results=tuple(results))


def consumption_rows(basin: BasinConfig, study: DefermentStudy) -> list[dict]:
    """Per (installation year, player, period): withdrawals against nominal
    demand plus the supply shadow price of the bilateral market solution."""
    rows = []
    for res in study.results:
        cfg = configure_installation(basin, res.year)
        for i, p in enumerate(cfg.players):
            for t in range(cfg.periods):
                label = cfg.period_labels[t] if cfg.period_labels else t
                rows.append(
                    {
                        "install_year": res.year,
                        "player": p.name,
                        "period": label,
                        "Q": res.gcm.value("Q", i, t),
                        "nominal_demand": p.demand[t],
                        "lambda_sup": res.gcm.value("lambda_sup", i, t),
                        "purchases": float(
                            purchases_by_player(cfg, MarketStructure.GCM, res.gcm.values)[i, t]
                        ),
                    }
                )
    return rows
