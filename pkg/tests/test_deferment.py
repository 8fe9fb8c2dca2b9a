import pytest

from riverlcp.deferment import (
    MissingProjectError,
    configure_installation,
    consumption_rows,
    run_deferment,
)


def test_configure_installation(duck_river):
    cfg = configure_installation(duck_river, 2035)
    col = cfg.player_index("columbia")
    player = cfg.players[col]
    expect_rate = 5 * duck_river.capital_project.annual_payment / 64.6
    assert player.c_cap == (pytest.approx(expect_rate),) * cfg.periods
    for label, req in zip(cfg.period_labels, player.a_req):
        assert req == (64.6 if label >= 2035 else 0.0)
    # other players untouched
    assert cfg.players[0] == duck_river.players[0]


def test_missing_project_raises(baseline):
    with pytest.raises(MissingProjectError):
        configure_installation(baseline, 2030)
    with pytest.raises(MissingProjectError):
        run_deferment(baseline)


def test_single_year_study(duck_river):
    study = run_deferment(duck_river, years=[2040])
    assert study.years == (2040,)
    res = study.results[0]
    assert res.gcm.report.converged and res.csm.report.converged
    assert res.gcm_csm_welfare_gap <= 1e-6
    assert res.market_vs_none >= 0.0
    rows = consumption_rows(duck_river, study)
    assert len(rows) == duck_river.n_players * duck_river.periods
    assert {r["player"] for r in rows} == {p.name for p in duck_river.players}
    assert all(r["Q"] >= -1e-9 for r in rows)
