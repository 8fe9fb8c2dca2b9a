import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riverlcp.basin import (
    InvariantViolation,
    SchemaError,
    discounts,
    downstream_set,
    linearize_alpha,
    load_basin,
    serialize,
    upstream_set,
)


def test_baseline_matches_table(baseline):
    assert baseline.n_players == 3
    assert baseline.periods == 2
    assert baseline.classes == 2
    assert baseline.interest_rate == 0.04
    assert baseline.years_per_period == 5
    assert [p.n for p in baseline.players] == [9.0, 0.0, 0.0]
    for p in baseline.players:
        assert p.r_fc == (4.0, 4.0)
        assert p.c_ops == (1.0, 1.0)
        assert p.beta == (3.0, 3.0)
        assert p.demand == (5.0, 10.0)
        assert p.c_cu == ((1.0, 1.0), (5.0, 5.0))
        assert p.lf == ((0.1, 0.1), (0.1, 0.1))
        assert p.alpha == (16.0, 31.0)


def test_discounts_examples():
    d = discounts(0.04, 2)
    assert d[0] == 1.0
    assert d[1] == pytest.approx(1.0 / 1.04, abs=1e-12)
    assert np.all(discounts(0.0, 3) == 1.0)
    assert discounts(0.04, 1).tolist() == [1.0]
    with pytest.raises(InvariantViolation):
        discounts(-0.1, 2)


def test_five_year_periods(baseline):
    d = baseline.discounts()
    assert d[0] == 1.0
    assert d[1] == pytest.approx(1.04 ** -5, rel=1e-12)


def test_linearize_alpha_examples():
    assert linearize_alpha(3.0, 5.0, 1.0) == 16.0
    assert linearize_alpha(3.0, 13.33, 1.0) == pytest.approx(40.99)
    assert linearize_alpha(3.0, 0.0, 0.7) == 0.7


def test_neighbor_sets(baseline):
    assert upstream_set(baseline, 0) == ()
    assert downstream_set(baseline, 0) == (1, 2)
    assert upstream_set(baseline, 1) == (0,)
    assert downstream_set(baseline, 1) == (2,)
    assert upstream_set(baseline, 2) == (0, 1)
    assert downstream_set(baseline, 2) == ()
    with pytest.raises(IndexError):
        upstream_set(baseline, 3)
    with pytest.raises(IndexError):
        downstream_set(baseline, -1)


def test_topology_indicator_symmetry(duck_river):
    n = duck_river.n_players
    for i in range(n):
        for j in range(n):
            assert (j in upstream_set(duck_river, i)) == (i in downstream_set(duck_river, j))


def _baseline_doc():
    return json.loads(json.dumps(serialize(load_basin("three_node_baseline"))))


def test_empty_player_list_rejected():
    doc = _baseline_doc()
    doc["players"] = []
    with pytest.raises(InvariantViolation):
        load_basin(doc)


def test_zero_beta_rejected():
    doc = _baseline_doc()
    doc["players"][0]["beta"] = 0.0
    with pytest.raises(InvariantViolation, match="beta"):
        load_basin(doc)


def test_excess_loss_fraction_rejected():
    doc = _baseline_doc()
    doc["players"][1]["lf"] = [0.7, 0.7]
    with pytest.raises(InvariantViolation, match="loss fractions"):
        load_basin(doc)


def test_schema_error_carries_path():
    doc = _baseline_doc()
    del doc["players"][2]["c_ops"]
    with pytest.raises(SchemaError, match=r"players\[2\]\.c_ops"):
        load_basin(doc)
    doc = _baseline_doc()
    doc["players"][0]["c_cap"] = [1.0]
    with pytest.raises(SchemaError, match=r"players\[0\]\.c_cap"):
        load_basin(doc)
    doc = _baseline_doc()
    doc["bogus"] = 1
    with pytest.raises(SchemaError, match="bogus"):
        load_basin(doc)


def test_unknown_basin_name():
    with pytest.raises(SchemaError, match="no built-in basin"):
        load_basin("atlantis")


def test_roundtrip_both_basins(baseline, duck_river):
    for cfg in (baseline, duck_river):
        again = load_basin(json.loads(json.dumps(serialize(cfg))))
        assert again == cfg


def test_alpha_demand_consistency(baseline):
    # the derived intercept puts the demand curve through (demand, c_ops)
    for p in baseline.players:
        for t in range(baseline.periods):
            theta = p.alpha[t] - p.beta[t] * p.demand[t]
            assert theta == pytest.approx(p.c_ops[t], abs=1e-12)


def test_duck_river_shape(duck_river):
    assert duck_river.n_players == 6
    assert duck_river.periods == 8
    assert duck_river.period_labels == tuple(range(2015, 2051, 5))
    assert duck_river.capital_project is not None
    assert duck_river.capital_project.capacity_mgd == pytest.approx(64.6)
    assert duck_river.players[-1].name == "columbia"
    assert duck_river.players[-1].r_fc[0] == pytest.approx(64.6)
    assert dict(duck_river.players[0].provenance)["demand"] == "estimated"


@settings(max_examples=30, deadline=None)
@given(
    rate=st.one_of(st.just(0.0), st.floats(min_value=1e-9, max_value=0.5)),
    periods=st.integers(min_value=1, max_value=12),
)
def test_discount_monotone(rate, periods):
    d = discounts(rate, periods)
    assert d[0] == 1.0
    assert np.all(np.diff(d) <= 0)
    if rate > 0:
        assert np.all(np.diff(d) < 0)
