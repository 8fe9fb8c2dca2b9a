import pytest

from riverlcp.scenarios import (
    NAMED_SCENARIOS,
    PERMUTATIONS,
    SCALES,
    SweepOptions,
    apply_scenario,
    classify_scenarios,
    generate_scenarios,
    named_scenario,
    rows_to_csv,
    run_scenario,
    run_sweep,
)


def test_scenario_count_and_ids(baseline):
    specs = generate_scenarios(baseline)
    assert len(specs) == 1296
    assert [s.id for s in specs] == list(range(1296))
    # no two players share a level within any varied parameter
    for s in specs[:50]:
        for part in (s.demand_t1, s.demand_t2, s.lf, s.c_cu):
            assert sorted(part) == [0, 1, 2]


def test_scales_are_exact_thirds():
    assert SCALES == (2.0 / 3.0, 1.0, 4.0 / 3.0)
    assert PERMUTATIONS[0] == (0, 1, 2)


def test_large_prosumer_values(baseline):
    spec = named_scenario("large-prosumer")
    cfg = apply_scenario(baseline, spec)
    d1 = [p.demand[0] for p in cfg.players]
    d2 = [p.demand[1] for p in cfg.players]
    assert d1 == pytest.approx([10.0 / 3.0, 20.0 / 3.0, 5.0])
    assert d2 == pytest.approx([20.0 / 3.0, 40.0 / 3.0, 10.0])
    assert [p.c_cu[0][0] for p in cfg.players] == pytest.approx([2.0 / 3.0, 1.0, 4.0 / 3.0])
    assert [p.c_cu[1][0] for p in cfg.players] == pytest.approx([10.0 / 3.0, 5.0, 20.0 / 3.0])
    for c in range(2):
        for t in range(2):
            assert [p.lf[c][t] for p in cfg.players] == pytest.approx([2.0 / 15.0, 0.1, 1.0 / 15.0])
    # intercepts recomputed from the scaled demands
    for p in cfg.players:
        for t in range(2):
            assert p.alpha[t] == pytest.approx(3.0 * p.demand[t] + 1.0)


def test_downstream_growth_values(baseline):
    cfg = apply_scenario(baseline, named_scenario("downstream-economic-growth"))
    assert [p.demand[1] for p in cfg.players] == pytest.approx([20.0 / 3.0, 10.0, 40.0 / 3.0])
    assert [p.demand[0] for p in cfg.players] == pytest.approx([5.0, 20.0 / 3.0, 10.0 / 3.0])


def test_multiple_prices_values(baseline):
    cfg = apply_scenario(baseline, named_scenario("multiple-prices"))
    assert [p.demand[0] for p in cfg.players] == pytest.approx([5.0, 10.0 / 3.0, 20.0 / 3.0])
    assert [p.demand[1] for p in cfg.players] == pytest.approx([10.0, 40.0 / 3.0, 20.0 / 3.0])


def test_named_ids_are_stable():
    assert named_scenario("large-prosumer").id == 282
    assert named_scenario("downstream-economic-growth").id == 678
    assert named_scenario("multiple-prices").id == 570
    assert set(NAMED_SCENARIOS) == {
        "large-prosumer", "downstream-economic-growth", "multiple-prices",
    }


def test_row_determinism(baseline):
    spec = named_scenario("downstream-economic-growth")
    a = run_scenario(baseline, spec)
    b = run_scenario(baseline, spec)
    assert rows_to_csv([a]) == rows_to_csv([b])


def test_detailed_scenario_results(baseline):
    r = run_scenario(baseline, named_scenario("downstream-economic-growth"))
    assert not r.failed
    assert r.gcm_purchases_p3 == pytest.approx(2.07, abs=0.05)
    assert r.csm_purchases_p3 == pytest.approx(2.33, abs=0.05)
    assert r.metrics_gcm.is_imputation
    assert not r.metrics_csm.is_imputation
    assert r.preferred == "gcm"
    assert r.period1_purchase_max <= 1e-6
    assert r.theorem3_violations == 0 and r.theorem4_violations == 0

    r = run_scenario(baseline, named_scenario("large-prosumer"))
    assert r.preferred == "csm"
    assert r.metrics_csm.is_imputation
    assert r.period1_purchase_max <= 1e-6


def test_small_sweep_summary(baseline):
    specs = generate_scenarios(baseline)[:12]
    summary = run_sweep(baseline, specs, SweepOptions(lemke_cross_check=True))
    assert len(summary.rows) == 12
    assert summary.n_failures == 0
    assert summary.pct_higher["gcm"] + summary.pct_higher["csm"] + \
        100.0 * summary.n_ties / 12 == pytest.approx(100.0)
    assert max(r.oracle_dev for r in summary.rows) <= 1e-5
    assert max(r.lemke_dev for r in summary.rows) <= 1e-5
    csv_text = rows_to_csv(summary.rows)
    assert csv_text.count("\n") == 13  # header + 12 rows


def test_sweep_requires_scenarios(baseline):
    with pytest.raises(ValueError):
        run_sweep(baseline, [])


def test_generate_requires_three_node_two_period(duck_river):
    with pytest.raises(ValueError):
        generate_scenarios(duck_river)


def test_classification_on_subset(baseline):
    specs = [named_scenario("downstream-economic-growth"), named_scenario("large-prosumer")]
    summary = run_sweep(baseline, specs, SweepOptions(lemke_cross_check=False))
    report = classify_scenarios(summary)
    assert report["gcm_preferred"] == 1
    assert report["gcm_preferred_matching_growth_profile"] == 1
    assert report["growth_profile_share_pct"] == 100.0


def test_threaded_sweep_matches_serial(baseline, monkeypatch):
    specs = generate_scenarios(baseline)[:8]
    serial = run_sweep(baseline, specs, SweepOptions(lemke_cross_check=False))
    threaded = run_sweep(baseline, specs, SweepOptions(lemke_cross_check=False, threads=4))
    assert rows_to_csv(serial.rows) == rows_to_csv(threaded.rows)
    # the environment variable caps any request
    monkeypatch.setenv("RIVERLCP_THREADS", "2")
    assert SweepOptions(threads=8).resolved_threads() == 2
    assert SweepOptions().resolved_threads() == 2
    monkeypatch.delenv("RIVERLCP_THREADS")
    assert SweepOptions(threads=3).resolved_threads() == 3
    assert SweepOptions().resolved_threads() == 1


def test_classification_vacuous_without_gcm_wins(baseline):
    specs = [named_scenario("large-prosumer")]
    summary = run_sweep(baseline, specs, SweepOptions(lemke_cross_check=False))
    report = classify_scenarios(summary)
    assert report["gcm_preferred"] == 0
    assert report["growth_profile_share_pct"] == 100.0
