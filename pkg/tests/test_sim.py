import copy
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uavlpm import scenarios
from uavlpm.citymap import segment_blocked
from uavlpm.exceptions import ConfigError
from uavlpm.sim import (FLIGHT_FLOOR_MARGIN, RECORD_FIELDS, SlotRecord, compute_metrics,
                        derive_seed, load_scenario, read_records_csv, records_to_csv, run,
                        run_batch, scenario_from_dict, simulate, splitmix64, summarize,
                        truth_trajectory, write_records_csv)

u64 = st.integers(0, 2 ** 64 - 1)


def short(d, L=40):
    d = copy.deepcopy(d)
    d["L"] = L
    return d


def record(slot, q, qh, link_true="LoS", link_est="LoS", rate=1.0, bs_id=1):
    return SlotRecord(slot, *q, 0.0, 0.0, 0.0, *qh, 0.0, 0.0, 0.0, link_true, link_est,
                      1.0, bs_id, 1.0, 10.0, rate, math.nan)


class TestSeeds:
    def test_splitmix_reference(self):
        # first output of the reference SplitMix64 generator seeded with 0
        assert splitmix64(0) == 0xE220A8397B1DCDAF

    @given(u64, st.integers(0, 10_000))
    def test_deterministic(self, root, i):
        assert derive_seed(root, i) == derive_seed(root, i)
        assert 0 <= derive_seed(root, i) < 2 ** 64

    def test_distinct_indices(self):
        seeds = {derive_seed(7, i) for i in range(10_000)}
        assert len(seeds) == 10_000


class TestDeterminism:
    def test_same_seed_same_records(self):
        sc = scenario_from_dict(short(scenarios.canyon_dict()))
        assert records_to_csv(run(sc, 5)) == records_to_csv(run(sc, 5))

    def test_different_seed_differs(self):
        sc = scenario_from_dict(short(scenarios.canyon_dict()))
        assert records_to_csv(run(sc, 5)) != records_to_csv(run(sc, 6))

    def test_truth_does_not_depend_on_sensing(self):
        d = short(scenarios.open_sky_dict())
        a = scenario_from_dict(d)
        d["sensing"]["sigma_d0"] = 50.0
        b = scenario_from_dict(d)
        ra, rb = run(a, 3), run(b, 3)
        assert [r[1:7] for r in ra] == [r[1:7] for r in rb]
        np.testing.assert_array_equal([s.x for s in truth_trajectory(a, 3)],
                                      [[*r[1:7]] for r in ra])


class TestRunShape:
    def test_length_and_slots(self):
        recs = run(scenario_from_dict(short(scenarios.open_sky_dict(), 25)), 1)
        assert [r.slot for r in recs] == list(range(1, 26))
        assert all(r.rate >= 0 for r in recs)

    def test_noiseless_exact_init(self):
        d = short(scenarios.open_sky_dict(), 60)
        d["motion"].update(sigma_d=0.0, sigma_v=0.0)
        d["sensing"].update(sigma_d0=0.0, sigma_a0=0.0, sigma_v0=0.0)
        d["init"] = "exact"
        out = simulate(scenario_from_dict(d), 0)
        m = compute_metrics(out.records)
        assert m["pos_rmse"] < 1e-6 and m["ident_accuracy"] == 1.0
        assert min(r.beam_gain for r in out.records) > 1 - 1e-9
        assert not out.fallbacks

    def test_single_slot(self):
        recs = run(scenario_from_dict(short(scenarios.canyon_dict(), 1)), 0)
        assert len(recs) == 1

    def test_flight_floor(self):
        sc = scenario_from_dict(short(scenarios.canyon_dict()))
        assert sc.motion.q_lower[2] == 25.0 + FLIGHT_FLOOR_MARGIN
        for st_ in truth_trajectory(sc, 14):
            assert st_.q[2] >= sc.motion.q_lower[2]


def test_canyon_link_truth_matches_oracle():
    sc = scenarios.canyon(second_bs=True)
    out = simulate(sc, 9)
    pos = {b.id: b.position for b in sc.base_stations}
    flips = 0
    for r, prev in zip(out.records, [None] + out.records[:-1]):
        blocked = segment_blocked(sc.city, pos[r.bs_id], np.array([r.qx, r.qy, r.qz])).blocked
        assert (r.link_true == "NLoS") == blocked
        flips += prev is not None and prev.link_true != r.link_true
    assert flips >= 1


class TestConfigErrors:
    @pytest.mark.parametrize("mutate,where", [
        (lambda d: d.pop("citymap"), "citymap"),
        (lambda d: d.pop("L"), "L"),
        (lambda d: d.update(L=0), "L"),
        (lambda d: d.update(init="warm"), "init"),
        (lambda d: d["base_stations"][0].update(position=[999, 0, 25]), "position"),
        (lambda d: d["base_stations"].append(dict(d["base_stations"][0])), "base_stations"),
        (lambda d: d["initial_state"].update(q=[1, 2]), "initial_state.q"),
        (lambda d: d["initial_state"].update(q=[200, 0, 20]), "initial_state.q"),
        (lambda d: d["sensing"].update(rcs_scale=0), "sensing"),
        (lambda d: d["beam"].update(n_phi=0), "beam"),
        (lambda d: d["rate"].update(bogus=1), "rate"),
        (lambda d: d["motion"].update(q_lower=[-50, -200, 10], q_upper=[350, 200, 150]),
         "motion.q_lower"),
    ])
    def test_rejected(self, mutate, where):
        d = scenarios.open_sky_dict()
        mutate(d)
        with pytest.raises(ConfigError) as exc:
            scenario_from_dict(d)
        assert where in str(exc.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_scenario(tmp_path / "nope.json")

    def test_bad_json(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{")
        with pytest.raises(ConfigError):
            load_scenario(p)


class TestRecordsCsv:
    def test_roundtrip(self, tmp_path):
        recs = run(scenario_from_dict(short(scenarios.canyon_dict(), 30)), 2)
        p = tmp_path / "r.csv"
        write_records_csv(recs, p)
        back = read_records_csv(p)
        assert records_to_csv(back) == records_to_csv(recs)
        assert p.read_text().splitlines()[0] == ",".join(RECORD_FIELDS)

    def test_malformed(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text(",".join(RECORD_FIELDS) + "\n1,2\n")
        with pytest.raises(ConfigError, match="line 2"):
            read_records_csv(p)
        p.write_text("a,b\n")
        with pytest.raises(ConfigError):
            read_records_csv(p)


class TestMetrics:
    def test_hand_values(self):
        recs = [record(1, (0, 0, 50), (3, 4, 50), "LoS", "LoS", 2.0),
                record(2, (0, 0, 50), (0, 0, 50), "LoS", "NLoS", 0.05),
                record(3, (0, 0, 50), (0, 0, 50), "NLoS", "NLoS", 1.0, bs_id=2),
                record(4, (0, 0, 50), (0, 0, 50), "NLoS", "LoS", 1.0, bs_id=1)]
        m = compute_metrics(recs, r_min=0.1)
        assert m["pos_rmse"] == pytest.approx(math.sqrt(25 / 4))
        assert m["ident_accuracy"] == 0.5
        assert m["detection_rate"] == 0.5 and m["false_alarm_rate"] == 0.5
        assert m["mean_rate"] == pytest.approx(4.05 / 4)
        assert m["outage_fraction"] == 0.25 and m["handover_count"] == 2
        assert m["undefined"] == []

    def test_undefined_detection(self):
        m = compute_metrics([record(1, (0, 0, 50), (0, 0, 50))])
        assert math.isnan(m["detection_rate"]) and m["undefined"] == ["detection_rate"]

    def test_summarize_constant_and_nan(self):
        per_run = [{**compute_metrics([record(1, (0, 0, 50), (0, 0, 50))])} for _ in range(3)]
        s = summarize(per_run)
        assert s["ident_accuracy"] == {"mean": 1.0, "ci_low": 1.0, "ci_high": 1.0, "n": 3}
        assert s["detection_rate"]["n"] == 0

    def test_summarize_ci_contains_mean(self):
        rng = np.random.default_rng(0)
        per_run = [{"pos_rmse": x, "vel_rmse": 0.0, "ident_accuracy": 1.0,
                    "detection_rate": math.nan, "false_alarm_rate": 0.0, "mean_rate": 1.0,
                    "outage_fraction": 0.0, "handover_count": 0} for x in rng.normal(5, 1, 50)]
        s = summarize(per_run)["pos_rmse"]
        assert s["ci_low"] < s["mean"] < s["ci_high"]

    def test_all_nlos_false_alarm_undefined(self):
        m = compute_metrics([record(1, (0, 0, 50), (0, 0, 50), "NLoS", "NLoS")])
        assert math.isnan(m["false_alarm_rate"]) and m["undefined"] == ["false_alarm_rate"]

    def test_summary_order_independent(self):
        sc = scenario_from_dict(short(scenarios.canyon_dict(), 30))
        per_run, _ = run_batch(sc, 6, seed=2)
        assert summarize(per_run) == summarize(per_run[::-1])

    def test_batch_seeds(self):
        sc = scenario_from_dict(short(scenarios.open_sky_dict(), 20))
        per_run, outs = run_batch(sc, 3, seed=11, keep_outputs=True)
        assert len(per_run) == 3 and len(outs) == 3
        assert records_to_csv(outs[1].records) == records_to_csv(run(sc, derive_seed(11, 1)))
