import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest

from candiff import scenario as sc
from candiff import synthtrack as st
from candiff.datamodel import SPEED, SWA, TORQUE_LEFT, TORQUE_RIGHT, ChannelMask, Region, ValidationError
from candiff.denoiser import Normalization, init_model
from candiff.diffusion import NAIVE, linear_schedule


@pytest.fixture
def tiny_model(tiny_config, small_dataset):
    m = init_model(tiny_config, 0, Normalization.fit(small_dataset))
    m.schedule = linear_schedule(10)
    return m


def _window_score(lap, vehicle, track, start, future=None):
    past = lap.samples[start - 512 : start]
    fut = lap.samples[start : start + 512] if future is None else future
    return sc.score_candidate(fut, past, vehicle, track.grade_angle[start - 512 : start + 512], track.spacing)


def test_score_consistent_candidate(clean_lap, vehicle, track):
    assert _window_score(clean_lap, vehicle, track, 1024) <= 1e-8


def test_score_penalizes_torque_gain(clean_lap, vehicle, track):
    fault = st.random_fault(clean_lap, vehicle, track, 1.5, np.random.default_rng(0), span=300)
    r = fault.regions[0]
    start = max(512, r.start - 100)
    bad = st.inject_miscalibration(clean_lap, fault).samples[start : start + 512]
    assert _window_score(clean_lap, vehicle, track, start, bad) > _window_score(clean_lap, vehicle, track, start)


def test_score_fallback_when_all_braking(clean_lap, vehicle, track):
    fut = clean_lap.samples[1024:1536].copy()
    fut[:, TORQUE_LEFT] = fut[:, TORQUE_RIGHT] = -500.0
    s = _window_score(clean_lap, vehicle, track, 1024, fut)
    assert 0.0 <= s <= 1.0
    fut[3, SPEED] = np.nan
    assert _window_score(clean_lap, vehicle, track, 1024, fut) == float("inf")


def test_select_argmin_and_ties():
    assert sc.select([3.0, 1.0, 1.0, 2.0]) == 1
    assert sc.select([float("inf"), 5.0]) == 1
    assert sc.select([0.4]) == 0
    with pytest.raises(ValueError):
        sc.select([float("inf")])


def _stub_model(cfg):
    return SimpleNamespace(config=cfg, schedule=linear_schedule(10), norm=Normalization())


@pytest.mark.parametrize("b, table, winner", [(4, [3.0, 1.0, 1.0, 2.0], 1), (1, [7.0], 0)])
def test_generate_lap_picks_argmin(monkeypatch, tiny_config, clean_lap, vehicle, track, b, table, winner):
    h = tiny_config.w // 2

    def fake_sample(denoiser, past, conditioning, plan, schedule, rng, sigma_scale=1.0):
        assert len(rng) == b
        return np.stack([np.full((h, 4), float(i + 1)) for i in range(len(past))])

    def fake_score(future, *args, **kw):
        return table[int(round(future[0, 1])) - 1]

    monkeypatch.setattr(sc.diffusion, "sample_future", fake_sample)
    monkeypatch.setattr(sc, "score_candidate", fake_score)
    cfg = sc.GenerationConfig(candidates=b, plan=sc.PlanSpec(4))
    lap, report = sc.generate_lap(_stub_model(tiny_config), clean_lap, vehicle, track, cfg, T=100)
    assert len(lap) == 100
    assert len(report["windows"]) == 4
    assert all(w["chosen"] == winner and w["chosen_score"] == min(w["scores"]) for w in report["windows"])
    assert np.all(lap.samples[:, 1:] == winner + 1)


def test_generate_lap_real_model(tiny_model, clean_lap, vehicle, track):
    cfg = sc.GenerationConfig(candidates=2, plan=sc.PlanSpec(3))
    a, rep = sc.generate_lap(tiny_model, clean_lap, vehicle, track, cfg, T=90)
    b, _ = sc.generate_lap(tiny_model, clean_lap, vehicle, track, cfg, T=90)
    assert np.array_equal(a.samples, b.samples)
    assert np.isfinite(a.samples).all() and a.speed.min() >= 0
    assert rep["plan"]["reverse"] == 3


def test_error_runs_bridge():
    e = np.zeros(60)
    scored = np.ones(60, bool)
    e[10:20] = 1.0
    scored[20:28] = False  # 8 unscored samples are bridged
    e[28:30] = 1.0
    e[40:45] = 1.0
    scored[45:54] = False  # 9 are not
    e[54:56] = 1.0
    assert sc.error_runs(e, scored, 0.2) == [Region(10, 30), Region(40, 45), Region(54, 56)]


def test_region_rule_arithmetic():
    cfg = sc.ImputationConfig()
    e = np.zeros(2000)
    e[100:181] = 1.0
    runs = sc.error_runs(e, np.ones(2000, bool), cfg.threshold)
    assert runs == [Region(100, 181)]
    assert sc.postprocess_regions(runs, 2000, cfg) == [Region(28, 253)]
    assert sc.postprocess_regions([Region(100, 150)], 2000, cfg) == []
    two = [Region(100, 181), Region(581, 662)]
    assert sc.postprocess_regions(two, 2000, cfg) == [Region(28, 734)]
    assert sc.enlarge([Region(10, 20)], 72, 50) == [Region(0, 50)]
    assert sc.enlarge([Region(100, 200)], 72, 1000, per_side=False) == [Region(64, 236)]


def test_merge_idempotent():
    rs = [Region(0, 10), Region(100, 300), Region(700, 710), Region(1500, 1600)]
    once = sc.merge_close(sc.discard_short(rs, 50), 500)
    assert sc.merge_close(sc.discard_short(once, 50), 500) == once


def test_clean_lap_has_no_regions(clean_lap, vehicle, track):
    assert sc.find_implausible_regions(clean_lap, vehicle, track) == []


def test_fault_is_detected(clean_lap, vehicle, track):
    fault = st.random_fault(clean_lap, vehicle, track, 1.5, np.random.default_rng(0), span=300)
    bad = st.inject_miscalibration(clean_lap, fault)
    found = sc.find_implausible_regions(bad, vehicle, track)
    r = fault.regions[0]
    assert any(f.start <= r.start and r.end <= f.end for f in found)


def test_imputation_config_validation():
    with pytest.raises(ValueError):
        sc.ImputationConfig(plan=sc.PlanSpec(4))
    with pytest.raises(ValueError):
        sc.ImputationConfig(threshold=0.0)


def _imp(channels="all", **kw):
    return sc.ImputationConfig(candidates=2, channels=ChannelMask.parse(channels), plan=sc.PlanSpec(3, NAIVE), **kw)


def test_impute_empty_regions_is_identity(tiny_model, small_dataset):
    lap = small_dataset.laps[0]
    veh = small_dataset.vehicles[lap.vehicle_id]
    out, rep = sc.impute_lap(tiny_model, lap, [], veh, small_dataset.track, _imp())
    assert np.array_equal(out.samples, lap.samples)
    assert rep["chunks"] == []


def test_impute_torques_only(tiny_model, small_dataset):
    lap = small_dataset.laps[0]
    veh = small_dataset.vehicles[lap.vehicle_id]
    regions = [Region(100, 140), Region(300, 330)]
    out, rep = sc.impute_lap(tiny_model, lap, regions, veh, small_dataset.track, _imp("torques"))
    assert np.array_equal(out.samples[:, [SPEED, SWA]], lap.samples[:, [SPEED, SWA]])
    outside = np.ones(len(lap), bool)
    for r in regions:
        outside[r.start : r.end] = False
    assert np.array_equal(out.samples[outside], lap.samples[outside])
    assert not np.array_equal(out.samples[100:140], lap.samples[100:140])
    assert rep["continuity"]["start"][SPEED] == 0 and rep["continuity"]["end"][SWA] == 0


def test_impute_region_at_lap_end(tiny_model, small_dataset):
    lap = small_dataset.laps[1]
    veh = small_dataset.vehicles[lap.vehicle_id]
    out, _ = sc.impute_lap(tiny_model, lap, [Region(500, 512)], veh, small_dataset.track, _imp())
    assert len(out) == len(lap)
    assert np.array_equal(out.samples[:500], lap.samples[:500])


def test_impute_rejects_bad_regions(tiny_model, small_dataset):
    lap = small_dataset.laps[0]
    veh = small_dataset.vehicles[lap.vehicle_id]
    with pytest.raises(ValidationError):
        sc.impute_lap(tiny_model, lap, [Region(10, 50)], veh, small_dataset.track, _imp())
    with pytest.raises(ValidationError):
        sc.impute_lap(tiny_model, lap, [Region(100, 150), Region(140, 160)], veh, small_dataset.track, _imp())


def test_impute_is_deterministic(tiny_model, small_dataset):
    lap = small_dataset.laps[0]
    veh = small_dataset.vehicles[lap.vehicle_id]
    a, _ = sc.impute_lap(tiny_model, lap, [Region(200, 260)], veh, small_dataset.track, _imp())
    b, _ = sc.impute_lap(tiny_model, lap, [Region(200, 260)], veh, small_dataset.track, _imp())
    assert np.array_equal(a.samples, b.samples)


def test_generate_windows_summary(tiny_model, small_dataset):
    res = sc.generate_windows(tiny_model, small_dataset, sc.GenerationConfig(1, sc.PlanSpec(2)), max_windows=5)
    s = res.summary()
    assert s["windows"] == 5 and s["mse_acc95"] is None
    assert res.generated.shape == res.truth.shape == (5, 32, 4)


def test_dataset_mse_pools_samples(clean_lap, vehicle, track):
    v = {vehicle.vehicle_id: vehicle}
    assert sc.dataset_mse_acc([clean_lap, clean_lap], v, track) <= 1e-8
    assert sc.dataset_mse_acc([], v, track) is None


def test_lap_metrics_keys(clean_lap, vehicle, track):
    from candiff.metrics import build_envelope

    m = sc.lap_metrics(clean_lap, vehicle, track, build_envelope([clean_lap], vehicle.vehicle_id))
    assert m["mse_acc95"] is None and m["tam_speed"] == 0.0
    assert dataclasses.is_dataclass(sc.GenerationConfig())
