import numpy as np
import pytest

from candiff import metrics
from candiff.datamodel import SPEED, SWA, TORQUE_LEFT, TORQUE_RIGHT
from candiff.windowing import (
    ScalarStats,
    assemble_conditioning,
    lap_positions,
    pcsp_pad,
    position_embedding,
    segment,
    window_count,
)


def test_pcsp_pad_is_constant_speed_consistent(clean_lap, vehicle, track):
    p = pcsp_pad(clean_lap, vehicle, track, 512)
    assert len(p) == len(clean_lap) + 512
    assert p.indicator[:512].all() and not p.indicator[512:].any()
    assert np.all(p.samples[:512, SPEED] == clean_lap.samples[0, SPEED])
    assert np.all(p.samples[:512, SWA] == clean_lap.samples[0, SWA])
    assert np.array_equal(p.real, clean_lap.samples)
    theta = np.full(512, track.grade_angle[0])
    assert np.abs(metrics.predicted_accel(p.samples[:512], vehicle, theta)).max() <= 1e-8
    assert np.array_equal(p.samples[:512, TORQUE_LEFT], p.samples[:512, TORQUE_RIGHT])


def test_pcsp_pad_noise_is_seeded(clean_lap, vehicle, track):
    a = pcsp_pad(clean_lap, vehicle, track, 64, (0.05, 5, 5, 0.2), seed=3)
    b = pcsp_pad(clean_lap, vehicle, track, 64, (0.05, 5, 5, 0.2), seed=3)
    c = pcsp_pad(clean_lap, vehicle, track, 64, (0.05, 5, 5, 0.2), seed=4)
    assert np.array_equal(a.samples, b.samples) and not np.array_equal(a.samples, c.samples)
    assert np.array_equal(a.real, clean_lap.samples)


@pytest.mark.parametrize("length, w, stride, expect", [(12554 + 512, 1024, 512, 24), (2560, 1024, 512, 4), (100, 1024, 512, 0)])
def test_window_count(length, w, stride, expect):
    assert window_count(length, w, stride) == expect


def test_segment_halves():
    x = np.arange(40, dtype=float)[:, None].repeat(4, axis=1)
    wins = segment(x, 16, 8)
    assert len(wins) == window_count(40, 16, 8) == 4
    assert wins[1].start == 8
    assert np.array_equal(wins[1].past[:, 0], np.arange(8, 16))
    assert np.array_equal(wins[1].future[:, 0], np.arange(16, 24))
    with pytest.raises(ValueError):
        segment(x, 15, 8)


def test_position_embedding():
    e = position_embedding(np.array([0.0, 5.0]), 16)
    assert e.shape == (2, 16)
    assert np.all(e[0, 0::2] == 0) and np.all(e[0, 1::2] == 1)
    assert e[1, 0] == pytest.approx(np.sin(5.0))
    assert e[1, 3] == pytest.approx(np.cos(5.0 / 10000 ** (2 / 16)))
    with pytest.raises(ValueError):
        position_embedding([1.0], 5)


def test_lap_positions_clip():
    pos = lap_positions(0, 8, 4, 10)
    assert pos.tolist() == [0, 0, 0, 0, 0, 1, 2, 3]
    assert lap_positions(10, 6, 4, 10).tolist() == [6, 7, 8, 9, 9, 9]


def test_conditioning_layout(clean_lap, vehicle, track):
    p = pcsp_pad(clean_lap, vehicle, track, 512)
    stats = ScalarStats.fit([vehicle], track)
    cd = assemble_conditioning(256, track, vehicle, p.indicator, 16, 1024, 512, stats)
    assert cd.timeseries.shape == (1024, 18)
    assert np.array_equal(cd.timeseries[:, 1], p.indicator[256:1280])
    pos = lap_positions(256, 1024, 512, len(track))
    np.testing.assert_allclose(cd.timeseries[:, 0], (track.elevation[pos] - stats.elevation_mean) / stats.elevation_std)
    np.testing.assert_allclose(cd.timeseries[:, 2:], position_embedding(pos, 16))
    again = assemble_conditioning(256, track, vehicle, None, 16, 1024, 512, stats)
    assert np.array_equal(again.timeseries, cd.timeseries)


def test_scalar_stats_roundtrip(vehicle, track):
    s = ScalarStats.fit([vehicle, vehicle], track)
    assert ScalarStats.from_dict(s.to_dict()) == s
    assert s.scalar_std == (1.0, 1.0, 1.0)
