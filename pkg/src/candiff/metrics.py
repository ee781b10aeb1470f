"""Physical-plausibility and track-adherence measures.

Acceleration is measured from the speed channel and predicted from the
driveshaft torques via a longitudinal force balance; their disagreement on
non-braking samples is the main quality score.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .datamodel import SPEED, SWA, TORQUE_LEFT, TORQUE_RIGHT, Lap, Region, Track, VehicleParams, ValidationError

G = 9.81
RHO_AIR = 1.225


@dataclass(frozen=True)
class MetricConfig:
    half_width: int = 4
    min_speed: float = 0.1
    sign_deadband: float = 1e-3
    # a_v = dv / (2 * dt) with dt = 1 / mean(v), instead of the exact elapsed time
    literal_dt: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_CONFIG = MetricConfig()


def smooth(series, half_width: int) -> np.ndarray:
    """Centered moving average of width ``2*half_width+1`` along axis 0.

    The window is truncated at both ends, so the output has the input's length.
    """
    x = np.asarray(series, dtype=np.float64)
    if half_width < 0:
        raise ValueError("half_width must be >= 0")
    if half_width == 0 or len(x) == 0:
        return x.copy()
    n = len(x)
    c = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - half_width, 0)
    hi = np.minimum(idx + half_width + 1, n)
    count = (hi - lo).reshape((-1,) + (1,) * (x.ndim - 1))
    return (c[hi] - c[lo]) / count


def measured_accel(speed, spacing: float, min_speed: float = 0.1, literal_dt: bool = False) -> np.ndarray:
    """Acceleration from a distance-sampled speed series.

    The time to travel ``2*spacing`` meters at the mean of ``v[t]`` and
    ``v[t+2]`` is used as the step. Positions where either speed is below
    ``min_speed`` are NaN. The last two positions repeat the last computed
    value.
    """
    v = np.asarray(speed, dtype=np.float64)
    n = len(v)
    if n < 3:
        return np.full(n, np.nan)
    v0, v2 = v[:-2], v[2:]
    vbar = 0.5 * (v0 + v2)
    if literal_dt:
        a = (v2 - v0) * vbar / 2.0
    else:
        a = (v2 - v0) * vbar / (2.0 * spacing)
    a = np.where((v0 < min_speed) | (v2 < min_speed), np.nan, a)
    return np.concatenate([a, [a[-1], a[-1]]])


def resistive_force(speed, theta, vehicle: VehicleParams) -> np.ndarray:
    """Downhill + aerodynamic + rolling force in N (positive opposes motion)."""
    v = np.asarray(speed, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    m = vehicle.mass
    f_down = m * G * np.sin(theta)
    f_wind = 0.5 * RHO_AIR * vehicle.cwa * v**2
    f_roll = vehicle.rolling_coeff * m * G * np.cos(theta)
    return f_down + f_wind + f_roll


def predicted_accel(samples, vehicle: VehicleParams, theta) -> np.ndarray:
    """Newton's second law from torques: ``(F_torques - F_resist) / m``.

    ``samples`` is an ``(n, 4)`` array (already smoothed if desired) and
    ``theta`` the per-sample road angle in radians.
    """
    s = np.asarray(samples, dtype=np.float64)
    f_torque = (s[:, TORQUE_LEFT] + s[:, TORQUE_RIGHT]) / vehicle.wheel_radius
    return (f_torque - resistive_force(s[:, SPEED], theta, vehicle)) / vehicle.mass


def zero_accel_torque(speed, theta, vehicle: VehicleParams) -> np.ndarray:
    """Per-channel torque that holds ``speed`` constant (split equally left/right)."""
    return 0.5 * vehicle.wheel_radius * resistive_force(speed, theta, vehicle)


def braking_mask(samples) -> np.ndarray:
    s = samples.samples if isinstance(samples, Lap) else np.asarray(samples)
    return 0.5 * (s[:, TORQUE_LEFT] + s[:, TORQUE_RIGHT]) < 0


@dataclass(frozen=True)
class AccelPair:
    a_v: np.ndarray
    a_torque: np.ndarray
    braking: np.ndarray
    valid: np.ndarray

    @property
    def scored(self) -> np.ndarray:
        """Valid, non-braking samples: the ones entering MSE_acc."""
        return self.valid & ~self.braking

    def sq_error(self) -> np.ndarray:
        return (self.a_v - self.a_torque) ** 2

    def __getitem__(self, sl) -> "AccelPair":
        return AccelPair(self.a_v[sl], self.a_torque[sl], self.braking[sl], self.valid[sl])


def accel_pair(samples, vehicle: VehicleParams, theta, spacing: float, config: MetricConfig = DEFAULT_CONFIG) -> AccelPair:
    """Smooth, then compute measured/predicted acceleration and the braking mask.

    Speed is smoothed as ``sqrt(smooth(v**2))``. The force balance is linear
    in torque and ``v**2``, and with the exact elapsed time so is ``a_v``, so
    smoothing in that domain commutes with both accelerations; the predicted
    acceleration is therefore the smoothed per-sample prediction.
    """
    s = np.asarray(samples, dtype=np.float64)
    h = config.half_width
    v_s = np.sqrt(smooth(s[:, SPEED] ** 2, h))
    a_v = measured_accel(v_s, spacing, config.min_speed, config.literal_dt)
    a_t = smooth(predicted_accel(s, vehicle, theta), h)
    torques = smooth(s[:, TORQUE_LEFT : TORQUE_RIGHT + 1], h)
    braking = torques.mean(axis=1) < 0
    valid = np.isfinite(a_v) & np.isfinite(a_t)
    return AccelPair(a_v, a_t, braking, valid)


def lap_accel_pair(lap: Lap, vehicle: VehicleParams, track: Track, config: MetricConfig = DEFAULT_CONFIG) -> AccelPair:
    if len(lap) != len(track):
        raise ValidationError(f"lap length {len(lap)} != track length {len(track)}")
    return accel_pair(lap.samples, vehicle, track.grade_angle, lap.spacing, config)


def mse_from_pair(pair: AccelPair) -> float | None:
    """Mean squared a_v - a_torque over valid non-braking samples, None if there are none."""
    m = pair.scored
    if not m.any():
        return None
    return float(np.mean(pair.sq_error()[m]))


def signs_from_pair(pair: AccelPair, deadband: float = 1e-3, non_braking_only: bool = False) -> float | None:
    m = pair.scored if non_braking_only else pair.valid
    if not m.any():
        return None
    sv = np.where(np.abs(pair.a_v[m]) <= deadband, 0, np.sign(pair.a_v[m]))
    st = np.where(np.abs(pair.a_torque[m]) <= deadband, 0, np.sign(pair.a_torque[m]))
    return float(np.mean(sv == st))


def mse_acc(lap: Lap, vehicle: VehicleParams, track: Track, config: MetricConfig = DEFAULT_CONFIG) -> float | None:
    return mse_from_pair(lap_accel_pair(lap, vehicle, track, config))


def signs_score(lap: Lap, vehicle: VehicleParams, track: Track, config: MetricConfig = DEFAULT_CONFIG) -> float | None:
    """Fraction of valid samples (braking included) where a_v and a_torque share a sign."""
    return signs_from_pair(lap_accel_pair(lap, vehicle, track, config), config.sign_deadband)


def mse_acc95(window_scores: Iterable[float]) -> float:
    """Mean of the window scores after dropping the worst 5 % (rounded up)."""
    scores = np.sort(np.asarray([s for s in window_scores], dtype=np.float64))
    n = len(scores)
    if n < 20:
        raise ValueError(f"MSE_acc95 needs at least 20 windows, got {n}")
    drop = math.ceil(0.05 * n - 1e-9)
    return float(np.mean(scores[: n - drop]))


def window_scores(pair: AccelPair, window: int = 512, stride: int | None = None, start: int = 0) -> list[float]:
    """Per-window MSE_acc over consecutive slices of a precomputed pair; undefined windows are skipped."""
    stride = stride or window
    out = []
    for i in range(start, len(pair.a_v) - window + 1, stride):
        v = mse_from_pair(pair[i : i + window])
        if v is not None:
            out.append(v)
    return out


# ---------------------------------------------------------------------------
# trajectory adherence


@dataclass(frozen=True, eq=False)
class Envelope:
    vehicle_id: str
    speed_min: np.ndarray
    speed_max: np.ndarray
    swa_min: np.ndarray
    swa_max: np.ndarray

    def __len__(self) -> int:
        return len(self.speed_min)


def build_envelope(reference_laps: Sequence[Lap], vehicle_id: str) -> Envelope:
    laps = [lap for lap in reference_laps if lap.vehicle_id == vehicle_id]
    if not laps:
        raise ValueError(f"no reference laps for vehicle {vehicle_id!r}")
    lengths = {len(lap) for lap in laps}
    if len(lengths) != 1:
        raise ValidationError(f"reference laps differ in length: {sorted(lengths)}")
    stack = np.stack([lap.samples for lap in laps])
    return Envelope(
        vehicle_id,
        stack[:, :, SPEED].min(axis=0),
        stack[:, :, SPEED].max(axis=0),
        stack[:, :, SWA].min(axis=0),
        stack[:, :, SWA].max(axis=0),
    )


def _outside(x, lo, hi) -> np.ndarray:
    return np.maximum(0.0, np.maximum(x - hi, lo - x))


def tam(lap, envelope: Envelope) -> tuple[float, float]:
    """Mean absolute excursion outside the envelope, for speed and swa."""
    s = lap.samples if isinstance(lap, Lap) else np.asarray(lap)
    if len(s) != len(envelope):
        raise ValidationError(f"lap length {len(s)} != envelope length {len(envelope)}")
    sp = _outside(s[:, SPEED], envelope.speed_min, envelope.speed_max)
    sw = _outside(s[:, SWA], envelope.swa_min, envelope.swa_max)
    return float(sp.mean()), float(sw.mean())


# ---------------------------------------------------------------------------
# imputation boundaries


def boundary_continuity(original, imputed, regions: Sequence[Region]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean change in boundary jump size, at region starts and ends.

    At a boundary position ``t`` the contribution is
    ``| |imputed[t] - imputed[t-1]| - |original[t] - original[t-1]| |``;
    starts use ``t = region.start``, ends ``t = region.end``.
    """
    o = original.samples if isinstance(original, Lap) else np.asarray(original, dtype=np.float64)
    m = imputed.samples if isinstance(imputed, Lap) else np.asarray(imputed, dtype=np.float64)
    if o.shape != m.shape:
        raise ValidationError(f"shape mismatch {o.shape} vs {m.shape}")
    n = len(o)
    if not regions:
        z = np.zeros(o.shape[1])
        return z, z.copy()

    def jump(t):
        return np.abs(np.abs(m[t] - m[t - 1]) - np.abs(o[t] - o[t - 1]))

    starts, ends = [], []
    for r in regions:
        if r.start <= 0 or r.end >= n:
            raise ValidationError(f"region [{r.start}, {r.end}) touches the lap boundary (length {n})")
        starts.append(jump(r.start))
        ends.append(jump(r.end))
    return np.mean(starts, axis=0), np.mean(ends, axis=0)


def window_difference(samples, window: int = 512, start: int = 0) -> float:
    """Mean absolute jump across consecutive window seams, averaged over channels."""
    s = np.asarray(samples, dtype=np.float64)
    seams = np.arange(start + window, len(s), window)
    if len(seams) == 0:
        return 0.0
    return float(np.mean(np.abs(s[seams] - s[seams - 1])))
