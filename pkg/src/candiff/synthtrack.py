"""Synthetic, physics-consistent laps standing in for recorded CAN data.

Speeds come from a curvature-limited driver model; torques are obtained by
inverting the same force balance that :mod:`candiff.metrics` uses, so a
noiseless lap is an exact oracle for the acceleration scores.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import metrics
from .datamodel import (
    DEFAULT_SPACING,
    DEFAULT_T,
    MAX_GRADE,
    SPEED,
    TORQUE_LEFT,
    TORQUE_RIGHT,
    Dataset,
    Lap,
    Region,
    Track,
    ValidationError,
    VehicleParams,
)

MAX_CURVATURE = 0.05
END_PIN = 16


@dataclass(frozen=True)
class DriverParams:
    max_accel: float = 2.5
    max_decel: float = 5.0
    lateral_accel_limit: float = 6.0
    top_speed: float = 36.0
    wheelbase: float = 2.8
    steering_ratio: float = 15.0
    engine_drag_torque: float = -90.0

    def __post_init__(self):
        for name in ("max_accel", "max_decel", "lateral_accel_limit", "top_speed", "wheelbase", "steering_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.engine_drag_torque < 0:
            raise ValueError("engine_drag_torque must be negative")


@dataclass(frozen=True)
class FaultSpec:
    regions: tuple[Region, ...]
    gain: float

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(sorted(self.regions)))
        if not self.gain > 0 or self.gain == 1:
            raise ValueError(f"fault gain must be positive and != 1, got {self.gain}")
        for a, b in zip(self.regions, self.regions[1:]):
            if b.start < a.end:
                raise ValidationError(f"fault regions overlap: [{a.start},{a.end}) and [{b.start},{b.end})")


def make_track(seed: int, T: int = DEFAULT_T, spacing: float = DEFAULT_SPACING) -> Track:
    """Standardized sinusoidal elevation plus Gaussian-bump curvature, straight at both ends."""
    if T < 64:
        raise ValueError("track needs at least 64 samples")
    rng = np.random.default_rng(seed)
    s = np.arange(T) * spacing
    length = T * spacing

    n_sin = int(rng.integers(3, 7))
    wavelengths = rng.uniform(length / 4, 2 * length, n_sin)
    amps = rng.uniform(0.3, 1.0, n_sin)
    phases = rng.uniform(0, 2 * np.pi, n_sin)
    while True:
        raw = (amps[:, None] * np.sin(2 * np.pi * s[None, :] / wavelengths[:, None] + phases[:, None])).sum(0)
        elevation = (raw - raw.mean()) / raw.std()
        if np.max(np.abs(np.diff(elevation))) / spacing < 0.9 * MAX_GRADE:
            break
        wavelengths = wavelengths * 1.5

    curvature = np.zeros(T)
    n_bumps = max(1, int(round(length / 250)))
    centers = rng.uniform(0.12 * length, 0.88 * length, n_bumps)
    widths = rng.uniform(8.0, 40.0, n_bumps)
    heights = rng.uniform(0.004, MAX_CURVATURE, n_bumps) * rng.choice([-1.0, 1.0], n_bumps)
    for c, w, h in zip(centers, widths, heights):
        curvature += h * np.exp(-0.5 * ((s - c) / w) ** 2)
    peak = np.max(np.abs(curvature))
    if peak > MAX_CURVATURE:
        curvature *= MAX_CURVATURE / peak
    return Track(elevation, curvature, spacing)


def _box(x: np.ndarray, half: int) -> np.ndarray:
    if half <= 0:
        return x
    k = np.ones(2 * half + 1) / (2 * half + 1)
    return np.convolve(np.pad(x, half, mode="edge"), k, mode="valid")


def speed_profile(track: Track, driver: DriverParams, rng: np.random.Generator | None = None,
                  ramp_half: int = 60) -> np.ndarray:
    """Squared-speed profile along the track (m^2/s^2).

    Curvature-limited target speed, a forward pass capped at ``max_accel``, a
    backward pass capped at ``max_decel``, then two box passes over ``v**2``
    to bound jerk. Working in ``v**2`` makes constant acceleration linear.
    """
    ds = track.spacing
    k = np.abs(track.curvature)
    with np.errstate(divide="ignore", over="ignore"):
        v_target = np.minimum(driver.top_speed, np.sqrt(driver.lateral_accel_limit / k))
    if rng is not None:
        s = np.arange(len(k)) * ds
        taper = np.sin(np.pi * np.arange(len(k)) / (len(k) - 1)) ** 2
        phase = rng.uniform(0, 2 * np.pi)
        v_target = v_target * (1 + 0.03 * taper * np.sin(2 * np.pi * s / rng.uniform(300, 900) + phase))
    u_target = v_target**2
    u = u_target.copy()
    step_up = 2 * driver.max_accel * ds
    step_down = 2 * driver.max_decel * ds
    for t in range(1, len(u)):
        u[t] = min(u_target[t], u[t - 1] + step_up)
    for t in range(len(u) - 2, -1, -1):
        u[t] = min(u[t], u[t + 1] + step_down)
    u = _box(_box(u, ramp_half), ramp_half)
    # constant speed at both ends keeps the truncated smoothing windows exact
    pin = min(END_PIN, len(u) // 4)
    u[:pin] = u[pin]
    u[-pin:] = u[-pin - 1]
    return u


def simulate_lap(track: Track, vehicle: VehicleParams, driver: DriverParams, seed: int | None = None) -> Lap:
    """Noiseless lap whose torques satisfy the force balance exactly on non-braking samples.

    Where the required torque is below twice the engine drag the torque
    channels are clamped to ``engine_drag_torque``: the service brakes act
    there and are invisible to driveshaft sensors.
    """
    rng = np.random.default_rng(seed) if seed is not None else None
    u = speed_profile(track, driver, rng)
    v = np.sqrt(u)
    ds = track.spacing
    a = (u[2:] - u[:-2]) / (4 * ds)
    a = np.concatenate([a, [a[-1], a[-1]]])
    theta = track.grade_angle
    total = vehicle.wheel_radius * (vehicle.mass * a + metrics.resistive_force(v, theta, vehicle))
    per_side = 0.5 * total
    per_side = np.where(total < 2 * driver.engine_drag_torque, driver.engine_drag_torque, per_side)
    swa = driver.steering_ratio * np.degrees(np.arctan(driver.wheelbase * track.curvature))
    samples = np.column_stack([v, per_side, per_side, swa])
    return Lap(samples, vehicle.vehicle_id, ds)


def inject_noise(lap: Lap, sigma_per_channel: Sequence[float], seed: int) -> Lap:
    sig = np.asarray(sigma_per_channel, dtype=np.float64)
    if sig.shape != (4,) or (sig < 0).any():
        raise ValueError("need four non-negative sigmas")
    if not sig.any():
        return lap
    rng = np.random.default_rng(seed)
    out = lap.samples + rng.standard_normal(lap.samples.shape) * sig
    out[:, SPEED] = np.maximum(out[:, SPEED], 0.0)
    return lap.replace(out)


def inject_miscalibration(lap: Lap, fault: FaultSpec) -> Lap:
    """Scale both torque channels by ``fault.gain`` inside the fault regions."""
    if not fault.regions:
        return lap
    out = lap.samples.copy()
    for r in fault.regions:
        r.check_bounds(len(lap))
        out[r.start : r.end, TORQUE_LEFT : TORQUE_RIGHT + 1] *= fault.gain
    return lap.replace(out)


@dataclass
class SynthConfig:
    n_vehicles: int = 8
    laps_per_vehicle: int | list[int] | None = None
    total_laps: int = 66
    T: int = DEFAULT_T
    spacing: float = DEFAULT_SPACING
    sigmas: tuple[float, float, float, float] = (0.05, 8.0, 8.0, 0.3)
    mass_range: tuple[float, float] = (1200.0, 2200.0)
    cwa_range: tuple[float, float] = (0.55, 0.85)
    wheel_perimeter_range: tuple[float, float] = (1.9, 2.2)
    rolling_coeff: float = 0.012
    driver: DriverParams = field(default_factory=DriverParams)
    driver_jitter: float = 0.08
    fault_fraction: float = 0.0
    fault_gain: float = 1.5
    seed: int = 0

    def lap_counts(self) -> list[int]:
        if self.n_vehicles < 1:
            raise ValueError("n_vehicles must be >= 1")
        if isinstance(self.laps_per_vehicle, int):
            counts = [self.laps_per_vehicle] * self.n_vehicles
        elif self.laps_per_vehicle is not None:
            counts = list(self.laps_per_vehicle)
            if len(counts) != self.n_vehicles:
                raise ValueError("laps_per_vehicle list must have one entry per vehicle")
        else:
            base, extra = divmod(self.total_laps, self.n_vehicles)
            counts = [base + (1 if i < extra else 0) for i in range(self.n_vehicles)]
        if min(counts) < 1:
            raise ValueError("every vehicle needs at least one lap")
        return counts

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lap_counts"] = self.lap_counts()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "driver" in d and isinstance(d["driver"], dict):
            d["driver"] = DriverParams(**d["driver"])
        for key in ("sigmas", "mass_range", "cwa_range", "wheel_perimeter_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def jitter_driver(driver: DriverParams, rng: np.random.Generator, scale: float) -> DriverParams:
    def j(x):
        return float(x * (1 + rng.uniform(-scale, scale)))

    return replace(
        driver,
        max_accel=j(driver.max_accel),
        max_decel=j(driver.max_decel),
        lateral_accel_limit=j(driver.lateral_accel_limit),
        top_speed=j(driver.top_speed),
    )


def random_fault(lap: Lap, vehicle: VehicleParams, track: Track, gain: float, rng: np.random.Generator,
                 span: int = 500) -> FaultSpec:
    """A single fault region over the most strongly accelerating ``span`` samples, jittered."""
    pair = metrics.lap_accel_pair(lap, vehicle, track)
    a = np.where(pair.scored, np.maximum(pair.a_torque, 0.0), 0.0)
    span = min(span, len(lap) // 2)
    c = np.convolve(a, np.ones(span), mode="valid")
    lo = max(1, len(lap) // 8)
    start = lo + int(np.argmax(c[lo : len(c) - 1])) if len(c) - 1 > lo else 1
    return FaultSpec((Region(start, start + span),), gain)


def make_dataset(config: SynthConfig | None = None, seed: int | None = None) -> Dataset:
    """Track, vehicles and laps; fully determined by the config and seed."""
    config = config or SynthConfig()
    if seed is not None:
        config = replace(config, seed=seed)
    counts = config.lap_counts()
    root = np.random.SeedSequence(config.seed)
    track_seq, veh_seq, lap_seq = root.spawn(3)
    track = make_track(int(track_seq.generate_state(1)[0]), config.T, config.spacing)
    vrng = np.random.default_rng(veh_seq)
    vehicles = {}
    for i in range(config.n_vehicles):
        vid = f"v{i:02d}"
        vehicles[vid] = VehicleParams(
            mass=float(vrng.uniform(*config.mass_range)),
            cwa=float(vrng.uniform(*config.cwa_range)),
            wheel_perimeter=float(vrng.uniform(*config.wheel_perimeter_range)),
            rolling_coeff=config.rolling_coeff,
            vehicle_id=vid,
        )
    laps = []
    lap_seeds = lap_seq.spawn(sum(counts))
    k = 0
    for vid, n in zip(vehicles, counts):
        for _ in range(n):
            rng = np.random.default_rng(lap_seeds[k])
            k += 1
            driver = jitter_driver(config.driver, rng, config.driver_jitter)
            lap = simulate_lap(track, vehicles[vid], driver, int(rng.integers(2**31)))
            if config.fault_fraction > 0 and rng.uniform() < config.fault_fraction:
                lap = inject_miscalibration(lap, random_fault(lap, vehicles[vid], track, config.fault_gain, rng))
            lap = inject_noise(lap, config.sigmas, int(rng.integers(2**31)))
            laps.append(lap)
    return Dataset(track, vehicles, laps, config.to_dict())
