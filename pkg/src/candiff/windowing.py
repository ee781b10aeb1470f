"""Lead-in padding, window segmentation and conditioning assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import metrics
from .datamodel import SPEED, SWA, TORQUE_LEFT, TORQUE_RIGHT, Lap, Track, ValidationError, VehicleParams

WINDOW = 1024
PAD = 512
D_POS = 16


@dataclass(frozen=True, eq=False)
class PaddedLap:
    samples: np.ndarray
    indicator: np.ndarray
    P: int
    vehicle_id: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def real(self) -> np.ndarray:
        return self.samples[self.P :]


@dataclass(frozen=True, eq=False)
class Window:
    start: int
    past: np.ndarray
    future: np.ndarray

    @property
    def w(self) -> int:
        return len(self.past) + len(self.future)

    @property
    def samples(self) -> np.ndarray:
        return np.concatenate([self.past, self.future])


@dataclass(frozen=True, eq=False)
class Conditioning:
    """``timeseries`` is ``(w, 2 + d_pos)``: elevation, padding indicator, position embedding."""

    timeseries: np.ndarray
    scalars: np.ndarray


@dataclass(frozen=True)
class ScalarStats:
    """Standardization constants for conditioning inputs, stored with the model."""

    scalar_mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scalar_std: tuple[float, float, float] = (1.0, 1.0, 1.0)
    elevation_mean: float = 0.0
    elevation_std: float = 1.0

    @classmethod
    def fit(cls, vehicles: Sequence[VehicleParams], track: Track) -> "ScalarStats":
        x = np.stack([v.scalars() for v in vehicles])
        std = x.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        e_std = float(track.elevation.std()) or 1.0
        return cls(tuple(map(float, x.mean(axis=0))), tuple(map(float, std)), float(track.elevation.mean()), e_std)

    def to_dict(self) -> dict:
        return {
            "scalar_mean": list(self.scalar_mean),
            "scalar_std": list(self.scalar_std),
            "elevation_mean": self.elevation_mean,
            "elevation_std": self.elevation_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalarStats":
        return cls(tuple(d["scalar_mean"]), tuple(d["scalar_std"]), d["elevation_mean"], d["elevation_std"])


def pcsp_pad(lap: Lap, vehicle: VehicleParams, track: Track, P: int = PAD, noise_sigma=0.0,
             seed: int | None = None) -> PaddedLap:
    """Prepend ``P`` samples of physically consistent same-padding.

    Speed and steering angle repeat the first real sample; each torque channel
    holds the constant-speed torque at the first speed and first road angle.
    ``noise_sigma`` (scalar or per channel) adds Gaussian noise to the pad.
    """
    if P < 0:
        raise ValueError("pad length must be >= 0")
    first = lap.samples[0]
    pad = np.empty((P, 4))
    pad[:, SPEED] = first[SPEED]
    pad[:, SWA] = first[SWA]
    tq = metrics.zero_accel_torque(first[SPEED], track.grade_angle[0], vehicle)
    pad[:, TORQUE_LEFT] = tq
    pad[:, TORQUE_RIGHT] = tq
    sig = np.broadcast_to(np.asarray(noise_sigma, dtype=np.float64), (4,))
    if P and sig.any():
        rng = np.random.default_rng(seed)
        pad = pad + rng.standard_normal(pad.shape) * sig
        pad[:, SPEED] = np.maximum(pad[:, SPEED], 0.0)
    samples = np.concatenate([pad, lap.samples])
    indicator = np.zeros(len(samples))
    indicator[:P] = 1.0
    return PaddedLap(samples, indicator, P, lap.vehicle_id)


def window_count(length: int, w: int, stride: int) -> int:
    return 0 if length < w else (length - w) // stride + 1


def segment(padded, w: int = WINDOW, stride: int = PAD) -> list[Window]:
    """Windows at ``i = 0, s, 2s, ...`` while ``i + w <= length``, split into halves."""
    x = padded.samples if isinstance(padded, PaddedLap) else np.asarray(padded)
    if w % 2 or w > len(x) or stride < 1:
        raise ValueError(f"invalid segmentation w={w} stride={stride} length={len(x)}")
    h = w // 2
    return [Window(i, x[i : i + h], x[i + h : i + w]) for i in range(0, len(x) - w + 1, stride)]


def position_embedding(t, d_pos: int = D_POS) -> np.ndarray:
    """Sinusoidal embedding; column ``2k`` is ``sin(t / 10000**(2k/d))``, ``2k+1`` the cosine."""
    if d_pos % 2:
        raise ValueError("d_pos must be even")
    t = np.asarray(t, dtype=np.float64)
    freq = 1.0 / 10000.0 ** (np.arange(0, d_pos, 2) / d_pos)
    ang = t[..., None] * freq
    out = np.empty(t.shape + (d_pos,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def lap_positions(start: int, w: int, P: int, T: int) -> np.ndarray:
    """Lap index for each padded position of a window; pad maps to 0, overrun to ``T-1``."""
    return np.clip(np.arange(start, start + w) - P, 0, T - 1)


def assemble_conditioning(start: int, track: Track, vehicle: VehicleParams, indicator=None, d_pos: int = D_POS,
                          w: int = WINDOW, P: int = PAD, stats: ScalarStats | None = None) -> Conditioning:
    """Conditioning for the window starting at padded position ``start``.

    ``indicator`` is the padded lap's indicator series; positions past its end
    count as real data.
    """
    stats = stats or ScalarStats()
    T = len(track)
    pos = lap_positions(start, w, P, T)
    if indicator is None:
        ind = (np.arange(start, start + w) < P).astype(np.float64)
    else:
        indicator = np.asarray(indicator)
        ind = np.zeros(w)
        have = indicator[start : start + w]
        ind[: len(have)] = have
    if len(ind) != w:
        raise ValidationError("indicator window misaligned")
    elev = (track.elevation[pos] - stats.elevation_mean) / stats.elevation_std
    ts = np.column_stack([elev, ind, position_embedding(pos, d_pos)])
    scalars = (vehicle.scalars() - np.asarray(stats.scalar_mean)) / np.asarray(stats.scalar_std)
    return Conditioning(ts, scalars)
