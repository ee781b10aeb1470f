"""Core domain types and CSV/JSON file I/O.

Channel order is fixed everywhere as (speed, torque_left, torque_right, swa).
Units: speed in m/s, torques in N*m, steering wheel angle in degrees,
elevation in meters, curvature in 1/m. Samples are taken per ``spacing``
meters of track, not per unit of time.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHANNELS = ("speed", "torque_left", "torque_right", "swa")
SPEED, TORQUE_LEFT, TORQUE_RIGHT, SWA = range(4)
DEFAULT_T = 12554
DEFAULT_SPACING = 0.5
MAX_GRADE = 0.3

LAP_HEADER = ("idx",) + CHANNELS
TRACK_HEADER = ("idx", "elevation", "curvature")


class ValidationError(ValueError):
    """Base class for data that violates a type invariant."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (first offending index {index})")
        self.index = index


class ParseError(ValidationError):
    pass


class ColumnError(ValidationError):
    pass


class NonFiniteError(ValidationError):
    pass


class LengthError(ValidationError):
    pass


class RangeError(ValidationError):
    pass


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _first(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0])


@dataclass(frozen=True, eq=False)
class Lap:
    """One traversal of the track as a ``(T, 4)`` array of sensor readings."""

    samples: np.ndarray
    vehicle_id: str = ""
    spacing: float = DEFAULT_SPACING
    expected_length: int | None = field(default=None, repr=False)

    def __post_init__(self):
        s = _frozen(self.samples)
        object.__setattr__(self, "samples", s)
        if s.ndim != 2 or s.shape[1] != 4:
            raise LengthError(f"lap samples must have shape (T, 4), got {s.shape}")
        if self.expected_length is not None and len(s) != self.expected_length:
            raise LengthError(f"lap has {len(s)} samples, expected {self.expected_length}")
        bad = ~np.isfinite(s).all(axis=1)
        if bad.any():
            raise NonFiniteError("non-finite value in lap", _first(bad))
        neg = s[:, SPEED] < 0
        if neg.any():
            raise RangeError("negative speed in lap", _first(neg))
        if not self.spacing > 0:
            raise RangeError(f"spacing must be positive, got {self.spacing}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def speed(self) -> np.ndarray:
        return self.samples[:, SPEED]

    @property
    def torques(self) -> np.ndarray:
        return self.samples[:, TORQUE_LEFT : TORQUE_RIGHT + 1]

    @property
    def swa(self) -> np.ndarray:
        return self.samples[:, SWA]

    def replace(self, samples: np.ndarray) -> "Lap":
        return Lap(samples, self.vehicle_id, self.spacing)


@dataclass(frozen=True, eq=False)
class Track:
    elevation: np.ndarray
    curvature: np.ndarray
    spacing: float = DEFAULT_SPACING

    def __post_init__(self):
        e = _frozen(self.elevation)
        k = _frozen(self.curvature)
        object.__setattr__(self, "elevation", e)
        object.__setattr__(self, "curvature", k)
        if e.ndim != 1 or e.shape != k.shape:
            raise LengthError(f"elevation {e.shape} and curvature {k.shape} must be equal-length 1-D")
        for name, arr in (("elevation", e), ("curvature", k)):
            bad = ~np.isfinite(arr)
            if bad.any():
                raise NonFiniteError(f"non-finite {name}", _first(bad))
        if not self.spacing > 0:
            raise RangeError(f"spacing must be positive, got {self.spacing}")
        steep = np.abs(np.diff(e)) / self.spacing >= MAX_GRADE
        if steep.any():
            raise RangeError(f"grade exceeds {MAX_GRADE}", _first(steep))

    def __len__(self) -> int:
        return len(self.elevation)

    @property
    def grade_angle(self) -> np.ndarray:
        """Road angle per sample, ``atan(d elevation / spacing)``; last value repeated."""
        theta = np.arctan(np.diff(self.elevation) / self.spacing)
        if len(theta) == 0:
            return np.zeros(len(self.elevation))
        return np.append(theta, theta[-1])


@dataclass(frozen=True)
class VehicleParams:
    mass: float
    cwa: float
    wheel_perimeter: float
    rolling_coeff: float = 0.012
    vehicle_id: str = ""

    def __post_init__(self):
        for name in ("mass", "cwa", "wheel_perimeter", "rolling_coeff"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise RangeError(f"vehicle {name} must be finite and positive, got {v}")

    @property
    def wheel_radius(self) -> float:
        return self.wheel_perimeter / (2 * math.pi)

    def scalars(self) -> np.ndarray:
        return np.array([self.mass, self.cwa, self.wheel_perimeter])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        missing = {"mass", "cwa", "wheel_perimeter", "vehicle_id"} - d.keys()
        if missing:
            raise ColumnError(f"vehicle object missing keys {sorted(missing)}")
        return cls(
            mass=float(d["mass"]),
            cwa=float(d["cwa"]),
            wheel_perimeter=float(d["wheel_perimeter"]),
            rolling_coeff=float(d.get("rolling_coeff", 0.012)),
            vehicle_id=str(d["vehicle_id"]),
        )


@dataclass(frozen=True, order=True)
class Region:
    """Half-open index range ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise RangeError(f"invalid region [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def check_bounds(self, length: int) -> None:
        if self.end > length:
            raise RangeError(f"region [{self.start}, {self.end}) exceeds length {length}")


@dataclass(frozen=True)
class ChannelMask:
    speed: bool = True
    torque_left: bool = True
    torque_right: bool = True
    swa: bool = True

    def __post_init__(self):
        if not any(self.as_array()):
            raise ValidationError("channel mask selects no channel")

    def as_array(self) -> np.ndarray:
        return np.array([self.speed, self.torque_left, self.torque_right, self.swa])

    @classmethod
    def parse(cls, name: str) -> "ChannelMask":
        if name == "all":
            return cls()
        if name == "torques":
            return cls(speed=False, swa=False)
        raise ValueError(f"unknown channel selection {name!r} (expected 'all' or 'torques')")


ALL_CHANNELS = ChannelMask()
TORQUE_CHANNELS = ChannelMask(speed=False, swa=False)


# ---------------------------------------------------------------------------
# file I/O


def _read_rows(path: Path, header: Sequence[str]) -> np.ndarray:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        got = [h.strip() for h in got]
        if got != list(header):
            raise ColumnError(f"{path}: expected columns {list(header)}, got {got}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}", len(rows))
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}", len(rows)) from None
    data = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    idx = data[:, 0]
    if not np.array_equal(np.sort(idx), np.arange(len(idx))):
        raise ParseError(f"{path}: idx column must be a permutation of 0..{len(idx) - 1}")
    return data[np.argsort(idx, kind="stable"), 1:]


def _write_rows(path: Path, header: Sequence[str], values: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in enumerate(values):
            w.writerow([i] + [format(float(v), ".17g") for v in row])


def load_lap(path, vehicle_id: str = "", spacing: float = DEFAULT_SPACING, length: int | None = DEFAULT_T) -> Lap:
    """Read a lap CSV; ``length=None`` disables the length check."""
    data = _read_rows(path, LAP_HEADER)
    return Lap(data, vehicle_id, spacing, expected_length=length)


def save_lap(lap: Lap, path) -> None:
    _write_rows(path, LAP_HEADER, lap.samples)


def load_track(path, spacing: float = DEFAULT_SPACING) -> Track:
    data = _read_rows(path, TRACK_HEADER)
    return Track(data[:, 0], data[:, 1], spacing)


def save_track(track: Track, path) -> None:
    _write_rows(path, TRACK_HEADER, np.column_stack([track.elevation, track.curvature]))


def load_vehicles(path) -> dict[str, VehicleParams]:
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict):
        raw = [raw]
    vehicles = [VehicleParams.from_dict(d) for d in raw]
    return {v.vehicle_id: v for v in vehicles}


def save_vehicles(vehicles, path) -> None:
    items = list(vehicles.values()) if isinstance(vehicles, dict) else list(vehicles)
    Path(path).write_text(json.dumps([v.to_dict() for v in items], indent=2) + "\n")


def lap_filename(vehicle_id: str, k: int) -> str:
    return f"lap_{vehicle_id}_{k:03d}.csv"


@dataclass
class Dataset:
    track: Track
    vehicles: dict[str, VehicleParams]
    laps: list[Lap]
    config: dict = field(default_factory=dict)

    def laps_for(self, vehicle_id: str) -> list[Lap]:
        return [lap for lap in self.laps if lap.vehicle_id == vehicle_id]


def save_dataset(ds: Dataset, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_track(ds.track, directory / "track.csv")
    save_vehicles(ds.vehicles, directory / "vehicles.json")
    if ds.config:
        (directory / "config.json").write_text(json.dumps(ds.config, indent=2, sort_keys=True) + "\n")
    for stale in directory.glob("lap_*.csv"):  # laps from an earlier dataset would be picked up on load
        stale.unlink()
    counters: dict[str, int] = {}
    paths = []
    for lap in ds.laps:
        k = counters.get(lap.vehicle_id, 0)
        counters[lap.vehicle_id] = k + 1
        p = directory / lap_filename(lap.vehicle_id, k)
        save_lap(lap, p)
        paths.append(p)
    return paths


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    for name in ("track.csv", "vehicles.json"):
        if not (directory / name).is_file():
            raise FileNotFoundError(f"dataset file missing: {directory / name}")
    cfg_path = directory / "config.json"
    config = json.loads(cfg_path.read_text()) if cfg_path.is_file() else {}
    spacing = float(config.get("spacing", DEFAULT_SPACING))
    track = load_track(directory / "track.csv", spacing)
    vehicles = load_vehicles(directory / "vehicles.json")
    laps = []
    for p in sorted(directory.glob("lap_*.csv")):
        vid = p.stem[len("lap_") :].rsplit("_", 1)[0]
        if vid not in vehicles:
            raise ValidationError(f"{p.name}: unknown vehicle {vid!r}")
        laps.append(load_lap(p, vid, spacing, length=len(track)))
    if not laps:
        raise FileNotFoundError(f"no lap_*.csv files in {directory}")
    return Dataset(track, vehicles, laps, config)
