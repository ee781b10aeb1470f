"""Autoregressive lap generation with candidate selection, and region imputation.

Generation walks along the lap in half-window steps: the last generated half
becomes the past of the next window, ``b`` candidate futures are sampled and
the physically most plausible one is kept. Imputation detects implausible
regions from the acceleration mismatch and regenerates them in place.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import diffusion, metrics
from .datamodel import SPEED, SWA, ChannelMask, Dataset, Lap, Region, Track, ValidationError, VehicleParams
from .diffusion import NumericalError, TimestepPlan
from .metrics import DEFAULT_CONFIG, MetricConfig
from .windowing import assemble_conditioning, pcsp_pad

log = logging.getLogger(__name__)

# invalid/braking gaps up to this length do not split an implausible run
BRIDGE = 8


@dataclass(frozen=True)
class PlanSpec:
    """How to build a timestep plan against the model's own noise schedule."""

    steps: int | None = None  # None: every step of the model's chain
    schedule: str = diffusion.STRIDED
    j: int = 5
    r: int = 5

    def build(self, N: int) -> TimestepPlan:
        return diffusion.make_plan(N, self.steps or N, self.schedule, self.j, self.r)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GenerationConfig:
    candidates: int = 16
    plan: PlanSpec = field(default_factory=PlanSpec)
    seed: int = 0
    sigma_scale: float = 1.0
    metric: MetricConfig = DEFAULT_CONFIG

    def __post_init__(self):
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ImputationConfig:
    threshold: float = 0.2
    min_region: int = 70
    enlarge: int = 72
    # False spreads ``enlarge`` over both sides (half each)
    enlarge_per_side: bool = True
    merge_gap: int = 500
    candidates: int = 16
    channels: ChannelMask = field(default_factory=lambda: ChannelMask.parse("all"))
    plan: PlanSpec = field(default_factory=lambda: PlanSpec(None, diffusion.NAIVE))
    bridge: int = BRIDGE
    seed: int = 0
    metric: MetricConfig = DEFAULT_CONFIG

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if self.candidates < 1 or self.min_region < 0 or self.enlarge < 0 or self.merge_gap < 0 or self.bridge < 0:
            raise ValueError("candidates must be >= 1 and region parameters non-negative")
        if self.plan.schedule not in (diffusion.NAIVE, diffusion.REPAINT):
            raise ValueError(f"imputation needs a naive or repaint schedule, got {self.plan.schedule!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = [bool(c) for c in self.channels.as_array()]
        return d


# ---------------------------------------------------------------------------
# scoring


def score_candidate(future, past, vehicle: VehicleParams, theta, spacing: float,
                    config: MetricConfig = DEFAULT_CONFIG) -> float:
    """MSE_acc of a denormalized future half, with the past half as smoothing context.

    ``theta`` covers past and future. When no future sample is scored (all
    braking or invalid) the score is ``1 - signs``, or 1 if nothing is valid.
    """
    past = np.asarray(past, dtype=np.float64)
    x = np.concatenate([past, np.asarray(future, dtype=np.float64)])
    if not np.isfinite(x).all():
        return float("inf")
    pair = metrics.accel_pair(x, vehicle, theta, spacing, config)[len(past):]
    mse = metrics.mse_from_pair(pair)
    if mse is not None:
        return mse
    signs = metrics.signs_from_pair(pair, config.sign_deadband)
    return 1.0 if signs is None else 1.0 - signs


def select(scores: Sequence[float]) -> int:
    """Index of the lowest score; ties go to the lowest index."""
    s = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(s).any():
        raise ValueError("no finite candidate score")
    return int(np.argmin(np.where(np.isfinite(s), s, np.inf)))


def _rngs(seed: int, key: int, b: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence([seed, key]).spawn(b)]


def _sample_candidates(fn, b: int, window: int, **kw) -> list[np.ndarray | None]:
    """Run a batched sampler; on a numeric failure retry row by row and drop failing rows."""
    rngs = kw.pop("rngs")
    try:
        return list(fn(rng=rngs, **kw))
    except NumericalError:
        log.warning("non-finite values in window %d, retrying candidates one at a time", window)
    out: list[np.ndarray | None] = []
    for i in range(b):
        one = {k: (v[i : i + 1] if isinstance(v, np.ndarray) and v.ndim == 3 else v) for k, v in kw.items()}
        if isinstance(kw.get("conditioning"), list):
            one["conditioning"] = kw["conditioning"][i : i + 1]
        try:
            out.append(fn(rng=[rngs[i]], **one)[0])
        except NumericalError:
            out.append(None)
    if all(o is None for o in out):
        raise NumericalError(f"all {b} candidates non-finite in window {window}")
    return out


def _theta(track: Track, start: int, length: int, P: int) -> np.ndarray:
    pos = np.clip(np.arange(start, start + length) - P, 0, len(track) - 1)
    return track.grade_angle[pos]


# ---------------------------------------------------------------------------
# lap-level metrics


def lap_metrics(lap: Lap, vehicle: VehicleParams, track: Track, envelope: metrics.Envelope | None = None,
                config: MetricConfig = DEFAULT_CONFIG, window: int = 512) -> dict:
    pair = metrics.lap_accel_pair(lap, vehicle, track, config)
    scores = metrics.window_scores(pair, window)
    out = {
        "mse_acc": metrics.mse_from_pair(pair),
        "signs_score": metrics.signs_from_pair(pair, config.sign_deadband),
        "mse_acc95": metrics.mse_acc95(scores) if len(scores) >= 20 else None,
        "window_scores": scores,
        "window_difference": metrics.window_difference(lap.samples, window),
    }
    if envelope is not None:
        out["tam_speed"], out["tam_swa"] = metrics.tam(lap, envelope)
    return out


def dataset_mse_acc(laps: Sequence[Lap], vehicles: dict[str, VehicleParams], track: Track,
                    config: MetricConfig = DEFAULT_CONFIG) -> float | None:
    """MSE_acc pooled over the scored samples of all laps."""
    errs = []
    for lap in laps:
        pair = metrics.lap_accel_pair(lap, vehicles[lap.vehicle_id], track, config)
        errs.append(pair.sq_error()[pair.scored])
    e = np.concatenate(errs) if errs else np.zeros(0)
    return float(e.mean()) if len(e) else None


# ---------------------------------------------------------------------------
# generation


@dataclass
class WindowRecord:
    start: int
    scores: list[float]
    chosen: int

    @property
    def chosen_score(self) -> float:
        return self.scores[self.chosen]

    def to_dict(self) -> dict:
        return {"start": self.start, "scores": self.scores, "chosen": self.chosen, "chosen_score": self.chosen_score}


def generate_lap(model, seed_lap: Lap, vehicle: VehicleParams, track: Track,
                 config: GenerationConfig = GenerationConfig(), envelope: metrics.Envelope | None = None,
                 T: int | None = None) -> tuple[Lap, dict]:
    """Generate a lap of ``T`` samples (track length by default) window by window.

    The first past half is the lead-in padding built from ``seed_lap``'s first
    sample; afterwards each chosen future half becomes the next past half.
    """
    T = T or len(track)
    w = model.config.w
    P = w // 2  # the lead-in pad fills exactly one past half
    h = w // 2
    schedule = model.schedule
    plan = config.plan.build(schedule.N)
    padded = pcsp_pad(seed_lap, vehicle, track, P)
    norm = model.norm
    buf = [norm.normalize(padded.samples[:P])]
    raw = [padded.samples[:P]]
    records: list[WindowRecord] = []
    b = config.candidates
    i, k = 0, 0
    while sum(len(x) for x in raw) - P < T:
        past = buf[-1]
        cond = assemble_conditioning(i, track, vehicle, d_pos=model.config.d_pos, w=w, P=P, stats=norm.cond)
        cands = _sample_candidates(
            diffusion.sample_future, b, k, denoiser=model, past=np.broadcast_to(past, (b, h, 4)).copy(),
            conditioning=[cond] * b, plan=plan, schedule=schedule, rngs=_rngs(config.seed, k, b),
            sigma_scale=config.sigma_scale)
        theta = _theta(track, i, w, P)
        past_raw = raw[-1]
        futures = [None if c is None else norm.denormalize(c) for c in cands]
        scores = [float("inf") if f is None else
                  score_candidate(f, past_raw, vehicle, theta, track.spacing, config.metric) for f in futures]
        j = select(scores)
        records.append(WindowRecord(i, scores, j))
        buf.append(cands[j])
        raw.append(futures[j])
        log.debug("window %d: scores %s, chose %d", k, scores, j)
        i += h
        k += 1
    samples = np.concatenate(raw)[P : P + T]
    samples[:, SPEED] = np.maximum(samples[:, SPEED], 0.0)
    lap = Lap(samples, vehicle.vehicle_id, track.spacing, T)
    report = {
        "windows": [r.to_dict() for r in records],
        "metrics": lap_metrics(lap, vehicle, track, envelope, config.metric) if T == len(track) else None,
        "config": config.to_dict(),
        "plan": {"kind": plan.kind, "reverse": plan.n_reverse, "forward": plan.n_forward},
    }
    return lap, report


@dataclass
class WindowBatchResult:
    """Next-window predictions for held-out context windows."""

    starts: list[tuple[int, int]]  # (lap index, padded window start)
    past: np.ndarray  # (M, w/2, 4) denormalized
    truth: np.ndarray
    generated: np.ndarray
    scores: list[float]

    def summary(self) -> dict:
        d = self.generated - self.truth
        return {
            "windows": len(self.scores),
            "mse_acc95": metrics.mse_acc95(self.scores) if len(self.scores) >= 20 else None,
            "mse_acc_mean": float(np.mean(self.scores)) if self.scores else None,
            "mse_speed": float(np.mean(d[..., SPEED] ** 2)),
            "mse_swa": float(np.mean(d[..., SWA] ** 2)),
            "window_difference": float(np.mean(np.abs(self.generated[:, 0] - self.past[:, -1]))),
        }


def generate_windows(model, ds: Dataset, config: GenerationConfig = GenerationConfig(), stride: int | None = None,
                     max_windows: int | None = None, batch: int = 32) -> WindowBatchResult:
    """Predict the future half of every dataset window from its true past half.

    With ``candidates > 1`` each window keeps its lowest-scoring candidate.
    """
    w = model.config.w
    P = w // 2  # the lead-in pad fills exactly one past half
    h = w // 2
    stride = stride or h
    schedule = model.schedule
    plan = config.plan.build(schedule.N)
    norm = model.norm
    jobs = []
    for li, lap in enumerate(ds.laps):
        veh = ds.vehicles[lap.vehicle_id]
        padded = pcsp_pad(lap, veh, ds.track, P)
        for s in range(0, len(padded) - w + 1, stride):
            jobs.append((li, s, veh, padded))
    if max_windows is not None:
        jobs = jobs[:max_windows]
    b = config.candidates
    pasts, truths, gens, scores = [], [], [], []
    rows_per_chunk = max(1, batch // b)
    for c0 in range(0, len(jobs), rows_per_chunk):
        chunk = jobs[c0 : c0 + rows_per_chunk]
        past_n, conds, rngs = [], [], []
        for k, (li, s, veh, padded) in enumerate(chunk):
            pn = norm.normalize(padded.samples[s : s + h])
            cd = assemble_conditioning(s, ds.track, veh, padded.indicator, model.config.d_pos, w, P, norm.cond)
            past_n += [pn] * b
            conds += [cd] * b
            rngs += _rngs(config.seed, c0 + k, b)
        cands = _sample_candidates(diffusion.sample_future, len(past_n), c0, denoiser=model,
                                   past=np.stack(past_n), conditioning=conds, plan=plan, schedule=schedule,
                                   rngs=rngs, sigma_scale=config.sigma_scale)
        for k, (li, s, veh, padded) in enumerate(chunk):
            past_raw = padded.samples[s : s + h]
            theta = _theta(ds.track, s, w, P)
            fut = [None if c is None else norm.denormalize(c) for c in cands[k * b : (k + 1) * b]]
            sc = [float("inf") if f is None else score_candidate(f, past_raw, veh, theta, ds.track.spacing,
                                                                 config.metric) for f in fut]
            j = select(sc)
            pasts.append(past_raw)
            truths.append(padded.samples[s + h : s + w])
            gens.append(fut[j])
            scores.append(sc[j])
    return WindowBatchResult([(li, s) for li, s, _, _ in jobs], np.stack(pasts), np.stack(truths),
                             np.stack(gens), scores)


# ---------------------------------------------------------------------------
# implausible regions


def error_runs(sq_error, scored, threshold: float, bridge: int = BRIDGE) -> list[Region]:
    """Maximal runs of scored samples above ``threshold``.

    Unscored (braking or invalid) gaps of at most ``bridge`` samples inside a
    run are absorbed; a scored sample at or below the threshold ends the run.
    """
    e = np.asarray(sq_error, dtype=np.float64)
    scored = np.asarray(scored, dtype=bool)
    hot = scored & (e > threshold)
    runs: list[Region] = []
    start = end = None  # end: one past the last hot sample
    gap = 0
    for t in range(len(e)):
        if hot[t]:
            if start is None:
                start = t
            end, gap = t + 1, 0
        elif start is not None:
            if scored[t] or gap >= bridge:
                runs.append(Region(start, end))
                start, gap = None, 0
            else:
                gap += 1
    if start is not None:
        runs.append(Region(start, end))
    return runs


def discard_short(regions: Sequence[Region], min_len: int) -> list[Region]:
    return [r for r in regions if len(r) >= min_len]


def enlarge(regions: Sequence[Region], amount: int, T: int, per_side: bool = True) -> list[Region]:
    lo = amount if per_side else amount // 2
    hi = amount if per_side else amount - amount // 2
    return [Region(max(0, r.start - lo), min(T, r.end + hi)) for r in regions]


def merge_close(regions: Sequence[Region], gap: int) -> list[Region]:
    """Merge sorted regions whose gap is below ``gap`` (overlaps always merge)."""
    out: list[Region] = []
    for r in sorted(regions, key=lambda r: r.start):
        if out and r.start - out[-1].end < gap:
            out[-1] = Region(out[-1].start, max(out[-1].end, r.end))
        else:
            out.append(r)
    return out


def postprocess_regions(runs: Sequence[Region], T: int, config: ImputationConfig = ImputationConfig()) -> list[Region]:
    kept = discard_short(runs, config.min_region)
    return merge_close(enlarge(kept, config.enlarge, T, config.enlarge_per_side), config.merge_gap)


def find_implausible_regions(lap: Lap, vehicle: VehicleParams, track: Track,
                             config: ImputationConfig = ImputationConfig()) -> list[Region]:
    pair = metrics.lap_accel_pair(lap, vehicle, track, config.metric)
    runs = error_runs(np.nan_to_num(pair.sq_error(), nan=0.0), pair.scored, config.threshold, config.bridge)
    return postprocess_regions(runs, len(lap), config)


# ---------------------------------------------------------------------------
# imputation


def _chunks(regions: Sequence[Region], h: int) -> list[Region]:
    out = []
    for r in regions:
        for c in range(r.start, r.end, h):
            out.append(Region(c, min(c + h, r.end)))
    return out


def impute_lap(model, lap: Lap, regions: Sequence[Region], vehicle: VehicleParams, track: Track,
               config: ImputationConfig = ImputationConfig()) -> tuple[Lap, dict]:
    """Regenerate ``regions`` x ``config.channels`` of ``lap``; everything else is copied untouched.

    Each region (or ``w/2`` chunk of a longer one) sits at the start of a
    window's future half, with the preceding ``w/2`` samples, including
    earlier imputations, as past.
    """
    w = model.config.w
    P = w // 2  # the lead-in pad fills exactly one past half
    h = w // 2
    T = len(lap)
    regions = sorted(regions, key=lambda r: r.start)
    for a, b in zip(regions, regions[1:]):
        if b.start < a.end:
            raise ValidationError(f"regions {a} and {b} overlap")
    for r in regions:
        r.check_bounds(T)
        if r.start < h:
            raise ValidationError(f"region {r} starts within the first {h} samples; no past context")
    out = np.array(lap.samples, dtype=np.float64)
    chan = config.channels.as_array()
    schedule = model.schedule
    plan = config.plan.build(schedule.N)
    norm = model.norm
    nb = config.candidates
    chunk_reports = []
    for k, c in enumerate(_chunks(regions, h)):
        s = c.start + P - h  # padded window start
        past_raw = out[c.start - h : c.start]
        fut_len = min(h, T - c.start)
        fut_raw = np.empty((h, 4))
        fut_raw[:fut_len] = out[c.start : c.start + fut_len]
        fut_raw[fut_len:] = out[-1]
        mask = np.zeros((h, 4), dtype=bool)
        mask[: len(c)] = chan
        mask[fut_len:] = True  # beyond the lap end: free, discarded
        cond = assemble_conditioning(s, track, vehicle, None, model.config.d_pos, w, P, norm.cond)
        cands = _sample_candidates(
            diffusion.impute_window, nb, k, denoiser=model,
            past=np.broadcast_to(norm.normalize(past_raw), (nb, h, 4)).copy(),
            future_gt=norm.normalize(fut_raw), mask=mask, conditioning=[cond] * nb, plan=plan,
            schedule=schedule, rngs=_rngs(config.seed, k, nb))
        theta = _theta(track, s, w, P)
        futures = [None if x is None else norm.denormalize(x) for x in cands]
        merged = []
        for f in futures:
            if f is None:
                merged.append(None)
                continue
            m = fut_raw.copy()
            m[mask] = f[mask]
            m[:, SPEED] = np.where(mask[:, SPEED], np.maximum(m[:, SPEED], 0.0), m[:, SPEED])
            merged.append(m[:fut_len])
        scores = [float("inf") if m is None else score_candidate(m, past_raw, vehicle, theta[: h + fut_len],
                                                                 track.spacing, config.metric) for m in merged]
        j = select(scores)
        sel = mask[:fut_len]
        block = out[c.start : c.start + fut_len]
        block[sel] = merged[j][sel]
        chunk_reports.append({"start": c.start, "end": c.end, "scores": scores, "chosen": j})
    new = lap.replace(out)
    interior = [r for r in regions if 0 < r.start and r.end < T]
    starts, ends = metrics.boundary_continuity(lap, new, interior)
    report = {
        "regions": [[r.start, r.end] for r in regions],
        "channels": [bool(c) for c in chan],
        "chunks": chunk_reports,
        "mse_acc_before": metrics.mse_acc(lap, vehicle, track, config.metric),
        "mse_acc_after": metrics.mse_acc(new, vehicle, track, config.metric),
        "continuity": {"start": starts.tolist(), "end": ends.tolist(), "regions": len(interior)},
        "config": config.to_dict(),
    }
    return new, report
