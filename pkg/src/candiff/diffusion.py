"""Noise schedules, timestep plans and ancestral sampling.

Everything here is model-agnostic numpy. A denoiser is any object with a
``predict_eps(past, future_noisy, conditioning, n)`` method returning the
noise estimate for the future half, with a leading batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

NAIVE, REPAINT, STRIDED = "naive", "repaint", "strided"


class NumericalError(FloatingPointError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} at diffusion step {step}")
        self.step = step


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: np.ndarray

    def __post_init__(self):
        b = np.array(self.beta, dtype=np.float64)
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)
        if b.ndim != 1 or len(b) < 1 or not ((b > 0) & (b < 1)).all():
            raise ValueError("betas must be a non-empty series in (0, 1)")
        ab = np.cumprod(1.0 - b)
        # index 0 is the clean state
        ab = np.concatenate([[1.0], ab])
        ab.setflags(write=False)
        object.__setattr__(self, "_alpha_bar", ab)

    @property
    def N(self) -> int:
        return len(self.beta)

    @property
    def alpha_bar(self) -> np.ndarray:
        """``alpha_bar[n-1]`` for n = 1..N."""
        return self._alpha_bar[1:]

    def ab(self, n: int) -> float:
        """Cumulative signal fraction at step ``n``, with ``ab(0) == 1``."""
        if not 0 <= n <= self.N:
            raise ValueError(f"step {n} outside [0, {self.N}]")
        return float(self._alpha_bar[n])

    def to_dict(self) -> dict:
        return {"N": self.N, "beta_start": float(self.beta[0]), "beta_end": float(self.beta[-1])}


def default_betas(N: int) -> tuple[float, float]:
    """The usual (1e-4, 0.02) range for 500 steps, rescaled so shorter chains reach the same noise level."""
    scale = 500.0 / N
    return 1e-4 * scale, min(0.02 * scale, 0.999)


def linear_schedule(N: int = 500, beta_start: float | None = None, beta_end: float | None = None) -> NoiseSchedule:
    if beta_start is None or beta_end is None:
        d0, d1 = default_betas(N)
        beta_start = d0 if beta_start is None else beta_start
        beta_end = d1 if beta_end is None else beta_end
    if N < 1 or not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need N >= 1 and 0 < beta_start <= beta_end < 1, got {N}, {beta_start}, {beta_end}")
    return NoiseSchedule(np.linspace(beta_start, beta_end, N))


def forward_corrupt(x0, n: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    ab = schedule.ab(n)
    return math.sqrt(ab) * np.asarray(x0) + math.sqrt(1.0 - ab) * np.asarray(eps)


def x0_from_eps(x_n, n: int, eps_hat, schedule: NoiseSchedule) -> np.ndarray:
    ab = schedule.ab(n)
    return (np.asarray(x_n) - math.sqrt(1.0 - ab) * np.asarray(eps_hat)) / math.sqrt(ab)


def posterior(x_n, x0_hat, n: int, n_prev: int, schedule: NoiseSchedule) -> tuple[np.ndarray, float]:
    """Mean and std of ``q(x_{n_prev} | x_n, x0)`` for possibly non-adjacent steps."""
    ab_n, ab_p = schedule.ab(n), schedule.ab(n_prev)
    a_step = ab_n / ab_p
    b_step = 1.0 - a_step
    mean = (math.sqrt(ab_p) * b_step / (1.0 - ab_n)) * x0_hat + (math.sqrt(a_step) * (1.0 - ab_p) / (1.0 - ab_n)) * x_n
    var = (1.0 - ab_p) / (1.0 - ab_n) * b_step
    return mean, math.sqrt(max(var, 0.0))


def _normal(rng, shape) -> np.ndarray:
    """Standard normal draws; a sequence of generators gives one independent stream per batch row."""
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    rngs = list(rng)
    if len(rngs) != shape[0]:
        raise ValueError(f"{len(rngs)} generators for batch of {shape[0]}")
    return np.stack([r.standard_normal(shape[1:]) for r in rngs])


def reverse_step(x_n, eps_hat, n: int, n_prev: int, schedule: NoiseSchedule, rng=None,
                 sigma_scale: float = 1.0) -> np.ndarray:
    """One ancestral step from ``n`` down to ``n_prev`` (any ``0 <= n_prev < n``).

    The variance is the posterior one; it is zero when ``n_prev == 0`` and
    scaled by ``sigma_scale`` otherwise (0 gives a deterministic step).
    """
    if not 0 <= n_prev < n <= schedule.N:
        raise ValueError(f"invalid reverse transition {n} -> {n_prev}")
    x_n = np.asarray(x_n, dtype=np.float64)
    x0_hat = x0_from_eps(x_n, n, eps_hat, schedule)
    mean, sigma = posterior(x_n, x0_hat, n, n_prev, schedule)
    sigma *= sigma_scale
    if n_prev == 0 or sigma == 0.0:
        return mean
    return mean + sigma * _normal(rng, x_n.shape)


def forward_jump(x, n_from: int, n_to: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """Re-noise a state from step ``n_from`` up to ``n_to`` with fresh Gaussian noise."""
    if not 0 <= n_from < n_to <= schedule.N:
        raise ValueError(f"invalid forward jump {n_from} -> {n_to}")
    a = schedule.ab(n_to) / schedule.ab(n_from)
    x = np.asarray(x, dtype=np.float64)
    return math.sqrt(a) * x + math.sqrt(1.0 - a) * _normal(rng, x.shape)


# ---------------------------------------------------------------------------
# timestep plans


@dataclass(frozen=True)
class TimestepPlan:
    transitions: tuple[tuple[int, int], ...]
    kind: str = STRIDED

    def __post_init__(self):
        t = tuple((int(a), int(b)) for a, b in self.transitions)
        object.__setattr__(self, "transitions", t)
        if not t or t[-1][1] != 0:
            raise ValueError("plan must end at step 0")
        for (a0, b0), (a1, _) in zip(t, t[1:]):
            if b0 != a1:
                raise ValueError(f"plan does not chain at {a0}->{b0}, {a1}")
        if any(a == b for a, b in t):
            raise ValueError("plan contains an empty transition")

    @property
    def start(self) -> int:
        return self.transitions[0][0]

    @property
    def n_reverse(self) -> int:
        return sum(1 for a, b in self.transitions if b < a)

    @property
    def n_forward(self) -> int:
        return sum(1 for a, b in self.transitions if b > a)

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)


def strided_steps(N: int, K: int) -> list[int]:
    """``K + 1`` ascending timesteps ``round(N*k/K)`` for k = 0..K."""
    if not 1 <= K <= N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    return [int(math.floor(N * k / K + 0.5)) for k in range(K + 1)]


def strided_plan(N: int, K: int, kind: str = STRIDED) -> TimestepPlan:
    steps = strided_steps(N, K)
    return TimestepPlan(tuple((steps[k], steps[k - 1]) for k in range(K, 0, -1)), kind)


def naive_plan(N: int, K: int) -> TimestepPlan:
    return strided_plan(N, K, NAIVE)


def repaint_indices(K: int, j: int, r: int) -> list[tuple[int, int]]:
    """Resampling schedule over plan indices ``K..0``.

    Each block of ``j`` reverse transitions is traversed ``r`` times, with a
    forward jump of ``+j`` between passes; a short final block jumps by its
    own length.
    """
    if K < 1 or j < 1 or r < 1:
        raise ValueError("K, j and r must be >= 1")
    out = []
    hi = K
    while hi > 0:
        lo = max(hi - j, 0)
        for rep in range(r):
            out.extend((s, s - 1) for s in range(hi, lo, -1))
            if rep < r - 1:
                out.append((lo, hi))
        hi = lo
    return out


def repaint_plan(K: int, j: int = 5, r: int = 5, N: int | None = None) -> TimestepPlan:
    """RePaint plan over ``K`` reverse steps, mapped onto ``N`` diffusion steps if given."""
    idx = repaint_indices(K, j, r)
    steps = strided_steps(N, K) if N is not None else list(range(K + 1))
    return TimestepPlan(tuple((steps[a], steps[b]) for a, b in idx), REPAINT)


def make_plan(N: int, K: int, schedule: str = NAIVE, j: int = 5, r: int = 5) -> TimestepPlan:
    if schedule in (NAIVE, STRIDED):
        return strided_plan(N, K, schedule)
    if schedule == REPAINT:
        return repaint_plan(K, j, r, N)
    raise ValueError(f"unknown schedule {schedule!r}")


# ---------------------------------------------------------------------------
# sampling


class Denoiser(Protocol):
    def predict_eps(self, past: np.ndarray, future_noisy: np.ndarray, conditioning, n: int) -> np.ndarray: ...


def _check(x: np.ndarray, step: int) -> None:
    if not np.isfinite(x).all():
        raise NumericalError("non-finite sample", step)


def impute_combine(x_known_noised, x_model, mask) -> np.ndarray:
    """Model sample where ``mask`` is 1 (unknown), noised ground truth elsewhere."""
    return np.where(np.asarray(mask, dtype=bool), x_model, x_known_noised)


def sample_future(denoiser: Denoiser, past, conditioning, plan: TimestepPlan, schedule: NoiseSchedule, rng,
                  sigma_scale: float = 1.0, x_init=None) -> np.ndarray:
    """Generate future halves for a batch of past halves ``(B, w/2, C)``.

    ``rng`` is a Generator or one Generator per batch row. Forward jumps in
    the plan are applied to the whole state.
    """
    past = np.asarray(past, dtype=np.float64)
    x = _normal(rng, past.shape) if x_init is None else np.array(x_init, dtype=np.float64)
    for a, b in plan:
        if b > a:
            x = forward_jump(x, a, b, schedule, rng)
            continue
        eps = np.asarray(denoiser.predict_eps(past, x, conditioning, a), dtype=np.float64)
        _check(eps, a)
        x = reverse_step(x, eps, a, b, schedule, rng, sigma_scale)
        _check(x, b)
    return x


def impute_window(denoiser: Denoiser, past, future_gt, mask, conditioning, plan: TimestepPlan,
                  schedule: NoiseSchedule, rng, sigma_scale: float = 1.0) -> np.ndarray:
    """Fill the masked (1 = unknown) entries of ``future_gt`` by conditional sampling.

    Known entries are re-drawn from the forward process at every target step;
    the returned array has them replaced by the exact ground truth.
    """
    if plan.kind not in (NAIVE, REPAINT):
        raise ValueError(f"imputation needs a naive or repaint plan, got {plan.kind!r}")
    past = np.asarray(past, dtype=np.float64)
    gt = np.broadcast_to(np.asarray(future_gt, dtype=np.float64), past.shape[:-2] + np.shape(future_gt)[-2:])
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), gt.shape)
    if not mask.any():
        return np.array(gt)
    n0 = plan.start
    x = impute_combine(forward_corrupt(gt, n0, _normal(rng, gt.shape), schedule), _normal(rng, gt.shape), mask)
    for a, b in plan:
        if b > a:
            x = forward_jump(x, a, b, schedule, rng)
            continue
        eps = np.asarray(denoiser.predict_eps(past, x, conditioning, a), dtype=np.float64)
        _check(eps, a)
        x_model = reverse_step(x, eps, a, b, schedule, rng, sigma_scale)
        known = gt if b == 0 else forward_corrupt(gt, b, _normal(rng, gt.shape), schedule)
        x = impute_combine(known, x_model, mask)
        _check(x, b)
    return np.where(mask, x, gt)


class OracleDenoiser:
    """Returns the exact noise given the true clean future; for testing samplers."""

    def __init__(self, x0, schedule: NoiseSchedule):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.schedule = schedule

    def predict_eps(self, past, future_noisy, conditioning, n):
        ab = self.schedule.ab(n)
        return (np.asarray(future_noisy) - math.sqrt(ab) * self.x0) / math.sqrt(1.0 - ab)
