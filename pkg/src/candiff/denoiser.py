"""Conditional noise-prediction network, checkpoint format and training loop.

The network follows the residual/skip layout of SSSD-style denoisers with a
pluggable sequence mixer:

* ``longconv``: a learned full-window kernel per channel in each direction,
  applied as a linear (zero-padded) convolution through the FFT.
* ``dssm``: a diagonal complex linear recurrence ``h_t = a*h_{t-1} + b*x_t``
  with output ``Re(c . h_t)``, run forwards and backwards. The recurrence is
  evaluated in closed form as a convolution with kernel ``Re(c * b * a**k)``.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import diffusion
from .datamodel import Dataset
from .windowing import D_POS, PAD, WINDOW, Conditioning, ScalarStats, assemble_conditioning, pcsp_pad

log = logging.getLogger(__name__)

MIXERS = ("longconv", "dssm")
CHECKPOINT_MAGIC = b"CANDIFF\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite in epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class ModelConfig:
    residual_blocks: int = 4
    channels: int = 64
    mixer: str = "longconv"
    w: int = WINDOW
    d_pos: int = D_POS
    d_t: int = 32
    t_hidden: int = 128
    d_state: int = 16
    n_channels: int = 4
    n_scalars: int = 3

    def __post_init__(self):
        if self.mixer not in MIXERS:
            raise ValueError(f"unknown mixer kind {self.mixer!r}; expected one of {MIXERS}")
        if self.w % 2 or self.d_pos % 2 or self.d_t % 2:
            raise ValueError("w, d_pos and d_t must be even")

    @property
    def cond_channels(self) -> int:
        return 2 + self.d_pos


@dataclass(frozen=True)
class Normalization:
    """Per-channel affine standardization of sensor data plus conditioning stats."""

    mean: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    std: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    cond: ScalarStats = field(default_factory=ScalarStats)

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - np.asarray(self.mean)) / np.asarray(self.std)

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * np.asarray(self.std) + np.asarray(self.mean)

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std), "cond": self.cond.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(tuple(d["mean"]), tuple(d["std"]), ScalarStats.from_dict(d["cond"]))

    @classmethod
    def fit(cls, ds: Dataset) -> "Normalization":
        x = np.concatenate([lap.samples for lap in ds.laps])
        std = x.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(tuple(map(float, x.mean(axis=0))), tuple(map(float, std)),
                   ScalarStats.fit(list(ds.vehicles.values()), ds.track))


# ---------------------------------------------------------------------------
# network


def timestep_embedding(n: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freq = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    ang = n.to(torch.float64)[:, None] * freq[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


def fft_conv(x: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Causal linear convolution of ``x`` (B, C, L) with per-channel kernels ``k`` (C, L)."""
    L = x.shape[-1]
    n = 2 * L
    y = torch.fft.irfft(torch.fft.rfft(x, n=n) * torch.fft.rfft(k, n=n), n=n)
    return y[..., :L]


def bidirectional_conv(x: torch.Tensor, k_fwd: torch.Tensor, k_bwd: torch.Tensor) -> torch.Tensor:
    return fft_conv(x, k_fwd) + fft_conv(x.flip(-1), k_bwd).flip(-1)


class LongConv(nn.Module):
    def __init__(self, channels: int, length: int):
        super().__init__()
        decay = torch.exp(-torch.arange(length, dtype=torch.float32) / 32.0)
        scale = 1.0 / math.sqrt(float(decay.pow(2).sum()))
        self.k_fwd = nn.Parameter((torch.rand(channels, length) * 2 - 1) * decay * scale)
        self.k_bwd = nn.Parameter((torch.rand(channels, length) * 2 - 1) * decay * scale)
        self.D = nn.Parameter(torch.rand(channels) * 2 - 1)

    def kernels(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.k_fwd, self.k_bwd

    def forward(self, x):
        k_f, k_b = self.kernels()
        L = x.shape[-1]
        return bidirectional_conv(x, k_f[:, :L], k_b[:, :L]) + self.D[:, None] * x


class DiagonalSSM(nn.Module):
    def __init__(self, channels: int, d_state: int):
        super().__init__()
        shape = (2, channels, d_state)  # direction, channel, state
        mag = 0.9 + 0.099 * torch.rand(shape)
        self.log_neg_log_mag = nn.Parameter(torch.log(-torch.log(mag)))
        self.phase = nn.Parameter(torch.rand(shape) * 0.1)
        self.b = nn.Parameter(torch.rand(shape) * 2 - 1)
        c_scale = 1.0 / math.sqrt(d_state)
        self.c_re = nn.Parameter((torch.rand(shape) * 2 - 1) * c_scale)
        self.c_im = nn.Parameter((torch.rand(shape) * 2 - 1) * c_scale)
        self.D = nn.Parameter(torch.rand(channels) * 2 - 1)
        self._cache: tuple[int, tuple[torch.Tensor, torch.Tensor]] | None = None

    def train(self, mode: bool = True):
        self._cache = None
        return super().train(mode)

    def log_a(self) -> torch.Tensor:
        return torch.complex(-torch.exp(self.log_neg_log_mag), self.phase)

    def kernels(self, L: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Impulse responses ``Re(c * b * a**k)`` for k = 0..L-1, per direction."""
        k = torch.arange(L, dtype=self.phase.dtype)
        powers = torch.exp(self.log_a()[..., None] * k)  # (2, C, S, L)
        cb = torch.complex(self.c_re, self.c_im) * self.b
        kern = (cb[..., None] * powers).sum(dim=2).real
        return kern[0], kern[1]

    def forward(self, x):
        L = x.shape[-1]
        if self.training or torch.is_grad_enabled():
            k_f, k_b = self.kernels(L)
        else:
            # inference: parameters are frozen, so the kernels can be reused across calls
            if self._cache is None or self._cache[0] != L:
                self._cache = (L, self.kernels(L))
            k_f, k_b = self._cache[1]
        return bidirectional_conv(x, k_f, k_b) + self.D[:, None] * x


class ResidualBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        C = cfg.channels
        self.t_proj = nn.Linear(cfg.t_hidden, C)
        self.in_conv = nn.Conv1d(C, 2 * C, 1)
        self.mixer = LongConv(2 * C, cfg.w) if cfg.mixer == "longconv" else DiagonalSSM(2 * C, cfg.d_state)
        self.cond_conv = nn.Conv1d(C, 2 * C, 1)
        self.out_conv = nn.Conv1d(C, 2 * C, 1)
        self.C = C

    def forward(self, x, t_emb, cond):
        h = x + self.t_proj(t_emb)[:, :, None]
        h = self.mixer(self.in_conv(h)) + self.cond_conv(cond)
        h = torch.tanh(h[:, : self.C]) * torch.sigmoid(h[:, self.C :])
        res, skip = self.out_conv(h).chunk(2, dim=1)
        return (x + res) * math.sqrt(0.5), skip


class EpsNet(nn.Module):
    """Maps (window + padding indicator, conditioning, step) to a ``(B, w, 4)`` noise estimate."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        C = cfg.channels
        self.cfg = cfg
        self.input_conv = nn.Conv1d(cfg.n_channels + 1, C, 1)
        self.cond_ts = nn.Conv1d(cfg.cond_channels, C, 3, padding=1)
        self.cond_scalar = nn.Linear(cfg.n_scalars, C)
        self.cond_mix = nn.Conv1d(C, C, 1)
        self.t_fc1 = nn.Linear(cfg.d_t, cfg.t_hidden)
        self.t_fc2 = nn.Linear(cfg.t_hidden, cfg.t_hidden)
        self.blocks = nn.ModuleList(ResidualBlock(cfg) for _ in range(cfg.residual_blocks))
        self.skip_conv = nn.Conv1d(C, C, 1)
        self.final_conv = nn.Conv1d(C, cfg.n_channels, 1)
        nn.init.zeros_(self.final_conv.weight)
        nn.init.zeros_(self.final_conv.bias)

    def forward(self, window, indicator, cond_ts, scalars, n):
        """``window`` (B, w, 4), ``indicator`` (B, w), ``cond_ts`` (B, w, 2+d_pos), ``scalars`` (B, 3), ``n`` (B,)."""
        x = torch.cat([window, indicator[..., None]], dim=-1).transpose(1, 2)
        x = F.relu(self.input_conv(x))
        cond = self.cond_ts(cond_ts.transpose(1, 2)) + self.cond_scalar(scalars)[:, :, None]
        cond = self.cond_mix(F.silu(cond))
        t = timestep_embedding(n, self.cfg.d_t).to(window.dtype)
        t = F.silu(self.t_fc2(F.silu(self.t_fc1(t))))
        skip = 0
        for block in self.blocks:
            x, s = block(x, t, cond)
            skip = skip + s
        h = skip * math.sqrt(1.0 / len(self.blocks))
        h = F.relu(self.skip_conv(h))
        return self.final_conv(h).transpose(1, 2)


def _seeded_init(net: nn.Module, seed: int) -> None:
    """Uniform fan-in initialization of linear/conv weights; output head stays zero."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, mod in net.named_modules():
            if isinstance(mod, (nn.Linear, nn.Conv1d)) and mod is not getattr(net, "final_conv", None):
                fan_in = mod.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                mod.weight.copy_(torch.rand(mod.weight.shape, generator=g) * 2 * bound - bound)
                mod.bias.copy_(torch.rand(mod.bias.shape, generator=g) * 2 * bound - bound)


class DenoiserModel:
    """Network + architecture config + normalization statistics."""

    def __init__(self, config: ModelConfig, net: EpsNet, norm: Normalization | None = None,
                 schedule: diffusion.NoiseSchedule | None = None):
        self.config = config
        self.net = net
        self.norm = norm or Normalization()
        # noise schedule the network was trained with
        self.schedule = schedule or diffusion.linear_schedule()

    @property
    def dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    def named_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().copy() for k, v in self.net.state_dict().items()}

    def forward(self, window_input, conditioning: Conditioning | Sequence[Conditioning], n) -> np.ndarray:
        """Noise estimate for a normalized ``(w, 4)`` or ``(B, w, 4)`` window input."""
        x = np.asarray(window_input)
        single = x.ndim == 2
        if single:
            x = x[None]
        conds = [conditioning] * len(x) if isinstance(conditioning, Conditioning) else list(conditioning)
        B, w, c = x.shape
        if w != self.config.w or c != self.config.n_channels or len(conds) != B:
            raise ValueError(f"window input shape {x.shape} does not match model (w={self.config.w})")
        ts = np.stack([cd.timeseries for cd in conds])
        if ts.shape[1:] != (w, self.config.cond_channels):
            raise ValueError(f"conditioning shape {ts.shape[1:]} does not match model")
        sc = np.stack([cd.scalars for cd in conds])
        ind = ts[:, :, 1]
        dt = self.dtype
        nn_ = torch.as_tensor(np.broadcast_to(np.asarray(n, dtype=np.int64), (B,)).copy())
        with torch.no_grad():
            out = self.net(torch.as_tensor(x, dtype=dt), torch.as_tensor(ind, dtype=dt), torch.as_tensor(ts, dtype=dt),
                           torch.as_tensor(sc, dtype=dt), nn_)
        out = out.numpy().astype(np.float64)
        return out[0] if single else out

    def predict_eps(self, past, future_noisy, conditioning, n) -> np.ndarray:
        """Noise estimate for the future half only; ``past``/``future_noisy`` are normalized ``(B, w/2, 4)``."""
        past = np.asarray(past)
        future_noisy = np.asarray(future_noisy)
        window = np.concatenate([np.broadcast_to(past, future_noisy.shape), future_noisy], axis=-2)
        eps = self.forward(window, conditioning, n)
        return eps[..., self.config.w // 2 :, :]


def init_model(config: ModelConfig, seed: int = 0, norm: Normalization | None = None,
               dtype: torch.dtype = torch.float32, schedule: diffusion.NoiseSchedule | None = None) -> DenoiserModel:
    torch.manual_seed(seed)
    net = EpsNet(config)
    _seeded_init(net, seed)
    return DenoiserModel(config, net.to(dtype), norm, schedule)


# ---------------------------------------------------------------------------
# loss


@dataclass
class Batch:
    """Tensors for one training step; ``window`` holds the clean normalized window."""

    window: torch.Tensor  # (B, w, 4)
    indicator: torch.Tensor  # (B, w)
    cond_ts: torch.Tensor  # (B, w, 2+d_pos)
    scalars: torch.Tensor  # (B, 3)
    n: torch.Tensor  # (B,)
    eps: torch.Tensor  # (B, w/2, 4)

    def __len__(self) -> int:
        return len(self.window)

    def shard(self, sl: slice) -> "Batch":
        return Batch(*(getattr(self, f)[sl] for f in ("window", "indicator", "cond_ts", "scalars", "n", "eps")))


def corrupt_batch(batch: Batch, alpha_bar: torch.Tensor) -> torch.Tensor:
    """Window input: clean past half, future half noised to each example's step."""
    h = batch.window.shape[1] // 2
    ab = alpha_bar[batch.n].to(batch.window.dtype)[:, None, None]
    future = ab.sqrt() * batch.window[:, h:] + (1 - ab).sqrt() * batch.eps
    return torch.cat([batch.window[:, :h], future], dim=1)


def loss_fn(net: EpsNet, batch: Batch, alpha_bar: torch.Tensor) -> torch.Tensor:
    """Mean squared noise error over the future half and sensor channels only."""
    x_in = corrupt_batch(batch, alpha_bar)
    eps_hat = net(x_in, batch.indicator, batch.cond_ts, batch.scalars, batch.n)
    h = batch.window.shape[1] // 2
    return F.mse_loss(eps_hat[:, h:], batch.eps)


def alpha_bar_table(schedule: diffusion.NoiseSchedule) -> torch.Tensor:
    """``ab(n)`` for n = 0..N as a tensor indexable by step."""
    return torch.as_tensor(np.concatenate([[1.0], schedule.alpha_bar]), dtype=torch.float64)


def loss_and_gradients(model: DenoiserModel, batch: Batch, schedule: diffusion.NoiseSchedule) -> tuple[float, dict[str, np.ndarray]]:
    net = model.net
    net.zero_grad(set_to_none=True)
    loss = loss_fn(net, batch, alpha_bar_table(schedule))
    loss.backward()
    grads = {k: (p.grad.detach().numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape)))
             for k, p in net.named_parameters()}
    return float(loss.detach()), grads


# ---------------------------------------------------------------------------
# training data


@dataclass
class WindowSet:
    """Precomputed training windows (normalized sensor data and conditioning)."""

    window: np.ndarray  # (M, w, 4)
    cond_ts: np.ndarray  # (M, w, 2+d_pos)
    scalars: np.ndarray  # (M, 3)

    def __len__(self) -> int:
        return len(self.window)


def build_windows(ds: Dataset, norm: Normalization, w: int = WINDOW, stride: int = 256, P: int = PAD,
                  d_pos: int = D_POS, pad_noise: Sequence[float] | None = None, seed: int = 0) -> WindowSet:
    """Pad every lap, cut windows at ``stride`` and assemble their conditioning."""
    sig = ds.config.get("sigmas", (0.0, 0.0, 0.0, 0.0)) if pad_noise is None else pad_noise
    seeds = np.random.SeedSequence(seed).spawn(len(ds.laps))
    wins, tss, scs = [], [], []
    for lap, sq in zip(ds.laps, seeds):
        veh = ds.vehicles[lap.vehicle_id]
        padded = pcsp_pad(lap, veh, ds.track, P, sig, int(sq.generate_state(1)[0]))
        xn = norm.normalize(padded.samples)
        for i in range(0, len(xn) - w + 1, stride):
            cd = assemble_conditioning(i, ds.track, veh, padded.indicator, d_pos, w, P, norm.cond)
            wins.append(xn[i : i + w])
            tss.append(cd.timeseries)
            scs.append(cd.scalars)
    if not wins:
        raise ValueError("dataset yields no training windows")
    return WindowSet(np.stack(wins), np.stack(tss), np.stack(scs))


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 4e-4
    momentum: float = 0.9
    N: int = 500
    beta_start: float | None = None
    beta_end: float | None = None
    stride: int = 256
    seed: int = 0
    # "norm": per-example squared error summed over the future half; "mean": per-element mean
    loss_reduction: str = "norm"
    grad_clip: float | None = 100.0  # max global gradient norm, None disables

    def __post_init__(self):
        if self.loss_reduction not in ("norm", "mean"):
            raise ValueError(f"unknown loss_reduction {self.loss_reduction!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.N < 1 or self.stride < 1 or self.lr < 0:
            raise ValueError("epochs, batch_size, N, stride must be positive and lr non-negative")

    def schedule(self) -> diffusion.NoiseSchedule:
        return diffusion.linear_schedule(self.N, self.beta_start, self.beta_end)

    def to_dict(self) -> dict:
        return asdict(self)


def make_batch(ws: WindowSet, idx: np.ndarray, N: int, gen: torch.Generator, dtype=torch.float32) -> Batch:
    window = torch.as_tensor(ws.window[idx], dtype=dtype)
    h = window.shape[1] // 2
    n = torch.randint(1, N + 1, (len(idx),), generator=gen)
    eps = torch.randn((len(idx), h, window.shape[2]), generator=gen, dtype=torch.float64).to(dtype)
    cond_ts = torch.as_tensor(ws.cond_ts[idx], dtype=dtype)
    return Batch(window, cond_ts[:, :, 1].contiguous(), cond_ts, torch.as_tensor(ws.scalars[idx], dtype=dtype), n, eps)


def train(ds: Dataset | WindowSet, train_config: TrainConfig, model_config: ModelConfig | None = None,
          model: DenoiserModel | None = None, progress: Callable[[int, float], None] | None = None,
          ) -> tuple[DenoiserModel, list[float]]:
    """SGD on the masked noise-prediction loss; returns the model and per-epoch mean losses."""
    cfg = train_config
    if model is None:
        model_config = model_config or ModelConfig()
        norm = Normalization.fit(ds) if isinstance(ds, Dataset) else Normalization()
        model = init_model(model_config, cfg.seed, norm, schedule=cfg.schedule())
    ws = ds if isinstance(ds, WindowSet) else build_windows(
        ds, model.norm, model.config.w, cfg.stride, P=model.config.w // 2, d_pos=model.config.d_pos, seed=cfg.seed)
    net = model.net
    net.train()
    model.schedule = cfg.schedule()
    ab = alpha_bar_table(model.schedule)
    opt = torch.optim.SGD(net.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    gen = torch.Generator().manual_seed(cfg.seed)
    order_rng = np.random.default_rng(cfg.seed)
    # the reported loss is always the per-element mean; "norm" rescales the gradient only
    scale = model.config.w // 2 * model.config.n_channels if cfg.loss_reduction == "norm" else 1
    curve = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = order_rng.permutation(len(ws))
        total = 0.0
        for b in range(0, len(perm), cfg.batch_size):
            idx = perm[b : b + cfg.batch_size]
            batch = make_batch(ws, idx, cfg.N, gen, model.dtype)
            opt.zero_grad(set_to_none=True)
            loss = loss_fn(net, batch, ab)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch)
            (loss * scale).backward()
            if cfg.grad_clip:
                nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
            opt.step()
            total += float(loss.detach()) * len(idx)
        mean = total / len(ws)
        if not math.isfinite(mean):
            raise TrainingDivergedError(epoch)
        curve.append(mean)
        log.info("epoch %d loss %.5f (%.1fs)", epoch, mean, time.perf_counter() - t0)
        if progress:
            progress(epoch, mean)
    net.eval()
    return model, curve


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: DenoiserModel, path, extra: dict | None = None) -> None:
    """Write ``MAGIC | u32 header length | header JSON | float32 LE arrays``."""
    params = model.named_parameters()
    entries, blobs, offset = [], [], 0
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "normalization": model.norm.to_dict(),
        "schedule": [float(b) for b in model.schedule.beta],
        "params": entries,
        "payload_bytes": offset,
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        for b in blobs:
            fh.write(b)


def read_checkpoint_header(path) -> dict:
    raw = Path(path).read_bytes()
    return _parse_header(raw)[0]


def _parse_header(raw: bytes) -> tuple[dict, int]:
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a model checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, len(CHECKPOINT_MAGIC))
    start = len(CHECKPOINT_MAGIC) + 4
    if start + hlen > len(raw):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(raw[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from None
    if not isinstance(header, dict) or "version" not in header:
        raise CheckpointError("corrupted checkpoint header")
    if header["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {header['version']} != supported {CHECKPOINT_VERSION}")
    return header, start + hlen


def load_model(path, expected: ModelConfig | None = None) -> DenoiserModel:
    raw = Path(path).read_bytes()
    header, body = _parse_header(raw)
    try:
        config = ModelConfig(**header["config"])
        norm = Normalization.from_dict(header["normalization"])
        schedule = diffusion.NoiseSchedule(np.asarray(header["schedule"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from None
    if expected is not None and expected != config:
        diff = {k: (v, getattr(config, k)) for k, v in asdict(expected).items() if getattr(config, k) != v}
        raise CheckpointError(f"checkpoint config mismatch (expected, found): {diff}")
    if len(raw) - body != header["payload_bytes"]:
        raise CheckpointError(f"truncated checkpoint: payload {len(raw) - body} of {header['payload_bytes']} bytes")
    net = EpsNet(config)
    state = {}
    for e in header["params"]:
        buf = raw[body + e["offset"] : body + e["offset"] + e["nbytes"]]
        state[e["name"]] = torch.from_numpy(np.frombuffer(buf, dtype="<f4").astype(np.float32).reshape(e["shape"]))
    try:
        net.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint parameters do not match config: {exc}") from None
    net.eval()
    return DenoiserModel(config, net, norm, schedule)
