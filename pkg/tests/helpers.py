"""Shared test utilities: random batches and a finite-difference gradient oracle."""

import numpy as np
import torch

from candiff import denoiser as dn


def random_batch(cfg: dn.ModelConfig, B: int, N: int, seed: int = 0, dtype=torch.float64) -> dn.Batch:
    g = torch.Generator().manual_seed(seed)
    w, h = cfg.w, cfg.w // 2
    cond = torch.randn((B, w, cfg.cond_channels), generator=g, dtype=torch.float64).to(dtype)
    cond[:, :, 1] = (torch.arange(w) < w // 4).to(dtype)
    return dn.Batch(
        torch.randn((B, w, cfg.n_channels), generator=g, dtype=torch.float64).to(dtype),
        cond[:, :, 1].contiguous(),
        cond,
        torch.randn((B, cfg.n_scalars), generator=g, dtype=torch.float64).to(dtype),
        torch.randint(1, N + 1, (B,), generator=g),
        torch.randn((B, h, cfg.n_channels), generator=g, dtype=torch.float64).to(dtype),
    )


def gradient_check(cfg: dn.ModelConfig, seed: int = 0, h: float = 1e-4, per_tensor: int = 4, floor: float = 1e-6) -> float:
    """Max relative error between autograd and central differences over sampled entries of every tensor.

    The zero-initialized output head is randomized first so every parameter carries gradient.
    """
    from candiff.diffusion import linear_schedule

    model = dn.init_model(cfg, seed, dtype=torch.float64)
    g = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        model.net.final_conv.weight.copy_(torch.randn(model.net.final_conv.weight.shape, generator=g, dtype=torch.float64) * 0.3)
        model.net.final_conv.bias.copy_(torch.randn(model.net.final_conv.bias.shape, generator=g, dtype=torch.float64) * 0.1)
    schedule = linear_schedule(100)
    batch = random_batch(cfg, 2, 100, seed)
    _, grads = dn.loss_and_gradients(model, batch, schedule)
    ab = dn.alpha_bar_table(schedule)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in model.net.named_parameters():
        flat = p.data.view(-1)
        picks = rng.choice(flat.numel(), size=min(per_tensor, flat.numel()), replace=False)
        for i in picks:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
                up = dn.loss_fn(model.net, batch, ab).item()
                flat[i] = orig - h
                down = dn.loss_fn(model.net, batch, ab).item()
                flat[i] = orig
            fd = (up - down) / (2 * h)
            an = grads[name].reshape(-1)[i]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), floor))
    return worst
