"""Desk-scale pixel-space denoising diffusion with text conditioning."""
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn

from ._validation import check_cond, check_images


class NumericalError(RuntimeError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, msg, losses):
        super().__init__(msg)
        self.losses = losses


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # float64, index t-1 for step t

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or len(b) < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if np.any(b <= 0) or np.any(b >= 1) or np.any(np.diff(b) < 0):
            raise ValueError("betas must be non-decreasing inside (0, 1)")
        object.__setattr__(self, "betas", b)

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        """Cumulative products with alpha_bar[0] = 1, so index t is step t."""
        return np.concatenate([[1.0], np.cumprod(self.alphas)])

    def posterior_variance(self, t: int) -> float:
        ab = self.alpha_bars
        return float(self.betas[t - 1] * (1.0 - ab[t - 1]) / (1.0 - ab[t]))


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02, kind: str = "linear") -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if kind != "linear":
        raise ValueError(f"unsupported schedule kind {kind!r}")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def _per_item(values: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    v = torch.as_tensor(values, dtype=like.dtype)[t]
    return v.reshape(-1, *([1] * (like.dim() - 1))) if v.dim() else v


def q_sample(z0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Forward noising z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps; t per item or scalar, in [1, T]."""
    if z0.shape != eps.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} does not match z0 {tuple(z0.shape)}")
    tt = torch.as_tensor(t)
    if torch.any(tt < 1) or torch.any(tt > schedule.T):
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    ab = schedule.alpha_bars
    return _per_item(np.sqrt(ab), t, z0) * z0 + _per_item(np.sqrt(1.0 - ab), t, z0) * eps


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    return emb.to(torch.get_default_dtype())


class Denoiser(nn.Module):
    """Two-level conv encoder-decoder predicting the added noise.

    Timestep (sinusoidal) and text conditioning are projected and added to the
    bottleneck feature map.
    """

    def __init__(self, channels=3, base=16, cond_dim=64, time_dim=32):
        super().__init__()
        self.config = {"channels": channels, "base": base, "cond_dim": cond_dim, "time_dim": time_dim}
        c = base
        self.time_dim = time_dim
        self.enc1 = nn.Conv2d(channels, c, 3, padding=1)
        self.down1 = nn.Conv2d(c, 2 * c, 4, stride=2, padding=1)
        self.down2 = nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1)
        self.time_proj = nn.Linear(time_dim, 4 * c)
        self.cond_proj = nn.Linear(cond_dim, 4 * c)
        self.mid = nn.Conv2d(4 * c, 4 * c, 3, padding=1)
        self.up2 = nn.ConvTranspose2d(4 * c, 2 * c, 4, stride=2, padding=1)
        self.dec2 = nn.Conv2d(4 * c, 2 * c, 3, padding=1)
        self.up1 = nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1)
        self.dec1 = nn.Conv2d(2 * c, c, 3, padding=1)
        self.out = nn.Conv2d(c, channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, z, t, cond):
        a = self.act
        h1 = a(self.enc1(z))
        h2 = a(self.down1(h1))
        h3 = a(self.down2(h2))
        emb = self.time_proj(timestep_embedding(t, self.time_dim)) + self.cond_proj(cond)
        h3 = a(self.mid(h3 + emb[:, :, None, None]))
        u2 = a(self.dec2(torch.cat([a(self.up2(h3)), h2], dim=1)))
        u1 = a(self.dec1(torch.cat([a(self.up1(u2)), h1], dim=1)))
        return self.out(u1)


def draw_noise(shape, generator: torch.Generator, dtype=None) -> torch.Tensor:
    return torch.randn(shape, generator=generator, dtype=dtype or torch.get_default_dtype())


def draw_timesteps(n: int, schedule: NoiseSchedule, generator: torch.Generator) -> torch.Tensor:
    return torch.randint(1, schedule.T + 1, (n,), generator=generator)


def diffusion_loss(predict: Callable, z0: torch.Tensor, cond: torch.Tensor, schedule: NoiseSchedule,
                   generator: Optional[torch.Generator] = None, t=None, eps=None,
                   reduction: str = "sum") -> torch.Tensor:
    """Batch mean of ||eps - predict(z_t, t, cond)||^2.

    ``reduction="sum"`` sums squared error over pixels (the textbook objective);
    ``"mean"`` divides that by C*H*W. t and eps are drawn from ``generator``
    unless given.
    """
    if z0.shape[0] == 0:
        raise ValueError("empty batch")
    if t is None:
        t = draw_timesteps(z0.shape[0], schedule, generator)
    if eps is None:
        eps = draw_noise(z0.shape, generator, z0.dtype)
    zt = q_sample(z0, t, eps, schedule)
    pred = predict(zt, t, cond)
    if not torch.isfinite(pred).all():
        raise NumericalError(f"non-finite predictions at timesteps {t.tolist()}")
    per_item = ((eps - pred) ** 2).flatten(1).sum(dim=1)
    if reduction == "mean":
        per_item = per_item / z0[0].numel()
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return per_item.mean()


def sgd_train(loss_fn: Callable, params: list, steps: int, lr: float, divergence_factor: float = 10.0,
              divergence_patience: int = 100) -> list:
    """Plain fixed-rate gradient descent; ``loss_fn(step)`` returns a scalar tensor."""
    losses = []
    over = 0
    for step in range(steps):
        for p in params:
            p.grad = None
        loss = loss_fn(step)
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite loss at step {step}")
        loss.backward()
        with torch.no_grad():
            for p in params:
                if p.grad is not None and lr != 0:
                    p.sub_(lr * p.grad)
        value = float(loss.detach())
        losses.append(value)
        over = over + 1 if value > divergence_factor * losses[0] else 0
        if over >= divergence_patience:
            raise DivergenceError(
                f"loss above {divergence_factor}x its initial value for {over} steps (step {step})", losses)
    return losses


def batch_indices(n: int, batch_size: int, generator: torch.Generator) -> torch.Tensor:
    if n <= batch_size:
        return torch.arange(n)
    return torch.randperm(n, generator=generator)[:batch_size]


def train(model: nn.Module, z0: torch.Tensor, cond: torch.Tensor, schedule: NoiseSchedule, steps: int,
          lr: float, seed: int, batch_size: int = 8, reduction: str = "mean") -> list:
    """Fit a denoiser in place; returns the per-step loss curve."""
    if len(z0) == 0:
        raise ValueError("training set is empty")
    gen = torch.Generator().manual_seed(int(seed))

    def step_loss(_):
        idx = batch_indices(len(z0), batch_size, gen)
        return diffusion_loss(model, z0[idx], cond[idx], schedule, gen, reduction=reduction)

    params = [p for p in model.parameters() if p.requires_grad]
    return sgd_train(step_loss, params, steps, lr)


@torch.no_grad()
def ancestral_sample(predict: Callable, shape, schedule: NoiseSchedule, generator: torch.Generator,
                     clip: bool = True) -> torch.Tensor:
    """DDPM ancestral sampling from z_T ~ N(0, I) to z_0.

    ``predict(z_t, t, *)`` is the noise predictor with conditioning bound;
    the step variance is the posterior variance, zero at t = 1.
    """
    z = draw_noise(shape, generator)
    ab = schedule.alpha_bars
    for t in range(schedule.T, 0, -1):
        tt = torch.full((shape[0],), t, dtype=torch.long)
        eps = predict(z, tt)
        beta = schedule.betas[t - 1]
        z = (z - beta / math.sqrt(1.0 - ab[t]) * eps) / math.sqrt(1.0 - beta)
        if t > 1:
            z = z + math.sqrt(schedule.posterior_variance(t)) * draw_noise(shape, generator)
    return z.clamp(-1.0, 1.0) if clip else z


def sample(model: nn.Module, cond: torch.Tensor, schedule: NoiseSchedule, seed: int, shape=None) -> torch.Tensor:
    """Images for each row of ``cond``; deterministic in seed."""
    cond = torch.as_tensor(cond, dtype=torch.get_default_dtype())
    if cond.dim() == 1:
        cond = cond[None]
    shape = shape or (cond.shape[0], model.config["channels"], 64, 64)
    gen = torch.Generator().manual_seed(int(seed))
    model.eval()
    return ancestral_sample(lambda z, t: model(z, t, cond), shape, schedule, gen)


class DiffusionModel(BaseEstimator):
    """Estimator wrapper: ``fit(images, cond)`` trains, ``sample(cond, seed)`` generates.

    Images are (N, C, H, W) arrays in [-1, 1]; cond is (N, cond_dim).
    """

    def __init__(self, image_size=64, channels=3, cond_dim=64, base_channels=16, T=50, beta_start=1e-4,
                 beta_end=0.02, lr=0.05, steps=200, batch_size=8, seed=0):
        self.image_size = image_size
        self.channels = channels
        self.cond_dim = cond_dim
        self.base_channels = base_channels
        self.T = T
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed

    def build(self):
        torch.manual_seed(self.seed)
        self.model_ = Denoiser(self.channels, self.base_channels, self.cond_dim)
        self.schedule_ = make_schedule(self.T, self.beta_start, self.beta_end)
        self.loss_curve_ = []
        return self

    def fit(self, X, cond):
        X = check_images(X, self.channels, self.image_size)
        cond = check_cond(cond, len(X), self.cond_dim)
        if not hasattr(self, "model_"):
            self.build()
        self.loss_curve_ = train(self.model_, torch.as_tensor(X, dtype=torch.float32),
                                 torch.as_tensor(cond, dtype=torch.float32), self.schedule_,
                                 self.steps, self.lr, self.seed, self.batch_size)
        return self

    def sample(self, cond, seed=0) -> np.ndarray:
        cond = check_cond(cond, None, self.cond_dim)
        shape = (len(cond), self.channels, self.image_size, self.image_size)
        return sample(self.model_, torch.as_tensor(cond, dtype=torch.float32), self.schedule_, seed, shape).numpy()
