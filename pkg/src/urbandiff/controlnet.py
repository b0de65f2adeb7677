"""ControlNet: a frozen denoiser plus a trainable copy joined by zero convolutions.

    y_c = F(x; locked) + zout(F(x + zin(c); trainable))

With zin and zout zero at construction the branch adds exactly 0.0, so the
controlled output equals the locked output bit for bit until training moves
the zero convolutions.
"""
import copy
import hashlib

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn

from ._validation import check_cond, check_images
from .diffusion import (Denoiser, NoiseSchedule, ancestral_sample, batch_indices,
                        diffusion_loss, sgd_train)


def zero_conv(in_ch: int, out_ch: int) -> nn.Conv2d:
    conv = nn.Conv2d(in_ch, out_ch, 1)
    nn.init.zeros_(conv.weight)
    nn.init.zeros_(conv.bias)
    return conv


class ControlNet(nn.Module):
    def __init__(self, locked: Denoiser, control_channels: int = 3):
        super().__init__()
        channels = locked.config["channels"]
        if control_channels < 1:
            raise ValueError("control_channels must be positive")
        self.control_channels = control_channels
        self.locked = copy.deepcopy(locked)
        for p in self.locked.parameters():
            p.requires_grad_(False)
        self.trainable = copy.deepcopy(locked)
        for p in self.trainable.parameters():
            p.requires_grad_(True)
        self.zin = zero_conv(control_channels, channels)
        self.zout = zero_conv(channels, channels)

    def trainable_parameters(self) -> list:
        return [*self.trainable.parameters(), *self.zin.parameters(), *self.zout.parameters()]

    def forward(self, x, t, cond, control):
        if control.shape[1] != self.control_channels:
            raise ValueError(f"control has {control.shape[1]} channels, expected {self.control_channels}")
        if control.shape[0] != x.shape[0] and control.shape[0] != 1:
            raise ValueError(f"control batch {control.shape[0]} does not match input batch {x.shape[0]}")
        if control.shape[2:] != x.shape[2:]:
            raise ValueError(f"control is {tuple(control.shape[2:])}, model input is {tuple(x.shape[2:])}")
        y = self.locked(x, t, cond)
        branch = self.trainable(x + self.zin(control), t, cond)
        return y + self.zout(branch)


def init_controlnet(locked: Denoiser, control_channels: int = 3) -> ControlNet:
    return ControlNet(locked, control_channels)


def forward_controlled(x, cond, control, p: ControlNet, t):
    return p(x, t, cond, control)


def module_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def train_controlnet(p: ControlNet, z0: torch.Tensor, cond: torch.Tensor, control: torch.Tensor,
                     schedule: NoiseSchedule, steps: int, lr: float, seed: int, batch_size: int = 8,
                     reduction: str = "mean") -> list:
    """Fixed-rate descent on the noise-prediction loss, updating only the branch and zero convs."""
    if len(z0) == 0:
        raise ValueError("training set is empty")
    gen = torch.Generator().manual_seed(int(seed))

    def step_loss(_):
        idx = batch_indices(len(z0), batch_size, gen)
        ctrl = control[idx]
        return diffusion_loss(lambda z, t, c: p(z, t, c, ctrl), z0[idx], cond[idx], schedule, gen,
                              reduction=reduction)

    p.train()
    return sgd_train(step_loss, p.trainable_parameters(), steps, lr)


def sample_controlled(p: ControlNet, cond, control, schedule: NoiseSchedule, seed: int, shape) -> torch.Tensor:
    cond = torch.as_tensor(cond, dtype=torch.get_default_dtype())
    control = torch.as_tensor(control, dtype=torch.get_default_dtype())
    if cond.dim() == 1:
        cond = cond[None]
    if control.dim() == 3:
        control = control[None]
    gen = torch.Generator().manual_seed(int(seed))
    p.eval()
    return ancestral_sample(lambda z, t: p(z, t, cond, control), shape, schedule, gen)


def control_tensor(pixels: np.ndarray, size: int = None) -> np.ndarray:
    """(H, W, 3) uint8 control image -> (3, size, size) floats in [0, 1], nearest resize."""
    from PIL import Image
    img = Image.fromarray(np.asarray(pixels, dtype=np.uint8))
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.NEAREST)
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


class ControlNetModel(BaseEstimator):
    """Estimator wrapper around a fitted ``DiffusionModel`` used as the locked copy.

    ``fit(images, cond, control)`` trains the branch; ``sample(cond, control, seed)`` generates.
    """

    def __init__(self, base=None, control_channels=3, lr=0.05, steps=500, batch_size=8, seed=0):
        self.base = base
        self.control_channels = control_channels
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed

    def build(self):
        if self.base is None or not hasattr(self.base, "model_"):
            raise ValueError("ControlNetModel needs a built or fitted DiffusionModel as base")
        self.net_ = init_controlnet(self.base.model_, self.control_channels)
        self.schedule_ = self.base.schedule_
        self.loss_curve_ = []
        return self

    def fit(self, X, cond, control):
        if not hasattr(self, "net_"):
            self.build()
        b = self.base
        X = check_images(X, b.channels, b.image_size)
        cond = check_cond(cond, len(X), b.cond_dim)
        control = check_images(control, self.control_channels, b.image_size, name="control")
        f32 = torch.float32
        self.loss_curve_ = train_controlnet(
            self.net_, torch.as_tensor(X, dtype=f32), torch.as_tensor(cond, dtype=f32),
            torch.as_tensor(control, dtype=f32), self.schedule_, self.steps, self.lr, self.seed,
            self.batch_size)
        return self

    def sample(self, cond, control, seed=0) -> np.ndarray:
        b = self.base
        cond = check_cond(cond, None, b.cond_dim)
        control = check_images(control, self.control_channels, b.image_size, name="control")
        if len(control) == 1 and len(cond) > 1:
            control = np.repeat(control, len(cond), axis=0)
        shape = (len(cond), b.channels, b.image_size, b.image_size)
        out = sample_controlled(self.net_, torch.as_tensor(cond, dtype=torch.float32),
                                torch.as_tensor(control, dtype=torch.float32), self.schedule_, seed, shape)
        return out.numpy()

