"""Shared torch building blocks: seeded init, conv stacks, clamped BCE."""
from __future__ import annotations

import contextlib

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

LOG_EPS = 1e-7  # all log arguments clamped to [LOG_EPS, 1 - LOG_EPS]


@contextlib.contextmanager
def torch_seed(seed: int):
    """Run a block under a fixed global torch RNG state, then restore it."""
    state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        yield
    finally:
        torch.random.set_rng_state(state)


def he_init(module: nn.Module) -> None:
    """Kaiming-normal (ReLU gain) weights, zero biases.

    Keeps activation scale roughly constant through deep random stacks, which
    the low stage learning rates rely on.
    """
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def zero_init(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        nn.init.zeros_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(LOG_EPS, 1.0 - LOG_EPS))


def bce_scalar(prob: torch.Tensor, target: float) -> torch.Tensor:
    """Binary cross-entropy against a constant 0/1 target, clamped logs, batch mean."""
    prob = prob.reshape(-1)
    if target == 1.0:
        return -clamped_log(prob).mean()
    if target == 0.0:
        return -clamped_log(1.0 - prob).mean()
    raise ValueError(f"target must be 0 or 1, got {target}")


def conv_in_lrelu(cin: int, cout: int, kernel: int, stride: int, slope: float = 0.2) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride, kernel // 2),
        nn.InstanceNorm2d(cout),
        nn.LeakyReLU(slope),
    )


class ResidualBlock(nn.Module):
    """Two 3x3 single-stride convolutions with an additive skip (width preserved)."""

    def __init__(self, width: int, norm: bool = True):
        super().__init__()
        layers = [nn.Conv2d(width, width, 3, 1, 1)]
        if norm:
            layers.append(nn.InstanceNorm2d(width))
        layers += [nn.ReLU(), nn.Conv2d(width, width, 3, 1, 1)]
        if norm:
            layers.append(nn.InstanceNorm2d(width))
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(x + self.body(x))


class PatchProbDiscriminator(nn.Module):
    """K two-stride 5x5 convolutions -> global average -> single sigmoid unit."""

    def __init__(self, in_channels: int, widths: tuple[int, ...] = (32, 64, 96, 128)):
        super().__init__()
        layers: list[nn.Module] = []
        c = in_channels
        for w in widths:
            layers += [nn.Conv2d(c, w, 5, 2, 2), nn.LeakyReLU(0.2)]
            c = w
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(c, 1)

    def forward(self, *parts: torch.Tensor) -> torch.Tensor:
        x = torch.cat(parts, dim=1)
        f = self.features(x).mean(dim=(2, 3))
        return torch.sigmoid(self.head(f)).reshape(-1)


def to_torch(array: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(array)).to(dtype)


def upsample2x(x: torch.Tensor, mode: str = "bilinear") -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode=mode, align_corners=False)
