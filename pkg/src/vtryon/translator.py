"""Stage II: translate source parsing + target pose into the target parsing tensor.

A conditional GAN maps the 39-channel concatenation (substituted source
parsing, upsampled pose heatmaps, clothing mask) to a 20-channel soft parsing;
hard labels come from the per-pixel argmax.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .nn_common import (
    PatchProbDiscriminator,
    bce_scalar,
    clamped_log,
    he_init,
    to_torch,
    torch_seed,
    upsample2x,
)
from .tensors import N_JOINTS, N_PARSING_CHANNELS, ParsingTensor

TRANSLATOR_IN_CHANNELS = N_PARSING_CHANNELS + N_JOINTS + 1  # 39
DEFAULT_LAMBDA_BCE = 10.0


class _HighwayBlock(nn.Module):
    """Two single-stride 3x3 convolutions whose output is concatenated onto the
    block input (channel growth `growth`)."""

    def __init__(self, cin: int, growth: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, growth, 3, 1, 1), nn.InstanceNorm2d(growth), nn.ReLU(),
            nn.Conv2d(growth, growth, 3, 1, 1), nn.InstanceNorm2d(growth), nn.ReLU(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.cat([x, self.body(x)], dim=1)


class TranslatorGenerator(nn.Module):
    """Two downsampling layers -> nine highway residual blocks -> two upsampling
    layers -> per-channel sigmoid over 20 parsing channels."""

    def __init__(self, width: int = 48, growth: int = 16, n_blocks: int = 9, seed: int = 0):
        super().__init__()
        with torch_seed(seed):
            self.down1 = nn.Sequential(
                nn.Conv2d(TRANSLATOR_IN_CHANNELS, width, 3, 2, 1),
                nn.InstanceNorm2d(width), nn.ReLU(),
            )
            self.down2 = nn.Sequential(
                nn.Conv2d(width, 2 * width, 3, 2, 1),
                nn.InstanceNorm2d(2 * width), nn.ReLU(),
            )
            c = 2 * width
            blocks = []
            for _ in range(n_blocks):
                blocks.append(_HighwayBlock(c, growth))
                c += growth
            self.blocks = nn.Sequential(*blocks)
            self.up1 = nn.Sequential(
                nn.Conv2d(c, width, 3, 1, 1), nn.InstanceNorm2d(width), nn.ReLU(),
            )
            self.head = nn.Conv2d(width, N_PARSING_CHANNELS, 3, 1, 1)
            self.apply(he_init)

    def forward_logits(self, m_in: torch.Tensor) -> torch.Tensor:
        if m_in.shape[1] != TRANSLATOR_IN_CHANNELS:
            raise ValueError(
                f"translator input must have {TRANSLATOR_IN_CHANNELS} channels, got {m_in.shape[1]}"
            )
        if m_in.shape[-1] % 4 or m_in.shape[-2] % 4:
            raise ValueError(f"spatial dims must be divisible by 4, got {tuple(m_in.shape[-2:])}")
        x = self.down2(self.down1(m_in))
        x = self.blocks(x)
        x = self.up1(upsample2x(x))
        return self.head(upsample2x(x))

    def forward(self, m_in: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward_logits(m_in))


class TranslatorDiscriminator(PatchProbDiscriminator):
    """Conditional classifier over concat(M_in, parsing tensor)."""

    def __init__(self, seed: int = 0, widths: tuple[int, ...] = (32, 64, 96, 128)):
        with torch_seed(seed):
            super().__init__(TRANSLATOR_IN_CHANNELS + N_PARSING_CHANNELS, widths)
            self.apply(he_init)


def build_translator_input(
    parsing_sub: ParsingTensor, pose: np.ndarray, clothing_mask: np.ndarray
) -> np.ndarray:
    """Concatenate substituted parsing, pose heatmaps (bilinearly upsampled to
    image resolution when needed), and clothing mask into the 39-channel input."""
    h, w = parsing_sub.height, parsing_sub.width
    pose = np.asarray(pose, dtype=np.float32)
    if pose.shape[1:] != (h, w):
        t = to_torch(pose).unsqueeze(0)
        pose = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)[0].numpy()
    return np.concatenate(
        [parsing_sub.data, pose, np.asarray(clothing_mask, dtype=np.float32)[None]], axis=0
    )


def translator_forward(model: TranslatorGenerator, m_in: np.ndarray) -> ParsingTensor:
    """Soft 20-channel parsing for a 39-channel input map."""
    model.eval()
    with torch.no_grad():
        out = model(to_torch(np.asarray(m_in, dtype=np.float32)).unsqueeze(0))
    return ParsingTensor(out.squeeze(0).numpy())


def translator_gan_loss_torch(
    d_fake: torch.Tensor, d_real: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    gen = -clamped_log(d_fake).mean()
    disc = -clamped_log(d_real).mean() - clamped_log(1.0 - d_fake).mean()
    return gen, disc


def translator_gan_loss(generator, discriminator, m_in, m_target) -> tuple[float, float]:
    """CGAN terms: generator = -log D(M_in, G(M_in));
    discriminator = -log D(M_in, M_t) - log(1 - D(M_in, G(M_in)))."""
    x = to_torch(np.asarray(m_in, dtype=np.float32)).unsqueeze(0)
    t = to_torch(np.asarray(m_target.data if isinstance(m_target, ParsingTensor) else m_target,
                            dtype=np.float32)).unsqueeze(0)
    with torch.no_grad():
        fake = generator(x)
        d_fake = torch.as_tensor(discriminator(x, fake), dtype=torch.float64).reshape(-1)
        d_real = torch.as_tensor(discriminator(x, t), dtype=torch.float64).reshape(-1)
    gen, disc = translator_gan_loss_torch(d_fake, d_real)
    return float(gen), float(disc)


def translator_bce_loss_torch(soft: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if soft.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(soft.shape)} vs {tuple(target.shape)}")
    return -(target * clamped_log(soft) + (1.0 - target) * clamped_log(1.0 - soft)).sum()


def translator_bce_loss(soft: ParsingTensor, target: ParsingTensor) -> float:
    """Pixel-wise binary cross-entropy summed over all channels and pixels."""
    return float(
        translator_bce_loss_torch(
            to_torch(soft.data, torch.float64), to_torch(target.data, torch.float64)
        )
    )


def translator_objective(gan_generator_term: float, bce_term: float,
                         lambda_bce: float = DEFAULT_LAMBDA_BCE) -> float:
    return gan_generator_term + lambda_bce * bce_term
