"""Stage III: render person appearance and clothing texture into the generated
parsing to produce the coarse try-on image.

UNet-shaped generator with three downsampling residual stages, a 256-unit fully
connected bottleneck at 1/8 resolution, and mirrored upsampling stages with
highway connections.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .nn_common import (
    PatchProbDiscriminator,
    bce_scalar,
    he_init,
    to_torch,
    torch_seed,
    upsample2x,
    zero_init,
)
from .tensors import ImageTensor, Mask, ParsingTensor

COLORING_IN_CHANNELS = 3 + 3 + 20  # clothing, clothed-removed person, parsing
DEFAULT_LAMBDA_L1 = 10.0


class _ConvPair(nn.Module):
    """Two single-stride 3x3 convolutions with a projected additive skip."""

    def __init__(self, cin: int, width: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, width, 3, 1, 1), nn.InstanceNorm2d(width), nn.ReLU(),
            nn.Conv2d(width, width, 3, 1, 1), nn.InstanceNorm2d(width),
        )
        self.skip = nn.Identity() if cin == width else nn.Conv2d(cin, width, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.skip(x) + self.body(x))


class ColoringGenerator(nn.Module):
    """Encoder (blocks of two convs + two-stride downsampling conv), 256-unit FC
    bottleneck, mirrored decoder with highway connections, tanh output.

    Filter counts increase linearly through the encoder and decrease through
    the decoder. The FC bottleneck ties the module to its construction dims.
    """

    def __init__(self, height: int, width: int, base_width: int = 32,
                 bottleneck: int = 256, in_channels: int = COLORING_IN_CHANNELS,
                 out_channels: int = 3, with_fc: bool = True, n_stages: int = 3,
                 seed: int = 0):
        super().__init__()
        if height % (2 ** n_stages) or width % (2 ** n_stages):
            raise ValueError(f"dims must be divisible by {2 ** n_stages}, got {height}x{width}")
        self.height, self.width = height, width
        self.with_fc = with_fc
        widths = [base_width * (i + 1) for i in range(n_stages + 1)]
        with torch_seed(seed):
            self.enc_pairs = nn.ModuleList()
            self.downs = nn.ModuleList()
            c = in_channels
            for i in range(n_stages):
                self.enc_pairs.append(_ConvPair(c, widths[i]))
                self.downs.append(nn.Sequential(
                    nn.Conv2d(widths[i], widths[i + 1], 3, 2, 1),
                    nn.InstanceNorm2d(widths[i + 1]), nn.ReLU(),
                ))
                c = widths[i + 1]
            if with_fc:
                flat = widths[-1] * (height >> n_stages) * (width >> n_stages)
                self.fc_in = nn.Linear(flat, bottleneck)
                self.fc_out = nn.Linear(bottleneck, flat)
            self.up_convs = nn.ModuleList()
            self.dec_pairs = nn.ModuleList()
            for i in reversed(range(n_stages)):
                self.up_convs.append(nn.Sequential(
                    nn.Conv2d(widths[i + 1], widths[i], 3, 1, 1),
                    nn.InstanceNorm2d(widths[i]), nn.ReLU(),
                ))
                self.dec_pairs.append(_ConvPair(2 * widths[i], widths[i]))
            self.head = nn.Conv2d(widths[0], out_channels, 3, 1, 1)
            self.apply(he_init)
            self.head.apply(zero_init)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != (self.height, self.width):
            raise ValueError(
                f"expected {self.height}x{self.width} input, got {tuple(x.shape[-2:])}"
            )
        skips = []
        for pair, down in zip(self.enc_pairs, self.downs):
            x = pair(x)
            skips.append(x)
            x = down(x)
        if self.with_fc:
            b, c, h, w = x.shape
            x = F.relu(self.fc_out(F.relu(self.fc_in(x.reshape(b, -1))))).reshape(b, c, h, w)
        for up, pair, skip in zip(self.up_convs, self.dec_pairs, reversed(skips)):
            x = up(upsample2x(x))
            x = pair(torch.cat([x, skip], dim=1))
        return torch.tanh(self.head(x))


class ColoringDiscriminator(PatchProbDiscriminator):
    """Classifier over the 6-channel (candidate image, source image) pair."""

    def __init__(self, seed: int = 0, widths: tuple[int, ...] = (32, 64, 96, 128)):
        with torch_seed(seed):
            super().__init__(6, widths)
            self.apply(he_init)


def coloring_forward(
    model: ColoringGenerator,
    clothing: ImageTensor,
    person_noclothes: ImageTensor,
    parsing: ParsingTensor,
) -> ImageTensor:
    """I_g = G_c(C_t, I'_s, M_g): coarse try-on render in tanh range."""
    shapes = {clothing.data.shape[1:], person_noclothes.data.shape[1:],
              parsing.data.shape[1:]}
    if len(shapes) != 1:
        raise ValueError(f"input spatial dims disagree: {sorted(shapes)}")
    x = np.concatenate([clothing.data, person_noclothes.data, parsing.data], axis=0)
    model.eval()
    with torch.no_grad():
        out = model(to_torch(x).unsqueeze(0))
    return ImageTensor(out.squeeze(0).numpy())


def coloring_l1_loss_torch(
    generated: torch.Tensor, fg_generated: torch.Tensor,
    target: torch.Tensor, fg_target: torch.Tensor,
) -> torch.Tensor:
    if generated.shape != target.shape:
        raise ValueError("image shapes disagree")
    if fg_generated.shape[-2:] != generated.shape[-2:] or fg_target.shape[-2:] != target.shape[-2:]:
        raise ValueError("mask dims must match image dims")
    fg_g = fg_generated.unsqueeze(-3)
    fg_t = fg_target.unsqueeze(-3)
    return (generated * fg_g - target * fg_t).abs().sum()


def coloring_l1_loss(generated: ImageTensor, fg_generated: Mask,
                     target: ImageTensor, fg_target: Mask) -> float:
    """Sum over pixels and channels of |I_g (x) fg_g - I_t (x) fg_t|."""
    return float(coloring_l1_loss_torch(
        to_torch(generated.data, torch.float64), to_torch(fg_generated.data, torch.float64),
        to_torch(target.data, torch.float64), to_torch(fg_target.data, torch.float64),
    ))


def coloring_gan_losses_torch(
    d_fake: torch.Tensor, d_real: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    gen = bce_scalar(d_fake, 1.0)
    disc = bce_scalar(d_fake, 0.0) + bce_scalar(d_real, 1.0)
    return gen, disc


def coloring_gan_losses(
    generator: ColoringGenerator,
    discriminator,
    inputs: tuple[ImageTensor, ImageTensor, ParsingTensor],
    target: ImageTensor,
    source: ImageTensor,
) -> tuple[float, float]:
    """Generator: BCE(D(I_g, I_s), 1). Discriminator: BCE(D(I_g, I_s), 0) +
    BCE(D(I_t, I_s), 1), with I_g = G_c(*inputs)."""
    generated = coloring_forward(generator, *inputs)
    with torch.no_grad():
        i_g = to_torch(generated.data).unsqueeze(0)
        i_t = to_torch(target.data).unsqueeze(0)
        i_s = to_torch(source.data).unsqueeze(0)
        d_fake = torch.as_tensor(discriminator(i_g, i_s), dtype=torch.float64).reshape(-1)
        d_real = torch.as_tensor(discriminator(i_t, i_s), dtype=torch.float64).reshape(-1)
    gen, disc = coloring_gan_losses_torch(d_fake, d_real)
    return float(gen), float(disc)


def coloring_objective(gan_generator_term: float, l1_term: float,
                       lambda_l1: float = DEFAULT_LAMBDA_L1) -> float:
    return gan_generator_term + lambda_l1 * l1_term
