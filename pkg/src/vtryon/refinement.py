"""Stage IV: salient-region refinement.

FacialRefiner adds residual high-frequency facial detail on top of the coarse
render. ClothingRefiner re-synthesizes the clothing region from a detail
encoder (in-shop clothing) and a warped-clothing encoder (clothing region of
the coarse render), judged by a two-branch global/local context discriminator.
An AdaIN fusion variant blends the two encoder codes for ablations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .coloring import ColoringGenerator
from .errors import DegenerateInputError
from .nn_common import (
    PatchProbDiscriminator,
    bce_scalar,
    conv_in_lrelu,
    he_init,
    to_torch,
    torch_seed,
    zero_init,
)
from .tensors import ImageTensor, Mask

GLOBAL_CROP_SIZE = 128
LOCAL_CROP_SOURCE = 16
LOCAL_CROP_SIZE = 64
BRANCH_FEATURES = 1024

DEFAULT_FACIAL_WEIGHTS = (1.0, 1.0, 1.0, 1.0)      # gan, perceptual, face L1, foreground L1
DEFAULT_CLOTHING_WEIGHTS = (1.0, 1.0, 1.0, 0.1)    # perceptual, L1, fullbody, gan
DEFAULT_TAP_WEIGHTS = (0.2, 0.2, 0.2, 0.2, 0.2)


class FacialRefiner(ColoringGenerator):
    """Coloring-generator topology without the FC bottleneck: two downsampling
    residual stages mirrored by two upsampling stages (four blocks total).
    Emits a tanh-bounded residual; the zero-initialized head makes the residual
    identically zero at construction."""

    def __init__(self, height: int, width: int, base_width: int = 32, seed: int = 0):
        super().__init__(height, width, base_width=base_width, in_channels=6,
                         with_fc=False, n_stages=2, seed=seed)


class FacialDiscriminator(PatchProbDiscriminator):
    """Classifier over the 6-channel (face candidate, source face) pair."""

    def __init__(self, seed: int = 0, widths: tuple[int, ...] = (32, 64, 96, 128)):
        with torch_seed(seed):
            super().__init__(6, widths)
            self.apply(he_init)


def facial_forward(model: FacialRefiner, face_generated: ImageTensor,
                   face_source: ImageTensor) -> ImageTensor:
    """Residual detail d = G_rf(I_g^face, I_s^face). Both inputs are expected
    pre-masked by their face masks."""
    if face_generated.data.shape != face_source.data.shape:
        raise ValueError("face crops must share dims")
    x = np.concatenate([face_generated.data, face_source.data], axis=0)
    model.eval()
    with torch.no_grad():
        out = model(to_torch(x).unsqueeze(0))
    return ImageTensor(out.squeeze(0).numpy())


class PerceptualExtractor(nn.Module):
    """Frozen stride-wise convolutional feature pyramid following the VGG-19
    layer arrangement, tapped at the five pre-pool stage outputs.

    Weights are a deterministic seeded random draw (random convolutional
    features still induce a usable metric); a pretrained/laboratory weight file
    can be loaded through the hook below. Never trained.
    """

    STAGE_CONVS = (2, 2, 4, 4, 4)

    def __init__(self, base_width: int = 16, seed: int = 0,
                 tap_weights: Sequence[float] = DEFAULT_TAP_WEIGHTS):
        super().__init__()
        if len(tap_weights) != 5:
            raise ValueError("exactly five tap weights expected")
        self.tap_weights = tuple(float(w) for w in tap_weights)
        widths = (base_width, 2 * base_width, 4 * base_width, 8 * base_width, 8 * base_width)
        with torch_seed(seed):
            stages = []
            c = 3
            for n_convs, w in zip(self.STAGE_CONVS, widths):
                layers: list[nn.Module] = []
                for _ in range(n_convs):
                    layers += [nn.Conv2d(c, w, 3, 1, 1), nn.ReLU()]
                    c = w
                stages.append(nn.Sequential(*layers))
            self.stages = nn.ModuleList(stages)
            self.apply(he_init)
        # ceil_mode keeps 1x1 maps poolable for tiny gradient-check inputs
        self.pool = nn.MaxPool2d(2, ceil_mode=True)
        self.requires_grad_(False)
        self.eval()

    def taps(self, x: torch.Tensor) -> list[torch.Tensor]:
        outs = []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            outs.append(x)
            if i < len(self.stages) - 1:
                x = self.pool(x)
        return outs

    def save_weights(self, path) -> None:
        from .checkpoints import write_tensor_blob
        with open(path, "wb") as fh:
            fh.write(write_tensor_blob(self.state_dict()))

    def load_weights(self, path) -> None:
        from .checkpoints import read_tensor_blob
        with open(path, "rb") as fh:
            blob, _ = read_tensor_blob(fh.read(), 0)
        self.load_state_dict(blob)


def perceptual_loss_torch(a: torch.Tensor, b: torch.Tensor, ext) -> torch.Tensor:
    taps_a = ext.taps(a)
    taps_b = ext.taps(b)
    weights = getattr(ext, "tap_weights", None) or [1.0] * len(taps_a)
    total = a.new_zeros(())
    for w, fa, fb in zip(weights, taps_a, taps_b):
        total = total + w * (fa - fb).abs().sum()
    return total


def perceptual_loss(a: ImageTensor, b: ImageTensor, ext) -> float:
    """Sum_i lambda_i * ||phi_i(a) - phi_i(b)||_1 over the extractor's taps."""
    if a.data.shape != b.data.shape:
        raise ValueError("images must share dims")
    with torch.no_grad():
        return float(perceptual_loss_torch(
            to_torch(a.data).unsqueeze(0), to_torch(b.data).unsqueeze(0), ext
        ))


def adain_torch(content: torch.Tensor, style: torch.Tensor, epsilon: float = 1e-5) -> torch.Tensor:
    if content.shape[-3] != style.shape[-3]:
        raise ValueError("content and style must share channel count")
    dims = (-2, -1)
    mu_c = content.mean(dim=dims, keepdim=True)
    mu_s = style.mean(dim=dims, keepdim=True)
    # population std; the max() guard keeps constant inputs finite
    std_c = content.var(dim=dims, keepdim=True, unbiased=False).sqrt()
    std_s = style.var(dim=dims, keepdim=True, unbiased=False).sqrt()
    return std_s * (content - mu_c) / std_c.clamp_min(epsilon) + mu_s


def adain(content: np.ndarray, style: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Match the content features' per-channel statistics to the style's.

    Statistics are taken per channel over the spatial dims; a constant content
    channel maps to the style mean everywhere.
    """
    out = adain_torch(to_torch(np.asarray(content, dtype=np.float32)),
                      to_torch(np.asarray(style, dtype=np.float32)), epsilon)
    return out.numpy()


class ClothingRefiner(nn.Module):
    """Dual-encoder clothing re-synthesizer.

    Detail encoder: four 4x4/2 downsampling convolutions + three 3x3 ones.
    Warped-clothing encoder: four downsampling convolutions + one 3x3, with
    highway connections into the decoder. Decoder: five 3x3 convolutions, the
    last four preceded by 2x2 bicubic upsampling (the first fuses the encoder
    codes at 1/16 resolution so output dims equal input dims).

    fusion="concat" feeds Dec the concatenated codes; fusion="adain" feeds the
    gamma-blend (1-g) * C_w + g * AdaIN(C_w, C_d) used by the ablation.
    """

    def __init__(self, base_width: int = 24, fusion: str = "concat", seed: int = 0):
        super().__init__()
        if fusion not in ("concat", "adain"):
            raise ValueError(f"unknown fusion mode {fusion!r}")
        self.fusion = fusion
        w = base_width
        widths = (w, 2 * w, 3 * w, 4 * w)
        code = widths[-1]
        with torch_seed(seed):
            self.detail_downs = nn.ModuleList(
                conv_in_lrelu(cin, cout, 4, 2)
                for cin, cout in zip((3,) + widths[:-1], widths)
            )
            self.detail_tail = nn.Sequential(
                conv_in_lrelu(code, code, 3, 1),
                conv_in_lrelu(code, code, 3, 1),
                conv_in_lrelu(code, code, 3, 1),
            )
            self.warped_downs = nn.ModuleList(
                conv_in_lrelu(cin, cout, 4, 2)
                for cin, cout in zip((3,) + widths[:-1], widths)
            )
            self.warped_tail = conv_in_lrelu(code, code, 3, 1)
            dec_in = 2 * code if fusion == "concat" else code
            self.dec_fuse = nn.Sequential(
                nn.Conv2d(dec_in, code, 3, 1, 1), nn.InstanceNorm2d(code), nn.ReLU(),
            )
            skip_w = widths[:-1][::-1]  # 1/8, 1/4, 1/2 resolutions
            dec_w = (3 * w, 2 * w, w)
            ups = []
            c = code
            for s, d in zip(skip_w, dec_w):
                ups.append(nn.Sequential(
                    nn.Conv2d(c + s, d, 3, 1, 1), nn.InstanceNorm2d(d), nn.ReLU(),
                ))
                c = d
            self.dec_ups = nn.ModuleList(ups)
            self.head = nn.Conv2d(c, 3, 3, 1, 1)
            self.apply(he_init)
            self.head.apply(zero_init)

    def encode_detail(self, clothing: torch.Tensor) -> torch.Tensor:
        x = clothing
        for down in self.detail_downs:
            x = down(x)
        return self.detail_tail(x)

    def encode_warped(self, warped: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        x = warped
        skips = []
        for down in self.warped_downs:
            x = down(x)
            skips.append(x)
        return self.warped_tail(x), skips[:-1]

    def decode(self, code: torch.Tensor, skips: list[torch.Tensor]) -> torch.Tensor:
        x = self.dec_fuse(code)
        for up, skip in zip(self.dec_ups, reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="bicubic", align_corners=False)
            x = up(torch.cat([x, skip], dim=1))
        x = F.interpolate(x, scale_factor=2, mode="bicubic", align_corners=False)
        return torch.tanh(self.head(x))

    def _check_dims(self, a: torch.Tensor, b: torch.Tensor) -> None:
        if a.shape[-2:] != b.shape[-2:]:
            raise ValueError("clothing and warped-clothing dims disagree")
        if a.shape[-1] % 16 or a.shape[-2] % 16:
            raise ValueError(f"dims must be divisible by 16, got {tuple(a.shape[-2:])}")

    def forward(self, clothing: torch.Tensor, warped: torch.Tensor) -> torch.Tensor:
        if self.fusion != "concat":
            raise ValueError("model built with adain fusion; call forward_adain")
        self._check_dims(clothing, warped)
        code_w, skips = self.encode_warped(warped)
        code_d = self.encode_detail(clothing)
        return self.decode(torch.cat([code_d, code_w], dim=1), skips)

    def forward_adain(self, clothing: torch.Tensor, warped: torch.Tensor,
                      gamma: float) -> torch.Tensor:
        if self.fusion != "adain":
            raise ValueError("model built with concat fusion; call forward")
        if not (0.0 <= gamma <= 1.0):
            raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
        self._check_dims(clothing, warped)
        code_w, skips = self.encode_warped(warped)
        if gamma == 0.0:
            blend = code_w
        else:
            styled = adain_torch(code_w, self.encode_detail(clothing))
            blend = styled if gamma == 1.0 else (1.0 - gamma) * code_w + gamma * styled
        return self.decode(blend, skips)


def clothing_forward(model: ClothingRefiner, clothing: ImageTensor,
                     warped_clothing: ImageTensor) -> ImageTensor:
    """C_r = Dec(E_D(C_t), E_W(I_g^clothing))."""
    model.eval()
    with torch.no_grad():
        out = model(to_torch(clothing.data).unsqueeze(0),
                    to_torch(warped_clothing.data).unsqueeze(0))
    return ImageTensor(out.squeeze(0).numpy())


def clothing_forward_adain(model: ClothingRefiner, clothing: ImageTensor,
                           warped_clothing: ImageTensor, gamma: float) -> ImageTensor:
    """Ablation path: Dec((1-gamma) * E_W + gamma * AdaIN(E_W, E_D))."""
    model.eval()
    with torch.no_grad():
        out = model.forward_adain(to_torch(clothing.data).unsqueeze(0),
                                  to_torch(warped_clothing.data).unsqueeze(0), gamma)
    return ImageTensor(out.squeeze(0).numpy())


class _Branch(nn.Module):
    def __init__(self, convs: nn.Sequential, flat: int):
        super().__init__()
        self.convs = convs
        self.fc = nn.Linear(flat, BRANCH_FEATURES)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.convs(x)
        return self.act(self.fc(f.flatten(1)))


class ContextDiscriminator(nn.Module):
    """Two-branch consistency classifier.

    Global branch: five two-stride 5x5 convolutions over the 128x128 clothing
    bounding box -> 1024 features. Local branch: same pattern except the last
    two convolutions are single-stride 3x3, over a 64x64 enlargement of a
    random 16x16 crop -> 1024 features. A fully connected head over the 2048
    concatenation emits the real-probability.
    """

    def __init__(self, base_width: int = 16, seed: int = 0):
        super().__init__()
        w = base_width
        widths = (w, 2 * w, 3 * w, 4 * w, 5 * w)
        with torch_seed(seed):
            g_layers: list[nn.Module] = []
            c = 3
            for cout in widths:
                g_layers += [nn.Conv2d(c, cout, 5, 2, 2), nn.LeakyReLU(0.2)]
                c = cout
            self.global_branch = _Branch(
                nn.Sequential(*g_layers),
                widths[-1] * (GLOBAL_CROP_SIZE // 32) ** 2,
            )
            l_layers: list[nn.Module] = []
            c = 3
            for i, cout in enumerate(widths):
                if i < 3:
                    l_layers += [nn.Conv2d(c, cout, 5, 2, 2), nn.LeakyReLU(0.2)]
                else:
                    l_layers += [nn.Conv2d(c, cout, 3, 1, 1), nn.LeakyReLU(0.2)]
                c = cout
            self.local_branch = _Branch(
                nn.Sequential(*l_layers),
                widths[-1] * (LOCAL_CROP_SIZE // 8) ** 2,
            )
            self.head = nn.Linear(2 * BRANCH_FEATURES, 1)
            self.apply(he_init)

    def forward(self, global_crop: torch.Tensor, local_crop: torch.Tensor) -> torch.Tensor:
        g = self.global_branch(global_crop)
        l = self.local_branch(local_crop)
        return torch.sigmoid(self.head(torch.cat([g, l], dim=1))).reshape(-1)


class CropRecord(NamedTuple):
    x: int
    y: int


def mask_bounding_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tight (y0, y1, x0, x1) box (exclusive upper bounds) of mask > 0.5."""
    on = np.asarray(mask) > 0.5
    if not on.any():
        raise DegenerateInputError("mask is empty; no bounding box exists")
    rows = np.flatnonzero(on.any(axis=1))
    cols = np.flatnonzero(on.any(axis=0))
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def prepare_context_crops(
    image: torch.Tensor, mask: np.ndarray, rng: np.random.Generator
) -> tuple[torch.Tensor, torch.Tensor, CropRecord]:
    """Cut the clothing bounding box, resize to 128x128, and draw the seeded
    16x16 local crop (in resized-box coordinates) enlarged to 64x64.

    `image` is [B, 3, H, W]; gradients flow through both crops.
    """
    y0, y1, x0, x1 = mask_bounding_box(mask)
    box = image[:, :, y0:y1, x0:x1]
    glob = F.interpolate(box, size=(GLOBAL_CROP_SIZE, GLOBAL_CROP_SIZE),
                         mode="bilinear", align_corners=False)
    span = GLOBAL_CROP_SIZE - LOCAL_CROP_SOURCE
    cx = int(rng.integers(0, span + 1))
    cy = int(rng.integers(0, span + 1))
    patch = glob[:, :, cy:cy + LOCAL_CROP_SOURCE, cx:cx + LOCAL_CROP_SOURCE]
    local = F.interpolate(patch, size=(LOCAL_CROP_SIZE, LOCAL_CROP_SIZE),
                          mode="bilinear", align_corners=False)
    return glob, local, CropRecord(cx, cy)


def context_discriminate(
    model: ContextDiscriminator, clothing_image: ImageTensor, clothing_mask: Mask,
    rng_seed: int | np.random.Generator,
) -> tuple[float, CropRecord]:
    """Probability that the clothing region is real, plus the sampled local
    crop coordinates for reproducibility."""
    rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
           else np.random.default_rng(rng_seed))
    model.eval()
    with torch.no_grad():
        glob, local, record = prepare_context_crops(
            to_torch(clothing_image.data).unsqueeze(0), clothing_mask.data, rng
        )
        prob = model(glob, local)
    return float(prob[0]), record


@dataclass(frozen=True)
class FacialMasks:
    face_generated: np.ndarray
    face_source: np.ndarray
    foreground_generated: np.ndarray
    foreground_target: np.ndarray


def facial_objective_torch(
    residual: torch.Tensor, coarse: torch.Tensor, target: torch.Tensor,
    source: torch.Tensor, masks: FacialMasks,
    weights: Sequence[float], discriminator, ext,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted FacialGAN generator objective: GAN + perceptual + face L1 +
    foreground L1, sums over pixels as written."""
    lf1, lf2, lf3, lf4 = (float(w) for w in weights)
    dt = residual.dtype
    face_g = to_torch(masks.face_generated, dt).unsqueeze(0)
    face_s = to_torch(masks.face_source, dt).unsqueeze(0)
    fg_g = to_torch(masks.foreground_generated, dt).unsqueeze(0)
    fg_t = to_torch(masks.foreground_target, dt).unsqueeze(0)
    refined = residual + coarse
    refined_face = refined * face_g
    target_face = target * face_g
    source_face = source * face_s
    gan = bce_scalar(discriminator(refined_face, source_face), 1.0)
    perc = perceptual_loss_torch(refined_face, target_face, ext)
    face_l1 = (refined_face - target_face).abs().sum()
    fg_l1 = (refined * fg_g - target * fg_t).abs().sum()
    total = lf1 * gan + lf2 * perc + lf3 * face_l1 + lf4 * fg_l1
    return total, {"gan": gan, "perceptual": perc, "face_l1": face_l1, "fg_l1": fg_l1}


def facial_objective(
    residual: ImageTensor, coarse: ImageTensor, target: ImageTensor, source: ImageTensor,
    masks: FacialMasks, weights: Sequence[float], discriminator, ext,
) -> float:
    with torch.no_grad():
        total, _ = facial_objective_torch(
            to_torch(residual.data).unsqueeze(0), to_torch(coarse.data).unsqueeze(0),
            to_torch(target.data).unsqueeze(0), to_torch(source.data).unsqueeze(0),
            masks, weights, discriminator, ext,
        )
    return float(total)


def facial_discriminator_loss_torch(
    residual: torch.Tensor, coarse: torch.Tensor, target: torch.Tensor,
    source: torch.Tensor, masks: FacialMasks, discriminator,
) -> torch.Tensor:
    dt = residual.dtype
    face_g = to_torch(masks.face_generated, dt).unsqueeze(0)
    face_s = to_torch(masks.face_source, dt).unsqueeze(0)
    fake = ((residual + coarse) * face_g).detach()
    real = target * face_g
    src = source * face_s
    return bce_scalar(discriminator(fake, src), 0.0) + bce_scalar(discriminator(real, src), 1.0)


@dataclass(frozen=True)
class ClothingMasks:
    clothing_generated: np.ndarray
    clothing_target: np.ndarray


def clothing_objective_torch(
    refined: torch.Tensor, target: torch.Tensor, coarse: torch.Tensor,
    masks: ClothingMasks, weights: Sequence[float], discriminator, ext,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted ClothingGAN generator objective: perceptual + L1 + fullbody +
    GAN over the refined composite."""
    lc1, lc2, lc3, lc4 = (float(w) for w in weights)
    dt = refined.dtype
    m_g = to_torch(masks.clothing_generated, dt).unsqueeze(0)
    m_t = to_torch(masks.clothing_target, dt).unsqueeze(0)
    target_clothing = target * m_t
    refined_composite = refined * m_g + coarse * (1.0 - m_g)
    perc = perceptual_loss_torch(refined, target_clothing, ext)
    l1 = (refined - target_clothing).abs().sum()
    fullbody = (refined_composite - target).abs().sum()
    glob, local, _ = prepare_context_crops(refined_composite, masks.clothing_generated, rng)
    gan = bce_scalar(discriminator(glob, local), 1.0)
    total = lc1 * perc + lc2 * l1 + lc3 * fullbody + lc4 * gan
    return total, {"perceptual": perc, "l1": l1, "fullbody": fullbody, "gan": gan}


def clothing_objective(
    refined: ImageTensor, target: ImageTensor, coarse: ImageTensor,
    masks: ClothingMasks, weights: Sequence[float], discriminator, ext,
    rng_seed: int | np.random.Generator = 0,
) -> float:
    rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
           else np.random.default_rng(rng_seed))
    with torch.no_grad():
        total, _ = clothing_objective_torch(
            to_torch(refined.data).unsqueeze(0), to_torch(target.data).unsqueeze(0),
            to_torch(coarse.data).unsqueeze(0), masks, weights, discriminator, ext, rng,
        )
    return float(total)


def clothing_discriminator_loss_torch(
    refined: torch.Tensor, target: torch.Tensor, coarse: torch.Tensor,
    masks: ClothingMasks, discriminator, rng: np.random.Generator,
) -> torch.Tensor:
    dt = refined.dtype
    m_g = to_torch(masks.clothing_generated, dt).unsqueeze(0)
    fake_composite = (refined * m_g + coarse * (1.0 - m_g)).detach()
    glob_f, local_f, _ = prepare_context_crops(fake_composite, masks.clothing_generated, rng)
    glob_r, local_r, _ = prepare_context_crops(target, masks.clothing_target, rng)
    return (bce_scalar(discriminator(glob_f, local_f), 0.0)
            + bce_scalar(discriminator(glob_r, local_r), 1.0))
