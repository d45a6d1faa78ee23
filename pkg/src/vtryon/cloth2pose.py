"""Stage I: regress a try-on pose heatmap stack directly from an in-shop clothing image.

A stride-8 convolutional backbone produces a clothing feature map; a chain of
progressive refinement blocks turns it into 18-channel keypoint heatmaps, each
block consuming the features plus the previous block's prediction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError
from .nn_common import he_init, to_torch, torch_seed, zero_init
from .tensors import N_JOINTS, ImageTensor, KeypointTensor

DEFAULT_LAMBDA_SPARSITY = 0.00008  # higher kills all candidates, lower leaves duplicates


@dataclass
class ClothFeatureMap:
    """Backbone output at 1/8 resolution: [C_f x H/8 x W/8]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"feature map must be [C x h x w], got {self.data.shape}")


def _stride8_backbone(base_width: int) -> nn.Sequential:
    # VGG-19 layer arrangement truncated at its first 10 (weighted) layers:
    # widths b,b | 2b,2b | 4b,4b,4b,4b | 8b,8b with pools after layers 2, 4, 8.
    widths = [base_width, base_width,
              2 * base_width, 2 * base_width,
              4 * base_width, 4 * base_width, 4 * base_width, 4 * base_width,
              8 * base_width, 8 * base_width]
    layers: list[nn.Module] = []
    c = 3
    for i, w in enumerate(widths):
        layers += [nn.Conv2d(c, w, 3, 1, 1), nn.ReLU()]
        c = w
        if i in (1, 3, 7):
            layers.append(nn.MaxPool2d(2))
    return nn.Sequential(*layers)


class _RefineBlock(nn.Module):
    """Five 7x7 convolutions + two 1x1; ReLU after every layer except the
    final 18-channel emission."""

    def __init__(self, cin: int, width: int):
        super().__init__()
        seq: list[nn.Module] = [nn.Conv2d(cin, width, 7, 1, 3), nn.ReLU()]
        for _ in range(4):
            seq += [nn.Conv2d(width, width, 7, 1, 3), nn.ReLU()]
        seq += [nn.Conv2d(width, width, 1), nn.ReLU()]
        self.body = nn.Sequential(*seq)
        self.head = nn.Conv2d(width, N_JOINTS, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.body(x))


class C2PModel(nn.Module):
    """Clothing-to-pose regressor: stride-8 backbone + N refinement blocks.

    Block 1 consumes only the feature map F; blocks i >= 2 consume
    concat(F, previous prediction).
    """

    def __init__(
        self,
        base_width: int = 16,
        block_width: int = 128,
        n_blocks: int = 4,
        lambda_sparsity: float = DEFAULT_LAMBDA_SPARSITY,
        seed: int = 0,
        zero_init_heads: bool = True,
    ):
        super().__init__()
        if n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        self.n_blocks = n_blocks
        self.lambda_sparsity = float(lambda_sparsity)
        self.feature_channels = 8 * base_width
        with torch_seed(seed):
            self.extractor = _stride8_backbone(base_width)
            cin = [self.feature_channels] + [self.feature_channels + N_JOINTS] * (n_blocks - 1)
            self.blocks = nn.ModuleList(_RefineBlock(c, block_width) for c in cin)
            self.apply(he_init)
            if zero_init_heads:
                for b in self.blocks:
                    b.head.apply(zero_init)

    def extract(self, clothing: torch.Tensor) -> torch.Tensor:
        if clothing.shape[-1] % 8 or clothing.shape[-2] % 8:
            raise ValueError(f"input dims must be divisible by 8, got {tuple(clothing.shape[-2:])}")
        return self.extractor(clothing)

    def forward(self, clothing: torch.Tensor) -> list[torch.Tensor]:
        return self.refine(self.extract(clothing))

    def refine(self, features: torch.Tensor) -> list[torch.Tensor]:
        pred = self.blocks[0](features)
        preds = [pred]
        for block in self.blocks[1:]:
            pred = block(torch.cat([features, pred], dim=1))
            preds.append(pred)
        return preds

    def save_extractor_weights(self, path) -> None:
        from .checkpoints import write_tensor_blob
        with open(path, "wb") as fh:
            fh.write(write_tensor_blob(self.extractor.state_dict()))

    def load_extractor_weights(self, path) -> None:
        from .checkpoints import read_tensor_blob
        with open(path, "rb") as fh:
            blob, _ = read_tensor_blob(fh.read(), 0)
        try:
            self.extractor.load_state_dict(blob)
        except RuntimeError as exc:
            raise ConfigError(f"extractor weight file does not match topology: {exc}") from exc


def extract_cloth_features(model: C2PModel, clothing: ImageTensor) -> ClothFeatureMap:
    """Deterministic stride-8 feature map of the in-shop clothing image."""
    model.eval()
    with torch.no_grad():
        feats = model.extract(to_torch(clothing.data).unsqueeze(0))
    return ClothFeatureMap(feats.squeeze(0).numpy())


def c2p_forward(model: C2PModel, features: ClothFeatureMap) -> list[KeypointTensor]:
    """Run the refinement chain; returns one raw heatmap stack per block."""
    model.eval()
    with torch.no_grad():
        preds = model.refine(to_torch(features.data).unsqueeze(0))
    # sigma is not meaningful for raw predictions; carried as 0.0
    return [KeypointTensor(p.squeeze(0).numpy(), 0.0) for p in preds]


def c2p_loss_torch(
    predictions: Sequence[torch.Tensor], target: torch.Tensor, lambda_sparsity: float
) -> torch.Tensor:
    """Sum over blocks of squared-L2 distance to the target plus an L1 sparsity
    penalty on the final block (plain sums over all elements, no averaging)."""
    for p in predictions:
        if p.shape != target.shape:
            raise ValueError(f"prediction shape {tuple(p.shape)} != target {tuple(target.shape)}")
    l2 = sum(((p - target) ** 2).sum() for p in predictions)
    return l2 + lambda_sparsity * predictions[-1].abs().sum()


def c2p_loss(
    predictions: Sequence[KeypointTensor],
    target: KeypointTensor,
    lambda_sparsity: float = DEFAULT_LAMBDA_SPARSITY,
) -> float:
    preds = [to_torch(p.data, torch.float64) for p in predictions]
    return float(c2p_loss_torch(preds, to_torch(target.data, torch.float64), lambda_sparsity))
