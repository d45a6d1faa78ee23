"""Shared tensor data model and the pure algebra every pipeline stage consumes.

Images are 3xHxW float32 arrays in [-1, 1]; body poses are 18-channel Gaussian
heatmap stacks; body-part segmentations are 20-channel one-hot stacks. All
operations here are pure functions of their inputs and thread-safe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

N_JOINTS = 18
JOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "neck", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

N_PARSING_CHANNELS = 20
PARSING_LABELS = (
    "background", "hair", "face", "neck", "top_clothes",
    "left_arm", "right_arm", "left_hand", "right_hand", "pants",
    "left_leg", "right_leg", "left_shoe", "right_shoe",
    # 14-19 reserved; all-zero in synthetic data
    "reserved_14", "reserved_15", "reserved_16", "reserved_17",
    "reserved_18", "reserved_19",
)
LABEL_BACKGROUND = 0
LABEL_HAIR = 1
LABEL_FACE = 2
LABEL_NECK = 3
LABEL_TOP_CLOTHES = 4
LABEL_LEFT_ARM = 5
LABEL_RIGHT_ARM = 6
LABEL_LEFT_HAND = 7
LABEL_RIGHT_HAND = 8
LABEL_PANTS = 9
LABEL_LEFT_LEG = 10
LABEL_RIGHT_LEG = 11
LABEL_LEFT_SHOE = 12
LABEL_RIGHT_SHOE = 13

FACE_GROUP_CHANNELS = (LABEL_HAIR, LABEL_FACE, LABEL_NECK)

DEFAULT_SIGMA_BASE = 6.0  # pixels at a 192-wide reference resolution


def default_sigma(height: int, width: int) -> float:
    """Heatmap spread scaled with resolution: 6 px at min(H, W) = 192."""
    return DEFAULT_SIGMA_BASE * min(height, width) / 192.0


class Joint(NamedTuple):
    x: int
    y: int
    visible: bool


@dataclass(frozen=True)
class KeypointSet:
    """Fixed-order sequence of the 18 body joints (see JOINT_NAMES)."""

    joints: tuple[Joint, ...]

    def __post_init__(self) -> None:
        if len(self.joints) != N_JOINTS:
            raise ValueError(f"expected {N_JOINTS} joints, got {len(self.joints)}")
        object.__setattr__(
            self, "joints", tuple(Joint(int(j[0]), int(j[1]), bool(j[2])) for j in self.joints)
        )

    def validate_bounds(self, height: int, width: int) -> None:
        for k, j in enumerate(self.joints):
            if j.visible and not (0 <= j.x < width and 0 <= j.y < height):
                raise ValueError(
                    f"visible joint {JOINT_NAMES[k]} at ({j.x}, {j.y}) outside {height}x{width} grid"
                )

    def scaled(self, factor: float, height: int, width: int) -> "KeypointSet":
        """Rescale coordinates into an height x width grid (nearest pixel, clamped)."""
        joints = []
        for j in self.joints:
            x = min(max(int(round(j.x * factor)), 0), width - 1)
            y = min(max(int(round(j.y * factor)), 0), height - 1)
            joints.append(Joint(x, y, j.visible))
        return KeypointSet(tuple(joints))


@dataclass
class ImageTensor:
    """3-channel image, values in [-1, 1], dims divisible by 8 (stride-8 extractors)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError(f"image must be [3 x H x W], got {self.data.shape}")
        h, w = self.data.shape[1:]
        if h < 8 or w < 8 or h % 8 or w % 8:
            raise ValueError(f"image dims must be >= 8 and divisible by 8, got {h}x{w}")
        if self.data.min() < -1.0 - 1e-6 or self.data.max() > 1.0 + 1e-6:
            raise ValueError("image values must lie in [-1, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class KeypointTensor:
    """18-channel heatmap stack. Built tensors are Gaussian peaks in [0, 1];
    raw network predictions reuse this container with unclamped values."""

    data: np.ndarray
    sigma: float

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != N_JOINTS:
            raise ValueError(f"keypoint tensor must be [{N_JOINTS} x H x W], got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class ParsingTensor:
    """20-channel body-part segmentation stack (one-hot when built from labels)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != N_PARSING_CHANNELS:
            raise ValueError(
                f"parsing tensor must be [{N_PARSING_CHANNELS} x H x W], got {self.data.shape}"
            )

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def argmax_labels(self) -> np.ndarray:
        return np.argmax(self.data, axis=0).astype(np.uint8)


@dataclass
class Mask:
    """Single-channel [H x W] mask with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"mask must be [H x W], got {self.data.shape}")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")


def build_keypoint_tensor(
    keypoints: KeypointSet, sigma: float, height: int, width: int
) -> KeypointTensor:
    """Render each visible joint as a 2D Gaussian peak, exp(-d^2 / sigma^2).

    The peak value is exactly 1.0 at the joint pixel; invisible joints yield
    all-zero channels. Coordinates are interpreted in the height x width grid.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    keypoints.validate_bounds(height, width)
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    data = np.zeros((N_JOINTS, height, width), dtype=np.float32)
    for k, j in enumerate(keypoints.joints):
        if not j.visible:
            continue
        d2 = (xs - j.x) ** 2 + (ys - j.y) ** 2
        data[k] = np.exp(-d2 / (sigma * sigma)).astype(np.float32)
    return KeypointTensor(data, float(sigma))


def decode_keypoints(heatmaps: KeypointTensor, threshold: float) -> KeypointSet:
    """Inverse of build_keypoint_tensor: per-channel argmax with row-major tie-break.

    A joint is visible when its channel maximum reaches `threshold`; otherwise
    it decodes as (0, 0, invisible).
    """
    if not (0.0 < threshold <= 1.0):
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    joints = []
    h, w = heatmaps.height, heatmaps.width
    flat = heatmaps.data.reshape(N_JOINTS, -1)
    for k in range(N_JOINTS):
        idx = int(np.argmax(flat[k]))  # first max in row-major order
        if flat[k, idx] >= threshold:
            joints.append(Joint(idx % w, idx // w, True))
        else:
            joints.append(Joint(0, 0, False))
    return KeypointSet(tuple(joints))


def one_hot_parsing(labels: np.ndarray, n_channels: int = N_PARSING_CHANNELS) -> ParsingTensor:
    """One-hot encode an [H x W] integer label map into an n-channel stack."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be [H x W], got {labels.shape}")
    if labels.min() < 0 or labels.max() >= n_channels:
        raise ValueError(
            f"labels must lie in [0, {n_channels}), got range [{labels.min()}, {labels.max()}]"
        )
    h, w = labels.shape
    data = np.zeros((n_channels, h, w), dtype=np.float32)
    chans = labels.astype(np.intp)
    data[chans, np.arange(h)[:, None], np.arange(w)[None, :]] = 1.0
    return ParsingTensor(data)


def substitute_clothing_channel(parsing: ParsingTensor, clothing_mask: Mask) -> ParsingTensor:
    """Replace the top-clothes channel with the in-shop clothing mask verbatim.

    All other channels are copied bit-for-bit; the result is NOT guaranteed to
    be one-hot.
    """
    if clothing_mask.data.shape != parsing.data.shape[1:]:
        raise ValueError(
            f"mask shape {clothing_mask.data.shape} does not match parsing "
            f"{parsing.data.shape[1:]}"
        )
    out = parsing.data.copy()
    out[LABEL_TOP_CLOTHES] = clothing_mask.data
    return ParsingTensor(out)


def mask_image(image: ImageTensor, mask: Mask) -> ImageTensor:
    """Pixel-wise multiplication of every channel by the mask."""
    if mask.data.shape != image.data.shape[1:]:
        raise ValueError(
            f"mask shape {mask.data.shape} does not match image {image.data.shape[1:]}"
        )
    return ImageTensor(image.data * mask.data[None])


def select_channels(parsing: ParsingTensor, group: str) -> Mask:
    """Collapse a channel group to a mask.

    foreground = 1 - background channel; face = max over hair/face/neck;
    clothing = the top-clothes channel.
    """
    if group == "foreground":
        data = 1.0 - parsing.data[LABEL_BACKGROUND]
    elif group == "face":
        data = parsing.data[list(FACE_GROUP_CHANNELS)].max(axis=0)
    elif group == "clothing":
        data = parsing.data[LABEL_TOP_CLOTHES]
    else:
        raise ValueError(f"unknown channel group {group!r}")
    return Mask(np.clip(data, 0.0, 1.0))


def composite_refined(refined: ImageTensor, base: ImageTensor, mask: Mask) -> ImageTensor:
    """refined (x) m + base (x) (1 - m): splice the refined region into the base image."""
    if refined.data.shape != base.data.shape:
        raise ValueError("refined and base images must share dims")
    if mask.data.shape != base.data.shape[1:]:
        raise ValueError("mask dims must match image dims")
    m = mask.data[None]
    return ImageTensor(refined.data * m + base.data * (1.0 - m))


def remove_clothing(image: ImageTensor, parsing: ParsingTensor) -> ImageTensor:
    """Zero out the top-clothes region: I (x) (1 - clothing channel)."""
    if parsing.data.shape[1:] != image.data.shape[1:]:
        raise ValueError("parsing dims must match image dims")
    return ImageTensor(image.data * (1.0 - parsing.data[LABEL_TOP_CLOTHES])[None])
