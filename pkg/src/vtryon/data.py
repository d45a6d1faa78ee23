"""Triplet data model and dataset I/O.

A triplet couples one in-shop garment (image + mask) with the same figure in
two poses, each carrying ground-truth keypoints and parsing labels. On disk a
triplet is a directory of PNGs and keypoint JSON files (see FILES).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .tensors import (
    N_JOINTS,
    N_PARSING_CHANNELS,
    ImageTensor,
    Joint,
    KeypointSet,
    Mask,
)

FILES = (
    "clothing.png", "clothing_mask.png",
    "person_a.png", "person_b.png",
    "keypoints_a.json", "keypoints_b.json",
    "parsing_a.png", "parsing_b.png",
)

TRAIN_SPLIT_NUMERATOR = 9590
SPLIT_DENOMINATOR = 11283

# fixed palette so parsing PNGs are byte-stable and eyeballable
_PALETTE = []
for i in range(256):
    _PALETTE += [(i * 37) % 256, (i * 97) % 256, (i * 163) % 256] if i else [0, 0, 0]


@dataclass
class PersonRecord:
    """One rendered figure: image, 18 keypoints, integer parsing label map."""

    image: ImageTensor
    keypoints: KeypointSet
    parsing: np.ndarray

    def __post_init__(self) -> None:
        self.parsing = np.asarray(self.parsing)
        if self.parsing.shape != (self.image.height, self.image.width):
            raise ValueError("parsing label map dims must match the image")
        if self.parsing.min() < 0 or self.parsing.max() >= N_PARSING_CHANNELS:
            raise ValueError("parsing labels out of range")


@dataclass
class Triplet:
    clothing: ImageTensor
    clothing_mask: Mask
    source: PersonRecord
    target: PersonRecord

    def __post_init__(self) -> None:
        dims = {
            self.clothing.data.shape[1:], self.clothing_mask.data.shape,
            self.source.image.data.shape[1:], self.target.image.data.shape[1:],
        }
        if len(dims) != 1:
            raise ValueError(f"triplet members disagree on dims: {sorted(dims)}")


def image_to_png_bytes(image: ImageTensor) -> np.ndarray:
    """[-1, 1] float -> 8-bit RGB array (HWC)."""
    v = np.clip((image.data + 1.0) * 127.5, 0.0, 255.0)
    return np.round(v).astype(np.uint8).transpose(1, 2, 0)


def png_array_to_image(arr: np.ndarray) -> ImageTensor:
    """8-bit RGB array (HWC) -> [-1, 1] float image: v -> 2v/255 - 1."""
    return ImageTensor(arr.astype(np.float32).transpose(2, 0, 1) * (2.0 / 255.0) - 1.0)


def save_image_png(image: ImageTensor, path: Path) -> None:
    Image.fromarray(image_to_png_bytes(image), mode="RGB").save(path, format="PNG")


def load_image_png(path: Path) -> ImageTensor:
    with Image.open(path) as im:
        return png_array_to_image(np.asarray(im.convert("RGB")))


def save_mask_png(mask: Mask, path: Path) -> None:
    arr = np.round(mask.data * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_mask_png(path: Path) -> Mask:
    with Image.open(path) as im:
        return Mask(np.asarray(im.convert("L"), dtype=np.float32) / 255.0)


def save_parsing_png(labels: np.ndarray, path: Path) -> None:
    im = Image.fromarray(labels.astype(np.uint8), mode="P")
    im.putpalette(_PALETTE)
    im.save(path, format="PNG")


def load_parsing_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("P", "L"):
            raise ValueError(f"parsing file {path} must be an 8-bit indexed PNG, got {im.mode}")
        return np.asarray(im, dtype=np.uint8)


def keypoints_to_json(keypoints: KeypointSet) -> str:
    records = [{"x": j.x, "y": j.y, "visible": j.visible} for j in keypoints.joints]
    return json.dumps(records, indent=1) + "\n"


def keypoints_from_json(text: str) -> KeypointSet:
    records = json.loads(text)
    if not isinstance(records, list) or len(records) != N_JOINTS:
        raise ValueError(f"keypoint file must hold a sequence of {N_JOINTS} records")
    return KeypointSet(tuple(Joint(int(r["x"]), int(r["y"]), bool(r["visible"]))
                             for r in records))


def save_triplet(triplet: Triplet, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_image_png(triplet.clothing, directory / "clothing.png")
    save_mask_png(triplet.clothing_mask, directory / "clothing_mask.png")
    for tag, rec in (("a", triplet.source), ("b", triplet.target)):
        save_image_png(rec.image, directory / f"person_{tag}.png")
        (directory / f"keypoints_{tag}.json").write_text(
            keypoints_to_json(rec.keypoints), encoding="utf-8")
        save_parsing_png(rec.parsing, directory / f"parsing_{tag}.png")


def load_triplet(directory: Path) -> Triplet:
    directory = Path(directory)
    triplet_id = directory.name
    for name in FILES:
        if not (directory / name).exists():
            raise FileNotFoundError(
                f"triplet {triplet_id!r} is missing file {name!r} (in {directory})")

    def record(tag: str) -> PersonRecord:
        return PersonRecord(
            image=load_image_png(directory / f"person_{tag}.png"),
            keypoints=keypoints_from_json(
                (directory / f"keypoints_{tag}.json").read_text(encoding="utf-8")),
            parsing=load_parsing_png(directory / f"parsing_{tag}.png"),
        )

    return Triplet(
        clothing=load_image_png(directory / "clothing.png"),
        clothing_mask=load_mask_png(directory / "clothing_mask.png"),
        source=record("a"),
        target=record("b"),
    )


class TripletDataset(Sequence):
    """Lazily loadable triplet sequence with stable lexicographic ordering."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.ids = sorted(p.name for p in self.root.iterdir() if p.is_dir()) \
            if self.root.is_dir() else []

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        return load_triplet(self.root / self.ids[index])

    def __iter__(self) -> Iterator[Triplet]:
        for i in range(len(self)):
            yield self[i]


def load_dataset(root: Path) -> TripletDataset:
    return TripletDataset(root)


def split_dataset(items: Sequence, seed: int = 0) -> tuple[list, list]:
    """Randomly split with the default train fraction 9590/11283."""
    n = len(items)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * TRAIN_SPLIT_NUMERATOR / SPLIT_DENOMINATOR))
    train = [items[int(i)] for i in order[:n_train]]
    test = [items[int(i)] for i in order[n_train:]]
    return train, test
