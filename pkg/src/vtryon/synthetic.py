"""Synthetic triplet generator.

Renders an articulated stick figure (capsule limbs, elliptical head) at two
seeded poses, plus the flat in-shop garment both figures wear. Parsing labels
and keypoints are emitted analytically, so every downstream stage has exact
ground truth. Deterministic in the seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import PersonRecord, Triplet
from .tensors import (
    ImageTensor,
    Joint,
    KeypointSet,
    LABEL_BACKGROUND,
    LABEL_FACE,
    LABEL_HAIR,
    LABEL_LEFT_ARM,
    LABEL_LEFT_HAND,
    LABEL_LEFT_LEG,
    LABEL_LEFT_SHOE,
    LABEL_NECK,
    LABEL_PANTS,
    LABEL_RIGHT_ARM,
    LABEL_RIGHT_HAND,
    LABEL_RIGHT_LEG,
    LABEL_RIGHT_SHOE,
    LABEL_TOP_CLOTHES,
    Mask,
)

TEXTURE_KINDS = ("solid", "stripes", "plaid", "logo")

# label sets a joint may legitimately land in (later-drawn parts can cover a
# joint that geometrically belongs to an earlier one)
JOINT_REGION_GROUPS: tuple[frozenset, ...] = (
    frozenset({LABEL_FACE}),                             # nose
    frozenset({LABEL_FACE}),                             # left eye
    frozenset({LABEL_FACE}),                             # right eye
    frozenset({LABEL_FACE, LABEL_HAIR}),                 # left ear
    frozenset({LABEL_FACE, LABEL_HAIR}),                 # right ear
    frozenset({LABEL_NECK, LABEL_TOP_CLOTHES, LABEL_FACE, LABEL_HAIR}),  # neck
    frozenset({LABEL_TOP_CLOTHES, LABEL_LEFT_ARM}),      # left shoulder
    frozenset({LABEL_TOP_CLOTHES, LABEL_RIGHT_ARM}),     # right shoulder
    frozenset({LABEL_LEFT_ARM, LABEL_TOP_CLOTHES}),      # left elbow
    frozenset({LABEL_RIGHT_ARM, LABEL_TOP_CLOTHES}),     # right elbow
    frozenset({LABEL_LEFT_HAND, LABEL_LEFT_ARM}),        # left wrist
    frozenset({LABEL_RIGHT_HAND, LABEL_RIGHT_ARM}),      # right wrist
    frozenset({LABEL_PANTS, LABEL_TOP_CLOTHES}),         # left hip
    frozenset({LABEL_PANTS, LABEL_TOP_CLOTHES}),         # right hip
    frozenset({LABEL_LEFT_LEG, LABEL_PANTS}),            # left knee
    frozenset({LABEL_RIGHT_LEG, LABEL_PANTS}),           # right knee
    frozenset({LABEL_LEFT_SHOE, LABEL_LEFT_LEG}),        # left ankle
    frozenset({LABEL_RIGHT_SHOE, LABEL_RIGHT_LEG}),      # right ankle
)

_BACKGROUND_COLOR = (0.86, 0.87, 0.88)
_GARMENT_BACKGROUND = (0.93, 0.93, 0.93)


@dataclass(frozen=True)
class TextureSpec:
    """Procedural garment texture: one of solid | stripes | plaid | logo."""

    kind: str
    base: tuple[float, float, float]
    accent: tuple[float, float, float]
    accent2: tuple[float, float, float]
    count: int = 5
    vertical: bool = False

    def __post_init__(self) -> None:
        if self.kind not in TEXTURE_KINDS:
            raise ValueError(f"unknown texture kind {self.kind!r}")

    @property
    def class_index(self) -> int:
        return TEXTURE_KINDS.index(self.kind)


def _color(rng: np.random.Generator) -> tuple[float, float, float]:
    return tuple(np.round(rng.uniform(0.10, 0.90, 3), 4))


def _contrasting(rng: np.random.Generator, other) -> tuple[float, float, float]:
    for _ in range(50):
        c = _color(rng)
        if max(abs(a - b) for a, b in zip(c, other)) >= 0.30:
            return c
    return tuple(round(1.0 - v, 4) for v in other)


def sample_texture_spec(rng: np.random.Generator, kind: str | None = None) -> TextureSpec:
    kind = kind if kind is not None else TEXTURE_KINDS[int(rng.integers(0, len(TEXTURE_KINDS)))]
    base = _color(rng)
    accent = _contrasting(rng, base)
    accent2 = _contrasting(rng, accent)
    return TextureSpec(kind=kind, base=base, accent=accent, accent2=accent2,
                       count=int(rng.integers(4, 8)), vertical=bool(rng.integers(0, 2)))


def texture_colors(spec: TextureSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Evaluate the texture over normalized coordinates; returns [3 x ...]."""
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0 - 1e-9)
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0 - 1e-9)
    base = np.asarray(spec.base, dtype=np.float32).reshape(3, *([1] * u.ndim))
    accent = np.asarray(spec.accent, dtype=np.float32).reshape(base.shape)
    out = np.broadcast_to(base, (3,) + u.shape).copy()
    if spec.kind == "solid":
        return out
    if spec.kind == "stripes":
        band = np.floor((u if spec.vertical else v) * spec.count).astype(int) % 2 == 1
        out = np.where(band[None], accent, out)
        return out
    if spec.kind == "plaid":
        accent2 = np.asarray(spec.accent2, dtype=np.float32).reshape(base.shape)
        cols = np.floor(u * spec.count).astype(int) % 2 == 1
        rows = np.floor(v * spec.count).astype(int) % 2 == 1
        out = np.where(cols[None], 0.5 * (out + accent), out)
        out = np.where(rows[None], 0.5 * (out + accent2), out)
        return out
    # logo: a plus-shaped glyph in the garment center
    glyph = (np.abs(u - 0.5) < 0.09) & (np.abs(v - 0.5) < 0.26)
    glyph |= (np.abs(v - 0.5) < 0.09) & (np.abs(u - 0.5) < 0.26)
    out = np.where(glyph[None], accent, out)
    return out


@dataclass(frozen=True)
class BodySpec:
    skin: tuple[float, float, float]
    hair: tuple[float, float, float]
    pants: tuple[float, float, float]
    shoes: tuple[float, float, float]
    shoulder_half: float  # fractions of H
    hip_half: float


def sample_body_spec(rng: np.random.Generator) -> BodySpec:
    skin = tuple(np.round((rng.uniform(0.55, 0.9), rng.uniform(0.4, 0.7), rng.uniform(0.3, 0.55)), 4))
    hair = tuple(np.round(rng.uniform(0.05, 0.45, 3), 4))
    pants = tuple(np.round(rng.uniform(0.1, 0.7, 3), 4))
    shoes = tuple(np.round(rng.uniform(0.05, 0.5, 3), 4))
    return BodySpec(skin=skin, hair=hair, pants=pants, shoes=shoes,
                    shoulder_half=0.085 + float(rng.uniform(-0.008, 0.008)),
                    hip_half=0.055 + float(rng.uniform(-0.005, 0.005)))


# --- rasterization helpers -------------------------------------------------

def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    return (np.arange(w, dtype=np.float64)[None, :].repeat(h, 0),
            np.arange(h, dtype=np.float64)[:, None].repeat(w, 1))


def _capsule(xx, yy, p0, p1, radius: float) -> np.ndarray:
    ax, ay = p0
    bx, by = p1
    abx, aby = bx - ax, by - ay
    denom = abx * abx + aby * aby
    if denom == 0:
        return (xx - ax) ** 2 + (yy - ay) ** 2 <= radius * radius
    t = np.clip(((xx - ax) * abx + (yy - ay) * aby) / denom, 0.0, 1.0)
    dx = xx - (ax + t * abx)
    dy = yy - (ay + t * aby)
    return dx * dx + dy * dy <= radius * radius


def _ellipse(xx, yy, cx, cy, rx, ry) -> np.ndarray:
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def _convex_quad(xx, yy, pts) -> np.ndarray:
    # winding-agnostic: inside = cross products consistently signed
    pos = np.ones_like(xx, dtype=bool)
    neg = np.ones_like(xx, dtype=bool)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        pos &= cross >= 0
        neg &= cross <= 0
    return pos | neg


# --- figure synthesis ------------------------------------------------------

def _sample_pose(rng: np.random.Generator, h: int, w: int, body: BodySpec) -> dict[str, tuple[float, float]]:
    cx = 0.5 * w + float(rng.uniform(-0.05, 0.05)) * w
    sy = (0.30 + float(rng.uniform(-0.02, 0.02))) * h
    sh = body.shoulder_half * h
    hh = body.hip_half * h
    hy = sy + 0.24 * h
    ua, fa = 0.13 * h, 0.11 * h
    thigh, shin = 0.15 * h, 0.13 * h

    def arm(side: int) -> tuple[tuple, tuple, tuple]:
        shoulder = (cx + side * sh, sy)
        t_u = float(rng.uniform(0.25, 1.0))
        t_f = min(max(t_u + float(rng.uniform(-0.5, 0.7)), 0.05), 1.7)
        elbow = (shoulder[0] + side * ua * math.sin(t_u), shoulder[1] + ua * math.cos(t_u))
        wrist = (elbow[0] + side * fa * math.sin(t_f), elbow[1] + fa * math.cos(t_f))
        return shoulder, elbow, wrist

    def leg(side: int) -> tuple[tuple, tuple, tuple]:
        hip = (cx + side * hh, hy)
        t_t = float(rng.uniform(0.02, 0.30))
        t_s = min(max(t_t + float(rng.uniform(-0.15, 0.20)), 0.0), 0.45)
        knee = (hip[0] + side * thigh * math.sin(t_t), hip[1] + thigh * math.cos(t_t))
        ankle = (knee[0] + side * shin * math.sin(t_s), knee[1] + shin * math.cos(t_s))
        return hip, knee, ankle

    l_sho, l_elb, l_wri = arm(+1)
    r_sho, r_elb, r_wri = arm(-1)
    l_hip, l_kne, l_ank = leg(+1)
    r_hip, r_kne, r_ank = leg(-1)
    head_rx, head_ry = 0.045 * h, 0.058 * h
    head_cx = cx + float(rng.uniform(-0.015, 0.015)) * h
    head_cy = sy - 0.030 * h - head_ry
    pose = {
        "neck": (cx, sy),
        "l_sho": l_sho, "r_sho": r_sho, "l_elb": l_elb, "r_elb": r_elb,
        "l_wri": l_wri, "r_wri": r_wri,
        "l_hip": l_hip, "r_hip": r_hip, "l_kne": l_kne, "r_kne": r_kne,
        "l_ank": l_ank, "r_ank": r_ank,
        "head": (head_cx, head_cy), "head_r": (head_rx, head_ry),
        "nose": (head_cx, head_cy + 0.35 * head_ry),
        "l_eye": (head_cx + 0.45 * head_rx, head_cy),
        "r_eye": (head_cx - 0.45 * head_rx, head_cy),
        "l_ear": (head_cx + head_rx - 1.5, head_cy + 0.10 * head_ry),
        "r_ear": (head_cx - head_rx + 1.5, head_cy + 0.10 * head_ry),
    }
    return pose


def _clamp_point(p, h, w) -> tuple[int, int]:
    return (min(max(int(round(p[0])), 3), w - 4), min(max(int(round(p[1])), 3), h - 4))


def _render_person(pose: dict, body: BodySpec, spec: TextureSpec,
                   h: int, w: int) -> PersonRecord:
    xx, yy = _grid(h, w)
    labels = np.full((h, w), LABEL_BACKGROUND, dtype=np.uint8)

    pts = {k: _clamp_point(v, h, w) for k, v in pose.items() if k not in ("head", "head_r")}
    head_cx, head_cy = pose["head"]
    head_rx, head_ry = pose["head_r"]
    arm_r = max(2.0, 0.016 * h)
    leg_r = max(2.0, 0.020 * h)
    hand_r = max(2.0, 0.022 * h)
    shoe_r = max(2.2, 0.024 * h)
    neck_r = max(2.0, 0.015 * h)

    def paint(mask, label):
        labels[mask] = label

    # painter's order fixed so each joint ends inside its allowed label group
    paint(_capsule(xx, yy, pts["l_kne"], pts["l_ank"], leg_r), LABEL_LEFT_LEG)
    paint(_capsule(xx, yy, pts["r_kne"], pts["r_ank"], leg_r), LABEL_RIGHT_LEG)
    sy = pts["l_sho"][1]
    hy = pts["l_hip"][1]
    pelvis = [
        (pts["r_hip"][0] - 0.025 * h, hy - 0.02 * h),
        (pts["r_hip"][0] - 0.025 * h, hy + 0.045 * h),
        (pts["l_hip"][0] + 0.025 * h, hy + 0.045 * h),
        (pts["l_hip"][0] + 0.025 * h, hy - 0.02 * h),
    ]
    paint(_convex_quad(xx, yy, pelvis), LABEL_PANTS)
    paint(_capsule(xx, yy, pts["l_hip"], pts["l_kne"], leg_r + 1.0), LABEL_PANTS)
    paint(_capsule(xx, yy, pts["r_hip"], pts["r_kne"], leg_r + 1.0), LABEL_PANTS)
    paint(_ellipse(xx, yy, *pts["l_ank"], shoe_r * 1.5, shoe_r), LABEL_LEFT_SHOE)
    paint(_ellipse(xx, yy, *pts["r_ank"], shoe_r * 1.5, shoe_r), LABEL_RIGHT_SHOE)
    torso = [
        (pts["r_sho"][0] - 0.020 * h, sy - 0.030 * h),
        (pts["r_hip"][0] - 0.030 * h, hy + 0.020 * h),
        (pts["l_hip"][0] + 0.030 * h, hy + 0.020 * h),
        (pts["l_sho"][0] + 0.020 * h, sy - 0.030 * h),
    ]
    paint(_convex_quad(xx, yy, torso), LABEL_TOP_CLOTHES)
    paint(_capsule(xx, yy, (pts["neck"][0], head_cy + 0.5 * head_ry),
                   (pts["neck"][0], sy + 1.0), neck_r), LABEL_NECK)
    paint(_capsule(xx, yy, pts["l_sho"], pts["l_elb"], arm_r), LABEL_LEFT_ARM)
    paint(_capsule(xx, yy, pts["l_elb"], pts["l_wri"], arm_r), LABEL_LEFT_ARM)
    paint(_capsule(xx, yy, pts["r_sho"], pts["r_elb"], arm_r), LABEL_RIGHT_ARM)
    paint(_capsule(xx, yy, pts["r_elb"], pts["r_wri"], arm_r), LABEL_RIGHT_ARM)
    paint(_ellipse(xx, yy, *pts["l_wri"], hand_r, hand_r), LABEL_LEFT_HAND)
    paint(_ellipse(xx, yy, *pts["r_wri"], hand_r, hand_r), LABEL_RIGHT_HAND)
    head = _ellipse(xx, yy, head_cx, head_cy, head_rx, head_ry)
    hairline = head_cy - 0.30 * head_ry
    paint(head & (yy <= hairline), LABEL_HAIR)
    paint(head & (yy > hairline), LABEL_FACE)

    # colorize
    img = np.empty((3, h, w), dtype=np.float32)
    img[:] = np.asarray(_BACKGROUND_COLOR, dtype=np.float32).reshape(3, 1, 1)
    fills = {
        LABEL_FACE: body.skin, LABEL_NECK: body.skin,
        LABEL_LEFT_ARM: body.skin, LABEL_RIGHT_ARM: body.skin,
        LABEL_LEFT_HAND: body.skin, LABEL_RIGHT_HAND: body.skin,
        LABEL_LEFT_LEG: body.skin, LABEL_RIGHT_LEG: body.skin,
        LABEL_HAIR: body.hair, LABEL_PANTS: body.pants,
        LABEL_LEFT_SHOE: body.shoes, LABEL_RIGHT_SHOE: body.shoes,
    }
    for label, color in fills.items():
        region = labels == label
        img[:, region] = np.asarray(color, dtype=np.float32)[:, None]
    clothes = labels == LABEL_TOP_CLOTHES
    if clothes.any():
        rows = np.flatnonzero(clothes.any(axis=1))
        cols = np.flatnonzero(clothes.any(axis=0))
        y0, y1 = rows[0], rows[-1]
        x0, x1 = cols[0], cols[-1]
        u = (xx[clothes] - x0) / max(x1 - x0, 1)
        v = (yy[clothes] - y0) / max(y1 - y0, 1)
        img[:, clothes] = texture_colors(spec, u, v).astype(np.float32)

    joints = KeypointSet(tuple(
        Joint(pts[name][0], pts[name][1], True)
        for name in ("nose", "l_eye", "r_eye", "l_ear", "r_ear", "neck",
                     "l_sho", "r_sho", "l_elb", "r_elb", "l_wri", "r_wri",
                     "l_hip", "r_hip", "l_kne", "r_kne", "l_ank", "r_ank")
    ))
    return PersonRecord(image=ImageTensor(img * 2.0 - 1.0), keypoints=joints, parsing=labels)


def render_clothing_image(spec: TextureSpec, h: int, w: int) -> tuple[ImageTensor, Mask]:
    """Flat in-shop garment: textured trapezoid body with short sleeve stubs."""
    xx, yy = _grid(h, w)
    cx = 0.5 * w
    top_y, bot_y = 0.24 * h, 0.62 * h
    top_half, bot_half = 0.145 * h, 0.115 * h
    quad = [
        (cx - top_half, top_y), (cx - bot_half, bot_y),
        (cx + bot_half, bot_y), (cx + top_half, top_y),
    ]
    sil = _convex_quad(xx, yy, quad[::-1])
    sleeve_r = 0.035 * h
    sleeve_len = 0.10 * h
    for side in (+1, -1):
        x0 = cx + side * top_half
        sil |= _capsule(xx, yy, (x0, top_y + sleeve_r),
                        (x0 + side * sleeve_len * 0.6, top_y + sleeve_len), sleeve_r)
    img = np.empty((3, h, w), dtype=np.float32)
    img[:] = np.asarray(_GARMENT_BACKGROUND, dtype=np.float32).reshape(3, 1, 1)
    rows = np.flatnonzero(sil.any(axis=1))
    cols = np.flatnonzero(sil.any(axis=0))
    y0, y1 = rows[0], rows[-1]
    x0, x1 = cols[0], cols[-1]
    u = (xx[sil] - x0) / max(x1 - x0, 1)
    v = (yy[sil] - y0) / max(y1 - y0, 1)
    img[:, sil] = texture_colors(spec, u, v).astype(np.float32)
    return ImageTensor(img * 2.0 - 1.0), Mask(sil.astype(np.float32))


def generate_synthetic_triplet(
    seed: int, dims: tuple[int, int] = (96, 64), style: TextureSpec | str | None = None
) -> Triplet:
    """Deterministically render one triplet: flat garment + the same figure in
    two sampled poses wearing it, with analytic keypoints and parsing."""
    h, w = dims
    if h % 16 or w % 16 or h < 64:
        raise ValueError(f"dims must be divisible by 16 with H >= 64, got {h}x{w}")
    rng = np.random.default_rng(seed)
    if isinstance(style, TextureSpec):
        spec = style
    else:
        spec = sample_texture_spec(rng, kind=style)
    body = sample_body_spec(rng)
    source = _render_person(_sample_pose(rng, h, w, body), body, spec, h, w)
    target = _render_person(_sample_pose(rng, h, w, body), body, spec, h, w)
    clothing, clothing_mask = render_clothing_image(spec, h, w)
    return Triplet(clothing=clothing, clothing_mask=clothing_mask,
                   source=source, target=target)


def containment_violations(record: PersonRecord) -> list[str]:
    """Joints whose pixel label falls outside their allowed region group."""
    bad = []
    for k, joint in enumerate(record.keypoints.joints):
        if not joint.visible:
            continue
        label = int(record.parsing[joint.y, joint.x])
        if label not in JOINT_REGION_GROUPS[k]:
            bad.append(f"joint {k} at ({joint.x},{joint.y}) labeled {label}")
    return bad
