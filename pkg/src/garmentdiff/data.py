"""Procedural garment/person records, augmentation, prompt routing and batching."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .controlnet import PoseMap

PARSE_LABELS = {"background": 0, "skin": 1, "hair": 2, "garment": 3, "other": 4}
TEXTURE_FAMILIES = ("solid", "striped", "glyph", "checkered")
CATEGORIES = ("t-shirt", "tank top", "long-sleeve shirt")

COLORS = {
    "red": (0.85, 0.15, 0.15),
    "blue": (0.15, 0.30, 0.85),
    "green": (0.15, 0.65, 0.25),
    "yellow": (0.95, 0.85, 0.15),
    "purple": (0.55, 0.20, 0.70),
    "orange": (0.95, 0.55, 0.10),
    "black": (0.08, 0.08, 0.08),
    "pink": (0.95, 0.55, 0.70),
}
BACKGROUNDS = {
    "white": (0.92, 0.92, 0.92),
    "gray": (0.55, 0.55, 0.55),
    "beige": (0.85, 0.78, 0.62),
    "teal": (0.25, 0.60, 0.60),
    "sky": (0.60, 0.78, 0.95),
}
SKIN = (0.87, 0.68, 0.55)
HAIR = (0.25, 0.15, 0.08)
PANTS = (0.20, 0.22, 0.30)
TARGET_TEMPLATES = (
    "a person standing in front of a {bg} wall",
    "a model posing against a {bg} background",
    "a photo of someone in a {bg} studio",
    "a full body shot with a {bg} backdrop",
)


@dataclass
class DatasetRecord:
    person_image: np.ndarray  # [3, H, W] in [0, 1]
    garment_image: np.ndarray  # [3, H, W] in [0, 1]
    dense_map: PoseMap
    parse_map: np.ndarray  # [H, W] int labels
    agnostic_mask: np.ndarray  # [1, H, W] in {0, 1}
    garment_category_prompt: str
    target_prompt: str
    keypoint_map: PoseMap | None = None
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        h, w = self.person_image.shape[-2:]
        shapes = [self.garment_image.shape[-2:], self.parse_map.shape, self.agnostic_mask.shape[-2:],
                  self.dense_map.data.shape[-2:]]
        if any(tuple(s) != (h, w) for s in shapes):
            raise ValueError("inconsistent spatial dims in record")
        if not np.isin(self.agnostic_mask, (0, 1)).all():
            raise ValueError("agnostic mask must be binary")
        if not np.isin(self.parse_map, list(PARSE_LABELS.values())).all():
            raise ValueError("parse map has labels outside the fixed label set")

    def pose(self, kind: str) -> PoseMap:
        h, w = self.parse_map.shape
        if kind == "dense_coords":
            return self.dense_map
        if kind == "keypoint_render":
            if self.keypoint_map is None:
                raise ValueError("record carries no keypoint render")
            return self.keypoint_map
        return PoseMap.empty(h, w)


# ---------------------------------------------------------------------------
# rendering


def _texture(family: str, color, size: int, rng_offset: int) -> np.ndarray:
    c1 = np.array(color)[:, None, None]
    c2 = np.array((0.95, 0.95, 0.95))[:, None, None] if sum(color) < 2.2 else np.array((0.1, 0.1, 0.1))[:, None, None]
    yy, xx = np.mgrid[0:size, 0:size]
    period = max(2, size // 8)
    if family == "solid":
        sel = np.zeros((size, size), bool)
    elif family == "striped":
        sel = ((yy + rng_offset) // period) % 2 == 1
    elif family == "checkered":
        sel = (((yy + rng_offset) // period) + (xx // period)) % 2 == 1
    elif family == "glyph":
        p = 2 * period
        cy, cx = (yy + rng_offset) % p, xx % p
        sel = ((cy == p // 2) & (abs(cx - p // 2) <= 1)) | ((cx == p // 2) & (abs(cy - p // 2) <= 1))
    else:
        raise ValueError(f"unknown texture family {family!r}")
    return np.where(sel[None], c2, c1)


def _segment_dist(yy, xx, p0, p1):
    (y0, x0), (y1, x1) = p0, p1
    dy, dx = y1 - y0, x1 - x0
    L2 = dy * dy + dx * dx
    s = np.clip(((yy - y0) * dy + (xx - x0) * dx) / L2, 0.0, 1.0)
    return np.hypot(yy - (y0 + s * dy), xx - (x0 + s * dx)), s


def _figure_layout(size: int, cx: float, arm_angles, category: str):
    """Per-pixel part labels: 0 bg, 1 skin, 2 hair, 3 garment, 4 pants (plus sleeve logic)."""
    yy, xx = (np.mgrid[0:size, 0:size] + 0.5) / size
    labels = np.zeros((size, size), np.int64)

    legs = np.zeros_like(labels, bool)
    for side in (-1, 1):
        d, _ = _segment_dist(yy, xx, (0.66, cx + side * 0.07), (0.95, cx + side * 0.08))
        legs |= d < 0.055
    labels[legs] = PARSE_LABELS["other"]

    neck = (abs(xx - cx) < 0.04) & (yy > 0.22) & (yy < 0.32)
    labels[neck] = PARSE_LABELS["skin"]

    sleeve_frac = {"t-shirt": 0.4, "tank top": 0.0, "long-sleeve shirt": 1.0}[category]
    keypoints = [(0.17, cx)]
    for side, ang in zip((-1, 1), arm_angles):
        sh = (0.33, cx + side * 0.15)
        hand = (sh[0] + 0.33 * np.cos(ang), sh[1] + side * 0.33 * np.sin(ang))
        d, s = _segment_dist(yy, xx, sh, hand)
        arm = d < 0.045
        labels[arm & (s > sleeve_frac)] = PARSE_LABELS["skin"]
        labels[arm & (s <= sleeve_frac)] = PARSE_LABELS["garment"]
        keypoints += [sh, hand]

    torso = ((xx - cx) / 0.17) ** 2 + ((yy - 0.47) / 0.2) ** 2 <= 1.0
    labels[torso] = PARSE_LABELS["garment"]

    head = ((xx - cx) ** 2 + (yy - 0.17) ** 2) <= 0.09**2
    labels[head] = PARSE_LABELS["skin"]
    labels[head & (yy < 0.13)] = PARSE_LABELS["hair"]

    keypoints += [(0.66, cx - 0.07), (0.66, cx + 0.07), (0.95, cx - 0.08), (0.95, cx + 0.08)]
    return labels, keypoints


def _dense_coords(labels: np.ndarray) -> np.ndarray:
    body = labels != PARSE_LABELS["background"]
    ys, xs = np.nonzero(body)
    h, w = labels.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u = (xx - xs.min()) / max(xs.max() - xs.min(), 1)
    v = (yy - ys.min()) / max(ys.max() - ys.min(), 1)
    return np.clip(np.stack([u, v]) * body[None], 0.0, 1.0)


def _keypoint_render(size: int, keypoints) -> np.ndarray:
    out = np.zeros((1, size, size))
    yy, xx = (np.mgrid[0:size, 0:size] + 0.5) / size
    r = 1.5 / size
    for ky, kx in keypoints:
        out[0][(yy - ky) ** 2 + (xx - kx) ** 2 <= r * r] = 1.0
    return out


def render_record(meta: dict, size: int = 32) -> DatasetRecord:
    """Deterministically render one record from its generator metadata."""
    labels, keypoints = _figure_layout(size, meta["cx"], meta["arm_angles"], meta["category"])
    tex = _texture(meta["pattern"], COLORS[meta["color"]], size, meta["texture_offset"])
    bg = np.array(BACKGROUNDS[meta["background"]])[:, None, None]
    img = np.broadcast_to(bg, (3, size, size)).copy()
    for label, color in ((1, SKIN), (2, HAIR), (4, PANTS)):
        img[:, labels == label] = np.array(color)[:, None]
    garment = labels == PARSE_LABELS["garment"]
    img[:, garment] = tex[:, garment]

    flat, _ = _figure_layout(size, 0.5, (np.pi / 2, np.pi / 2), meta["category"])
    flat_garment = flat == PARSE_LABELS["garment"]
    gimg = np.ones((3, size, size))
    gimg[:, flat_garment] = tex[:, flat_garment]

    return DatasetRecord(
        person_image=img,
        garment_image=gimg,
        dense_map=PoseMap(_dense_coords(labels), "dense_coords"),
        parse_map=labels,
        agnostic_mask=garment[None].astype(np.float64),
        garment_category_prompt=meta["category"],
        target_prompt=meta["target_prompt"],
        keypoint_map=PoseMap(_keypoint_render(size, keypoints), "keypoint_render"),
        meta=dict(meta),
    )


def sample_meta(rng: np.random.Generator, index: int = 0) -> dict:
    bg = str(rng.choice(list(BACKGROUNDS)))
    return {
        "pattern": TEXTURE_FAMILIES[index % len(TEXTURE_FAMILIES)],
        "color": str(rng.choice(list(COLORS))),
        "category": str(rng.choice(CATEGORIES)),
        "background": bg,
        "cx": float(rng.uniform(0.42, 0.58)),
        "arm_angles": [float(rng.uniform(0.25, 0.9)), float(rng.uniform(0.25, 0.9))],
        "texture_offset": int(rng.integers(0, 4)),
        "target_prompt": str(rng.choice(TARGET_TEMPLATES)).format(bg=bg),
    }


def make_toy_dataset(n: int, rng: np.random.Generator | int = 0, size: int = 32) -> list[DatasetRecord]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return [render_record(sample_meta(rng, i), size) for i in range(n)]


# ---------------------------------------------------------------------------
# augmentation

STAGE_AUGMENTATIONS = {0: {"flip"}, 1: {"flip"}, 2: {"flip", "shift", "scale"}}


def _warp(arr: np.ndarray, flip: bool, dy: int, dx: int, scale: float, fill) -> np.ndarray:
    h, w = arr.shape[-2:]
    ys = np.arange(h)
    xs = np.arange(w)
    if scale != 1.0:
        ys = np.floor((ys + 0.5 - h / 2) / scale + h / 2).astype(np.int64)
        xs = np.floor((xs + 0.5 - w / 2) / scale + w / 2).astype(np.int64)
    ys = ys - dy
    xs = xs - dx
    if flip:
        xs = xs[::-1]
    if fill == "edge":
        out = arr[..., np.clip(ys, 0, h - 1)[:, None], np.clip(xs, 0, w - 1)[None, :]]
    else:
        valid = ((ys >= 0) & (ys < h))[:, None] & ((xs >= 0) & (xs < w))[None, :]
        out = arr[..., np.clip(ys, 0, h - 1)[:, None], np.clip(xs, 0, w - 1)[None, :]]
        out = np.where(valid, out, fill)
    return out.astype(arr.dtype, copy=False)


def apply_transform(rec: DatasetRecord, flip=False, shift=(0, 0), scale=1.0) -> DatasetRecord:
    dy, dx = shift

    def tf(a, fill):
        return _warp(a, flip, dy, dx, scale, fill)

    kp = rec.keypoint_map
    return replace(
        rec,
        person_image=tf(rec.person_image, "edge"),
        garment_image=tf(rec.garment_image, "edge"),
        dense_map=PoseMap(tf(rec.dense_map.data, 0.0), rec.dense_map.kind),
        parse_map=tf(rec.parse_map, 0),
        agnostic_mask=tf(rec.agnostic_mask, 0.0),
        keypoint_map=PoseMap(tf(kp.data, 0.0), kp.kind) if kp is not None else None,
    )


def augment(rec: DatasetRecord, rng: np.random.Generator, stage: int, ops=None) -> DatasetRecord:
    """Random geometric augmentation applied identically to every spatial field."""
    allowed = STAGE_AUGMENTATIONS[stage]
    ops = allowed if ops is None else set(ops)
    if not ops <= allowed:
        raise ValueError(f"augmentations {sorted(ops - allowed)} not allowed in stage {stage}")
    h = rec.parse_map.shape[0]
    flip = "flip" in ops and bool(rng.random() < 0.5)
    shift = (0, 0)
    if "shift" in ops:
        m = max(1, h // 16)
        shift = (int(rng.integers(-m, m + 1)), int(rng.integers(-m, m + 1)))
    scale = float(rng.uniform(0.9, 1.1)) if "scale" in ops else 1.0
    return apply_transform(rec, flip, shift, scale)


# ---------------------------------------------------------------------------
# prompts and batching


def dispatch_prompts(rec: DatasetRecord) -> tuple[str, str]:
    """Category prompt goes to the garment UNet, target description to the denoiser."""
    return rec.garment_category_prompt, rec.target_prompt


def collate(records: list[DatasetRecord], pose_kind: str = "dense_coords") -> dict:
    pairs = [dispatch_prompts(r) for r in records]
    return {
        "person": np.stack([r.person_image for r in records]),
        "garment": np.stack([r.garment_image for r in records]),
        "mask": np.stack([r.agnostic_mask for r in records]),
        "pose": [r.pose(pose_kind) for r in records],
        "garment_prompts": [p[0] for p in pairs],
        "target_prompts": [p[1] for p in pairs],
    }
