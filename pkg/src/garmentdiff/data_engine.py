"""Synthetic training-data engine: parse -> agnostic mask -> tag -> draw -> manifest.

Backends are plain callables wrapped in :class:`Backend` so each carries a
versioned id for provenance.  Only deterministic mocks ship; a real service
can be plugged in through :class:`JsonServiceBackend`.

Manifest: one JSON object per line.  Records carry the keys ``id, person,
garment, dense, parse, mask, category_prompt, target_prompt, provenance``
(paths relative to the manifest); failed inputs carry ``id`` and
``failure``.  PNG channel semantics are documented in :mod:`garmentdiff.imageio`.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import imageio, kernels
from .controlnet import PoseMap, pack_condition
from .data import (COLORS, PARSE_LABELS, TEXTURE_FAMILIES, DatasetRecord, _dense_coords, _figure_layout,
                   _texture, render_record, sample_meta)

ENGINE_VERSION = "1"
PATTERN_WORDS = {"solid": "solid", "striped": "striped", "glyph": "glyph-patterned", "checkered": "checkered"}
_WORD_PATTERN = {v: k for k, v in PATTERN_WORDS.items()}


class BackendError(RuntimeError):
    def __init__(self, backend_id: str, message: str):
        super().__init__(f"[{backend_id}] {message}")
        self.backend_id = backend_id


class EmptyGarmentError(ValueError):
    pass


@dataclass
class SourceImage:
    image: np.ndarray  # [3, H, W] in [0, 1]
    id: str
    meta: dict = field(default_factory=dict)


@dataclass
class Backend:
    id: str
    fn: Callable

    def __call__(self, *args, **kwargs):
        try:
            return self.fn(*args, **kwargs)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(self.id, f"{type(exc).__name__}: {exc}") from exc


@dataclass
class EngineBackends:
    segmenter: Backend  # SourceImage -> parse map [H, W]
    pose_estimator: Backend  # (SourceImage, parse map) -> dense map [2, H, W]
    captioner: Backend  # SourceImage -> description
    template_source: Backend  # (description, seed) -> inpaint prompt
    inpainter: Backend  # (SourceImage, mask, dense, prompt, seed) -> SourceImage

    def ids(self) -> dict:
        return {k: getattr(self, k).id for k in ("segmenter", "pose_estimator", "captioner",
                                                   "template_source", "inpainter")}


class JsonServiceBackend:
    """Adapter for an external model service speaking JSON.

    ``transport`` takes and returns a dict.  Request: ``{"task": <name>,
    "inputs": {...}}`` with arrays as nested lists; response: ``{"output":
    ..., "model_id": str}``.  Wrap an instance in :class:`Backend`.
    """

    def __init__(self, task: str, transport: Callable[[dict], dict]):
        self.task = task
        self.transport = transport

    def __call__(self, *args):
        inputs = {f"arg{i}": (a.image.tolist() if isinstance(a, SourceImage)
                              else a.tolist() if isinstance(a, np.ndarray) else a)
                  for i, a in enumerate(args)}
        resp = self.transport({"task": self.task, "inputs": inputs})
        out = resp["output"]
        return np.asarray(out) if isinstance(out, list) else out


# ---------------------------------------------------------------------------
# mocks (read generator ground truth from SourceImage.meta)


def _require_meta(src: SourceImage, key: str):
    if key not in src.meta:
        raise ValueError(f"mock backend needs generator metadata '{key}' on image {src.id}")
    return src.meta[key]


def _mock_segment(src: SourceImage) -> np.ndarray:
    size = src.image.shape[-1]
    labels, _ = _figure_layout(size, _require_meta(src, "cx"), _require_meta(src, "arm_angles"),
                               _require_meta(src, "category"))
    return labels


def _mock_pose(src: SourceImage, parse_map: np.ndarray) -> np.ndarray:
    return _dense_coords(parse_map)


def _mock_caption(src: SourceImage) -> str:
    return f"a {_require_meta(src, 'color')} {PATTERN_WORDS[_require_meta(src, 'pattern')]} garment"


INPAINT_TEMPLATES = (
    "a person wearing a {color} {pattern} {category}",
    "a model in a {color} {pattern} {category}, studio photo",
    "full body photo, {color} {pattern} {category}, plain background",
)


def attributes(text: str) -> dict:
    words = re.findall(r"[a-z\-]+", text.lower())
    color = next((w for w in words if w in COLORS), None)
    pattern = next((_WORD_PATTERN[w] for w in words if w in _WORD_PATTERN), None)
    return {"color": color, "pattern": pattern}


def _mock_template(description: str, seed: int, category: str = "garment") -> str:
    attrs = attributes(description)
    tpl = INPAINT_TEMPLATES[seed % len(INPAINT_TEMPLATES)]
    return tpl.format(color=attrs["color"] or "plain", pattern=PATTERN_WORDS[attrs["pattern"] or "solid"],
                      category=category)


def _mock_inpaint(src: SourceImage, mask: np.ndarray, dense: np.ndarray, prompt: str, seed: int) -> SourceImage:
    attrs = attributes(prompt)
    color = attrs["color"] or "red"
    pattern = attrs["pattern"] or "solid"
    size = src.image.shape[-1]
    tex = _texture(pattern, COLORS[color], size, seed % 4)
    m = mask.reshape(1, *mask.shape[-2:]) > 0.5
    out = np.where(m, tex, src.image)
    meta = dict(src.meta, color=color, pattern=pattern)
    return SourceImage(out, src.id, meta)


def mock_backends(fail_on: Optional[dict] = None) -> EngineBackends:
    """Deterministic mocks.  ``fail_on={"captioner": {"img-0002"}}`` injects faults by image id."""
    fail_on = fail_on or {}

    def faulty(name, fn):
        bad = set(fail_on.get(name, ()))

        def wrapped(*args, **kwargs):
            src = next((a for a in args if isinstance(a, SourceImage)), None)
            if src is not None and src.id in bad:
                raise RuntimeError(f"injected failure on {src.id}")
            return fn(*args, **kwargs)

        return wrapped

    return EngineBackends(
        segmenter=Backend("mock-segmenter@1", faulty("segmenter", _mock_segment)),
        pose_estimator=Backend("mock-densepose@1", faulty("pose_estimator", _mock_pose)),
        captioner=Backend("mock-captioner@1", faulty("captioner", _mock_caption)),
        template_source=Backend("mock-templates@1", _mock_template),
        inpainter=Backend("mock-inpainter@1", faulty("inpainter", _mock_inpaint)),
    )


# ---------------------------------------------------------------------------
# steps


def parse(src: SourceImage, backends: EngineBackends):
    parse_map = np.asarray(backends.segmenter(src), dtype=np.int64)
    if not np.isin(parse_map, list(PARSE_LABELS.values())).all():
        raise BackendError(backends.segmenter.id, "labels outside the fixed label set")
    dense = np.asarray(backends.pose_estimator(src, parse_map), dtype=np.float64)
    if dense.shape != (2, *parse_map.shape) or dense.min() < 0 or dense.max() > 1:
        raise BackendError(backends.pose_estimator.id, "dense map must be [2, H, W] in [0, 1]")
    return parse_map, dense


def derive_agnostic(parse_map: np.ndarray, dense_map: np.ndarray, image: Optional[np.ndarray] = None,
                    radius: int = 3):
    """Dilate the garment region by ``radius`` px and keep it on the body.

    Returns ``(mask [1,H,W], masked_image or None)``; the masked image keeps
    the complement of the mask.
    """
    garment = parse_map == PARSE_LABELS["garment"]
    if not garment.any():
        raise EmptyGarmentError("no garment pixels in parse map")
    body = (parse_map != PARSE_LABELS["background"]) | (dense_map.sum(axis=0) > 0)
    mask = (kernels.dilate_disk(garment, radius) & body)[None].astype(np.float64)
    masked = None
    if image is not None:
        masked = pack_condition(image, mask, PoseMap(dense_map, "dense_coords")).masked_image
    return mask, masked


def tag(src: SourceImage, backends: EngineBackends, seed: int = 0, category: str = "garment"):
    description = backends.captioner(src)
    if not isinstance(description, str) or not description.strip():
        raise BackendError(backends.captioner.id, "empty description")
    prompt = backends.template_source(description, seed, category)
    return description, prompt


def draw(src: SourceImage, mask: np.ndarray, dense_map: np.ndarray, prompt: str, backends: EngineBackends,
         seed: int = 0) -> SourceImage:
    mask = np.asarray(mask, dtype=np.float64).reshape(1, *src.image.shape[-2:])
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ValueError("mask must be binary")
    out = backends.inpainter(src, mask, dense_map, prompt, seed)
    # preservation is enforced, not trusted
    img = np.where(mask > 0.5, out.image, src.image)
    return SourceImage(img, out.id, out.meta)


def default_satisfactory(rec: dict) -> bool:
    return bool(rec["mask"].any()) and bool(rec["description"].strip())


def _seed(base: int, *parts) -> int:
    h = hashlib.blake2b(":".join(map(str, (base, *parts))).encode(), digest_size=4).digest()
    return int.from_bytes(h, "little")


def synthesize_one(src: SourceImage, backends: EngineBackends, seed: int, radius: int = 3) -> dict:
    """Steps 1-4 for one image; returns the raw record fields."""
    parse_map, dense = parse(src, backends)
    mask, masked = derive_agnostic(parse_map, dense, src.image, radius)
    category = src.meta.get("category", "garment")
    _, inpaint_prompt = tag(src, backends, seed, category)
    drawn = draw(src, mask, dense, inpaint_prompt, backends, seed)
    description = backends.captioner(drawn)
    m = mask[0] > 0.5
    garment_img = np.where(m[None], drawn.image, 1.0)
    new_parse = np.where(m, PARSE_LABELS["garment"], parse_map)
    return {
        "person": drawn.image, "garment": garment_img, "dense": dense, "parse": new_parse, "mask": mask,
        "masked_image": masked, "category_prompt": category, "target_prompt": description,
        "description": description, "inpaint_prompt": inpaint_prompt,
    }


def run_engine(images: Sequence[SourceImage], backends: EngineBackends, out_dir, seed: int = 0,
               radius: int = 3, max_attempts: int = 3,
               satisfactory: Callable[[dict], bool] = default_satisfactory) -> list[dict]:
    """Synthesize one record per input image and write ``manifest.jsonl``.

    Failures are recorded as manifest entries and do not stop the run.
    Returns the manifest entries in input order.
    """
    if not images:
        raise ValueError("no input images")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, src in enumerate(images):
        entry: dict[str, Any] = {"id": src.id}
        try:
            for attempt in range(max_attempts):
                rseed = _seed(seed, idx, attempt)
                rec = synthesize_one(src, backends, rseed, radius)
                if satisfactory(rec):
                    break
            else:
                raise BackendError("engine", f"no satisfactory output after {max_attempts} attempts")
        except (BackendError, EmptyGarmentError) as exc:
            entry["failure"] = {"backend": getattr(exc, "backend_id", "engine"), "error": str(exc)}
            entries.append(entry)
            continue
        rdir = out / src.id
        rdir.mkdir(parents=True, exist_ok=True)
        imageio.save_rgb(rdir / "person.png", rec["person"])
        imageio.save_rgb(rdir / "garment.png", rec["garment"])
        imageio.save_dense(rdir / "dense.png", rec["dense"], rec["parse"] != PARSE_LABELS["background"])
        imageio.save_labels(rdir / "parse.png", rec["parse"])
        imageio.save_mask(rdir / "mask.png", rec["mask"])
        entry.update({
            "person": f"{src.id}/person.png", "garment": f"{src.id}/garment.png",
            "dense": f"{src.id}/dense.png", "parse": f"{src.id}/parse.png", "mask": f"{src.id}/mask.png",
            "category_prompt": rec["category_prompt"], "target_prompt": rec["target_prompt"],
            "provenance": {"backends": backends.ids(), "seeds": {k: rseed for k in backends.ids()},
                           "attempt": attempt, "engine_version": ENGINE_VERSION},
        })
        entries.append(entry)
    with open(out / "manifest.jsonl", "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    return entries


def load_manifest(path) -> list[DatasetRecord]:
    """Read a manifest into training records (failure entries are skipped)."""
    path = Path(path)
    root = path.parent
    records = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        e = json.loads(line)
        if "failure" in e:
            continue
        dense, _ = imageio.load_dense(root / e["dense"])
        rec = DatasetRecord(
            person_image=imageio.load_rgb(root / e["person"]),
            garment_image=imageio.load_rgb(root / e["garment"]),
            dense_map=PoseMap(dense, "dense_coords"),
            parse_map=imageio.load_labels(root / e["parse"]),
            agnostic_mask=imageio.load_mask(root / e["mask"]),
            garment_category_prompt=e["category_prompt"],
            target_prompt=e["target_prompt"],
            meta={"id": e["id"], "provenance": e.get("provenance", {})},
        )
        rec.validate()
        records.append(rec)
    return records


def generator_images(n: int, seed: int = 0, size: int = 64) -> list[SourceImage]:
    """Procedural person images with their generator metadata attached."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        meta = sample_meta(rng, i)
        rec = render_record(meta, size)
        out.append(SourceImage(rec.person_image, f"img-{i:04d}", meta))
    return out
