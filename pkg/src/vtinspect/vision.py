"""Vision stage: detector output ingestion, confidence routing, augmentations.

The detector itself lives outside this package. Its detections arrive as a
JSON array of ``{"image_id", "class", "bbox": [xmin, ymin, xmax, ymax],
"score"}`` records and are routed by score: confident ones are confirmed,
uncertain ones are handed to the tactile stage, the rest discarded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .defects import DefectClass


@dataclass(frozen=True)
class BoundingBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    label: DefectClass | None = None

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"inverted or empty box {list(vals)}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy, self.label)

    def clipped(self, width: float, height: float) -> "BoundingBox | None":
        """Intersection with the image rectangle, or None if nothing is left."""
        x0, y0 = max(self.xmin, 0.0), max(self.ymin, 0.0)
        x1, y1 = min(self.xmax, float(width)), min(self.ymax, float(height))
        if x0 >= x1 or y0 >= y1:
            return None
        return BoundingBox(x0, y0, x1, y1, self.label)

    def overlaps(self, other: "BoundingBox") -> bool:
        return self.xmin < other.xmax and other.xmin < self.xmax and \
            self.ymin < other.ymax and other.ymin < self.ymax


@dataclass(frozen=True)
class Detection:
    bbox: BoundingBox
    cls: DefectClass
    score: float
    image_id: str = ""

    def __post_init__(self):
        if self.cls is DefectClass.NO_DEFECT:
            raise ValueError("a detection cannot carry the no_defect class")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "class": self.cls.value, "bbox": self.bbox.as_list(), "score": self.score}


class DetectionParseError(ValueError):
    pass


def detections_from_json(records) -> dict[str, list[Detection]]:
    if not isinstance(records, list):
        raise DetectionParseError("detections file must hold a JSON array")
    out: dict[str, list[Detection]] = {}
    for i, rec in enumerate(records):
        try:
            if not isinstance(rec, dict):
                raise ValueError("record is not an object")
            missing = {"image_id", "class", "bbox", "score"} - set(rec)
            if missing:
                raise ValueError(f"missing fields {sorted(missing)}")
            bbox = rec["bbox"]
            if not (isinstance(bbox, list) and len(bbox) == 4):
                raise ValueError("bbox must be [xmin, ymin, xmax, ymax]")
            if isinstance(rec["score"], bool) or not isinstance(rec["score"], (int, float)):
                raise ValueError("score must be a number")
            det = Detection(BoundingBox(*map(float, bbox)), DefectClass.parse(str(rec["class"])),
                            float(rec["score"]), str(rec["image_id"]))
        except (ValueError, TypeError) as e:
            raise DetectionParseError(f"record {i}: {e}") from None
        out.setdefault(det.image_id, []).append(det)
    return out


def parse_detections(path) -> dict[str, list[Detection]]:
    """Read a detections JSON file and group validated records by image id."""
    try:
        records = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DetectionParseError(f"malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    return detections_from_json(records)


def write_detections(dets, path) -> None:
    if isinstance(dets, dict):
        dets = [d for k in dets for d in dets[k]]
    Path(path).write_text(json.dumps([d.to_dict() for d in dets], indent=2) + "\n")


# ---------------------------------------------------------------------------
# routing


@dataclass(frozen=True)
class RoutingConfig:
    accept_threshold: float = 0.7
    delegate_threshold: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.delegate_threshold < self.accept_threshold <= 1.0):
            raise ValueError("need 0 <= delegate_threshold < accept_threshold <= 1")


@dataclass
class RoutingResult:
    confirmed: list[Detection] = field(default_factory=list)
    delegated: list[Detection] = field(default_factory=list)
    discarded: list[Detection] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: [d.to_dict() for d in getattr(self, k)] for k in ("confirmed", "delegated", "discarded")}


def route_detections(dets, cfg: RoutingConfig | None = None) -> RoutingResult:
    """Split detections by score.

    Strictly above ``accept_threshold``: confirmed. From
    ``delegate_threshold`` to ``accept_threshold`` inclusive: delegated to
    the tactile stage. Below ``delegate_threshold``: discarded. Input order
    is kept within each list.
    """
    cfg = cfg or RoutingConfig()
    res = RoutingResult()
    for d in dets:
        if d.score > cfg.accept_threshold:
            res.confirmed.append(d)
        elif d.score >= cfg.delegate_threshold:
            res.delegated.append(d)
        else:
            res.discarded.append(d)
    return res


# ---------------------------------------------------------------------------
# images


@dataclass(frozen=True, eq=False)
class RgbImage:
    pixels: np.ndarray  # uint8, (height, width, 3)

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] == 0 or p.shape[1] == 0:
            raise ValueError(f"expected a non-empty (h, w, 3) array, got shape {p.shape}")
        p = np.ascontiguousarray(p, dtype=np.uint8)
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, RgbImage) and np.array_equal(self.pixels, other.pixels)

    @classmethod
    def blank(cls, width: int, height: int, value=0) -> "RgbImage":
        return cls(np.full((height, width, 3), value, dtype=np.uint8))


def load_png(path) -> RgbImage:
    with Image.open(path) as im:
        return RgbImage(np.asarray(im.convert("RGB")))


def save_png(img: RgbImage, path) -> None:
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# augmentation

FACTOR_RANGE = (0.5, 1.5)
HUE_RANGE = (-18.0, 18.0)  # degrees


@dataclass(frozen=True)
class PhotometricParams:
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0  # degrees

    def __post_init__(self):
        lo, hi = FACTOR_RANGE
        for name in ("brightness", "contrast", "saturation"):
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ValueError(f"{name} factor {v} outside [{lo}, {hi}]")
        if not (HUE_RANGE[0] <= self.hue <= HUE_RANGE[1]):
            raise ValueError(f"hue shift {self.hue} outside [{HUE_RANGE[0]}, {HUE_RANGE[1]}] degrees")

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "PhotometricParams":
        return cls(*(float(rng.uniform(*FACTOR_RANGE)) for _ in range(3)), hue=float(rng.uniform(*HUE_RANGE)))


_LUMA = np.array([0.299, 0.587, 0.114])
# RGB <-> YIQ; a hue shift is a rotation of the chroma (I, Q) plane
_RGB2YIQ = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
_YIQ2RGB = np.linalg.inv(_RGB2YIQ)


def augment_photometric(img: RgbImage, params: PhotometricParams | None = None, seed: int = 0) -> RgbImage:
    """Brightness, contrast, saturation and hue jitter, applied in that order.

    With ``params`` None the factors are drawn uniformly from their ranges
    using ``seed``. Each step clamps to [0, 255]; factors at their identity
    value are skipped, so identity parameters return the image unchanged.
    """
    if params is None:
        params = PhotometricParams.sample(np.random.default_rng(seed))
    x = img.pixels.astype(np.float64)
    if params.brightness != 1.0:
        x = np.clip(x * params.brightness, 0, 255)
    if params.contrast != 1.0:
        mean = float((x @ _LUMA).mean())
        x = np.clip((x - mean) * params.contrast + mean, 0, 255)
    if params.saturation != 1.0:
        gray = (x @ _LUMA)[..., None]
        x = np.clip((x - gray) * params.saturation + gray, 0, 255)
    if params.hue != 0.0:
        a = math.radians(params.hue)
        rot = np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])
        x = np.clip(x @ (_YIQ2RGB @ rot @ _RGB2YIQ).T, 0, 255)
    return RgbImage(np.rint(x).astype(np.uint8))


MIN_VISIBLE_FRACTION = 0.2


def augment_translate(img: RgbImage, boxes, dx: int, dy: int):
    """Shift the image by whole pixels with zero fill and move the boxes along.

    Boxes are clipped to the frame; a box keeping less than 20% of its area
    is dropped.
    """
    dx, dy = int(dx), int(dy)
    if abs(dx) >= img.width or abs(dy) >= img.height:
        raise ValueError(f"shift ({dx}, {dy}) must be smaller than the image ({img.width}x{img.height})")
    out = np.zeros_like(img.pixels)
    h, w = img.height, img.width
    out[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
        img.pixels[max(-dy, 0):h - max(dy, 0), max(-dx, 0):w - max(dx, 0)]
    kept = []
    for b in boxes:
        c = b.shifted(dx, dy).clipped(w, h)
        if c is not None and c.area >= MIN_VISIBLE_FRACTION * b.area:
            kept.append(c)
    return RgbImage(out), kept


def augment_cut_and_paste(src: RgbImage, src_boxes, dst: RgbImage, dst_boxes, seed: int = 0, max_tries: int = 100):
    """Copy each source defect patch onto a free spot of the destination image.

    A patch covers the whole pixels its box touches. Locations are drawn
    uniformly; one overlapping an existing or already pasted box is
    rejected, and a patch that finds no spot in ``max_tries`` draws (or does
    not fit at all) is skipped. Returns the new image and
    ``dst_boxes + pasted boxes``.
    """
    rng = np.random.default_rng(seed)
    out = dst.pixels.copy()
    boxes = list(dst_boxes)
    for b in src_boxes:
        x0, y0 = max(int(math.floor(b.xmin)), 0), max(int(math.floor(b.ymin)), 0)
        x1, y1 = min(int(math.ceil(b.xmax)), src.width), min(int(math.ceil(b.ymax)), src.height)
        pw, ph = x1 - x0, y1 - y0
        if pw <= 0 or ph <= 0 or pw > dst.width or ph > dst.height:
            continue
        for _ in range(max_tries):
            nx = int(rng.integers(0, dst.width - pw + 1))
            ny = int(rng.integers(0, dst.height - ph + 1))
            moved = b.shifted(nx - x0, ny - y0)
            if not any(moved.overlaps(o) for o in boxes):
                out[ny:ny + ph, nx:nx + pw] = src.pixels[y0:y1, x0:x1]
                boxes.append(moved)
                break
    return RgbImage(out), boxes
