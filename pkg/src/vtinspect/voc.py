"""Pascal VOC XML annotations.

VOC stores 1-based pixel indices; boxes are held here as 0-based floats
(``xmin - 1``, ``ymin - 1``, ``xmax``, ``ymax``) and converted back on
write. The shift is done in decimal arithmetic on the text so a write/parse
round trip reproduces every float exactly.
"""

from __future__ import annotations

import decimal
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .defects import DEFECT_CLASSES, DefectClass
from .vision import BoundingBox

_DEC = decimal.Context(prec=80)


class VocError(ValueError):
    """Annotation problem, located by file and object index."""


@dataclass(frozen=True)
class VocObject:
    kind: DefectClass
    bbox: BoundingBox


@dataclass
class GroundTruth:
    image_id: str
    image_size: tuple[int, int, int]  # width, height, depth
    objects: list[VocObject] = field(default_factory=list)

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        w, h, _ = self.image_size
        for i, o in enumerate(self.objects):
            if o.kind is DefectClass.NO_DEFECT:
                raise VocError(f"object {i}: no_defect is not an annotation class")
            b = o.bbox
            if b.xmin < 0 or b.ymin < 0 or b.xmax > w or b.ymax > h:
                raise VocError(f"object {i}: box {b.as_list()} outside image {w}x{h}")

    @property
    def boxes(self) -> list[BoundingBox]:
        return [o.bbox for o in self.objects]


def _num(text: str) -> str:
    d = _DEC.create_decimal(text)
    return format(d.normalize(_DEC), "f") if d == d.to_integral_value() else str(d)


def _shift(text: str, delta: int) -> float:
    return float(_DEC.add(_DEC.create_decimal(text), delta))


def _to_text(v: float, delta: int) -> str:
    s = _DEC.add(_DEC.create_decimal(repr(float(v))), delta)
    return format(s.normalize(_DEC), "f") if s == s.to_integral_value() else str(s)


def _child_text(node, tag: str, where: str) -> str:
    c = node.find(tag)
    if c is None or c.text is None or not c.text.strip():
        raise VocError(f"{where}: missing <{tag}>")
    return c.text.strip()


def parse_voc_string(text: str, source: str = "<string>") -> GroundTruth:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        line, col = e.position
        raise VocError(f"{source}: malformed XML at line {line} column {col}") from None
    if root.tag != "annotation":
        raise VocError(f"{source}: root element is <{root.tag}>, expected <annotation>")
    size = root.find("size")
    if size is None:
        raise VocError(f"{source}: missing <size>")
    try:
        dims = tuple(int(_num(_child_text(size, t, f"{source}: <size>"))) for t in ("width", "height", "depth"))
    except (decimal.InvalidOperation, ValueError) as e:
        if isinstance(e, VocError):
            raise
        raise VocError(f"{source}: <size> values must be integers") from None
    fname = root.findtext("filename")
    image_id = Path(fname.strip()).stem if fname and fname.strip() else Path(source).stem
    objects = []
    for i, obj in enumerate(root.findall("object")):
        where = f"{source}: object {i}"
        name = _child_text(obj, "name", where)
        try:
            kind = DefectClass.parse(name)
        except ValueError:
            raise VocError(f"{where}: unknown class {name!r}") from None
        if kind is DefectClass.NO_DEFECT:
            raise VocError(f"{where}: no_defect is not an annotation class")
        bb = obj.find("bndbox")
        if bb is None:
            raise VocError(f"{where}: missing <bndbox>")
        try:
            xmin, ymin = (_shift(_child_text(bb, t, where), -1) for t in ("xmin", "ymin"))
            xmax, ymax = (_shift(_child_text(bb, t, where), 0) for t in ("xmax", "ymax"))
        except decimal.InvalidOperation:
            raise VocError(f"{where}: non-numeric <bndbox> coordinate") from None
        if not (xmin < xmax and ymin < ymax):
            raise VocError(f"{where}: inverted box xmin/ymin must be below xmax/ymax")
        objects.append(VocObject(kind, BoundingBox(xmin, ymin, xmax, ymax)))
    try:
        return GroundTruth(image_id, dims, objects)
    except VocError as e:
        raise VocError(f"{source}: {e}") from None


def parse_voc(path) -> GroundTruth:
    path = Path(path)
    return parse_voc_string(path.read_text(), str(path))


def voc_xml(gt: GroundTruth) -> str:
    root = ET.Element("annotation")
    ET.SubElement(root, "folder").text = "images"
    ET.SubElement(root, "filename").text = f"{gt.image_id}.png"
    size = ET.SubElement(root, "size")
    for tag, v in zip(("width", "height", "depth"), gt.image_size):
        ET.SubElement(size, tag).text = str(v)
    ET.SubElement(root, "segmented").text = "0"
    for o in gt.objects:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = o.kind.value
        ET.SubElement(obj, "pose").text = "Unspecified"
        ET.SubElement(obj, "truncated").text = "0"
        ET.SubElement(obj, "difficult").text = "0"
        bb = ET.SubElement(obj, "bndbox")
        b = o.bbox
        for tag, v, delta in (("xmin", b.xmin, 1), ("ymin", b.ymin, 1), ("xmax", b.xmax, 0), ("ymax", b.ymax, 0)):
            ET.SubElement(bb, tag).text = _to_text(v, delta)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def write_voc(gt: GroundTruth, path) -> None:
    Path(path).write_text(voc_xml(gt))


def load_voc_dir(directory) -> dict[str, GroundTruth]:
    """Every ``*.xml`` in the directory, keyed by image id, in file-name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise VocError(f"{directory}: not a directory")
    out = {}
    for p in sorted(directory.glob("*.xml")):
        gt = parse_voc(p)
        out[gt.image_id] = gt
    return out


def validate_dir(directory) -> dict:
    """Parse every annotation file; collect per-file errors and a class histogram."""
    directory = Path(directory)
    if not directory.is_dir():
        raise VocError(f"{directory}: not a directory")
    files = sorted(directory.glob("*.xml"))
    hist = Counter({c.value: 0 for c in DEFECT_CLASSES})
    errors = []
    for p in files:
        try:
            gt = parse_voc(p)
        except (VocError, OSError) as e:
            errors.append({"file": p.name, "error": str(e)})
            continue
        hist.update(o.kind.value for o in gt.objects)
    return {
        "files": len(files),
        "valid": len(files) - len(errors),
        "errors": errors,
        "class_histogram": dict(hist),
    }
