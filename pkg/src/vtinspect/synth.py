"""Synthetic heightfields and panel scenes with exactly known defect geometry.

Stamped widths follow the measurement convention used by
:func:`vtinspect.heightfield.profile_metrics`: ``stamped_width`` is the
width of the region deeper than the noise floor. The footprint is widened by
one pixel pitch when rasterised so that a pixel-sampled profile never reads
narrower than the stamped width.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .defects import DEFECT_CLASSES, DefectClass
from .heightfield import Circle2D, Heightfield, LineSegment2D

DEFAULT_NOISE_FLOOR = 0.005  # mm
FIXTURE_SIZE = 256  # px
IMAGE_SIZE = (1280, 800)


@dataclass(frozen=True)
class BumpTrain:
    axis: LineSegment2D
    n_bumps: int
    bump_pitch: float  # mm, along the axis
    bump_length: float = 0.0  # mm, extent of each bump across the axis


@dataclass(frozen=True)
class DefectSpecimen:
    kind: DefectClass
    stamped_depth: float  # mm
    stamped_width: float  # mm
    geometry: LineSegment2D | Circle2D | BumpTrain

    def __post_init__(self):
        if not (self.stamped_depth > 0 and self.stamped_width > 0):
            raise ValueError("stamped depth and width must be positive")
        expected = {
            DefectClass.SCRATCH: LineSegment2D,
            DefectClass.GOUGE: Circle2D,
            DefectClass.DRILL_RUN: BumpTrain,
        }.get(self.kind)
        if expected is None:
            raise ValueError(f"cannot stamp a {self.kind.value} specimen")
        if not isinstance(self.geometry, expected):
            raise TypeError(f"{self.kind.value} needs {expected.__name__} geometry")
        if self.kind is DefectClass.DRILL_RUN and self.geometry.n_bumps < 2:
            raise ValueError("a drill run needs at least 2 bumps")


# ---------------------------------------------------------------------------
# stamping


def _grid_mm(hf: Heightfield):
    ys, xs = np.mgrid[0 : hf.height, 0 : hf.width]
    return xs * (hf.pitch_x / 1000.0), ys * (hf.pitch_y / 1000.0)


def _dist_to_segment(X, Y, a, b):
    """Distance (same units as inputs) from each grid point to segment ab."""
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = np.clip(((X - ax) * dx + (Y - ay) * dy) / L2, 0.0, 1.0)
    return np.hypot(X - (ax + t * dx), Y - (ay + t * dy))


def _floor_half_width(hf: Heightfield, width: float) -> float:
    return (width + min(hf.pitch_x, hf.pitch_y) / 1000.0) / 2.0


def _px_to_mm(hf: Heightfield, p):
    return (p[0] * hf.pitch_x / 1000.0, p[1] * hf.pitch_y / 1000.0)


def _groove(dist, depth, half, noise_floor):
    # linear flanks reaching -noise_floor at `half` and zero at `half0`
    half0 = half * depth / (depth - noise_floor) if depth > noise_floor else half
    return depth * np.clip(1.0 - dist / half0, 0.0, None)


def _cap(dist, depth, half, noise_floor):
    # spherical cap whose depth falls to the noise floor at `half`
    drop = depth - noise_floor
    if drop <= 0:
        R = half
        drop = depth
    elif drop > half:
        # a sphere would need more than a hemisphere; stretch one vertically
        # instead so the floor crossing stays at `half`
        a = half / math.sqrt(1.0 - (noise_floor / depth) ** 2)
        return depth * np.sqrt(np.clip(1.0 - (dist / a) ** 2, 0.0, None))
    else:
        R = (half * half + drop * drop) / (2 * drop)
    z = depth - R + np.sqrt(np.clip(R * R - dist * dist, 0.0, None))
    return np.where(dist <= R, np.clip(z, 0.0, None), 0.0)


def _gauss(dist, depth, half, noise_floor):
    if depth > noise_floor:
        sigma = half / math.sqrt(2 * math.log(depth / noise_floor))
    else:
        sigma = half / 2.0
    return depth * np.exp(-(dist * dist) / (2 * sigma * sigma))


def bump_centres(train: BumpTrain, pitch_x: float, pitch_y: float) -> list[tuple[float, float]]:
    """Bump centres in px, spread symmetrically about the axis midpoint."""
    mx, my = train.axis.midpoint
    ux, uy = train.axis.direction
    step_px = train.bump_pitch * 1000.0 / math.hypot(ux * pitch_x, uy * pitch_y)
    offs = (np.arange(train.n_bumps) - (train.n_bumps - 1) / 2) * step_px
    return [(mx + o * ux, my + o * uy) for o in offs]


def defect_depression(hf: Heightfield, spec: DefectSpecimen, noise_floor: float = DEFAULT_NOISE_FLOOR) -> np.ndarray:
    """Non-negative depression (mm) that :func:`stamp_defect` subtracts."""
    X, Y = _grid_mm(hf)
    half = _floor_half_width(hf, spec.stamped_width)
    g = spec.geometry
    if spec.kind is DefectClass.SCRATCH:
        dist = _dist_to_segment(X, Y, _px_to_mm(hf, g.p0), _px_to_mm(hf, g.p1))
        return _groove(dist, spec.stamped_depth, half, noise_floor)
    if spec.kind is DefectClass.GOUGE:
        cx, cy = _px_to_mm(hf, g.center)
        return _cap(np.hypot(X - cx, Y - cy), spec.stamped_depth, half, noise_floor)
    # drill run: bumps along the axis, each optionally elongated across it
    ux, uy = g.axis.direction
    nx, ny = -uy, ux
    out = np.zeros_like(X)
    for bx, by in bump_centres(g, hf.pitch_x, hf.pitch_y):
        c = _px_to_mm(hf, (bx, by))
        if g.bump_length > 0:
            # half-length in px along the across-axis direction
            half_px = g.bump_length * 1000.0 / 2 / math.hypot(nx * hf.pitch_x, ny * hf.pitch_y)
            a = _px_to_mm(hf, (bx - half_px * nx, by - half_px * ny))
            b = _px_to_mm(hf, (bx + half_px * nx, by + half_px * ny))
            dist = _dist_to_segment(X, Y, a, b)
        else:
            dist = np.hypot(X - c[0], Y - c[1])
        out = np.maximum(out, _gauss(dist, spec.stamped_depth, half, noise_floor))
    return out


def specimen_inside(hf: Heightfield, spec: DefectSpecimen) -> bool:
    g = spec.geometry
    if isinstance(g, LineSegment2D):
        return g.inside(hf.width, hf.height)
    if isinstance(g, Circle2D):
        return g.inside(hf.width, hf.height)
    if not g.axis.inside(hf.width, hf.height):
        return False
    return all(0 <= x <= hf.width - 1 and 0 <= y <= hf.height - 1 for x, y in bump_centres(g, hf.pitch_x, hf.pitch_y))


def stamp_defect(hf: Heightfield, spec: DefectSpecimen, noise_floor: float = DEFAULT_NOISE_FLOOR) -> Heightfield:
    """Subtract the specimen's depression from ``hf``.

    Scratch: V-groove along the segment. Gouge: spherical-cap pit centred on
    the circle. Drill run: a train of Gaussian depressions along the axis.
    """
    if not specimen_inside(hf, spec):
        raise ValueError("specimen geometry lies outside the heightfield")
    dep = defect_depression(hf, spec, noise_floor)
    return hf.with_data(hf.data.astype(np.float64) - dep)


def add_trend_and_noise(hf: Heightfield, tilt=(0.0, 0.0), curvature_sag: float = 0.0,
                        noise_sigma: float = 0.0, seed: int = 0) -> Heightfield:
    """Add a plane (mm per px in x, y), a centred parabolic sag and Gaussian noise."""
    vals = [*tilt, curvature_sag, noise_sigma]
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("trend and noise parameters must be finite")
    if tilt[0] == 0 and tilt[1] == 0 and curvature_sag == 0 and noise_sigma == 0:
        return hf
    ys = np.arange(hf.height, dtype=np.float64)[:, None]
    xs = np.arange(hf.width, dtype=np.float64)[None, :]
    d = hf.data.astype(np.float64) + (tilt[0] * xs + tilt[1] * ys)
    if curvature_sag:
        cx, cy = (hf.width - 1) / 2, (hf.height - 1) / 2
        rho2 = ((xs - cx) ** 2 + (ys - cy) ** 2) / max(cx * cx + cy * cy, 1e-12)
        d -= curvature_sag * (1.0 - rho2)
    if noise_sigma:
        d += np.random.default_rng(seed).normal(0.0, noise_sigma, d.shape)
    return hf.with_data(d)


# hard negatives ------------------------------------------------------------


def add_fastener_ring(hf: Heightfield, center, radius_px: float, height: float, ring_width: float) -> Heightfield:
    """Raised ring (mm height, ring_width mm) with a smooth cosine cross-section."""
    X, Y = _grid_mm(hf)
    c = _px_to_mm(hf, center)
    r = radius_px * hf.pitch_x / 1000.0
    d = np.abs(np.hypot(X - c[0], Y - c[1]) - r)
    bump = np.where(d < ring_width / 2, height * 0.5 * (1 + np.cos(np.pi * d / (ring_width / 2))), 0.0)
    return hf.with_data(hf.data + bump)


def add_raised_ridge(hf: Heightfield, seg: LineSegment2D, height: float, ridge_width: float) -> Heightfield:
    """Raised line feature (paint bump, weld bead) with a cosine cross-section."""
    X, Y = _grid_mm(hf)
    d = _dist_to_segment(X, Y, _px_to_mm(hf, seg.p0), _px_to_mm(hf, seg.p1))
    bump = np.where(d < ridge_width / 2, height * 0.5 * (1 + np.cos(np.pi * d / (ridge_width / 2))), 0.0)
    return hf.with_data(hf.data + bump)


def add_edge_step(hf: Heightfield, point, angle_deg: float, step: float, ramp_px: float = 2.0) -> Heightfield:
    """Panel edge: the half-plane on one side of a line raised by ``step`` mm."""
    ys, xs = np.mgrid[0 : hf.height, 0 : hf.width].astype(np.float64)
    a = math.radians(angle_deg)
    s = (xs - point[0]) * -math.sin(a) + (ys - point[1]) * math.cos(a)
    ramp = np.clip(0.5 + s / (2 * ramp_px), 0.0, 1.0)
    return hf.with_data(hf.data + step * ramp)


# ---------------------------------------------------------------------------
# fixture builders


def _centre(size: int) -> tuple[float, float]:
    return ((size - 1) / 2, (size - 1) / 2)


def scratch_specimen(depth: float, width: float, angle_deg: float = 0.0, length_px: float = 180.0,
                     size: int = FIXTURE_SIZE, center=None) -> DefectSpecimen:
    cx, cy = center if center is not None else _centre(size)
    a = math.radians(angle_deg)
    h = length_px / 2
    seg = LineSegment2D((cx - h * math.cos(a), cy - h * math.sin(a)), (cx + h * math.cos(a), cy + h * math.sin(a)))
    return DefectSpecimen(DefectClass.SCRATCH, depth, width, seg)


def gouge_specimen(depth: float, diameter: float, size: int = FIXTURE_SIZE, center=None,
                   pitch: float = 6.9) -> DefectSpecimen:
    c = center if center is not None else _centre(size)
    return DefectSpecimen(DefectClass.GOUGE, depth, diameter, Circle2D(c, diameter * 1000.0 / pitch / 2))


def drill_run_specimen(depth: float, width: float, n_bumps: int = 6, bump_pitch: float = 0.12,
                       bump_length: float = 0.4, angle_deg: float = 0.0, size: int = FIXTURE_SIZE,
                       center=None, pitch: float = 6.9) -> DefectSpecimen:
    cx, cy = center if center is not None else _centre(size)
    a = math.radians(angle_deg)
    h = ((n_bumps - 1) * bump_pitch * 1000.0 / pitch) / 2 + 1.0
    axis = LineSegment2D((cx - h * math.cos(a), cy - h * math.sin(a)), (cx + h * math.cos(a), cy + h * math.sin(a)))
    return DefectSpecimen(DefectClass.DRILL_RUN, depth, width, BumpTrain(axis, n_bumps, bump_pitch, bump_length))


def ideal_probe(spec: DefectSpecimen, half_length_px: float, width: int, height: int) -> LineSegment2D:
    """Probe through the specimen's centre that crosses it as the classifier would.

    Scratch: perpendicular to the groove. Gouge: horizontal diameter.
    Drill run: along the bump axis.
    """
    g = spec.geometry
    if isinstance(g, LineSegment2D):
        (mx, my), (ux, uy) = g.midpoint, g.direction
        ux, uy = -uy, ux
    elif isinstance(g, Circle2D):
        (mx, my), (ux, uy) = g.center, (1.0, 0.0)
    else:
        (mx, my), (ux, uy) = g.axis.midpoint, g.axis.direction
    p0 = (mx - half_length_px * ux, my - half_length_px * uy)
    p1 = (mx + half_length_px * ux, my + half_length_px * uy)
    clip = lambda p: (min(max(p[0], 0.0), width - 1.0), min(max(p[1], 0.0), height - 1.0))  # noqa: E731
    return LineSegment2D(clip(p0), clip(p1))


@dataclass
class TactileFixture:
    name: str
    label: DefectClass
    heightfield: Heightfield
    specimen: DefectSpecimen | None = None
    feature: str = ""


TACTILE_SUITE_COUNTS = {
    DefectClass.SCRATCH: 17,
    DefectClass.GOUGE: 14,
    DefectClass.DRILL_RUN: 18,
    DefectClass.NO_DEFECT: 10,
}


def random_specimen(kind: DefectClass, rng: np.random.Generator, size: int = FIXTURE_SIZE,
                    pitch: float = 6.9) -> DefectSpecimen:
    """Draw a specimen comfortably above the threshold table, centred in the field."""
    if kind is DefectClass.SCRATCH:
        return scratch_specimen(rng.uniform(0.02, 0.08), rng.uniform(0.06, 0.15), rng.uniform(0, 180),
                                length_px=rng.uniform(150, 190), size=size)
    if kind is DefectClass.GOUGE:
        return gouge_specimen(rng.uniform(0.025, 0.08), rng.uniform(0.2, 0.42), size=size, pitch=pitch)
    if kind is DefectClass.DRILL_RUN:
        return drill_run_specimen(rng.uniform(0.025, 0.06), rng.uniform(0.016, 0.024), 5,
                                  rng.uniform(0.115, 0.13), rng.uniform(0.36, 0.44), rng.uniform(0, 180),
                                  size=size, pitch=pitch)
    raise ValueError(f"no specimen for {kind}")


def random_negative(index: int, rng: np.random.Generator, size: int = FIXTURE_SIZE) -> tuple[Heightfield, str]:
    """Defect-free scan: flat, fastener ring, panel-edge step or raised ridge."""
    hf = Heightfield.zeros(size, size)
    c = _centre(size)
    kind = ("flat", "fastener", "edge", "ridge", "fastener", "edge", "ridge", "fastener", "edge", "flat")[index % 10]
    if kind == "fastener":
        hf = add_fastener_ring(hf, c, rng.uniform(14, 22), rng.uniform(0.05, 0.1), rng.uniform(0.04, 0.07))
    elif kind == "edge":
        off = rng.uniform(-20, 20)
        hf = add_edge_step(hf, (c[0] + off, c[1] - off), rng.uniform(0, 180), rng.uniform(0.03, 0.08))
    elif kind == "ridge":
        spec = scratch_specimen(0.01, 0.01, rng.uniform(0, 180), rng.uniform(150, 190), size=size)
        hf = add_raised_ridge(hf, spec.geometry, rng.uniform(0.02, 0.06), rng.uniform(0.06, 0.12))
    return hf, kind


def generate_tactile_suite(counts=None, seed: int = 0, noise_sigma: float = 0.0, noise_seed: int = 0,
                           tilt_max: float = 0.0005, size: int = FIXTURE_SIZE) -> list[TactileFixture]:
    """Tactile fixtures mirroring the scan set: 17 scratch, 14 gouge, 18 drill run, 10 clean.

    Geometry and panel tilt come from ``seed``; sensor noise from ``noise_seed``
    so the same geometry can be replayed under several noise draws.
    """
    counts = dict(TACTILE_SUITE_COUNTS if counts is None else counts)
    rng = np.random.default_rng(seed)
    out = []
    for kind in (*DEFECT_CLASSES, DefectClass.NO_DEFECT):
        for i in range(counts.get(kind, 0)):
            if kind is DefectClass.NO_DEFECT:
                hf, feature = random_negative(i, rng, size)
                spec = None
            else:
                spec = random_specimen(kind, rng, size)
                hf = stamp_defect(Heightfield.zeros(size, size), spec)
                feature = kind.value
            tilt = tuple(rng.uniform(-tilt_max, tilt_max, 2))
            sag = rng.uniform(0, 0.003)
            k = len(out)
            hf = add_trend_and_noise(hf, tilt, sag, noise_sigma, seed=noise_seed * 100003 + k)
            out.append(TactileFixture(f"{kind.value}_{i:02d}", kind, hf, spec, feature))
    return out


# ---------------------------------------------------------------------------
# panel scenes


@dataclass(frozen=True)
class PlacedDefect:
    specimen: DefectSpecimen
    position: tuple[float, float]  # mm on the panel
    extent: tuple[float, float]  # visual footprint (w, h) mm

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        (x, y), (w, h) = self.position, self.extent
        return (x - w / 2, y - h / 2, x + w / 2, y + h / 2)


@dataclass
class SceneRecipe:
    panel_size: tuple[float, float] = (636.0, 176.0)
    curvature_radius: float | None = 673.1  # mm (26.5 in)
    counts: dict = field(default_factory=lambda: {"scratch": 7, "gouge": 7, "drill_run": 1})
    camera_footprint: tuple[float, float] = (320.0, 200.0)
    camera_overlap: float = 0.0
    tactile_tile: tuple[float, float] = (12.0, 16.0)
    defect_extent: tuple[float, float] = (8.0, 30.0)  # min/max visual size, mm
    image_size: tuple[int, int] = IMAGE_SIZE
    detector: dict = field(default_factory=dict)
    tactile_noise: float = 0.0  # mm, sensor noise on simulated tactile scans

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRecipe":
        d = dict(d)
        for k in ("panel_size", "camera_footprint", "tactile_tile", "defect_extent", "image_size"):
            if k in d:
                d[k] = tuple(d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown recipe fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SceneRecipe":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PanelScene:
    panel_size: tuple[float, float]
    curvature_radius: float | None
    defects: list[PlacedDefect]
    recipe: SceneRecipe
    seed: int = 0

    def surface_z(self, x, y):
        """Panel height (mm) of a cylinder bent about the y axis; zero when flat."""
        if not self.curvature_radius:
            return np.zeros_like(np.asarray(x, dtype=float))
        R = self.curvature_radius
        u = np.asarray(x, dtype=float) - self.panel_size[0] / 2
        return np.sqrt(np.clip(R * R - u * u, 0, None)) - R


class PlacementError(RuntimeError):
    pass


def _boxes_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def generate_scene(recipe: SceneRecipe, seed: int = 0, max_tries: int = 1000):
    """Place the recipe's defects on the panel and project ground truth into each view.

    Returns ``(scene, plan, ground_truths)`` where ``ground_truths`` maps view
    id to a :class:`vtinspect.voc.GroundTruth` and ``plan`` is the camera
    coverage plan used for the projection.
    """
    from .sim import plan_coverage

    rng = np.random.default_rng(seed)
    W, H = recipe.panel_size
    placed: list[PlacedDefect] = []
    lo, hi = recipe.defect_extent
    for name, n in recipe.counts.items():
        kind = DefectClass.parse(name)
        for _ in range(int(n)):
            spec = random_specimen(kind, rng)
            for _try in range(max_tries):
                long_side = rng.uniform(lo, hi)
                if kind is DefectClass.GOUGE:
                    ext = (rng.uniform(lo, lo * 1.5),) * 2
                else:
                    short = rng.uniform(lo * 0.4, lo)
                    ext = (long_side, short) if rng.random() < 0.5 else (short, long_side)
                pos = (rng.uniform(ext[0] / 2, W - ext[0] / 2), rng.uniform(ext[1] / 2, H - ext[1] / 2))
                cand = PlacedDefect(spec, pos, ext)
                if ext[0] <= W and ext[1] <= H and not any(_boxes_overlap(cand.bounds, p.bounds) for p in placed):
                    placed.append(cand)
                    break
            else:
                raise PlacementError(f"could not place {kind.value} defect after {max_tries} tries")
    scene = PanelScene(recipe.panel_size, recipe.curvature_radius, placed, recipe, seed)
    plan = plan_coverage(recipe.panel_size, recipe.camera_footprint, recipe.camera_overlap)
    return scene, plan, project_ground_truth(scene, plan)


def view_id(k: int) -> str:
    return f"view_{k:03d}"


def assign_views(scene: PanelScene, plan) -> dict[int, list[int]]:
    """Defect indices per view: each defect goes to the first view containing its centre."""
    out: dict[int, list[int]] = {k: [] for k in range(len(plan.poses))}
    for i, d in enumerate(scene.defects):
        px, py = d.position
        for k in range(len(plan.poses)):
            x0, y0, x1, y1 = plan.view_bounds(k)
            if x0 <= px <= x1 and y0 <= py <= y1:
                out[k].append(i)
                break
    return out


def panel_to_image(plan, k: int, image_size, rect) -> tuple[float, float, float, float]:
    """Map a panel rectangle (mm) into view k's pixel frame, clipped to the image."""
    x0, y0, x1, y1 = plan.view_bounds(k)
    iw, ih = image_size
    sx, sy = iw / (x1 - x0), ih / (y1 - y0)
    bx0, by0, bx1, by1 = rect
    return (max(0.0, (bx0 - x0) * sx), max(0.0, (by0 - y0) * sy),
            min(float(iw), (bx1 - x0) * sx), min(float(ih), (by1 - y0) * sy))


def image_to_panel(plan, k: int, image_size, box) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = plan.view_bounds(k)
    iw, ih = image_size
    sx, sy = (x1 - x0) / iw, (y1 - y0) / ih
    return (x0 + box[0] * sx, y0 + box[1] * sy, x0 + box[2] * sx, y0 + box[3] * sy)


def project_ground_truth(scene: PanelScene, plan) -> dict:
    """GroundTruth per camera view.

    Each defect is annotated in the first view (plan order) containing its
    centre, with its box clipped to that view. Object order follows the
    scene's defect order.
    """
    from .vision import BoundingBox
    from .voc import GroundTruth, VocObject

    iw, ih = scene.recipe.image_size
    out = {}
    for k, idx in assign_views(scene, plan).items():
        objs = []
        for i in idx:
            d = scene.defects[i]
            objs.append(VocObject(d.specimen.kind, BoundingBox(*panel_to_image(plan, k, (iw, ih), d.bounds))))
        out[view_id(k)] = GroundTruth(view_id(k), (iw, ih, 3), objs)
    return out


# ---------------------------------------------------------------------------
# scene files

SCENE_FORMAT = "vtinspect-scene/1"


def _specimen_dict(spec: DefectSpecimen) -> dict:
    g = spec.geometry
    if isinstance(g, LineSegment2D):
        geom = {"segment": [list(g.p0), list(g.p1)]}
    elif isinstance(g, Circle2D):
        geom = {"circle": {"center": list(g.center), "radius_px": g.radius}}
    else:
        geom = {"bump_train": {"axis": [list(g.axis.p0), list(g.axis.p1)], "n_bumps": g.n_bumps,
                               "bump_pitch": g.bump_pitch, "bump_length": g.bump_length}}
    return {"kind": spec.kind.value, "stamped_depth": spec.stamped_depth, "stamped_width": spec.stamped_width,
            "geometry": geom}


def scene_document(scene: PanelScene) -> dict:
    """JSON form of a scene.

    The recipe and seed regenerate the scene exactly; the defect list is
    written out so the file can be read on its own.
    """
    return {
        "format": SCENE_FORMAT,
        "seed": scene.seed,
        "recipe": scene.recipe.to_dict(),
        "defects": [
            {"position_mm": list(d.position), "extent_mm": list(d.extent), "specimen": _specimen_dict(d.specimen)}
            for d in scene.defects
        ],
    }


def load_scene(path) -> PanelScene:
    """Rebuild a scene from its JSON document (or from a bare recipe plus ``seed``)."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: scene file must hold a JSON object")
    if "recipe" in doc:
        recipe, seed = SceneRecipe.from_dict(doc["recipe"]), int(doc.get("seed", 0))
    else:
        d = dict(doc)
        seed = int(d.pop("seed", 0))
        recipe = SceneRecipe.from_dict(d)
    scene, _, _ = generate_scene(recipe, seed)
    if "defects" in doc and len(doc["defects"]) != len(scene.defects):
        raise ValueError(f"{path}: defect list does not match the recipe and seed")
    return scene


def write_scene_fixtures(recipe: SceneRecipe, seed: int, out_dir) -> dict:
    """Generate a scene and write it out as files.

    Layout: ``scene.json``, ``annotations/<view>.xml`` (VOC),
    ``detections.json`` from the recipe's detector model, and one
    ``tactile/defect_<i>_<kind>.hfld`` scan per defect. Returns a summary.
    """
    from .heightfield import save_heightfield
    from .sim import DetectorModel, tactile_heightfield
    from .vision import write_detections
    from .voc import write_voc

    out = Path(out_dir)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    (out / "tactile").mkdir(exist_ok=True)
    scene, plan, gts = generate_scene(recipe, seed)
    (out / "scene.json").write_text(json.dumps(scene_document(scene), indent=2, sort_keys=True) + "\n")
    for vid, gt in gts.items():
        write_voc(gt, out / "annotations" / f"{vid}.xml")
    rng = np.random.default_rng(seed)
    dets = DetectorModel.from_dict(recipe.detector).detect(gts, rng)
    write_detections(dets, out / "detections.json")
    files = []
    for i, d in enumerate(scene.defects):
        name = f"defect_{i:02d}_{d.specimen.kind.value}.hfld"
        save_heightfield(tactile_heightfield(scene, i, rng), out / "tactile" / name)
        files.append(name)
    return {
        "out": str(out),
        "views": len(gts),
        "defects": len(scene.defects),
        "annotations": sum(len(g.objects) for g in gts.values()),
        "detections": sum(len(v) for v in dets.values()),
        "tactile_files": files,
    }
