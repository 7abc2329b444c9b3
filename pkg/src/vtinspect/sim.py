"""Panel inspection simulator.

Covers the camera coverage plan, a statistical stand-in for the trained
detector, surface fitting and normals for sensor alignment, the tactile
focus check and servo approach, and the three inspection modes (vision
only, touch only, two stage) with their runtime accounting.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from .classify import classify_scan, scan_label
from .defects import DEFECT_CLASSES, DefectClass
from .evaluation import EvalConfig, evaluate_detections, iou, match_detections
from .heightfield import Heightfield
from .localization import LocalizationConfig
from .synth import (
    FIXTURE_SIZE,
    PanelScene,
    SceneRecipe,
    add_trend_and_noise,
    assign_views,
    generate_scene,
    image_to_panel,
    panel_to_image,
    project_ground_truth,
    stamp_defect,
    view_id,
)
from .vision import BoundingBox, Detection, RoutingConfig, route_detections

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class TimingModel:
    t_rgb: float = 6.52  # s per RGB capture
    t_tactile: float = 22.26  # s per tactile capture

    def __post_init__(self):
        if not (self.t_rgb > 0 and self.t_tactile > 0):
            raise ValueError("capture times must be positive")

    def runtime(self, n_rgb: int, n_tactile: int) -> float:
        """n_rgb * t_rgb + n_tactile * t_tactile, summed in decimal so 583 * 22.26 is 12977.58."""
        total = Decimal(repr(self.t_rgb)) * n_rgb + Decimal(repr(self.t_tactile)) * n_tactile
        return float(total)


# ---------------------------------------------------------------------------
# coverage


@dataclass(frozen=True)
class CoveragePlan:
    panel: tuple[float, float]
    footprint: tuple[float, float]
    overlap: float
    poses: tuple[tuple[float, float], ...]  # view centres, mm

    def __len__(self) -> int:
        return len(self.poses)

    def view_bounds(self, k: int) -> tuple[float, float, float, float]:
        (x, y), (w, h) = self.poses[k], self.footprint
        return (x - w / 2, y - h / 2, x + w / 2, y + h / 2)


def _axis_positions(length: float, size: float, overlap: float) -> list[float]:
    if size >= length:
        return [length / 2]
    stride = size * (1 - overlap)
    n = math.ceil((length - size) / stride - 1e-9) + 1
    return [min(size / 2 + i * stride, length - size / 2) for i in range(n)]


def plan_coverage(panel, footprint, overlap: float = 0.0) -> CoveragePlan:
    """Row-major grid of camera poses covering the panel.

    The stride is ``footprint * (1 - overlap)``; the last row and column are
    pulled back to the panel edge. Along an axis where the footprint is at
    least the panel size a single centred pose is used.
    """
    pw, ph = map(float, panel)
    fw, fh = map(float, footprint)
    if not (pw > 0 and ph > 0 and fw > 0 and fh > 0):
        raise ValueError("panel and footprint sizes must be positive")
    if not (0.0 <= overlap < 0.5):
        raise ValueError("overlap must be in [0, 0.5)")
    xs = _axis_positions(pw, fw, overlap)
    ys = _axis_positions(ph, fh, overlap)
    return CoveragePlan((pw, ph), (fw, fh), overlap, tuple((x, y) for y in ys for x in xs))


def tactile_tiles(panel, tile) -> list[tuple[float, float, float, float]]:
    """Exhaustive row-major tiling, ceil(W/w) * ceil(H/h) tiles clipped to the panel."""
    pw, ph = panel
    tw, th = tile
    nx, ny = math.ceil(pw / tw - 1e-9), math.ceil(ph / th - 1e-9)
    return [(i * tw, j * th, min((i + 1) * tw, pw), min((j + 1) * th, ph)) for j in range(ny) for i in range(nx)]


# ---------------------------------------------------------------------------
# surface fitting and normals


@dataclass(frozen=True)
class SurfaceFit:
    degree: int
    coeffs: dict  # (i, j) -> c for the term x**i * y**j
    residual_rms: float

    def __call__(self, x, y):
        return sum(c * np.power(x, i) * np.power(y, j) for (i, j), c in self.coeffs.items())


def _terms(degree: int) -> list[tuple[int, int]]:
    return [(i, t - i) for t in range(degree + 1) for i in range(t, -1, -1)]


def fit_surface_polynomial(points, degree: int = 2) -> SurfaceFit:
    """Least-squares z = sum c_ij x^i y^j over i + j <= degree."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be an (n, 3) array of x, y, z")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    terms = _terms(degree)
    if len(pts) < len(terms):
        raise ValueError(f"need at least {len(terms)} points for degree {degree}, got {len(pts)}")
    x, y, z = pts.T
    A = np.column_stack([x**i * y**j for i, j in terms])
    # column scaling keeps the rank test meaningful for mm-sized coordinates
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    As = A / scale
    if np.linalg.matrix_rank(As) < len(terms):
        raise ValueError("degenerate point set: the polynomial design is rank deficient")
    sol, *_ = np.linalg.lstsq(As, z, rcond=None)
    c = sol / scale
    resid = z - A @ c
    return SurfaceFit(degree, {t: float(v) for t, v in zip(terms, c)}, float(np.sqrt(np.mean(resid**2))))


def surface_normal_at(fit: SurfaceFit, x: float, y: float) -> np.ndarray:
    """Unit normal (-dz/dx, -dz/dy, 1) / norm at (x, y)."""
    dzdx = sum(c * i * x ** (i - 1) * y**j for (i, j), c in fit.coeffs.items() if i > 0)
    dzdy = sum(c * j * x**i * y ** (j - 1) for (i, j), c in fit.coeffs.items() if j > 0)
    n = np.array([-dzdx, -dzdy, 1.0])
    return n / np.linalg.norm(n)


# ---------------------------------------------------------------------------
# focus check and servoing


def focus_check(frame, background, tau: float) -> bool:
    """True when the mean absolute difference from the background exceeds tau."""
    f = np.asarray(frame, dtype=float)
    b = np.asarray(background, dtype=float)
    if f.shape != b.shape:
        raise ValueError(f"frame {f.shape} and background {b.shape} differ in shape")
    return float(np.mean(np.abs(f - b))) > tau


@dataclass(frozen=True)
class ServoConfig:
    standoff: float = 2.0  # mm from the surface at the start
    step: float = 0.1  # mm per step along -normal
    tau: float = 0.05  # focus threshold on mean intensity change
    gain: float = 1.0  # intensity change per mm of gel compression
    max_steps: int = 50
    frame_shape: tuple[int, int] = (24, 32)


@dataclass(frozen=True)
class ServoResult:
    steps: int
    in_focus: bool


def simulated_frame(background: np.ndarray, depth: float, gain: float) -> np.ndarray:
    """Tactile image after pressing ``depth`` mm into the surface (no change before contact)."""
    return background + gain * max(0.0, depth)


def servo_approach(cfg: ServoConfig | None = None, standoff: float | None = None) -> ServoResult:
    """Step toward the surface until the focus check passes or the step budget runs out."""
    cfg = cfg or ServoConfig()
    gap = cfg.standoff if standoff is None else standoff
    bg = np.full(cfg.frame_shape, 0.5)
    for k in range(1, cfg.max_steps + 1):
        if focus_check(simulated_frame(bg, k * cfg.step - gap, cfg.gain), bg, cfg.tau):
            return ServoResult(k, True)
    return ServoResult(cfg.max_steps, False)


# ---------------------------------------------------------------------------
# detector model

CONFIRMED_BAND = (0.7, 1.0)
UNCERTAIN_BAND = (0.1, 0.7)
MISSED_BAND = (0.0, 0.1)


@dataclass(frozen=True)
class DetectorModel:
    """Statistical stand-in for the trained detector.

    A true defect scores in the confirmed band with probability ``p_hi``,
    in the uncertain band with ``p_mid`` and in the missed band otherwise
    (a low-score detection that routing discards). ``quota`` fixes the band
    counts per scene instead: ``{"confirmed": n, "delegated": m,
    "delegated_above_cut": k}`` puts k of the m uncertain scores at or above
    the evaluation score cut. Boxes are the ground truth with each edge
    jittered by up to ``box_jitter`` of the box size; the class is wrong
    with probability ``class_error``. False positives arrive at
    ``fp_per_image`` (Poisson mean) with uncertain-band scores.
    """

    p_hi: float = 0.55
    p_mid: float = 0.35
    class_error: float = 0.0
    fp_per_image: float = 0.0
    box_jitter: float = 0.05
    quota: dict | None = None
    score_cut: float = 0.5

    def __post_init__(self):
        for name in ("p_hi", "p_mid", "class_error", "box_jitter"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.p_hi + self.p_mid > 1.0:
            raise ValueError("p_hi + p_mid must not exceed 1")
        if self.fp_per_image < 0:
            raise ValueError("fp_per_image must be non-negative")

    @classmethod
    def from_dict(cls, d: dict | None) -> "DetectorModel":
        return cls(**(d or {}))

    def _bands(self, n: int, rng: np.random.Generator) -> list[tuple[str, bool]]:
        if self.quota is None:
            u = rng.random(n)
            return [("confirmed" if v < self.p_hi else "delegated" if v < self.p_hi + self.p_mid else "missed",
                     False) for v in u]
        nc, nd = int(self.quota.get("confirmed", 0)), int(self.quota.get("delegated", 0))
        nk = int(self.quota.get("delegated_above_cut", 0))
        if nc + nd > n or nk > nd:
            raise ValueError(f"detector quota {self.quota} does not fit {n} defects")
        bands = [("confirmed", False)] * nc + [("delegated", i < nk) for i in range(nd)] + \
            [("missed", False)] * (n - nc - nd)
        return [bands[i] for i in rng.permutation(n)]

    def _score(self, band: str, above_cut: bool, rng) -> float:
        if band == "confirmed":
            return float(np.nextafter(CONFIRMED_BAND[0], 1.0) + rng.random() * (1.0 - CONFIRMED_BAND[0]))
        if band == "delegated":
            lo, hi = UNCERTAIN_BAND
            if self.quota is not None:
                lo, hi = (self.score_cut, hi) if above_cut else (lo, np.nextafter(self.score_cut, 0.0))
            return float(rng.uniform(lo, hi))
        return float(rng.uniform(*MISSED_BAND))

    def _jitter(self, box: BoundingBox, rng, width: int, height: int) -> BoundingBox:
        j = self.box_jitter
        dx0, dy0, dx1, dy1 = rng.uniform(-j, j, 4) * [box.width, box.height, box.width, box.height]
        x0, x1 = max(0.0, box.xmin + dx0), min(float(width), box.xmax + dx1)
        y0, y1 = max(0.0, box.ymin + dy0), min(float(height), box.ymax + dy1)
        return BoundingBox(x0, y0, x1, y1) if x0 < x1 and y0 < y1 else BoundingBox(*box.as_list())

    def detect(self, gts: dict, rng: np.random.Generator) -> dict[str, list[Detection]]:
        """Detections per view id; one per ground-truth box plus false positives."""
        objs = [(k, o) for k, gt in gts.items() for o in gt.objects]
        bands = self._bands(len(objs), rng)
        out: dict[str, list[Detection]] = {k: [] for k in gts}
        for (k, o), (band, above) in zip(objs, bands):
            w, h = gts[k].image_size[:2]
            cls = o.kind
            if rng.random() < self.class_error:
                cls = DEFECT_CLASSES[(DEFECT_CLASSES.index(cls) + 1 + int(rng.integers(0, 2))) % 3]
            out[k].append(Detection(self._jitter(o.bbox, rng, w, h), cls, self._score(band, above, rng), k))
        for k, gt in gts.items():
            w, h = gt.image_size[:2]
            for _ in range(int(rng.poisson(self.fp_per_image)) if self.fp_per_image else 0):
                bw, bh = rng.uniform(20, 120, 2)
                x, y = rng.uniform(0, w - bw), rng.uniform(0, h - bh)
                cls = DEFECT_CLASSES[int(rng.integers(0, 3))]
                out[k].append(Detection(BoundingBox(x, y, x + bw, y + bh), cls, float(rng.uniform(*UNCERTAIN_BAND)), k))
        return out


# ---------------------------------------------------------------------------
# inspection


class Mode(str, enum.Enum):
    VISION_ONLY = "vision"
    TOUCH_ONLY = "touch"
    TWO_STAGE = "two-stage"

    @classmethod
    def parse(cls, s: str) -> "Mode":
        key = s.strip().lower().replace("_", "-")
        aliases = {"vision": cls.VISION_ONLY, "vision-only": cls.VISION_ONLY, "touch": cls.TOUCH_ONLY,
                   "touch-only": cls.TOUCH_ONLY, "two-stage": cls.TWO_STAGE, "twostage": cls.TWO_STAGE}
        if key not in aliases:
            raise ValueError(f"unknown mode {s!r}")
        return aliases[key]


@dataclass
class DefectOutcome:
    index: int
    truth: DefectClass
    found_by: str | None  # "vision", "tactile" or None
    label: DefectClass | None

    def to_dict(self) -> dict:
        return {"index": self.index, "truth": self.truth.value, "found_by": self.found_by,
                "label": self.label.value if self.label else None}


@dataclass
class InspectionReport:
    mode: Mode
    outcomes: list[DefectOutcome]
    metrics: dict
    runtime_s: float
    n_rgb: int
    n_tactile: int
    seed: int = 0
    scans: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "runtime_s": self.runtime_s,
            "counts": {"n_rgb": self.n_rgb, "n_tactile": self.n_tactile},
            "metrics": self.metrics,
            "outcomes": [o.to_dict() for o in self.outcomes],
            "scans": self.scans,
            "seed": self.seed,
        }


def tactile_heightfield(scene: PanelScene, defect_index: int | None, rng: np.random.Generator,
                        size: int = FIXTURE_SIZE) -> Heightfield:
    """Simulated scan of a sensor-aligned patch, with the defect (if any) in view.

    After alignment to the surface normal only the panel's curvature sag
    across the sensor window remains as trend.
    """
    hf = Heightfield.zeros(size, size)
    if defect_index is not None:
        hf = stamp_defect(hf, scene.defects[defect_index].specimen)
    sag = 0.0
    if scene.curvature_radius:
        span = size * hf.pitch_x / 1000.0
        sag = span * span / (8.0 * scene.curvature_radius)
    noise = scene.recipe.tactile_noise
    return add_trend_and_noise(hf, (0.0, 0.0), sag, noise, int(rng.integers(0, 2**31)) if noise else 0)


def _panel_fit(scene: PanelScene) -> SurfaceFit:
    W, H = scene.panel_size
    xs, ys = np.meshgrid(np.linspace(0, W, 9), np.linspace(0, H, 5))
    pts = np.column_stack([xs.ravel(), ys.ravel(), scene.surface_z(xs.ravel(), ys.ravel())])
    return fit_surface_polynomial(pts, 2)


def default_scanner(scene: PanelScene, defect_index: int | None, rng: np.random.Generator,
                    loc_cfg: LocalizationConfig | None = None) -> DefectClass:
    """Synthesize the scan and classify it."""
    return scan_label(classify_scan(tactile_heightfield(scene, defect_index, rng), loc_cfg))


def _scan(scene, fit, servo, defect_index, centre, rng, scanner):
    n = surface_normal_at(fit, *centre)
    sr = servo_approach(servo)
    record = {"centre_mm": [round(centre[0], 6), round(centre[1], 6)], "normal": [round(float(v), 9) for v in n],
              "servo_steps": sr.steps, "in_focus": sr.in_focus, "label": DefectClass.NO_DEFECT.value}
    if not sr.in_focus:
        log.warning("tactile scan at %s never came into focus; skipped", centre)
        record["skipped"] = True
        return DefectClass.NO_DEFECT, record
    label = scanner(scene, defect_index, rng)
    record["label"] = label.value
    return label, record


def _best_defect(plan, k, image_size, box: BoundingBox, scene, candidates) -> int | None:
    """Scene defect whose footprint overlaps the box most, if any."""
    best, best_v = None, 0.0
    for i in candidates:
        r = panel_to_image(plan, k, image_size, scene.defects[i].bounds)
        if r[0] >= r[2] or r[1] >= r[3]:
            continue
        v = iou(box, BoundingBox(*r))
        if v > best_v:
            best, best_v = i, v
    return best


def run_inspection(scene: PanelScene, mode, routing: RoutingConfig | None = None, timing: TimingModel | None = None,
                   seed: int = 0, detector: DetectorModel | None = None, eval_cfg: EvalConfig | None = None,
                   servo: ServoConfig | None = None, loc_cfg: LocalizationConfig | None = None,
                   scanner=None) -> InspectionReport:
    """Simulate one inspection of the scene and score it against the ground truth.

    Vision only: one RGB capture per coverage view, detections scored
    after the evaluation score cut. Touch only: every tile of the
    exhaustive tiling is scanned and classified. Two stage: the vision
    pass is routed; confirmed detections stand, each delegated detection
    gets one tactile scan whose label replaces the detector's (a NoDefect
    verdict removes it). Runtime follows the timing model exactly.

    ``scanner(scene, defect_index, rng) -> DefectClass`` stands for the
    tactile sensor plus classifier; the default synthesizes the patch and
    runs :func:`classify_scan` with ``loc_cfg``.
    """
    mode = Mode.parse(mode) if isinstance(mode, str) else Mode(mode)
    routing = routing or RoutingConfig()
    timing = timing or TimingModel()
    detector = detector or DetectorModel.from_dict(scene.recipe.detector)
    eval_cfg = eval_cfg or EvalConfig()
    if scanner is None:
        def scanner(sc, i, r):
            return default_scanner(sc, i, r, loc_cfg)
    rng = np.random.default_rng(seed)
    plan = plan_coverage(scene.panel_size, scene.recipe.camera_footprint, scene.recipe.camera_overlap)
    gts = project_ground_truth(scene, plan)
    views = assign_views(scene, plan)
    image_size = tuple(scene.recipe.image_size)
    fit = _panel_fit(scene)
    final: dict[str, list[Detection]] = {k: [] for k in gts}
    scans: list[dict] = []
    tactile_ids: set[int] = set()
    n_rgb = n_tactile = 0

    if mode is Mode.TOUCH_ONLY:
        tiles = tactile_tiles(scene.panel_size, scene.recipe.tactile_tile)
        owner: dict[int, int] = {}
        for i, d in enumerate(scene.defects):
            px, py = d.position
            for t, (x0, y0, x1, y1) in enumerate(tiles):
                if x0 <= px <= x1 and y0 <= py <= y1:
                    owner.setdefault(t, i)
                    break
        view_of = {i: k for k, idx in views.items() for i in idx}
        for t, rect in enumerate(tiles):
            centre = ((rect[0] + rect[2]) / 2, (rect[1] + rect[3]) / 2)
            label, rec = _scan(scene, fit, servo, owner.get(t), centre, rng, scanner)
            n_tactile += 1
            if label is DefectClass.NO_DEFECT:
                continue
            rec["tile"] = t
            scans.append(rec)
            # a confirmed site is reported with the footprint the scan measured
            i = owner.get(t)
            if i is not None and i in view_of:
                k = view_of[i]
                box = panel_to_image(plan, k, image_size, scene.defects[i].bounds)
            else:
                k = next((kk for kk in range(len(plan)) if _inside(plan.view_bounds(kk), centre)), 0)
                box = panel_to_image(plan, k, image_size, rect)
            if box[0] < box[2] and box[1] < box[3]:
                det = Detection(BoundingBox(*box), label, 1.0, view_id(k))
                tactile_ids.add(id(det))
                final[view_id(k)].append(det)
    else:
        n_rgb = len(plan)
        dets = detector.detect(gts, rng)
        if mode is Mode.VISION_ONLY:
            final = dets
        else:
            for k in range(len(plan)):
                vid = view_id(k)
                routed = route_detections(dets[vid], routing)
                final[vid].extend(routed.confirmed)
                for d in routed.delegated:
                    i = _best_defect(plan, k, image_size, d.bbox, scene, views[k])
                    rect = image_to_panel(plan, k, image_size, d.bbox.as_list())
                    centre = ((rect[0] + rect[2]) / 2, (rect[1] + rect[3]) / 2)
                    label, rec = _scan(scene, fit, servo, i, centre, rng, scanner)
                    n_tactile += 1
                    rec["view"] = vid
                    scans.append(rec)
                    if label is not DefectClass.NO_DEFECT:
                        det = Detection(d.bbox, label, 1.0, vid)
                        tactile_ids.add(id(det))
                        final[vid].append(det)

    report = evaluate_detections(gts, final, eval_cfg)
    outcomes = _outcomes(scene, gts, views, final, eval_cfg, tactile_ids)
    metrics = {
        "precision": _overall(report.counts["tp"], report.counts["tp"] + report.counts["fp"]),
        "recall": _overall(report.counts["tp"], report.counts["tp"] + report.counts["fn"]),
        "average_precision": report.mean["average_precision"],
        "classless_recall": report.classless_recall,
        "counts": report.counts,
    }
    return InspectionReport(mode, outcomes, metrics, timing.runtime(n_rgb, n_tactile), n_rgb, n_tactile, seed, scans)


def _inside(bounds, p) -> bool:
    return bounds[0] <= p[0] <= bounds[2] and bounds[1] <= p[1] <= bounds[3]


def _overall(a: int, b: int) -> float | None:
    return a / b if b else None


def _outcomes(scene, gts, views, final, eval_cfg, tactile_ids) -> list[DefectOutcome]:
    out = {i: DefectOutcome(i, d.specimen.kind, None, None) for i, d in enumerate(scene.defects)}
    for k, idx in views.items():
        vid = view_id(k)
        m = match_detections(gts[vid].objects, final.get(vid, []), eval_cfg)
        for p, g, _ in m.matches:
            det = m.preds[p]
            by = "tactile" if id(det) in tactile_ids else "vision"
            out[idx[g]] = DefectOutcome(idx[g], scene.defects[idx[g]].specimen.kind, by, det.cls)
    return [out[i] for i in sorted(out)]


# ---------------------------------------------------------------------------
# presets

TABLE3_DETECTOR = {"quota": {"confirmed": 8, "delegated": 7, "delegated_above_cut": 4}}

PRESETS = {
    "table3-vision": Mode.VISION_ONLY,
    "table3-touch": Mode.TOUCH_ONLY,
    "table3-twostage": Mode.TWO_STAGE,
}


def preset_scene(seed: int = 0) -> PanelScene:
    """The replica panel: 636 x 176 mm, 7 scratches, 7 gouges and 1 drill run, two camera views."""
    scene, _, _ = generate_scene(SceneRecipe(detector=dict(TABLE3_DETECTOR)), seed)
    return scene


def run_preset(name: str, seed: int = 0) -> InspectionReport:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return run_inspection(preset_scene(seed), PRESETS[name], seed=seed)
