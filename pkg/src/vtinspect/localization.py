"""Candidate defect localisation on heightfields.

Edges come from a Canny detector that keeps the thick gradient bands (no
edge thinning). Straight features are recovered by a progressive
probabilistic Hough transform and circular ones by a ring-voting Hough
accumulator; each feature yields a probe segment for depth profiling.
"""

from __future__ import annotations

import enum
import functools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.fft import irfft2, next_fast_len, rfft2

from .heightfield import (
    MIN_PROFILE_SAMPLES,
    Circle2D,
    Heightfield,
    LineSegment2D,
    detrend_profile,
    extract_profile,
    profile_sample_count,
)


@dataclass(frozen=True)
class HoughLineConfig:
    accumulator_threshold: int = 20  # votes
    min_line_length: float = 24.0  # px
    max_line_gap: float = 3.0  # px
    angle_step: float = 1.0  # degrees
    band_halfwidth: float = 2.0  # px cleared on each side of an accepted segment
    max_bin_tries: int = 8  # accumulator bins walked per pixel before giving up


@dataclass(frozen=True)
class HoughCircleConfig:
    radius_min: float = 12.0  # px
    radius_max: float = 40.0  # px
    accumulator_threshold: float = 75.0  # votes
    ring_gap: float = 2.0  # px between the voting ring and the outer counter-ring
    coarse_factor: int = 2  # downsampling of the first-pass accumulator
    coarse_fraction: float = 0.7  # share of the threshold a coarse peak needs


@dataclass(frozen=True)
class LocalizationConfig:
    gauss_sigma: float = 1.5  # px
    canny_low: float = 0.10
    canny_high: float = 0.30
    min_gradient: float = 0.0005  # mm per px; weaker slopes are never edges
    hough_line: HoughLineConfig = field(default_factory=HoughLineConfig)
    hough_circle: HoughCircleConfig = field(default_factory=HoughCircleConfig)
    probe_half_length: float = 0.76  # mm
    dedup_radius: float = 10.0  # px
    seed: int = 0

    def __post_init__(self):
        hl, hc = self.hough_line, self.hough_circle
        positive = [
            self.gauss_sigma, self.canny_low, self.canny_high, self.probe_half_length, self.dedup_radius,
            hl.accumulator_threshold, hl.min_line_length, hl.angle_step,
            hc.radius_min, hc.radius_max, hc.accumulator_threshold, hc.ring_gap,
        ]
        if not all(v > 0 for v in positive) or hl.max_line_gap < 0 or hl.band_halfwidth < 0 or hl.max_bin_tries < 1 \
                or self.min_gradient < 0 or hc.coarse_factor < 1 \
                or not 0 < hc.coarse_fraction <= 1:
            raise ValueError("localization parameters must be positive")
        if not (self.canny_low < self.canny_high <= 1.0):
            raise ValueError("need 0 < canny_low < canny_high <= 1")
        if not hc.radius_min < hc.radius_max:
            raise ValueError("need radius_min < radius_max")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LocalizationConfig":
        d = dict(d)
        if "hough_line" in d:
            d["hough_line"] = HoughLineConfig(**d["hough_line"])
        if "hough_circle" in d:
            d["hough_circle"] = HoughCircleConfig(**d["hough_circle"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "LocalizationConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_seed(self, seed: int) -> "LocalizationConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True, eq=False)
class EdgeMap:
    mask: np.ndarray  # bool, (height, width)
    gradient: np.ndarray | None = None  # normalised magnitude in [0, 1]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]


class CandidateKind(str, enum.Enum):
    LINEAR = "linear"
    CIRCULAR = "circular"


@dataclass(frozen=True)
class Candidate:
    kind: CandidateKind
    geometry: LineSegment2D | Circle2D
    probe: LineSegment2D


# ---------------------------------------------------------------------------
# edges


@functools.lru_cache(maxsize=8)
def _trend_projector(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w]
    u = (xs.ravel() - (w - 1) / 2) / max(w, 1)
    v = (ys.ravel() - (h - 1) / 2) / max(h, 1)
    A = np.column_stack([np.ones(h * w), u, v, u * u, u * v, v * v])
    return A, np.linalg.pinv(A)


def remove_trend_surface(data: np.ndarray) -> np.ndarray:
    """Subtract the least-squares quadratic surface (panel tilt and curvature)."""
    d = np.asarray(data, dtype=np.float64)
    A, pinv = _trend_projector(*d.shape)
    return d - (A @ (pinv @ d.ravel())).reshape(d.shape)


# Sobel response to a unit-slope ramp
_SOBEL_GAIN = 8.0


def canny_no_nms(hf: Heightfield, cfg: LocalizationConfig | None = None) -> EdgeMap:
    """Gaussian blur, Sobel magnitude normalised by its maximum, hysteresis.

    No non-maximum suppression: every pixel above the low threshold that is
    8-connected to a pixel above the high threshold is kept, so edges come
    out as bands rather than one-pixel curves. The best-fit quadratic surface
    is removed first so panel tilt and curvature do not register as edges,
    and slopes below ``cfg.min_gradient`` never count (sensor noise on a
    clean surface would otherwise normalise up to a full edge map).
    """
    cfg = cfg or LocalizationConfig()
    if hf.width < 8 or hf.height < 8:
        raise ValueError("heightfield must be at least 8x8 px for edge detection")
    flat = remove_trend_surface(hf.data)
    # Blur and Sobel average neighbour differences, so if no neighbour
    # difference reaches the floor no gradient can either.
    steepest = max(float(np.abs(np.diff(flat, axis=0)).max()), float(np.abs(np.diff(flat, axis=1)).max()))
    if steepest * math.sqrt(2.0) < cfg.min_gradient:
        return EdgeMap(np.zeros(flat.shape, dtype=bool), np.zeros(flat.shape))
    smooth = ndimage.gaussian_filter(flat, cfg.gauss_sigma, mode="nearest")
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    mag = np.hypot(gx, gy) / _SOBEL_GAIN
    peak = float(mag.max())
    if peak <= max(cfg.min_gradient, 1e-12):
        return EdgeMap(np.zeros(mag.shape, dtype=bool), np.zeros(mag.shape))
    floor = mag >= cfg.min_gradient
    mag /= peak
    weak = (mag >= cfg.canny_low) & floor
    strong = (mag >= cfg.canny_high) & floor
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return EdgeMap(keep[labels], mag)


# ---------------------------------------------------------------------------
# probabilistic Hough lines


def _walk(mask: np.ndarray, x0: float, y0: float, dx: float, dy: float, max_gap: float):
    """Walk from (x0, y0) along (dx, dy); return the last set step before a gap longer than max_gap."""
    h, w = mask.shape
    # number of unit steps before leaving the grid
    lim = []
    for p, d, n in ((x0, dx, w), (y0, dy, h)):
        if d > 1e-12:
            lim.append((n - 0.5 - p) / d)
        elif d < -1e-12:
            lim.append((-0.5 - p) / d)
    kmax = int(math.floor(min(lim))) if lim else 0
    if kmax <= 0:
        return 0
    k = np.arange(1, kmax + 1)
    xs = np.rint(x0 + k * dx).astype(np.intp)
    ys = np.rint(y0 + k * dy).astype(np.intp)
    valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    k, xs, ys = k[valid], xs[valid], ys[valid]
    on = mask[ys, xs]
    setk = np.concatenate([[0], k[on]])
    gaps = np.diff(setk) - 1
    over = np.flatnonzero(gaps > max_gap)
    return int(setk[over[0]] if over.size else setk[-1])


def _line_pixels(x0, y0, x1, y1):
    n = int(math.ceil(max(abs(x1 - x0), abs(y1 - y0)))) + 1
    t = np.linspace(0.0, 1.0, n)
    return np.rint(x0 + t * (x1 - x0)).astype(np.intp), np.rint(y0 + t * (y1 - y0)).astype(np.intp)


def detect_line_candidates(em: EdgeMap, cfg: LocalizationConfig | None = None) -> list[LineSegment2D]:
    """Progressive probabilistic Hough transform over the edge mask.

    Edge pixels are visited in a random order fixed by ``cfg.seed``. Each
    visited pixel votes into a (rho, theta) accumulator; once a bin through
    it reaches the threshold, the line is followed in both directions
    (bridging gaps up to ``max_line_gap``), its pixels are removed from the
    mask and their votes withdrawn, and the segment is kept if it is at least
    ``min_line_length`` long. When the strongest bin only yields a short
    walk (a line crossing several parallel bands, say), up to
    ``max_bin_tries`` weaker bins above threshold are walked too. An
    accepted segment also clears ``band_halfwidth`` px either side of it so
    a thick edge band produces one line rather than several.
    """
    cfg = cfg or LocalizationConfig()
    hl = cfg.hough_line
    mask = em.mask.copy()
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return []
    thetas = np.deg2rad(np.arange(0.0, 180.0, hl.angle_step))
    cos_t, sin_t = np.cos(thetas), np.sin(thetas)
    nt = len(thetas)
    off = int(math.ceil(math.hypot(w, h)))
    acc = np.zeros((nt, 2 * off + 1), dtype=np.int32)
    rows = np.arange(nt)
    voted = np.zeros_like(mask)
    rng = np.random.default_rng(cfg.seed)
    lines = []
    for idx in rng.permutation(xs.size):
        x, y = int(xs[idx]), int(ys[idx])
        if not mask[y, x]:
            continue
        r = np.rint(x * cos_t + y * sin_t).astype(np.intp) + off
        acc[rows, r] += 1
        voted[y, x] = True
        votes = acc[rows, r]
        if votes.max() < hl.accumulator_threshold:
            continue
        # strongest bin first; weaker bins get a chance when its walk is too short
        tries = np.argsort(-votes, kind="stable")[: hl.max_bin_tries]
        tries = tries[votes[tries] >= hl.accumulator_threshold]
        first = None
        for t in tries:
            # the line direction is perpendicular to its normal (cos t, sin t)
            dx, dy = -sin_t[t], cos_t[t]
            k_fwd = _walk(mask, x, y, dx, dy, hl.max_line_gap)
            k_bwd = _walk(mask, x, y, -dx, -dy, hl.max_line_gap)
            first = first or (t, dx, dy, k_fwd, k_bwd)
            good = (k_fwd + k_bwd) >= hl.min_line_length
            if good:
                break
        if not good:
            t, dx, dy, k_fwd, k_bwd = first
        p0 = (x - k_bwd * dx, y - k_bwd * dy)
        p1 = (x + k_fwd * dx, y + k_fwd * dy)
        px, py = _line_pixels(*p0, *p1)
        if good and hl.band_halfwidth > 0:
            # clear the whole band the segment runs through, not just its centre line
            nb = int(math.floor(hl.band_halfwidth))
            px = np.concatenate([np.rint(px + o * cos_t[t]).astype(np.intp) for o in range(-nb, nb + 1)])
            py = np.concatenate([np.rint(py + o * sin_t[t]).astype(np.intp) for o in range(-nb, nb + 1)])
            ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
            px, py = px[ok], py[ok]
        on = mask[py, px]
        px, py = px[on], py[on]
        if good:
            for qx, qy in zip(px[voted[py, px]], py[voted[py, px]]):
                rq = np.rint(qx * cos_t + qy * sin_t).astype(np.intp) + off
                acc[rows, rq] -= 1
            voted[py, px] = False
            lines.append(LineSegment2D(p0, p1))
        mask[py, px] = False
    return lines


# ---------------------------------------------------------------------------
# Hough circles


def _ring_offsets(r: float):
    """Integer offsets (dy, dx) of the discrete circle of radius r."""
    R = int(math.ceil(r)) + 1
    yy, xx = np.mgrid[-R : R + 1, -R : R + 1]
    d = np.hypot(xx, yy)
    on = np.abs(d - r) < 0.5
    return yy[on], xx[on]


@functools.lru_cache(maxsize=256)
def _ring_offsets_cached(r: float):
    return _ring_offsets(r)


@functools.lru_cache(maxsize=256)
def _ring_kernel_fft(shape: tuple[int, int], r: float, gap: float) -> np.ndarray:
    k = np.zeros(shape, dtype=np.float32)
    iy, ix = _ring_offsets_cached(r)
    oy, ox = _ring_offsets_cached(r + gap)
    np.add.at(k, (iy % shape[0], ix % shape[1]), 1.0)
    np.add.at(k, (oy % shape[0], ox % shape[1]), -iy.size / oy.size)
    return rfft2(k)


def _ring_scores(mask: np.ndarray, cx: np.ndarray, cy: np.ndarray, r: float, gap: float) -> np.ndarray:
    """Accumulator values at the centres (cx, cy) for one radius, computed directly."""
    h, w = mask.shape
    iy, ix = _ring_offsets_cached(r)
    oy, ox = _ring_offsets_cached(r + gap)
    out = np.zeros(cx.shape, dtype=np.float64)
    for dy, dx, weight in ((iy, ix, 1.0), (oy, ox, -iy.size / oy.size)):
        y = cy[:, None] + dy[None, :]
        x = cx[:, None] + dx[None, :]
        ok = (y >= 0) & (y < h) & (x >= 0) & (x < w)
        hit = np.zeros(y.shape, dtype=bool)
        hit[ok] = mask[y[ok], x[ok]]
        out += weight * hit.sum(axis=1)
    return out


def circle_radii(cfg: LocalizationConfig | None = None) -> np.ndarray:
    hc = (cfg or LocalizationConfig()).hough_circle
    return np.arange(math.ceil(hc.radius_min), math.floor(hc.radius_max) + 1, dtype=float)


def circle_accumulator(em: EdgeMap, cfg: LocalizationConfig | None = None, radii=None, ring_gap=None):
    """Votes over (r, cy, cx).

    An edge pixel votes +1 for every centre at distance r, and a
    normalised -1 for every centre at distance r + ring_gap, so a circle
    scores highly only where the edge band ends at radius r. A filled region
    or a straight band scores near zero.
    """
    cfg = cfg or LocalizationConfig()
    gap = float(cfg.hough_circle.ring_gap if ring_gap is None else ring_gap)
    radii = circle_radii(cfg) if radii is None else np.asarray(radii, dtype=float)
    h, w = em.mask.shape
    if radii.size == 0:
        return radii, np.zeros((0, h, w), dtype=np.float32)
    pad = int(math.ceil(radii.max() + gap)) + 2
    shape = (next_fast_len(h + 2 * pad), next_fast_len(w + 2 * pad, real=True))
    F = rfft2(em.mask.astype(np.float32), s=shape)
    acc = np.empty((radii.size, h, w), dtype=np.float32)
    for i, r in enumerate(radii):
        acc[i] = irfft2(F * _ring_kernel_fft(shape, float(r), gap), s=shape)[:h, :w]
    return radii, acc


def _peaks(acc: np.ndarray, radii: np.ndarray, floor: float):
    """Local maxima (3x3x3) of a (r, y, x) accumulator at or above floor whose circle fits the grid."""
    nr, h, w = acc.shape
    ri, yi, xi = np.nonzero(acc >= floor)
    r = radii[ri]
    fits = (xi >= r) & (yi >= r) & (xi <= w - 1 - r) & (yi <= h - 1 - r)
    ri, yi, xi = ri[fits], yi[fits], xi[fits]
    if ri.size == 0:
        return ri, yi, xi
    padded = np.pad(acc, 1, constant_values=-np.inf)
    v = acc[ri, yi, xi]
    is_max = np.ones(ri.size, dtype=bool)
    for dr in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dr or dy or dx:
                    is_max &= v >= padded[ri + 1 + dr, yi + 1 + dy, xi + 1 + dx]
    return ri[is_max], yi[is_max], xi[is_max]


def detect_circle_candidates(em: EdgeMap, cfg: LocalizationConfig | None = None) -> list[Circle2D]:
    """Accumulator peaks above threshold, suppressed within one radius of a stronger peak.

    The search runs coarse-to-fine: a full accumulator on the edge mask
    downsampled by ``coarse_factor`` proposes peaks, and each one is
    rescored exactly at full resolution over a small (r, cy, cx)
    neighbourhood before the vote threshold and suppression are applied.
    Reported radii are corrected for the outward spread of the blurred
    edge band.
    """
    cfg = cfg or LocalizationConfig()
    hc = cfg.hough_circle
    mask = em.mask
    if not mask.any():
        return []
    h, w = mask.shape
    f = hc.coarse_factor
    if f > 1:
        hh, ww = -(-h // f), -(-w // f)
        padded = np.zeros((hh * f, ww * f), dtype=bool)
        padded[:h, :w] = mask
        coarse = padded.reshape(hh, f, ww, f).any(axis=(1, 3))
    else:
        coarse = mask
    radii_c = np.arange(math.ceil(hc.radius_min / f), math.floor(hc.radius_max / f) + 1, dtype=float)
    if radii_c.size == 0:
        return []
    _, acc = circle_accumulator(EdgeMap(coarse), cfg, radii=radii_c, ring_gap=max(hc.ring_gap / f, 1.0))
    ri, yi, xi = _peaks(acc, radii_c, hc.coarse_fraction * hc.accumulator_threshold / f)
    if ri.size == 0:
        return []

    spread = np.arange(-f, f + 1)
    found = []
    for rc, yc, xc in zip(ri, yi, xi):
        base_x, base_y = xc * f + (f - 1) / 2, yc * f + (f - 1) / 2
        gx, gy = np.meshgrid(np.rint(base_x + spread), np.rint(base_y + spread))
        gx, gy = gx.ravel().astype(np.intp), gy.ravel().astype(np.intp)
        best = None
        for r in np.arange(round(radii_c[rc] * f) - f, round(radii_c[rc] * f) + f + 1, dtype=float):
            if not hc.radius_min <= r <= hc.radius_max:
                continue
            fits = (gx >= r) & (gy >= r) & (gx <= w - 1 - r) & (gy <= h - 1 - r)
            if not fits.any():
                continue
            sc = _ring_scores(mask, gx[fits], gy[fits], r, hc.ring_gap)
            j = int(np.argmax(sc))
            cand = (float(sc[j]), -r, int(gy[fits][j]), int(gx[fits][j]))
            if best is None or cand > best:
                best = cand
        if best is not None and best[0] >= hc.accumulator_threshold:
            found.append(best)
    found.sort(key=lambda c: (-c[0], -c[1], c[2], c[3]))
    kept: list[Circle2D] = []
    for _, neg_r, y, x in found:
        c, r = (float(x), float(y)), -neg_r
        if any(math.hypot(c[0] - k.center[0], c[1] - k.center[1]) < max(k.radius, r) for k in kept):
            continue
        kept.append(Circle2D(c, r))
    # the score peaks where the blurred edge band ends, about one blur sigma
    # outside the footprint itself
    return [Circle2D(k.center, max(k.radius - cfg.gauss_sigma, 1.0)) for k in kept]


# ---------------------------------------------------------------------------
# probes


def _clip_segment(p0, p1, w: int, h: int):
    """Liang-Barsky clip of p0->p1 to [0, w-1] x [0, h-1]; None if nothing remains."""
    x0, y0 = p0
    dx, dy = p1[0] - x0, p1[1] - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0), (dx, w - 1 - x0), (-dy, y0), (dy, h - 1 - y0)):
        if abs(p) < 1e-12:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
    if t0 >= t1:
        return None
    return (x0 + t0 * dx, y0 + t0 * dy), (x0 + t1 * dx, y0 + t1 * dy)


def probe_through(hf: Heightfield, centre, direction, half_length_mm: float) -> LineSegment2D | None:
    """Probe of physical half-length centred on ``centre``, clipped to the grid.

    Returns None when the clipped probe yields fewer than the minimum number
    of profile samples.
    """
    ux, uy = direction
    n = math.hypot(ux, uy)
    ux, uy = ux / n, uy / n
    half_px = half_length_mm * 1000.0 / math.hypot(ux * hf.pitch_x, uy * hf.pitch_y)
    p0 = (centre[0] - half_px * ux, centre[1] - half_px * uy)
    p1 = (centre[0] + half_px * ux, centre[1] + half_px * uy)
    clipped = _clip_segment(p0, p1, hf.width, hf.height)
    if clipped is None:
        return None
    a, b = clipped
    if math.hypot(b[0] - a[0], b[1] - a[1]) < MIN_PROFILE_SAMPLES:
        return None
    seg = LineSegment2D(a, b)
    if profile_sample_count(hf, seg) < MIN_PROFILE_SAMPLES:
        return None
    return seg


def _profile_depth(hf: Heightfield, probe: LineSegment2D) -> float:
    return max(0.0, -float(np.min(detrend_profile(extract_profile(hf, probe)).samples)))


def candidate_profiles(hf: Heightfield, lines, circles, cfg: LocalizationConfig | None = None) -> list[Candidate]:
    """Turn detected features into probe segments.

    Lines get a probe perpendicular at their midpoint. Circles get the
    horizontal and vertical diameters; the one with the deeper detrended
    profile is kept. Candidates whose probe midpoints fall within
    ``dedup_radius`` px of an earlier candidate are dropped (circles are
    considered before lines).
    """
    cfg = cfg or LocalizationConfig()
    out: list[Candidate] = []
    for c in circles:
        chords = [probe_through(hf, c.center, d, cfg.probe_half_length) for d in ((1.0, 0.0), (0.0, 1.0))]
        chords = [p for p in chords if p is not None]
        if not chords:
            continue
        best = max(chords, key=lambda p: _profile_depth(hf, p))
        out.append(Candidate(CandidateKind.CIRCULAR, c, best))
    for seg in lines:
        ux, uy = seg.direction
        probe = probe_through(hf, seg.midpoint, (-uy, ux), cfg.probe_half_length)
        if probe is not None:
            out.append(Candidate(CandidateKind.LINEAR, seg, probe))
    kept: list[Candidate] = []
    for cand in out:
        m = cand.probe.midpoint
        if any(math.hypot(m[0] - k.probe.midpoint[0], m[1] - k.probe.midpoint[1]) < cfg.dedup_radius for k in kept):
            continue
        kept.append(cand)
    return kept


def localize(hf: Heightfield, cfg: LocalizationConfig | None = None) -> list[Candidate]:
    """Edges, lines, circles and probes in one call."""
    cfg = cfg or LocalizationConfig()
    em = canny_no_nms(hf, cfg)
    if not em.mask.any():
        return []
    return candidate_profiles(hf, detect_line_candidates(em, cfg), detect_circle_candidates(em, cfg), cfg)
