"""Heightfield storage, HFLD/CSV I/O, bilinear sampling and depth profiles.

Heights are kept in millimetres, pixel pitch in micrometres. A heightfield
is stored as a ``(height, width)`` float32 array, row-major, so ``data[y, x]``
is the sample at column ``x`` and row ``y``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

DEFAULT_PITCH_UM = 6.9

HFLD_MAGIC = b"HFLD"
HFLD_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")
HEADER_SIZE = _HEADER.size  # 32

MIN_PROFILE_SAMPLES = 8
DEPTH_DECIMALS = 6  # mm
_EPS = 1e-9


class HeightfieldFormatError(ValueError):
    """Raised when a heightfield file cannot be decoded."""


@dataclass(frozen=True, eq=False)
class Heightfield:
    data: np.ndarray
    pitch_x: float = DEFAULT_PITCH_UM
    pitch_y: float = DEFAULT_PITCH_UM

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError(f"heightfield must be a non-empty 2-D grid, got shape {arr.shape}")
        if not (self.pitch_x > 0 and self.pitch_y > 0):
            raise ValueError("pixel pitch must be positive")
        bad = np.argwhere(~np.isfinite(arr))
        if len(bad):
            y, x = bad[0]
            raise ValueError(f"non-finite height at cell (x={x}, y={y})")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "pitch_x", float(self.pitch_x))
        object.__setattr__(self, "pitch_y", float(self.pitch_y))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Heightfield):
            return NotImplemented
        return (
            self.pitch_x == other.pitch_x
            and self.pitch_y == other.pitch_y
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None

    def with_data(self, data: np.ndarray) -> "Heightfield":
        return Heightfield(data, self.pitch_x, self.pitch_y)

    @classmethod
    def zeros(cls, width: int, height: int, pitch: float = DEFAULT_PITCH_UM) -> "Heightfield":
        return cls(np.zeros((height, width), dtype=np.float32), pitch, pitch)


@dataclass(frozen=True)
class LineSegment2D:
    p0: tuple[float, float]
    p1: tuple[float, float]

    def __post_init__(self):
        p0 = (float(self.p0[0]), float(self.p0[1]))
        p1 = (float(self.p1[0]), float(self.p1[1]))
        if p0 == p1:
            raise ValueError("degenerate segment: p0 == p1")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    @property
    def midpoint(self) -> tuple[float, float]:
        return ((self.p0[0] + self.p1[0]) / 2, (self.p0[1] + self.p1[1]) / 2)

    @property
    def direction(self) -> tuple[float, float]:
        L = self.length
        return ((self.p1[0] - self.p0[0]) / L, (self.p1[1] - self.p0[1]) / L)

    @property
    def angle_deg(self) -> float:
        """Undirected orientation in [0, 180)."""
        dx, dy = self.direction
        return math.degrees(math.atan2(dy, dx)) % 180.0

    def inside(self, width: int, height: int) -> bool:
        return all(
            -_EPS <= x <= width - 1 + _EPS and -_EPS <= y <= height - 1 + _EPS
            for x, y in (self.p0, self.p1)
        )


@dataclass(frozen=True)
class Circle2D:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("circle radius must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))

    def inside(self, width: int, height: int) -> bool:
        cx, cy = self.center
        r = self.radius
        return cx - r >= -_EPS and cy - r >= -_EPS and cx + r <= width - 1 + _EPS and cy + r <= height - 1 + _EPS


@dataclass(frozen=True, eq=False)
class DepthProfile:
    samples: np.ndarray  # mm
    spacing: float  # mm
    source: LineSegment2D | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or len(s) < MIN_PROFILE_SAMPLES:
            raise ValueError(f"profile needs at least {MIN_PROFILE_SAMPLES} samples, got {s.size}")
        if not self.spacing > 0:
            raise ValueError("profile spacing must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def positions(self) -> np.ndarray:
        return np.arange(len(self.samples)) * self.spacing


@dataclass(frozen=True, eq=False)
class DetrendedProfile:
    samples: np.ndarray  # mm, relative to the fitted zero level
    spacing: float
    trend_coeffs: tuple[float, float]  # (intercept mm, slope mm/mm)
    edge_count: int = 0  # samples used at each end for the fit
    edge_rms: float = 0.0  # residual RMS over the fit region, mm
    source: LineSegment2D | None = None

    @property
    def positions(self) -> np.ndarray:
        return np.arange(len(self.samples)) * self.spacing


@dataclass(frozen=True)
class ProfileMetrics:
    depth: float  # mm
    width: float  # mm
    minima_count: int


# ---------------------------------------------------------------------------
# file I/O


def save_heightfield(hf: Heightfield, path) -> None:
    """Write ``hf`` as an HFLD file (32-byte header + float32 payload)."""
    if not np.all(np.isfinite(hf.data)):
        raise ValueError("refusing to save a heightfield with non-finite values")
    header = _HEADER.pack(HFLD_MAGIC, HFLD_VERSION, hf.width, hf.height, hf.pitch_x, hf.pitch_y)
    payload = np.ascontiguousarray(hf.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def decode_hfld(buf: bytes) -> Heightfield:
    if len(buf) < HEADER_SIZE:
        raise HeightfieldFormatError(f"truncated header: {len(buf)} of {HEADER_SIZE} bytes (offset {len(buf)})")
    magic, version, width, height, pitch_x, pitch_y = _HEADER.unpack_from(buf, 0)
    if magic != HFLD_MAGIC:
        raise HeightfieldFormatError(f"bad magic {magic!r} at byte offset 0")
    if version != HFLD_VERSION:
        raise HeightfieldFormatError(f"unsupported version {version} at byte offset 4")
    if width == 0:
        raise HeightfieldFormatError("width is 0 at byte offset 8")
    if height == 0:
        raise HeightfieldFormatError("height is 0 at byte offset 12")
    if not (math.isfinite(pitch_x) and pitch_x > 0):
        raise HeightfieldFormatError(f"invalid pitch_x {pitch_x} at byte offset 16")
    if not (math.isfinite(pitch_y) and pitch_y > 0):
        raise HeightfieldFormatError(f"invalid pitch_y {pitch_y} at byte offset 24")
    expected = HEADER_SIZE + 4 * width * height
    if len(buf) < expected:
        raise HeightfieldFormatError(
            f"truncated payload: expected {expected} bytes, file ends at byte offset {len(buf)}"
        )
    if len(buf) > expected:
        raise HeightfieldFormatError(f"trailing data after byte offset {expected}")
    data = np.frombuffer(buf, dtype="<f4", count=width * height, offset=HEADER_SIZE).reshape(height, width)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        i = int(bad[0])
        raise HeightfieldFormatError(
            f"non-finite value at cell (x={i % width}, y={i // width}), byte offset {HEADER_SIZE + 4 * i}"
        )
    return Heightfield(data, pitch_x, pitch_y)


def load_csv(path) -> Heightfield:
    """Read the CSV form: a pitch line (µm) then one row of mm values per grid row.

    The pitch line may carry the values directly (``6.9,6.9``) or be the
    column-name header ``pitch_x_um,pitch_y_um`` followed by the values.
    """
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise HeightfieldFormatError("empty CSV file")
    row = 0
    if lines[0].replace(" ", "").lower() == "pitch_x_um,pitch_y_um":
        row = 1
    try:
        px, py = (float(v) for v in lines[row].split(","))
    except ValueError:
        raise HeightfieldFormatError(f"line {row + 1}: expected 'pitch_x_um,pitch_y_um' values") from None
    rows = []
    for j, ln in enumerate(lines[row + 1 :]):
        try:
            vals = [float(v) for v in ln.split(",")]
        except ValueError:
            raise HeightfieldFormatError(f"row {j}: unparseable value") from None
        if rows and len(vals) != len(rows[0]):
            raise HeightfieldFormatError(f"row {j}: expected {len(rows[0])} values, got {len(vals)}")
        for i, v in enumerate(vals):
            if not math.isfinite(v):
                raise HeightfieldFormatError(f"non-finite value at cell (x={i}, y={j})")
        rows.append(vals)
    if not rows:
        raise HeightfieldFormatError("CSV has no data rows")
    if not (px > 0 and py > 0):
        raise HeightfieldFormatError("pitch values must be positive")
    return Heightfield(np.array(rows, dtype=np.float32), px, py)


def save_csv(hf: Heightfield, path) -> None:
    out = ["pitch_x_um,pitch_y_um", f"{hf.pitch_x!r},{hf.pitch_y!r}"]
    out += [",".join(repr(float(v)) for v in row) for row in hf.data]
    Path(path).write_text("\n".join(out) + "\n")


def load_heightfield(path) -> Heightfield:
    """Load an HFLD binary file, or a CSV file when the suffix is ``.csv``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    return decode_hfld(path.read_bytes())


# ---------------------------------------------------------------------------
# sampling and profiles


def _check_coords(hf: Heightfield, xs: np.ndarray, ys: np.ndarray) -> None:
    if (
        np.any(xs < -_EPS)
        or np.any(xs > hf.width - 1 + _EPS)
        or np.any(ys < -_EPS)
        or np.any(ys > hf.height - 1 + _EPS)
        or not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys)))
    ):
        raise ValueError(f"coordinate outside grid [0,{hf.width - 1}]x[0,{hf.height - 1}]")


def sample_bilinear_many(hf: Heightfield, xs, ys) -> np.ndarray:
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0, None)
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0, None)
    _check_coords(hf, xs, ys)
    xs = np.minimum(xs, hf.width - 1)
    ys = np.minimum(ys, hf.height - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(hf.width - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(hf.height - 2, 0))
    x1 = np.minimum(x0 + 1, hf.width - 1)
    y1 = np.minimum(y0 + 1, hf.height - 1)
    tx = xs - x0
    ty = ys - y0
    d = hf.data.astype(np.float64)
    top = d[y0, x0] * (1 - tx) + d[y0, x1] * tx
    bot = d[y1, x0] * (1 - tx) + d[y1, x1] * tx
    return top * (1 - ty) + bot * ty


def sample_bilinear(hf: Heightfield, x: float, y: float) -> float:
    """Bilinear interpolation at pixel coordinate (x, y); exact on integer coords."""
    return float(sample_bilinear_many(hf, [x], [y])[0])


def segment_length_mm(hf: Heightfield, seg: LineSegment2D) -> float:
    dx = (seg.p1[0] - seg.p0[0]) * hf.pitch_x
    dy = (seg.p1[1] - seg.p0[1]) * hf.pitch_y
    return math.hypot(dx, dy) / 1000.0


def profile_sample_count(hf: Heightfield, seg: LineSegment2D) -> int:
    step = min(hf.pitch_x, hf.pitch_y) / 1000.0
    return int(round(segment_length_mm(hf, seg) / step)) + 1


def extract_profile(hf: Heightfield, seg: LineSegment2D) -> DepthProfile:
    """Sample heights along ``seg`` at (about) one pixel pitch, endpoints included.

    The sample count is ``round(length / min_pitch) + 1``; the stored spacing
    is the exact distance between consecutive samples.
    """
    if not seg.inside(hf.width, hf.height):
        raise ValueError(f"segment {seg.p0}->{seg.p1} leaves the {hf.width}x{hf.height} grid")
    if seg.length < MIN_PROFILE_SAMPLES:
        raise ValueError(f"segment shorter than {MIN_PROFILE_SAMPLES} px")
    n = profile_sample_count(hf, seg)
    t = np.linspace(0.0, 1.0, n)
    xs = seg.p0[0] + t * (seg.p1[0] - seg.p0[0])
    ys = seg.p0[1] + t * (seg.p1[1] - seg.p0[1])
    samples = sample_bilinear_many(hf, xs, ys)
    return DepthProfile(samples, segment_length_mm(hf, seg) / (n - 1), seg)


def _edge_indices(n: int, edge_fraction: float) -> tuple[np.ndarray, int]:
    k = math.ceil(edge_fraction * n)
    idx = np.union1d(np.arange(k), np.arange(n - k, n))
    return idx, k


def detrend_profile(p: DepthProfile, edge_fraction: float = 0.25) -> DetrendedProfile:
    """Remove the line fitted to the outer ``edge_fraction`` of samples at each end.

    The neighbourhood on both sides of a defect is taken as the zero level,
    so a tilted panel reads flat and the defect reads as a negative excursion.
    """
    if not 0 < edge_fraction < 0.5:
        raise ValueError("edge_fraction must lie in (0, 0.5)")
    n = len(p.samples)
    idx, k = _edge_indices(n, edge_fraction)
    if len(idx) < 4:
        raise ValueError("profile has fewer than 4 edge samples")
    t = p.positions
    A = np.column_stack([np.ones(len(idx)), t[idx]])
    (intercept, slope), *_ = np.linalg.lstsq(A, p.samples[idx], rcond=None)
    resid = p.samples - (intercept + slope * t)
    edge_rms = float(np.sqrt(np.mean(resid[idx] ** 2)))
    resid.setflags(write=False)
    return DetrendedProfile(resid, p.spacing, (float(intercept), float(slope)), k, edge_rms, p.source)


def local_minima(samples: np.ndarray, prominence: float = 0.0) -> list[int]:
    """Indices of strict local minima; a flat-bottomed minimum reports its centre once.

    With ``prominence`` > 0 a minimum only counts if the profile rises by at
    least that much on both sides before reaching a deeper point.
    """
    s = np.asarray(samples, dtype=np.float64)
    if len(s) < 3:
        return []
    idx, _ = find_peaks(-s, prominence=prominence if prominence > 0 else None)
    return [int(i) for i in idx]


def profile_metrics(dp: DetrendedProfile, noise_floor: float = 0.005, minima_floor: float = 0.010,
                    minima_prominence: float | None = None) -> ProfileMetrics:
    """Depth, width and count of deep local minima of a detrended profile.

    Depth counts negative excursions only. Width is the length of the
    contiguous run of samples below ``-noise_floor`` that contains the
    global minimum (samples x spacing). A minimum counts when it lies below
    ``-minima_floor`` and stands out by ``minima_prominence`` (default: the
    noise floor), so sensor noise on a wide floor is not read as repetition.
    """
    s = np.asarray(dp.samples)
    imin = int(np.argmin(s))
    # reported at 1 nm resolution so float32 storage does not shave thresholds
    depth = round(max(0.0, -float(s[imin])), DEPTH_DECIMALS)
    width = 0.0
    if depth > noise_floor:
        below = s < -noise_floor
        lo = imin
        while lo > 0 and below[lo - 1]:
            lo -= 1
        hi = imin
        while hi < len(s) - 1 and below[hi + 1]:
            hi += 1
        width = (hi - lo + 1) * dp.spacing
    prom = noise_floor if minima_prominence is None else minima_prominence
    minima = [i for i in local_minima(s, prom) if s[i] < -minima_floor]
    return ProfileMetrics(depth, width, len(minima))
