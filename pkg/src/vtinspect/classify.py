"""Defect labels from depth profiles, and whole-scan classification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .defects import LABEL_PRECEDENCE, DefectClass, DefectSpec
from .heightfield import (
    DetrendedProfile,
    Heightfield,
    LineSegment2D,
    ProfileMetrics,
    detrend_profile,
    extract_profile,
    profile_metrics,
)
from .localization import Candidate, CandidateKind, LocalizationConfig, localize


@dataclass(frozen=True)
class ScanResult:
    label: DefectClass
    candidate: Candidate | None = None
    metrics: ProfileMetrics | None = None
    detrended: DetrendedProfile | None = None

    def __post_init__(self):
        if self.label is not DefectClass.NO_DEFECT and (
            self.candidate is None or self.metrics is None or self.detrended is None
        ):
            raise ValueError("a defect result needs its candidate, metrics and profile")

    @property
    def depth(self) -> float:
        return self.metrics.depth if self.metrics else 0.0

    def to_dict(self) -> dict:
        c, m = self.candidate, self.metrics
        return {
            "label": self.label.value,
            "depth_mm": m.depth if m else 0.0,
            "width_mm": m.width if m else 0.0,
            "minima_count": m.minima_count if m else 0,
            "probe": {"p0": list(c.probe.p0), "p1": list(c.probe.p1)} if c else None,
            "kind": c.kind.value if c else None,
        }


def classify_profile(kind: CandidateKind, m: ProfileMetrics, spec: DefectSpec | None = None) -> DefectClass:
    """Threshold-table decision for one profile.

    Circular candidates can only be gouges. Linear candidates are tested for
    a drill run (more than ``drill_minima_count_exclusive`` deep minima plus
    the drill-run depth/width minima) before the scratch row.
    """
    spec = spec or DefectSpec()
    kind = CandidateKind(kind)

    def meets(cls):
        t = spec.threshold(cls)
        return m.depth >= t.min_depth and m.width >= t.min_width

    if kind is CandidateKind.CIRCULAR:
        return DefectClass.GOUGE if meets(DefectClass.GOUGE) else DefectClass.NO_DEFECT
    if m.minima_count > spec.drill_minima_count_exclusive and meets(DefectClass.DRILL_RUN):
        return DefectClass.DRILL_RUN
    if meets(DefectClass.SCRATCH):
        return DefectClass.SCRATCH
    return DefectClass.NO_DEFECT


def classify_candidate(hf: Heightfield, cand: Candidate, spec: DefectSpec | None = None) -> ScanResult:
    spec = spec or DefectSpec()
    dp = detrend_profile(extract_profile(hf, cand.probe))
    m = profile_metrics(dp, spec.noise_floor, spec.drill_minima_floor)
    label = classify_profile(cand.kind, m, spec)
    # a neighbourhood that is not flat after detrending is no zero reference
    if dp.edge_rms > spec.zero_level_rms:
        label = DefectClass.NO_DEFECT
    # a depression does not climb well above its own reference level
    rise = float(np.max(dp.samples))
    if rise > spec.noise_floor and rise > spec.max_rise_fraction * m.depth:
        label = DefectClass.NO_DEFECT
    return ScanResult(label, cand, m, dp)


def _segments_intersect(a: LineSegment2D, b: LineSegment2D) -> bool:
    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(p, q, r):
        return min(p[0], q[0]) - 1e-9 <= r[0] <= max(p[0], q[0]) + 1e-9 and \
            min(p[1], q[1]) - 1e-9 <= r[1] <= max(p[1], q[1]) + 1e-9

    p1, q1, p2, q2 = a.p0, a.p1, b.p0, b.p1
    o1, o2, o3, o4 = orient(p1, q1, p2), orient(p1, q1, q2), orient(p2, q2, p1), orient(p2, q2, q1)
    if o1 != o2 and o3 != o4:
        return True
    return (o1 == 0 and on_seg(p1, q1, p2)) or (o2 == 0 and on_seg(p1, q1, q2)) or \
        (o3 == 0 and on_seg(p2, q2, p1)) or (o4 == 0 and on_seg(p2, q2, q1))


def _same_site(a: Candidate, b: Candidate) -> bool:
    if _segments_intersect(a.probe, b.probe):
        return True
    return (isinstance(b.geometry, LineSegment2D) and _segments_intersect(a.probe, b.geometry)) or \
        (isinstance(a.geometry, LineSegment2D) and _segments_intersect(b.probe, a.geometry))


def merge_sites(results: list[ScanResult]) -> list[list[ScanResult]]:
    """Group results into physical defect sites.

    Two results share a site when their probes cross, or when one probe
    crosses the other's detected line (pieces of one long groove). Defects
    closer together than a probe length can therefore merge into one site.
    """
    n = len(results)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if _same_site(results[i].candidate, results[j].candidate):
                parent[find(i)] = find(j)
    groups: dict[int, list[ScanResult]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(results[i])
    return list(groups.values())


def _site_representative(site: list[ScanResult]) -> ScanResult:
    return min(site, key=lambda r: (LABEL_PRECEDENCE[r.label], -r.depth))


def classify_scan(hf: Heightfield, loc_cfg: LocalizationConfig | None = None,
                  spec: DefectSpec | None = None) -> list[ScanResult]:
    """Localise candidates on a tactile scan and label each defect site.

    Every candidate's probe is profiled, detrended, measured and classified.
    Candidates whose probes cross belong to the same site; a site reports
    its strongest label (drill run, gouge, scratch, in that order) through
    its deepest candidate carrying that label. Defect sites come first,
    deepest first, followed by no-defect sites. A scan without candidates
    yields a single empty NoDefect result.
    """
    loc_cfg = loc_cfg or LocalizationConfig()
    spec = spec or DefectSpec()
    cands = localize(hf, loc_cfg)
    if not cands:
        return [ScanResult(DefectClass.NO_DEFECT)]
    results = [classify_candidate(hf, c, spec) for c in cands]
    reps = [_site_representative(site) for site in merge_sites(results)]
    reps.sort(key=lambda r: (r.label is DefectClass.NO_DEFECT, -r.depth))
    return reps


def scan_label(results: list[ScanResult]) -> DefectClass:
    return results[0].label if results else DefectClass.NO_DEFECT
