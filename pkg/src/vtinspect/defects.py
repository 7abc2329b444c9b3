"""Defect classes and the depth/width threshold table."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


class DefectClass(str, enum.Enum):
    SCRATCH = "scratch"
    DRILL_RUN = "drill_run"
    GOUGE = "gouge"
    NO_DEFECT = "no_defect"

    @classmethod
    def parse(cls, name: str) -> "DefectClass":
        """Map a free-form class string to a DefectClass.

        Matching is case-insensitive and tolerates the spellings seen in
        annotation files ("Drill Run", "drill_run", "drillrun").
        Raises ValueError for anything else.
        """
        key = " ".join(name.strip().lower().replace("_", " ").replace("-", " ").split())
        try:
            return _ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown defect class {name!r}") from None


_ALIASES = {
    "scratch": DefectClass.SCRATCH,
    "gouge": DefectClass.GOUGE,
    "drill run": DefectClass.DRILL_RUN,
    "drillrun": DefectClass.DRILL_RUN,
    "no defect": DefectClass.NO_DEFECT,
    "nodefect": DefectClass.NO_DEFECT,
}

DEFECT_CLASSES = (DefectClass.SCRATCH, DefectClass.DRILL_RUN, DefectClass.GOUGE)

# order used when several labels compete for the same physical site
LABEL_PRECEDENCE = {
    DefectClass.DRILL_RUN: 0,
    DefectClass.GOUGE: 1,
    DefectClass.SCRATCH: 2,
    DefectClass.NO_DEFECT: 3,
}


@dataclass(frozen=True)
class Threshold:
    min_depth: float  # mm
    min_width: float  # mm


@dataclass(frozen=True)
class DefectSpec:
    """Minimum depth/width per defect class plus the drill-run repetition rule.

    ``zero_level_rms`` bounds the residual RMS allowed in the outer regions
    of a detrended profile; beyond it the neighbourhood is not a flat
    reference and the profile cannot be classified. ``max_rise_fraction``
    rejects profiles that climb above the reference by more than that
    share of their depth (steps and ridges rather than depressions).
    """

    drill_run: Threshold = field(default_factory=lambda: Threshold(0.02, 0.012))
    scratch: Threshold = field(default_factory=lambda: Threshold(0.01, 0.051))
    gouge: Threshold = field(default_factory=lambda: Threshold(0.02, 0.012))
    drill_minima_floor: float = 0.010
    drill_minima_count_exclusive: int = 3
    noise_floor: float = 0.005
    zero_level_rms: float = 0.004
    max_rise_fraction: float = 0.5

    def __post_init__(self):
        for t in (self.drill_run, self.scratch, self.gouge):
            if not (t.min_depth > 0 and t.min_width > 0):
                raise ValueError("defect thresholds must be positive")
        if not (self.drill_minima_floor > 0 and self.drill_minima_count_exclusive > 0):
            raise ValueError("drill-run thresholds must be positive")
        if not (self.noise_floor > 0 and self.zero_level_rms > 0 and self.max_rise_fraction > 0):
            raise ValueError("noise floor and zero-level tolerance must be positive")

    def threshold(self, cls: DefectClass) -> Threshold:
        return {
            DefectClass.DRILL_RUN: self.drill_run,
            DefectClass.SCRATCH: self.scratch,
            DefectClass.GOUGE: self.gouge,
        }[cls]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DefectSpec":
        d = dict(d)
        for key in ("drill_run", "scratch", "gouge"):
            if key in d:
                v = d[key]
                d[key] = Threshold(**v) if isinstance(v, dict) else Threshold(*v)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown DefectSpec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "DefectSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))
