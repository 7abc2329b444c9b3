"""Detection metrics and the tactile confusion matrix.

Matching is greedy in descending score order: each prediction takes the
unmatched ground-truth box of highest IoU (lowest index on ties) that meets
the IoU threshold and, unless the evaluation is classless, has the same
class. Average precision is the area under the all-point interpolated
precision/recall staircase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .defects import DEFECT_CLASSES, DefectClass
from .vision import BoundingBox, Detection


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.4
    max_detections: int = 100
    score_cut: float | None = 0.5  # None keeps every score
    classless: bool = False

    def __post_init__(self):
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError("iou_threshold must be in (0, 1]")
        if self.max_detections < 1:
            raise ValueError("max_detections must be at least 1")
        if self.score_cut is not None and not (0.0 <= self.score_cut <= 1.0):
            raise ValueError("score_cut must be in [0, 1]")


@dataclass
class MatchResult:
    preds: list[Detection]  # after score cut, sort and truncation
    matches: list[tuple[int, int, float]]  # (pred index, gt index, iou)
    unmatched_preds: list[int]
    unmatched_gt: list[int]

    @property
    def tp_flags(self) -> list[bool]:
        hit = {p for p, _, _ in self.matches}
        return [i in hit for i in range(len(self.preds))]


def select_predictions(preds, cfg: EvalConfig) -> list[Detection]:
    """Score cut, then descending score (stable), then the max-detections cap."""
    kept = [p for p in preds if cfg.score_cut is None or p.score >= cfg.score_cut]
    kept = sorted(kept, key=lambda p: -p.score)
    return kept[: cfg.max_detections]


def _gt_pairs(gt) -> list[tuple[DefectClass, BoundingBox]]:
    out = []
    for g in gt:
        if hasattr(g, "kind"):
            out.append((g.kind, g.bbox))
        else:
            out.append((g[0], g[1]))
    return out


def match_detections(gt, preds, cfg: EvalConfig | None = None) -> MatchResult:
    """One-to-one greedy matching of one image's predictions to its ground truth.

    ``gt`` holds objects with ``kind`` and ``bbox`` (or ``(class, box)``
    pairs).
    """
    cfg = cfg or EvalConfig()
    gts = _gt_pairs(gt)
    sel = select_predictions(preds, cfg)
    taken = [False] * len(gts)
    matches = []
    unmatched = []
    for pi, p in enumerate(sel):
        best, best_iou = -1, -1.0
        for gi, (kind, box) in enumerate(gts):
            if taken[gi] or (not cfg.classless and kind is not p.cls):
                continue
            v = iou(p.bbox, box)
            if v >= cfg.iou_threshold and v > best_iou:
                best, best_iou = gi, v
        if best < 0:
            unmatched.append(pi)
        else:
            taken[best] = True
            matches.append((pi, best, best_iou))
    return MatchResult(sel, matches, unmatched, [i for i, t in enumerate(taken) if not t])


def average_precision(scores, tp_flags, n_gt: int) -> float | None:
    """All-point interpolated AP for a ranked list; None when there is no ground truth."""
    if n_gt <= 0:
        return None
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    tp = np.asarray(tp_flags, dtype=float)[order]
    ctp = np.cumsum(tp)
    prec = ctp / np.arange(1, len(tp) + 1)
    rec = ctp / n_gt
    # precision envelope: best precision at this recall or any higher one
    env = np.maximum.accumulate(prec[::-1])[::-1]
    prev = np.concatenate([[0.0], rec[:-1]])
    return float(np.sum((rec - prev) * env))


@dataclass
class ClassMetrics:
    n_gt: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float | None = None
    recall: float | None = None
    average_precision: float | None = None

    def to_dict(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "average_precision": self.average_precision,
            "n_gt": self.n_gt, "tp": self.tp, "fp": self.fp, "fn": self.fn,
        }


@dataclass
class EvalReport:
    counts: dict = field(default_factory=lambda: {"tp": 0, "fp": 0, "fn": 0})
    per_class: dict = field(default_factory=dict)  # class name -> ClassMetrics
    mean: dict = field(default_factory=lambda: {"precision": None, "recall": None, "average_precision": None})
    classless_recall: float | None = None
    config: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "mean": dict(self.mean),
            "classless_recall": self.classless_recall,
            "per_class": {k: v.to_dict() for k, v in self.per_class.items()},
            "config": {
                "iou_threshold": self.config.iou_threshold,
                "max_detections": self.config.max_detections,
                "score_cut": self.config.score_cut,
                "classless": self.config.classless,
            },
        }


def _ratio(a: int, b: int) -> float | None:
    return a / b if b else None


def evaluate_detections(gt_set: dict, pred_set: dict, cfg: EvalConfig | None = None) -> EvalReport:
    """Precision, recall and AP per class and averaged, plus classless recall.

    ``gt_set`` maps image id to a GroundTruth (or a list of objects);
    ``pred_set`` maps image id to detections. Predictions for images absent
    from ``gt_set`` are an error. Means run over the classes present in the
    ground truth, with an undefined precision counting as 0. Without any
    ground truth the report holds zero counts and None metrics.
    """
    cfg = cfg or EvalConfig()
    unknown = sorted(set(pred_set) - set(gt_set))
    if unknown:
        raise ValueError(f"predictions for images without ground truth: {unknown[:5]}")
    gts = {k: _gt_pairs(getattr(v, "objects", v)) for k, v in gt_set.items()}
    n_total = sum(len(v) for v in gts.values())
    report = EvalReport(config=cfg)
    if n_total == 0:
        return report

    classless_cfg = EvalConfig(cfg.iou_threshold, cfg.max_detections, cfg.score_cut, True)
    keys = ["defect"] if cfg.classless else [c.value for c in DEFECT_CLASSES]
    ranked = {k: ([], []) for k in keys}
    per = {k: ClassMetrics() for k in keys}
    cl_tp = 0
    for img in gts:
        g = gts[img]
        preds = pred_set.get(img, [])
        m = match_detections(g, preds, cfg)
        flags = m.tp_flags
        for p, hit in zip(m.preds, flags):
            k = "defect" if cfg.classless else p.cls.value
            ranked[k][0].append(p.score)
            ranked[k][1].append(hit)
            per[k].tp += hit
            per[k].fp += not hit
        for kind, _ in g:
            per["defect" if cfg.classless else kind.value].n_gt += 1
        cl_tp += len(match_detections(g, preds, classless_cfg).matches)

    for k, cm in per.items():
        cm.fn = cm.n_gt - cm.tp
        cm.precision = _ratio(cm.tp, cm.tp + cm.fp)
        cm.recall = _ratio(cm.tp, cm.n_gt)
        cm.average_precision = average_precision(*ranked[k], cm.n_gt)
    present = [cm for cm in per.values() if cm.n_gt > 0]
    report.per_class = per
    report.mean = {
        "precision": float(np.mean([cm.precision or 0.0 for cm in present])),
        "recall": float(np.mean([cm.recall for cm in present])),
        "average_precision": float(np.mean([cm.average_precision for cm in present])),
    }
    tp = sum(cm.tp for cm in per.values())
    report.counts = {"tp": tp, "fp": sum(cm.fp for cm in per.values()), "fn": n_total - tp}
    report.classless_recall = cl_tp / n_total
    return report


# ---------------------------------------------------------------------------
# tactile confusion matrix

CONFUSION_ORDER = (DefectClass.SCRATCH, DefectClass.DRILL_RUN, DefectClass.GOUGE, DefectClass.NO_DEFECT)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # (4, 4) int, rows = truth, columns = prediction, CONFUSION_ORDER

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float | None:
        return float(np.trace(self.counts)) / self.total if self.total else None

    def per_class_accuracy(self) -> dict[str, float | None]:
        rows = self.counts.sum(axis=1)
        return {c.value: (float(self.counts[i, i]) / rows[i] if rows[i] else None)
                for i, c in enumerate(CONFUSION_ORDER)}

    def to_dict(self) -> dict:
        return {
            "order": [c.value for c in CONFUSION_ORDER],
            "counts": self.counts.tolist(),
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class_accuracy(),
        }


def confusion_matrix(truth, predicted) -> ConfusionMatrix:
    truth, predicted = list(truth), list(predicted)
    if len(truth) != len(predicted):
        raise ValueError(f"length mismatch: {len(truth)} truths vs {len(predicted)} predictions")
    idx = {c: i for i, c in enumerate(CONFUSION_ORDER)}
    m = np.zeros((4, 4), dtype=np.int64)
    for t, p in zip(truth, predicted):
        m[idx[DefectClass(t)], idx[DefectClass(p)]] += 1
    return ConfusionMatrix(m)
