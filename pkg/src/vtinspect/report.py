"""Rendering of reports as JSON documents or plain-text tables.

JSON keeps each report's own field order (no key sorting) so documents are
schema-stable, and floats are written with ``repr`` precision; the same
report therefore always renders to the same bytes.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from .classify import ScanResult
from .evaluation import ConfusionMatrix, EvalReport
from .sim import InspectionReport, Mode
from .vision import RoutingResult

METHOD_NAMES = {
    Mode.VISION_ONLY: "Vision only",
    Mode.TOUCH_ONLY: "Touch only",
    Mode.TWO_STAGE: "Two stage",
}


def as_document(report):
    """Plain JSON-ready data for any report type (or list of reports)."""
    if isinstance(report, (list, tuple)):
        return [as_document(r) for r in report]
    if hasattr(report, "to_dict"):
        return report.to_dict()
    return report


def render_json(report) -> str:
    return json.dumps(as_document(report), indent=2, allow_nan=False) + "\n"


def _fmt(v, digits: int = 3) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    line = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))  # noqa: E731
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), rule, *(line(r) for r in rows)]) + "\n"


def _eval_table(r: EvalReport) -> str:
    rows = [[name, _fmt(cm.precision), _fmt(cm.recall), _fmt(cm.average_precision), str(cm.n_gt)]
            for name, cm in r.per_class.items()]
    rows.append(["mean", _fmt(r.mean["precision"]), _fmt(r.mean["recall"]), _fmt(r.mean["average_precision"]),
                 str(sum(cm.n_gt for cm in r.per_class.values()))])
    out = _table(["Class", "Precision", "Recall", "AP", "GT"], rows)
    summary = _table(
        ["", "Detection (classless)", "Avg recall (with class)", "Avg precision (with class)"],
        [["result", _fmt(r.classless_recall), _fmt(r.mean["recall"]), _fmt(r.mean["precision"])]],
    )
    return out + "\n" + summary


def _inspection_table(reports: list[InspectionReport]) -> str:
    rows = [[METHOD_NAMES[r.mode], _fmt(r.metrics.get("average_precision"), 2), _fmt(r.metrics.get("recall"), 2),
             f"{r.runtime_s:.2f}"] for r in reports]
    return _table(["Method", "AP", "AR", "Runtime (s)"], rows)


def _routing_table(r: RoutingResult) -> str:
    rows = [[name, d.image_id, d.cls.value, _fmt(d.score), " ".join(_fmt(v, 1) for v in d.bbox.as_list())]
            for name in ("confirmed", "delegated", "discarded") for d in getattr(r, name)]
    return _table(["Route", "Image", "Class", "Score", "Box"], rows)


def _scan_table(results: list[ScanResult]) -> str:
    rows = []
    for s in results:
        d = s.to_dict()
        rows.append([d["label"], d["kind"] or "-", _fmt(d["depth_mm"], 4), _fmt(d["width_mm"], 4),
                     str(d["minima_count"])])
    return _table(["Label", "Candidate", "Depth (mm)", "Width (mm)", "Minima"], rows)


def _confusion_table(c: ConfusionMatrix) -> str:
    d = c.to_dict()
    rows = [[t, *map(str, row)] for t, row in zip(d["order"], d["counts"])]
    return _table(["truth \\ predicted", *d["order"]], rows) + f"accuracy {_fmt(d['accuracy'], 4)}\n"


def _dict_table(d: dict) -> str:
    rows = []
    for k, v in d.items():
        if isinstance(v, dict):
            rows.extend([f"{k}.{kk}", _fmt(vv)] for kk, vv in v.items())
        elif isinstance(v, list):
            rows.append([k, str(len(v))])
        else:
            rows.append([k, _fmt(v)])
    return _table(["Field", "Value"], rows)


def render_table(report) -> str:
    if isinstance(report, EvalReport):
        return _eval_table(report)
    if isinstance(report, InspectionReport):
        return _inspection_table([report])
    if isinstance(report, (list, tuple)) and report and all(isinstance(r, InspectionReport) for r in report):
        return _inspection_table(list(report))
    if isinstance(report, (list, tuple)) and all(isinstance(r, ScanResult) for r in report):
        return _scan_table(list(report))
    if isinstance(report, RoutingResult):
        return _routing_table(report)
    if isinstance(report, ConfusionMatrix):
        return _confusion_table(report)
    if isinstance(report, dict):
        return _dict_table(report)
    raise TypeError(f"no table layout for {type(report).__name__}")


def emit_report(report, fmt: str = "json", path=None) -> str:
    """Render ``report`` and write it to ``path`` (stdout when None). Returns the text."""
    if fmt == "json":
        text = render_json(report)
    elif fmt == "table":
        text = render_table(report)
    else:
        raise ValueError(f"unknown format {fmt!r}; use json or table")
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text)
    return text
