"""Confusion matrices, macro-averaged metrics and four-scenario reports.

Display values are rounded half-to-even at two decimals, applied to the
shortest decimal representation of the float (so 0.125 shows as 0.12 and
0.6666... as 0.67). Machine formats (CSV, JSON) keep full precision.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .reference import SCENARIO_REFERENCE

COLUMNS = ("Train/Test Data", "Accuracy", "Precision", "Recall", "F1 Score")
METRICS = ("accuracy", "precision", "recall", "f1")
FORMATS = ("csv", "json", "markdown")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary confusion counts with label 1 as the positive class."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionMatrix":
        """The same matrix seen with label 0 as the positive class."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)

    @classmethod
    def from_predictions(cls, labels, predictions) -> "ConfusionMatrix":
        y = np.asarray(labels, dtype=np.int64)
        p = np.asarray(predictions, dtype=np.int64)
        if y.shape != p.shape:
            raise ValueError("labels and predictions differ in length")
        return cls(tp=int(((y == 1) & (p == 1)).sum()), fp=int(((y == 0) & (p == 1)).sum()),
                   fn=int(((y == 1) & (p == 0)).sum()), tn=int(((y == 0) & (p == 0)).sum()))


@dataclass
class ScenarioMetrics:
    scenario: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)
    confusion: Optional[ConfusionMatrix] = None
    flags: list[str] = field(default_factory=list)
    seed: Optional[int] = None
    train_size: Optional[int] = None
    test_size: Optional[int] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["confusion"] = None if self.confusion is None else asdict(self.confusion)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioMetrics":
        data = dict(data)
        if data.get("confusion") is not None:
            data["confusion"] = ConfusionMatrix(**data["confusion"])
        return cls(**data)


def _safe_ratio(num: int, den: int, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def _class_scores(cm: ConfusionMatrix, label: int, flags: list[str]) -> dict[str, float]:
    precision = _safe_ratio(cm.tp, cm.tp + cm.fp, f"precision_undefined_class_{label}", flags)
    recall = _safe_ratio(cm.tp, cm.tp + cm.fn, f"recall_undefined_class_{label}", flags)
    if precision + recall == 0:
        flags.append(f"f1_undefined_class_{label}")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1}


def compute_metrics(cm: ConfusionMatrix, scenario: str = "", **extra) -> ScenarioMetrics:
    """Accuracy plus macro-averaged precision, recall and F1 over both classes.

    Zero denominators give 0 and add a flag naming the undefined quantity.
    """
    if cm.total == 0:
        raise ValueError("cannot compute metrics on an empty test set")
    flags: list[str] = []
    per_class = {"1": _class_scores(cm, 1, flags), "0": _class_scores(cm.swapped(), 0, flags)}
    macro = {m: (per_class["0"][m] + per_class["1"][m]) / 2 for m in ("precision", "recall", "f1")}
    return ScenarioMetrics(scenario=scenario, accuracy=(cm.tp + cm.tn) / cm.total,
                           per_class={k: per_class[k] for k in ("0", "1")}, confusion=cm,
                           flags=flags, **macro, **extra)


@dataclass
class MetricsReport:
    rows: list[ScenarioMetrics]
    fingerprint: str = ""
    seeds: list[int] = field(default_factory=list)
    reference: bool = False

    def to_dict(self) -> dict:
        return {"fingerprint": self.fingerprint, "seeds": list(self.seeds),
                "reference": self.reference, "rows": [r.to_dict() for r in self.rows],
                "summary": self.summary()}

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(rows=[ScenarioMetrics.from_dict(r) for r in data["rows"]],
                   fingerprint=data.get("fingerprint", ""), seeds=list(data.get("seeds", [])),
                   reference=bool(data.get("reference", False)))

    def scenarios(self) -> list[str]:
        names: list[str] = []
        for row in self.rows:
            if row.scenario not in names:
                names.append(row.scenario)
        return names

    def summary(self) -> list[dict]:
        """Per-scenario mean and population standard deviation across seeds."""
        out = []
        for name in self.scenarios():
            rows = [r for r in self.rows if r.scenario == name]
            entry: dict = {"scenario": name, "runs": len(rows)}
            for m in METRICS:
                vals = np.array([getattr(r, m) for r in rows], dtype=np.float64)
                entry[m] = {"mean": float(vals.mean()), "std": float(vals.std())}
            out.append(entry)
        return out

    def display_rows(self) -> list[tuple[str, float, float, float, float]]:
        """One row per scenario: the single run, or the mean across seeds."""
        if len({r.scenario for r in self.rows}) == len(self.rows):
            return [(r.scenario, r.accuracy, r.precision, r.recall, r.f1) for r in self.rows]
        return [(s["scenario"], *(s[m]["mean"] for m in METRICS)) for s in self.summary()]


def round_half_even(value: float, places: int = 2) -> str:
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_EVEN))


def reference_report() -> MetricsReport:
    """The published four-scenario table as a report (no confusion matrices)."""
    rows = [ScenarioMetrics(scenario=name, accuracy=a, precision=p, recall=r, f1=f)
            for name, a, p, r, f in SCENARIO_REFERENCE]
    return MetricsReport(rows=rows, fingerprint="reference", reference=True)


def render_markdown(report: MetricsReport) -> str:
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "|".join(["---"] * len(COLUMNS)) + "|"]
    for name, *values in report.display_rows():
        lines.append("| " + " | ".join([name] + [round_half_even(v) for v in values]) + " |")
    lines.append("")
    lines.append(f"config fingerprint: {report.fingerprint}")
    lines.append(f"seeds: {','.join(str(s) for s in report.seeds) or '-'}")
    if len(report.rows) > len(report.scenarios()):
        lines.append("values are means across seeds; per-seed rows are in the CSV/JSON reports")
    return "\n".join(lines) + "\n"


def render_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scenario", "seed", *METRICS, "tp", "fp", "fn", "tn",
                     "precision_0", "recall_0", "f1_0", "precision_1", "recall_1", "f1_1",
                     "train_size", "test_size", "flags", "fingerprint"])
    for r in report.rows:
        cm = r.confusion
        counts = ["", "", "", ""] if cm is None else [cm.tp, cm.fp, cm.fn, cm.tn]
        per = [repr(r.per_class[c][m]) if c in r.per_class else ""
               for c in ("0", "1") for m in ("precision", "recall", "f1")]
        writer.writerow([r.scenario, "" if r.seed is None else r.seed,
                         *(repr(getattr(r, m)) for m in METRICS), *counts, *per,
                         "" if r.train_size is None else r.train_size,
                         "" if r.test_size is None else r.test_size,
                         ";".join(r.flags), report.fingerprint])
    return buf.getvalue()


def render_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def parse_json(text: str) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(text))


def emit_report(report: MetricsReport, out_dir, formats: Sequence[str] = FORMATS,
                stem: str = "report") -> dict[str, Path]:
    """Write the report in each requested format; returns the written paths."""
    renderers = {"csv": (render_csv, ".csv"), "json": (render_json, ".json"),
                 "markdown": (render_markdown, ".md")}
    unknown = set(formats) - set(renderers)
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc
    written = {}
    for fmt in formats:
        render, suffix = renderers[fmt]
        path = out_dir / f"{stem}{suffix}"
        path.write_text(render(report), encoding="utf-8")
        written[fmt] = path
    return written
