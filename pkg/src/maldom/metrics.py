"""Classification metrics from one-vs-rest confusion counts.

Per-class rates use a zero-denominator convention: a ratio whose denominator
is 0 is reported as 0 and its name is listed in that class's ``undefined``
field. Macro values are unweighted means over classes; accuracy and micro-F1
are global.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

# column order of the published result tables
FIELDS = ("accuracy", "f1_macro", "f1_weighted", "f1_micro", "tpr", "ppv", "npv", "spc",
          "de", "fdr", "fpr", "fnr")
HEADERS = ("Accuracy", "F1_macro", "F1_wted", "F1_micro", "TPR", "PPV", "NPV", "SPC",
           "DE", "FDR", "FPR", "FNR")
PER_CLASS_RATES = ("tpr", "ppv", "npv", "spc", "f1", "de", "fdr", "fpr", "fnr")

DE_CONVENTION = "per-class TPR*SPC, macro-averaged"


class MetricsError(ValueError):
    pass


class LengthMismatch(MetricsError):
    pass


class IdOutOfRange(MetricsError):
    pass


@dataclass(frozen=True)
class ConfusionStats:
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.tp)

    @property
    def total(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.tn[0] + self.fn[0])

    @property
    def support(self) -> np.ndarray:
        return self.tp + self.fn


def confusion(labels: Sequence[int], preds: Sequence[int], n_classes: int) -> ConfusionStats:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    if len(y) != len(p):
        raise LengthMismatch(f"{len(y)} labels vs {len(p)} predictions")
    if len(y) == 0:
        raise LengthMismatch("no samples")
    if y.min() < 0 or p.min() < 0 or y.max() >= n_classes or p.max() >= n_classes:
        raise IdOutOfRange(f"ids must lie in [0, {n_classes})")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (y, p), 1)
    tp = np.diag(matrix).copy()
    fp = matrix.sum(axis=0) - tp
    fn = matrix.sum(axis=1) - tp
    tn = len(y) - tp - fp - fn
    return ConfusionStats(tp, fp, tn, fn)


@dataclass
class ClassMetrics:
    label: int
    support: int
    weight: float
    tp: int
    fp: int
    tn: int
    fn: int
    tpr: float
    ppv: float
    npv: float
    spc: float
    f1: float
    de: float
    fdr: float
    fpr: float
    fnr: float
    undefined: list[str] = field(default_factory=list)


@dataclass
class MetricReport:
    accuracy: float
    f1_macro: float
    f1_weighted: float
    f1_micro: float
    tpr: float
    ppv: float
    npv: float
    spc: float
    de: float
    fdr: float
    fpr: float
    fnr: float
    per_class: list[ClassMetrics] = field(default_factory=list)

    @property
    def weights(self) -> list[float]:
        return [c.weight for c in self.per_class]

    def metrics(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in FIELDS}

    def to_dict(self, dataset: str = "", model: str = "") -> dict:
        return {
            "dataset": dataset,
            "model": model,
            "metrics": self.metrics(),
            "per_class": [asdict(c) for c in self.per_class],
            "meta": {"average": "macro", "de_aggregation": DE_CONVENTION,
                     "zero_denominator": 0.0},
        }


def _ratio(num: int, den: int, name: str, undefined: list[str]) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def class_metrics(label: int, tp: int, fp: int, tn: int, fn: int, total: int) -> ClassMetrics:
    und: list[str] = []
    tp, fp, tn, fn = int(tp), int(fp), int(tn), int(fn)
    return ClassMetrics(
        label=label,
        support=tp + fn,
        weight=(tp + fn) / total,
        tp=tp, fp=fp, tn=tn, fn=fn,
        tpr=_ratio(tp, tp + fn, "tpr", und),
        ppv=_ratio(tp, tp + fp, "ppv", und),
        npv=_ratio(tn, tn + fn, "npv", und),
        spc=_ratio(tn, fp + tn, "spc", und),
        # harmonic mean of PPV and TPR, written on counts so it is exact
        f1=_ratio(2 * tp, 2 * tp + fp + fn, "f1", und),
        de=_ratio(tp * tn, (tp + fn) * (fp + tn), "de", und),
        fdr=_ratio(fp, fp + tp, "fdr", und),
        fpr=_ratio(fp, fp + tn, "fpr", und),
        fnr=_ratio(fn, fn + tp, "fnr", und),
        undefined=und,
    )


def report(stats: ConfusionStats) -> MetricReport:
    total = stats.total
    per_class = [
        class_metrics(c, stats.tp[c], stats.fp[c], stats.tn[c], stats.fn[c], total)
        for c in range(stats.n_classes)
    ]

    def macro(name: str) -> float:
        return float(np.mean([getattr(c, name) for c in per_class]))

    tp_sum = int(stats.tp.sum())
    fp_sum = int(stats.fp.sum())
    fn_sum = int(stats.fn.sum())
    return MetricReport(
        accuracy=tp_sum / total,
        f1_macro=macro("f1"),
        f1_weighted=float(sum(c.weight * c.f1 for c in per_class)),
        f1_micro=_ratio(2 * tp_sum, 2 * tp_sum + fp_sum + fn_sum, "f1_micro", []),
        tpr=macro("tpr"),
        ppv=macro("ppv"),
        npv=macro("npv"),
        spc=macro("spc"),
        de=macro("de"),
        fdr=macro("fdr"),
        fpr=macro("fpr"),
        fnr=macro("fnr"),
        per_class=per_class,
    )


def evaluate(labels: Sequence[int], preds: Sequence[int], n_classes: int) -> MetricReport:
    return report(confusion(labels, preds, n_classes))


def percent(x: float) -> str:
    return f"{100 * x:.2f}"


def format_report(rep: MetricReport, style: str = "table", dataset: str = "", model: str = "") -> str:
    """``json`` keeps full-precision fractions; ``table`` prints percentages."""
    if style == "json":
        return json.dumps(rep.to_dict(dataset, model), indent=2, sort_keys=True)
    if style != "table":
        raise ValueError(f"unknown style {style!r}")
    values = [percent(getattr(rep, name)) for name in FIELDS]
    lead_names = ["dataset", "model"]
    lead_vals = [dataset or "-", model or "-"]
    cols = list(zip(lead_names + list(HEADERS), lead_vals + values))
    widths = [max(len(h), len(v)) for h, v in cols]
    head = "  ".join(h.rjust(w) for (h, _), w in zip(cols, widths))
    row = "  ".join(v.rjust(w) for (_, v), w in zip(cols, widths))
    return head + "\n" + row + "\n"


def report_from_dict(doc: dict) -> MetricReport:
    m = doc["metrics"]
    per_class = [ClassMetrics(**c) for c in doc.get("per_class", [])]
    return MetricReport(**{k: m[k] for k in FIELDS}, per_class=per_class)
