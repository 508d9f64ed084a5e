"""Energy thresholding, confusion metrics, and multi-run aggregation.

Anomaly is the positive class throughout. The percentile threshold flags
exactly ceil(N * ratio) highest-energy samples -- the recorded default
ratio is the test set's known anomaly fraction, since the energy model
itself is unsupervised and fixes no cut point. Aggregates use exact
(fsum) reductions so run order never changes the report.
"""

import math
from dataclasses import dataclass

import numpy as np

THRESHOLD_KINDS = ("percentile", "fixed")
METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class ThresholdPolicy:
    """percentile: flag the ceil(N*ratio) highest energies; fixed: energy > value."""

    kind: str = "percentile"
    ratio: float | None = None
    value: float | None = None

    def validate(self) -> None:
        if self.kind not in THRESHOLD_KINDS:
            raise ValueError(f"threshold kind must be one of {THRESHOLD_KINDS}")
        if self.kind == "percentile":
            if self.ratio is None or not 0.0 < self.ratio < 1.0:
                raise ValueError("percentile threshold needs a ratio in (0, 1)")
        elif self.value is None or not math.isfinite(self.value):
            raise ValueError("fixed threshold needs a finite value")


def threshold_energies(energies, policy: ThresholdPolicy) -> np.ndarray:
    """Boolean anomaly predictions, one per energy, order preserved.

    Percentile ties at the cut go to earlier indices (stable descending
    sort), so the flagged count is exactly ceil(N * ratio) always.
    """
    policy.validate()
    energies = np.asarray(energies, dtype=np.float64)
    if energies.ndim != 1 or energies.size == 0:
        raise ValueError("energies must be a non-empty 1-D vector")
    if policy.kind == "fixed":
        return energies > policy.value
    k = math.ceil(energies.size * policy.ratio)
    order = np.argsort(-energies, kind="stable")
    flags = np.zeros(energies.size, dtype=bool)
    flags[order[:k]] = True
    return flags


@dataclass(frozen=True)
class RunMetrics:
    """Confusion counts and the four derived scores for one run."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    zero_division: tuple[str, ...] = ()  # metrics forced to 0 by empty denominators

    def by_name(self, name: str) -> float:
        return getattr(self, name)


def compute_metrics(predicted, actual) -> RunMetrics:
    """Accuracy/precision/recall/F1 with anomaly as the positive class.

    A zero denominator yields 0 for that metric and records its name in
    zero_division rather than raising.
    """
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    if predicted.shape != actual.shape or predicted.ndim != 1:
        raise ValueError(
            f"prediction/label shapes differ: {predicted.shape} vs {actual.shape}"
        )
    if predicted.size == 0:
        raise ValueError("cannot score zero samples")
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    flagged = []
    accuracy = (tp + tn) / (tp + fp + fn + tn)

    def guarded(num, den, name):
        if den == 0:
            flagged.append(name)
            return 0.0
        return num / den

    precision = guarded(tp, tp + fp, "precision")
    recall = guarded(tp, tp + fn, "recall")
    f1 = guarded(2.0 * precision * recall, precision + recall, "f1")
    return RunMetrics(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        zero_division=tuple(flagged),
    )


def aggregate(values) -> tuple[float, float]:
    """(mean, sample stdev) with exact summation; stdev is 0 below 2 runs."""
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        raise ValueError("cannot aggregate zero values")
    avg = math.fsum(values) / n
    if n < 2:
        return avg, 0.0
    var = math.fsum((v - avg) ** 2 for v in values) / (n - 1)
    return avg, math.sqrt(var)


def format_avg_stdev(avg: float, stdev: float, digits: int = 2) -> str:
    """Cell text in the published table style, e.g. '0.89(0.01)'."""
    return f"{avg:.{digits}f}({stdev:.{digits}f})"


def five_number(values) -> tuple[float, float, float, float, float]:
    """(min, Q1, median, Q3, max) via linear-interpolation quantiles."""
    arr = np.asarray([float(v) for v in values])
    if arr.size == 0:
        raise ValueError("cannot summarize zero values")
    q = np.quantile(arr, [0.0, 0.25, 0.5, 0.75, 1.0])
    return tuple(float(v) for v in q)


def metrics_table(columns: dict[str, list[RunMetrics]], digits: int = 2) -> str:
    """CSV with one row per metric and one AVG(STDEV) cell per condition.

    This is the published comparison shape: metrics down the side,
    algorithm variants (or algorithm x contamination ratio) across.
    Conditions with no successful runs render as '-'.
    """
    names = list(columns)
    lines = ["metric," + ",".join(names)]
    for metric in METRIC_NAMES:
        cells = []
        for name in names:
            runs = columns[name]
            if not runs:
                cells.append("-")
                continue
            avg, std = aggregate([r.by_name(metric) for r in runs])
            cells.append(format_avg_stdev(avg, std, digits))
        lines.append(metric.upper() + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


def whisker_table(columns: dict[str, list[float]]) -> str:
    """CSV of five-number F1 summaries per condition, for box/whisker plots."""
    lines = ["condition,min,q1,median,q3,max"]
    for name, values in columns.items():
        if not values:
            lines.append(f"{name},-,-,-,-,-")
            continue
        summary = five_number(values)
        lines.append(name + "," + ",".join(repr(v) for v in summary))
    return "\n".join(lines) + "\n"


def degradation_table(
    cells: dict[str, dict[float, float]],
    ratios: "tuple[float, ...] | None" = None,
) -> str:
    """CSV of aggregate F1 against contamination ratio, one column per
    algorithm, for degradation-trend plots. Rows default to every ratio
    present in any column; pass `ratios` to pin the row set (keeping a
    ratio visible even when every run at it failed)."""
    algorithms = list(cells)
    if ratios is None:
        ratios = sorted({r for col in cells.values() for r in col})
    else:
        ratios = sorted(ratios)
    lines = ["contamination_ratio," + ",".join(algorithms)]
    for ratio in ratios:
        row = [repr(float(ratio))]
        for alg in algorithms:
            value = cells[alg].get(ratio)
            row.append("-" if value is None else repr(float(value)))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
