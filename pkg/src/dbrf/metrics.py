"""Group-fairness and performance metrics.

Undefined metrics (an empty group, a group without positive labels) raise
MetricError rather than returning a silent zero that would fake parity.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, MetricError


def _bits(arr, name: str) -> np.ndarray:
    out = np.asarray(arr)
    if out.dtype == bool:
        out = out.astype(np.int64)
    out = out.astype(np.int64, copy=False)
    if out.ndim != 1 or not np.all((out == 0) | (out == 1)):
        raise ConfigurationError(f"{name} must be a flat bit vector")
    return out


@dataclass(frozen=True)
class GroupedPredictions:
    """Predictions and labels split by the protected-group bit (1 = protected)."""

    predictions: np.ndarray
    labels: np.ndarray
    group: np.ndarray

    def __post_init__(self):
        p = _bits(self.predictions, "predictions")
        y = _bits(self.labels, "labels")
        g = _bits(self.group, "group")
        if not (len(p) == len(y) == len(g)):
            raise ConfigurationError("predictions, labels, group must share length")
        if len(p) == 0:
            raise ConfigurationError("empty prediction vector")
        object.__setattr__(self, "predictions", p)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "group", g)


def accuracy(predictions, labels) -> float:
    p = _bits(predictions, "predictions")
    y = _bits(labels, "labels")
    if len(p) != len(y):
        raise ConfigurationError("length mismatch")
    return float((p == y).mean())


def delta_dp(gp: GroupedPredictions) -> float:
    """|P(yhat=1 | protected) - P(yhat=1 | privileged)|. Labels unused."""
    prot = gp.group == 1
    if not prot.any() or prot.all():
        raise MetricError("demographic parity needs both groups non-empty")
    return float(abs(gp.predictions[prot].mean() - gp.predictions[~prot].mean()))


def deo(gp: GroupedPredictions) -> float:
    """|TPR_protected - TPR_privileged|: difference of equal opportunity."""
    prot = gp.group == 1
    pos_prot = prot & (gp.labels == 1)
    pos_priv = ~prot & (gp.labels == 1)
    if not pos_prot.any() or not pos_priv.any():
        raise MetricError("equal opportunity needs positive labels in both groups")
    return float(abs(gp.predictions[pos_prot].mean() - gp.predictions[pos_priv].mean()))


@dataclass(frozen=True)
class GroupReport:
    """Contingency counts and rates per (group, label) cell.

    counts[g][y] = examples with group bit g and label y;
    positive_rate[g] = P(yhat=1 | group g);
    tpr[g] = P(yhat=1 | y=1, group g), nan when the cell is empty.
    """

    counts: tuple[tuple[int, int], tuple[int, int]]
    base_rate: tuple[float, float]
    positive_rate: tuple[float, float]
    tpr: tuple[float, float]
    n: int


def group_report(gp: GroupedPredictions) -> GroupReport:
    counts = [[0, 0], [0, 0]]
    positive_rate = [float("nan"), float("nan")]
    base_rate = [float("nan"), float("nan")]
    tpr = [float("nan"), float("nan")]
    for g in (0, 1):
        in_g = gp.group == g
        for y in (0, 1):
            counts[g][y] = int((in_g & (gp.labels == y)).sum())
        if in_g.any():
            positive_rate[g] = float(gp.predictions[in_g].mean())
            base_rate[g] = float(gp.labels[in_g].mean())
        pos = in_g & (gp.labels == 1)
        if pos.any():
            tpr[g] = float(gp.predictions[pos].mean())
    return GroupReport(
        counts=(tuple(counts[0]), tuple(counts[1])),
        base_rate=tuple(base_rate),
        positive_rate=tuple(positive_rate),
        tpr=tuple(tpr),
        n=len(gp.predictions),
    )


def report_to_csv(report: GroupReport) -> str:
    buf = io.StringIO()
    buf.write("group,n_y0,n_y1,base_rate,positive_rate,tpr\n")
    for g in (0, 1):
        buf.write(f"{g},{report.counts[g][0]},{report.counts[g][1]},"
                  f"{report.base_rate[g]:.6f},{report.positive_rate[g]:.6f},"
                  f"{report.tpr[g]:.6f}\n")
    return buf.getvalue()


def report_to_text(report: GroupReport) -> str:
    lines = [
        f"{'group':>10} {'n(y=0)':>8} {'n(y=1)':>8} {'base':>8} {'p(yhat=1)':>10} {'tpr':>8}",
    ]
    for g, name in ((1, "protected"), (0, "privileged")):
        lines.append(f"{name:>10} {report.counts[g][0]:>8} {report.counts[g][1]:>8} "
                     f"{report.base_rate[g]:>8.4f} {report.positive_rate[g]:>10.4f} "
                     f"{report.tpr[g]:>8.4f}")
    lines.append(f"{'total':>10} {report.n:>8}")
    return "\n".join(lines)
