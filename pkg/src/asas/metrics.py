"""Agreement and calibration statistics for scored responses.

Implements quadratic weighted kappa (the chance-corrected agreement
statistic used throughout automated scoring), standardized mean
difference, exact-match accuracy, and the operational checks applied to
scoring engines before deployment: machine QWK within 0.1 of the
human-human QWK, and |SMD| at most 0.15.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateDistribution, LabelOutOfRange, LengthMismatch

QWK_GAP_LIMIT = 0.1
SMD_LIMIT = 0.15

SMD_VIOLATION = "SmdViolation"
QWK_DEGRADATION = "QwkDegradation"


def _as_labels(values, k: int, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size == 0:
        raise LengthMismatch(f"{name} must be a nonempty 1-D label vector")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(arr)
        if not np.all(arr == rounded):
            raise LabelOutOfRange(f"{name} contains non-integer labels")
        arr = rounded
    arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() >= k:
        raise LabelOutOfRange(f"{name} labels must lie in [0, {k})")
    return arr


@dataclass(frozen=True)
class ConfusionTable:
    """Observed/expected joint proportions with quadratic disagreement weights.

    ``observed[i, j]`` is the fraction of items rated i by the first
    scorer and j by the second; ``expected`` is the outer product of the
    two marginal distributions; ``weights[i, j] = (i - j)^2 / (k - 1)^2``.
    """

    k: int
    observed: np.ndarray
    expected: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_labels(cls, a, b, k: int) -> "ConfusionTable":
        if k < 2:
            raise LabelOutOfRange("need at least two classes")
        av = _as_labels(a, k, "a")
        bv = _as_labels(b, k, "b")
        if av.shape != bv.shape:
            raise LengthMismatch(f"label vectors differ in length: {av.size} vs {bv.size}")
        n = av.size
        observed = np.zeros((k, k), dtype=float)
        np.add.at(observed, (av, bv), 1.0)
        observed /= n
        expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
        idx = np.arange(k, dtype=float)
        weights = (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2
        return cls(k=k, observed=observed, expected=expected, weights=weights)


def qwk(a, b, k: int) -> float:
    """Quadratic weighted kappa between two integer label vectors.

    Returns 1 - (sum w*observed) / (sum w*expected). When the expected
    weighted disagreement is zero the statistic is defined as 1.0 on
    exact agreement and 0.0 otherwise, so sweeps never produce NaN.
    """
    table = ConfusionTable.from_labels(a, b, k)
    weighted_obs = float(np.sum(table.weights * table.observed))
    weighted_exp = float(np.sum(table.weights * table.expected))
    if weighted_exp == 0.0:
        return 1.0 if weighted_obs == 0.0 else 0.0
    return 1.0 - weighted_obs / weighted_exp


def smd(human, machine) -> float:
    """Standardized mean difference, machine minus human.

    The denominator is the pooled standard deviation
    sqrt((var(human) + var(machine)) / 2) with population variances.
    """
    h = np.asarray(human, dtype=float)
    m = np.asarray(machine, dtype=float)
    if h.ndim != 1 or h.size == 0 or h.shape != m.shape:
        raise LengthMismatch(f"label vectors differ in length: {h.size} vs {m.size}")
    pooled = np.sqrt((h.var() + m.var()) / 2.0)
    diff = m.mean() - h.mean()
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0
        raise DegenerateDistribution("both distributions are constant but means differ")
    return float(diff / pooled)


def accuracy(a, b) -> float:
    """Fraction of exact label matches."""
    av = np.asarray(a)
    bv = np.asarray(b)
    if av.ndim != 1 or av.size == 0 or av.shape != bv.shape:
        raise LengthMismatch(f"label vectors differ in length: {av.size} vs {bv.size}")
    return float(np.mean(av == bv))


@dataclass(frozen=True)
class EvalReport:
    """Per-prompt evaluation summary with production-criteria flags."""

    prompt_id: int
    qwk: float
    smd: float
    accuracy: float
    n: int
    qwk_gap_vs_human: float | None = None
    flags: frozenset[str] = frozenset()

    TSV_HEADER = "prompt\tqwk\tsmd\tacc\tn\tflags"

    def to_tsv_row(self) -> str:
        prompt = "mean" if self.prompt_id < 0 else str(self.prompt_id)
        flags = ",".join(sorted(self.flags)) if self.flags else "-"
        return f"{prompt}\t{self.qwk:.6f}\t{self.smd:.6f}\t{self.accuracy:.6f}\t{self.n}\t{flags}"

    @classmethod
    def from_tsv_row(cls, row: str) -> "EvalReport":
        prompt, qwk_s, smd_s, acc_s, n_s, flags_s = row.rstrip("\n").split("\t")
        flags = frozenset() if flags_s == "-" else frozenset(flags_s.split(","))
        return cls(
            prompt_id=-1 if prompt == "mean" else int(prompt),
            qwk=float(qwk_s),
            smd=float(smd_s),
            accuracy=float(acc_s),
            n=int(n_s),
            flags=flags,
        )


def production_check(report: EvalReport, human_qwk: float) -> EvalReport:
    """Apply the deployment criteria to a report.

    QwkDegradation is set when the machine QWK trails the human-human QWK
    by more than 0.1; SmdViolation when |SMD| exceeds 0.15.
    """
    gap = human_qwk - report.qwk
    flags = set(report.flags) - {SMD_VIOLATION, QWK_DEGRADATION}
    if abs(report.smd) > SMD_LIMIT:
        flags.add(SMD_VIOLATION)
    if gap > QWK_GAP_LIMIT:
        flags.add(QWK_DEGRADATION)
    return replace(report, qwk_gap_vs_human=gap, flags=frozenset(flags))
