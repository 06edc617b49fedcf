"""Stacking ensemble over member log-probability matrices.

Members' per-class log-probabilities on the dev split, concatenated in
a fixed member order, form the training design of a logistic-regression
head; the head's argmax on the test split is the ensemble score. The
test split is never touched during fitting. Best-m member subsets are
chosen by mean dev QWK.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .corpus import LogProbMatrix, PromptCorpus
from .errors import CoverageGap, KMismatch, SingleClass, TooFewCandidates
from .learners import LogRegModel, logreg_fit, logreg_logprobs
from .metrics import (
    QWK_DEGRADATION,
    QWK_GAP_LIMIT,
    SMD_LIMIT,
    SMD_VIOLATION,
    EvalReport,
    accuracy,
    production_check,
    qwk,
    smd,
)
from .serialize import Artifact

STACKER_L2 = 1e-4


@dataclass(frozen=True)
class DesignMatrix:
    """Rows of member log-probabilities, member blocks in a fixed order."""

    ids: list[str]
    data: np.ndarray


@dataclass(frozen=True)
class EnsembleSpec:
    """Fitted stacker: member order plus the logistic-regression head."""

    members: list[str]
    head: LogRegModel
    prompt_id: int
    k: int

    def to_artifact(self) -> Artifact:
        return Artifact(
            kind="ensemble-spec",
            meta={
                "prompt": str(self.prompt_id),
                "k": str(self.k),
                "l2": repr(self.head.l2),
            },
            tables={"members": [[name] for name in self.members]},
            arrays={"head_weights": self.head.weights, "head_bias": self.head.bias},
        )

    @classmethod
    def from_artifact(cls, art: Artifact) -> "EnsembleSpec":
        head = LogRegModel(
            weights=art.arrays["head_weights"],
            bias=art.arrays["head_bias"][0],
            l2=float(art.meta["l2"]),
        )
        return cls(
            members=[row[0] for row in art.tables["members"]],
            head=head,
            prompt_id=int(art.meta["prompt"]),
            k=int(art.meta["k"]),
        )


def assemble(members: list[LogProbMatrix], ids: list[str]) -> DesignMatrix:
    """Concatenate member rows for the given ids, in member order."""
    if not members:
        raise TooFewCandidates("need at least one member")
    k = members[0].k
    prompt_id = members[0].prompt_id
    for m in members:
        if m.k != k or m.prompt_id != prompt_id:
            raise KMismatch(
                f"member {m.model_name!r} has k={m.k}/prompt={m.prompt_id}, "
                f"expected k={k}/prompt={prompt_id}"
            )
    data = np.empty((len(ids), len(members) * k), dtype=float)
    for i, rid in enumerate(ids):
        for j, m in enumerate(members):
            row = m.rows.get(rid)
            if row is None:
                raise CoverageGap(f"member {m.model_name!r} has no row for id {rid!r}")
            data[i, j * k:(j + 1) * k] = row
    return DesignMatrix(ids=list(ids), data=data)


def fit_ensemble(
    members: list[LogProbMatrix], dev_corpus: PromptCorpus, l2: float = STACKER_L2
) -> EnsembleSpec:
    """Fit the stacking head on dev labels; reads only dev rows."""
    ids = [r.id for r in dev_corpus.dev]
    design = assemble(members, ids)
    labels = dev_corpus.labels(dev_corpus.dev)
    if np.unique(labels).size < 2:
        raise SingleClass("dev split shows a single class; cannot fit the stacker")
    head = logreg_fit(design.data, labels, l2, k=dev_corpus.num_classes)
    return EnsembleSpec(
        members=[m.model_name for m in members],
        head=head,
        prompt_id=dev_corpus.prompt_id,
        k=dev_corpus.num_classes,
    )


def score_ensemble(
    spec: EnsembleSpec, members: list[LogProbMatrix], ids: list[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and head log-probabilities for the given ids."""
    by_name = {m.model_name: m for m in members}
    ordered = []
    for name in spec.members:
        if name not in by_name:
            raise CoverageGap(f"member {name!r} required by the ensemble was not provided")
        ordered.append(by_name[name])
    design = assemble(ordered, ids)
    logprobs = logreg_logprobs(spec.head, design.data)
    return np.argmax(logprobs, axis=1), logprobs


def select_best_subset(
    candidates: list[tuple[str, list[EvalReport]]], m: int
) -> list[str]:
    """Top-m candidate names by mean dev QWK across prompts, ties by name."""
    if m < 1 or m > len(candidates):
        raise TooFewCandidates(f"asked for {m} of {len(candidates)} candidates")
    prompt_sets = {frozenset(r.prompt_id for r in reports) for _, reports in candidates}
    if len(prompt_sets) > 1:
        raise ValueError("candidates do not cover the same prompts")
    ranked = sorted(
        candidates, key=lambda c: (-float(np.mean([r.qwk for r in c[1]])), c[0])
    )
    return [name for name, _ in ranked[:m]]


def evaluate_run(
    pred_labels,
    gold_labels,
    k: int,
    prompt_id: int,
    human_qwk: float | None = None,
) -> EvalReport:
    """Score one run: QWK, SMD, accuracy, and production flags."""
    pred = np.asarray(pred_labels)
    gold = np.asarray(gold_labels)
    report = EvalReport(
        prompt_id=prompt_id,
        qwk=qwk(gold, pred, k),
        smd=smd(gold, pred),
        accuracy=accuracy(gold, pred),
        n=int(gold.size),
    )
    if human_qwk is not None:
        return production_check(report, human_qwk)
    if abs(report.smd) > SMD_LIMIT:
        report = replace(report, flags=frozenset({SMD_VIOLATION}))
    return report


def mean_report(reports: list[EvalReport]) -> EvalReport:
    """Arithmetic mean row across prompts (prompt_id -1 renders as 'mean')."""
    if not reports:
        raise TooFewCandidates("no reports to average")
    gaps = [r.qwk_gap_vs_human for r in reports]
    mean_gap = float(np.mean(gaps)) if all(g is not None for g in gaps) else None
    mean_smd = float(np.mean([r.smd for r in reports]))
    flags = set()
    if abs(mean_smd) > SMD_LIMIT:
        flags.add(SMD_VIOLATION)
    if mean_gap is not None and mean_gap > QWK_GAP_LIMIT:
        flags.add(QWK_DEGRADATION)
    return EvalReport(
        prompt_id=-1,
        qwk=float(np.mean([r.qwk for r in reports])),
        smd=mean_smd,
        accuracy=float(np.mean([r.accuracy for r in reports])),
        n=int(sum(r.n for r in reports)),
        qwk_gap_vs_human=mean_gap,
        flags=frozenset(flags),
    )
