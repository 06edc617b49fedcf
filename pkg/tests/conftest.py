"""Shared fixtures: deterministic toy corpora and ensemble members."""
from __future__ import annotations

import os
import random
from pathlib import Path

import numpy as np
import pytest

from asas.corpus import PromptCorpus, ScoredResponse, build_corpus, LogProbMatrix
from asas.mathutil import log_softmax

PROMPT_TEXT = (
    "When salt is dissolved in water the concentration gradient drives "
    "diffusion across the membrane until equilibrium is reached. "
    "Describe how osmosis moves water through a semipermeable membrane "
    "and explain what happens to the cells in the experiment."
)

_FILLERS = (
    "the water was in a cup and it did move because they put salt on it "
    "so then some of them went to look at what would happen after that"
).split()

_KEY_WORDS = {
    1: "osmosis membrane water concentration".split(),
    2: "diffusion gradient equilibrium semipermeable".split(),
}


def make_toy_responses(
    prompt_id: int = 1,
    n: int = 80,
    k: int = 3,
    seed: int = 0,
    start_id: int = 0,
    second_read: bool = True,
) -> list[ScoredResponse]:
    """Synthetic responses whose key-term usage tracks the score."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        score = i % k
        words = [rng.choice(_FILLERS) for _ in range(rng.randint(8, 16))]
        for level in range(1, score + 1):
            words += rng.sample(_KEY_WORDS[min(level, 2)], 2)
        rng.shuffle(words)
        score2 = score
        if second_read and rng.random() < 0.1:
            score2 = max(0, min(k - 1, score + rng.choice([-1, 1])))
        out.append(
            ScoredResponse(
                id=str(start_id + i),
                prompt_id=prompt_id,
                text=" ".join(words) + ".",
                score1=score,
                score2=score2 if second_read else None,
            )
        )
    return out


def make_toy_corpus(
    prompt_id: int = 1,
    n_train_pool: int = 80,
    n_test: int = 20,
    k: int = 3,
    seed: int = 0,
    dev_fraction: float = 0.25,
) -> PromptCorpus:
    pool = make_toy_responses(prompt_id=prompt_id, n=n_train_pool, k=k, seed=seed)
    test = make_toy_responses(
        prompt_id=prompt_id, n=n_test, k=k, seed=seed + 1, start_id=10_000
    )
    return build_corpus(
        pool,
        prompt_id=prompt_id,
        dev_fraction=dev_fraction,
        seed=seed,
        test=test,
        prompt_text=PROMPT_TEXT,
    )


@pytest.fixture
def toy_corpus() -> PromptCorpus:
    return make_toy_corpus()


def noisy_member(
    name: str,
    ids: list[str],
    gold: np.ndarray,
    k: int,
    seed: int,
    strength: float = 2.0,
    prompt_id: int = 1,
) -> LogProbMatrix:
    """Member whose log-probs lean toward gold with seeded noise."""
    rng = np.random.default_rng(seed)
    logits = rng.normal(0.0, 1.0, size=(len(ids), k))
    logits[np.arange(len(ids)), gold] += strength
    logprobs = log_softmax(logits, axis=1)
    return LogProbMatrix(
        model_name=name,
        prompt_id=prompt_id,
        k=k,
        rows={rid: logprobs[i] for i, rid in enumerate(ids)},
    )


def perfect_member(
    name: str, ids: list[str], gold: np.ndarray, k: int, prompt_id: int = 1
) -> LogProbMatrix:
    """Member that puts almost all mass on the gold class."""
    logits = np.full((len(ids), k), -30.0)
    logits[np.arange(len(ids)), gold] = 0.0
    logprobs = log_softmax(logits, axis=1)
    return LogProbMatrix(
        model_name=name,
        prompt_id=prompt_id,
        k=k,
        rows={rid: logprobs[i] for i, rid in enumerate(ids)},
    )


def data_dir() -> Path | None:
    """Directory holding the real public dataset, if provided locally."""
    root = Path(os.environ.get("ASAS_DATA_DIR", "data"))
    if (root / "train.tsv").is_file():
        return root
    return None


requires_dataset = pytest.mark.skipif(
    data_dir() is None,
    reason="public dataset not provided locally (set ASAS_DATA_DIR or place data/train.tsv)",
)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for status in ("passed", "failed", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            if getattr(report, "when", "call") not in ("call", "setup"):
                continue
            nodeid = report.nodeid
            if "test_acceptance.py" in nodeid:
                name = nodeid.split("::")[-1]
                lines.append((name, status.upper()))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in sorted(set(lines)):
            terminalreporter.write_line(f"ACCEPTANCE {name}: {status}")
