#!/usr/bin/env python3
"""Full experiment driver for the public short-answer dataset.

Expects a data directory (default ./data, or $ASAS_DATA_DIR) holding:

    train.tsv                     the public training file
    public_leaderboard*.tsv       test texts (optional, for test scoring)
    *solution*.csv                test scores to join by id (optional)
    embeddings_<prompt>.tsv       precomputed sentence vectors (optional)
    prompt_<prompt>.txt           prompt/passage text (optional)

For each prompt: print corpus statistics, run the 20-trial search over
learning rate / batch size / TF-IDF dimension / fuzzy cutoff, train the
final feature model, export its log-probabilities in the member format,
and score the test split when labels are available. Writes everything
under the output directory and finishes with a per-prompt report table
plus the mean row.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from asas.cli import main as cli_main
from asas.corpus import (
    ColumnMap,
    attach_scores,
    build_corpus,
    corpus_stats,
    parse_dataset,
    parse_score_table,
    prompt_seed,
    StatsRow,
)


def find_one(root: Path, patterns: list[str]) -> Path | None:
    for pattern in patterns:
        hits = sorted(root.glob(pattern))
        if hits:
            return hits[0]
    return None


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default=os.environ.get("ASAS_DATA_DIR", "data"))
    parser.add_argument("--out", default="runs")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--prompts", type=int, nargs="*", default=list(range(1, 11)))
    args = parser.parse_args()

    root = Path(args.data_dir)
    train_path = root / "train.tsv"
    if not train_path.is_file():
        print(f"no dataset at {train_path}; nothing to do", file=sys.stderr)
        return 2
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)

    pool = parse_dataset(train_path.read_bytes())
    test_path = find_one(root, ["public_leaderboard*.tsv"])
    solution_path = find_one(root, ["*solution*.csv", "*solution*.tsv"])
    test = []
    if test_path is not None:
        test = parse_dataset(test_path.read_bytes(), ColumnMap(score1="", score2=""))
        if solution_path is not None:
            scores = parse_score_table(solution_path.read_bytes(), "id", "essay_score")
            test = attach_scores(test, scores)

    print(StatsRow.TSV_HEADER)
    for pid in args.prompts:
        corpus = build_corpus(
            pool, prompt_id=pid, dev_fraction=0.2,
            seed=prompt_seed(args.seed, pid), test=test,
        )
        print(corpus_stats(corpus).to_tsv_row())

    report_files = []
    for pid in args.prompts:
        started = time.monotonic()
        run_dir = out_root / f"prompt_{pid}"
        cmd = [
            "tune",
            "--data", str(train_path),
            "--prompt", str(pid),
            "--seed", str(args.seed),
            "--trials", str(args.trials),
            "--out", str(run_dir),
        ]
        if test_path is not None:
            cmd += ["--test", str(test_path)]
            if solution_path is not None:
                cmd += ["--solution", str(solution_path)]
        emb = root / f"embeddings_{pid}.tsv"
        if emb.is_file():
            cmd += ["--embeddings", str(emb)]
        prompt_text = root / f"prompt_{pid}.txt"
        if prompt_text.is_file():
            cmd += ["--prompt-text", str(prompt_text)]
        code = cli_main(cmd)
        if code != 0:
            print(f"prompt {pid}: tune failed with exit {code}", file=sys.stderr)
            return code

        predict_cmd = [
            "predict",
            "--model", str(run_dir / "model.txt"),
            "--data", str(train_path),
            "--prompt", str(pid),
            "--seed", str(args.seed),
            "--out", str(run_dir / "features.tsv"),
        ]
        if test_path is not None:
            predict_cmd += ["--test", str(test_path)]
        if emb.is_file():
            predict_cmd += ["--embeddings", str(emb)]
        if prompt_text.is_file():
            predict_cmd += ["--prompt-text", str(prompt_text)]
        code = cli_main(predict_cmd)
        if code != 0:
            return code

        if test and all(r.score1 is not None for r in test if r.prompt_id == pid):
            ensemble_cmd = [
                "ensemble",
                "--data", str(train_path),
                "--test", str(test_path),
                "--prompt", str(pid),
                "--seed", str(args.seed),
                "--members", str(run_dir / "features.tsv"),
                "--out", str(run_dir),
            ]
            if solution_path is not None:
                ensemble_cmd += ["--solution", str(solution_path)]
            code = cli_main(ensemble_cmd)
            if code != 0:
                return code
            report_files.append(str(run_dir / "report_test.tsv"))
        print(f"prompt {pid} done in {time.monotonic() - started:.0f}s")

    if report_files:
        return cli_main(["report", "--out", str(out_root / "report.tsv"), *report_files])
    return 0


if __name__ == "__main__":
    sys.exit(main())
