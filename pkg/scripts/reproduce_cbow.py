"""Reproduce the table-encoder Context/Freeze rows on both subtasks.

Loads the word-vector file once per subtask (vocabulary-scoped), searches
the frozen learning-rate grid {1e-3, 3e-4} by dev metric, and reports test
metrics. Runs on a plain CPU in minutes given the inputs.

Usage:
    python scripts/reproduce_cbow.py --data-dir DATA --embeddings VECFILE \
        [--out runs/cbow] [--extra]
"""

import argparse
import os
import sys
import time
from pathlib import Path

from headline_humor.corpus import merge_extra
from headline_humor.encoders import load_embeddings
from headline_humor.engine import (
    DATA_DIR_ENV,
    EMBEDDINGS_ENV,
    ExperimentConfig,
    collect_vocabulary,
    evaluate,
    load_split,
    train,
)

FROZEN_GRID = (1e-3, 3e-4)


def run_subtask(subtask, data_dir, vectors, out_dir, use_extra):
    splits = {name: load_split(data_dir, subtask, name) for name in ("train", "dev", "test")}
    train_rows = splits["train"]
    if use_extra:
        train_rows = merge_extra(train_rows, load_split(data_dir, subtask, "extra"))
    vocabulary = collect_vocabulary(train_rows + splits["dev"] + splits["test"])
    with open(vectors, "r", encoding="utf-8") as stream:
        table = load_embeddings(stream, 300, vocabulary=vocabulary)
    print(f"subtask {subtask}: {len(table)} vectors cover the corpus vocabulary")

    best = None
    for lr in FROZEN_GRID:
        config = ExperimentConfig(
            subtask=subtask, encoder="table", transfer="freeze", feature="context",
            use_extra=use_extra, learning_rate=lr, max_epochs=10,
            embeddings=str(vectors), embedding_dim=300, seed=0,
        )
        record = train(
            config, train_rows, splits["dev"],
            out_dir=Path(out_dir) / f"s{subtask}-lr{lr:g}", table=table,
        )
        print(f"  lr {lr:g}: dev {record.selection_metric} {record.best_value:.4f}")
        better = best is None or (
            record.best_value < best.best_value if subtask == 1
            else record.best_value > best.best_value
        )
        if better:
            best = record
    report = evaluate(best.checkpoint_path, splits["test"], table=table)
    print(report.render_text())
    return report


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default=os.environ.get(DATA_DIR_ENV))
    parser.add_argument("--embeddings", default=os.environ.get(EMBEDDINGS_ENV))
    parser.add_argument("--out", default="runs/cbow")
    parser.add_argument("--extra", action="store_true", help="append the extra split")
    args = parser.parse_args()
    if not args.data_dir or not args.embeddings:
        print(
            f"error: pass --data-dir and --embeddings (or set ${DATA_DIR_ENV} "
            f"and ${EMBEDDINGS_ENV})",
            file=sys.stderr,
        )
        return 1

    started = time.time()
    for subtask in (1, 2):
        run_subtask(subtask, args.data_dir, args.embeddings, args.out, args.extra)
        print()
    print(f"total {time.time() - started:.0f}s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
