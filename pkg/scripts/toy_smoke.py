"""Offline end-to-end smoke run on synthetic headlines.

Builds a throwaway corpus and word-vector file, trains the table encoder
and the deterministic toy backend, evaluates, exports predictions, and
renders a small ablation table. Needs no external inputs; finishes in
well under a minute on a laptop CPU.

Usage:
    python scripts/toy_smoke.py [--out /tmp/smoke]
"""

import argparse
import random
import tempfile
from pathlib import Path

from headline_humor.corpus import HeadlineInstance
from headline_humor.engine import ExperimentConfig, evaluate, export_predictions, train
from headline_humor.grid import GridSpec, TaskData, run_grid

WORDS = (
    "cat dog tree car bird house boat lamp fish coat storm river cloud piano "
    "robot candle garden rocket monkey donkey turnip wizard anchor basket "
    "cradle dragon engine falcon goblet hammer island jacket kettle ladder "
    "mirror needle orchid pebble quiver ribbon saddle teapot umpire violin"
).split()


def make_corpus(n, seed):
    rng = random.Random(seed)
    pool = list(WORDS)
    rng.shuffle(pool)
    rows = []
    for i in range(n):
        left = rng.sample(WORDS, 2)
        right = rng.sample(WORDS, 2)
        original = rng.choice(WORDS)
        edit = pool.pop() if pool else rng.choice(WORDS)
        rows.append(
            HeadlineInstance(
                str(i),
                f"{left[0]} {left[1]} <{original}/> {right[0]} {right[1]}",
                edit,
                round(rng.uniform(0, 3), 2),
            )
        )
    return rows


def make_vectors(path, dim=16, seed=0):
    rng = random.Random(seed)
    lines = [
        f"{word} " + " ".join(repr(rng.uniform(-1, 1)) for _ in range(dim))
        for word in WORDS
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_csv(path, rows):
    lines = ["id,original,edit,grades,meanGrade"]
    for r in rows:
        lines.append(f'{r.id},"{r.original_text}",{r.edit_word},,{r.mean_grade}')
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()
    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="smoke-"))
    out.mkdir(parents=True, exist_ok=True)

    vectors = make_vectors(out / "vectors.txt")
    train_rows = make_corpus(40, seed=1)
    dev_rows = make_corpus(12, seed=2)
    test_rows = make_corpus(12, seed=3)

    print("== table encoder, Context + Freeze ==")
    config = ExperimentConfig(
        subtask=1, encoder="table", transfer="freeze", feature="context",
        embeddings=str(vectors), embedding_dim=16, max_epochs=4, seed=0,
    )
    record = train(config, train_rows, dev_rows, out_dir=out / "table-run")
    print(f"best dev {record.selection_metric}: {record.best_value:.4f}")
    print(evaluate(record.checkpoint_path, test_rows).render_text())

    preds = export_predictions(
        record.checkpoint_path, write_csv(out / "test.csv", test_rows), out / "preds.csv"
    )
    print(f"predictions exported to {preds}")

    print("\n== toy contextual backend, small ablation ==")
    spec = GridSpec(
        subtasks=(1,),
        encoders=("table", "toy-d16-l2-s0"),
        features=("context", "original"),
        transfers=("freeze",),
        extras=(False,),
        learning_rates=(1e-3,),
        epoch_choices=(2,),
        base=ExperimentConfig(embeddings=str(vectors), embedding_dim=16, seed=0),
    )
    data = {1: TaskData(train=train_rows, dev=dev_rows, test=test_rows)}
    result = run_grid(spec, data, out / "grid")
    print(result.render_table())
    print(f"\nartifacts under {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
