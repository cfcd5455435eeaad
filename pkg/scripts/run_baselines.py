"""Print the two constant baselines on the released test splits.

Usage:
    python scripts/run_baselines.py --data-dir /path/to/data

The data directory holds task-1/ and task-2/ with train.csv, dev.csv,
test.csv (and optionally train_funlines.csv). Defaults to
$HEADLINE_HUMOR_DATA_DIR.
"""

import argparse
import os
import sys

from headline_humor.engine import (
    DATA_DIR_ENV,
    baseline_task1_report,
    baseline_task2_report,
    load_split,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default=os.environ.get(DATA_DIR_ENV))
    args = parser.parse_args()
    if not args.data_dir:
        print(f"error: pass --data-dir or set ${DATA_DIR_ENV}", file=sys.stderr)
        return 1

    report1 = baseline_task1_report(
        load_split(args.data_dir, 1, "train"), load_split(args.data_dir, 1, "test")
    )
    print("constant mean-grade prediction on the subtask 1 test split")
    print(report1.render_text())
    print()
    report2 = baseline_task2_report(
        load_split(args.data_dir, 2, "train"), load_split(args.data_dir, 2, "test")
    )
    print("constant majority-label prediction on the subtask 2 test split")
    print(report2.render_text())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
