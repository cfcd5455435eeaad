"""Command-line interface: train, evaluate, grid, predict, report.

Every flag maps one-to-one onto a config key; a flat JSON config file can
supply any subset and explicit flags override it. Exit code is 0 on
success, 1 with a single diagnostic line on stderr otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import metrics
from .engine import (
    DATA_DIR_ENV,
    EngineError,
    ExperimentConfig,
    evaluate,
    export_predictions,
    load_instances,
    load_split,
    train,
)
from .grid import GridSpec, TaskData, run_grid, write_grid_outputs

CONFIG_FLAGS = {
    "subtask": int,
    "encoder": str,
    "transfer": str,
    "feature": str,
    "extra": bool,
    "lr": float,
    "schedule": str,
    "epochs": int,
    "batch_size": int,
    "clip": float,
    "seed": int,
    "selection": str,
    "embeddings": str,
    "embedding_dim": int,
    "out": str,
}

# CLI flag name -> ExperimentConfig field
FLAG_TO_FIELD = {
    "extra": "use_extra",
    "lr": "learning_rate",
    "epochs": "max_epochs",
    "clip": "clip_norm",
    "out": "out_dir",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--subtask", type=int, choices=(1, 2))
    parser.add_argument("--encoder", help="'table', 'toy...', or a backend id")
    parser.add_argument("--transfer", choices=("freeze", "finetune"))
    parser.add_argument("--feature", choices=("context", "original", "edit"))
    parser.add_argument(
        "--extra", action=argparse.BooleanOptionalAction, default=None,
        help="append the extra training split",
    )
    parser.add_argument("--lr", type=float)
    parser.add_argument("--schedule", choices=("constant", "linear-decay"))
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--clip", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--selection", choices=("best", "last"))
    parser.add_argument("--embeddings", help="path to the word-vector text file")
    parser.add_argument("--embedding-dim", type=int, dest="embedding_dim")
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--out", help="output directory")


def _merge_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if args.config:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(loaded, dict):
            raise EngineError("config file must hold a flat JSON object")
        for key, value in loaded.items():
            field = FLAG_TO_FIELD.get(key, key)
            values[field] = value
    for flag in CONFIG_FLAGS:
        value = getattr(args, flag, None)
        if value is not None:
            values[FLAG_TO_FIELD.get(flag, flag)] = value
    known = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}
    unknown = set(values) - known
    if unknown:
        raise EngineError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**values)


def _cmd_train(args: argparse.Namespace) -> int:
    config = _merge_config(args)
    train_rows = load_instances(args.train, config.subtask)
    dev_rows = load_instances(args.dev, config.subtask)
    if config.use_extra:
        if not args.extra_csv:
            raise EngineError("--extra given but no --extra-csv path")
        train_rows = train_rows + load_instances(args.extra_csv, config.subtask)
    record = train(config, train_rows, dev_rows)
    print(f"config {record.config_hash[:12]}  {record.selection_metric}")
    for event in record.history:
        print(f"  step {event.step:>6}  epoch {event.epoch:6.2f}  {event.value:.4f}")
    print(f"best {record.selection_metric} {record.best_value:.4f} at step {record.best_step}")
    print(f"checkpoint: {record.checkpoint_path}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    from .engine import load_checkpoint

    payload = load_checkpoint(args.checkpoint)
    split = load_instances(args.data, payload["subtask"])
    report = evaluate(payload, split)
    text = report.render_text()
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
        out.with_suffix(".json").write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    path = export_predictions(
        args.checkpoint, args.input, args.out, clamp=args.clamp
    )
    print(f"wrote {path}")
    return 0


def _load_task_data(args: argparse.Namespace, subtask: int) -> TaskData:
    root = args.data_dir
    if root is None:
        raise EngineError(
            f"grid needs --data-dir (or ${DATA_DIR_ENV}) pointing at the task files"
        )
    extra = []
    try:
        extra = load_split(root, subtask, "extra")
    except FileNotFoundError:
        pass
    return TaskData(
        train=load_split(root, subtask, "train"),
        dev=load_split(root, subtask, "dev"),
        test=load_split(root, subtask, "test"),
        extra=extra,
    )


def _cmd_grid(args: argparse.Namespace) -> int:
    spec_dict = {}
    if args.config:
        spec_dict = json.loads(Path(args.config).read_text(encoding="utf-8"))
    spec = GridSpec.from_dict(spec_dict)
    if args.seed is not None:
        spec.base.seed = args.seed
    if args.embeddings is not None:
        spec.base.embeddings = args.embeddings
    data = {subtask: _load_task_data(args, subtask) for subtask in spec.subtasks}
    out_dir = Path(args.out or "grid-runs")
    result = run_grid(spec, data, out_dir)
    table_path, json_path = write_grid_outputs(result, out_dir)
    print(result.render_table())
    print(f"\nwrote {table_path} and {json_path}")
    return 0


def _read_predictions(path: str, subtask: int) -> dict[str, float]:
    out: dict[str, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as stream:
        reader = csv.reader(stream)
        header = next(reader)
        if [h.strip() for h in header[:2]] != ["id", "pred"]:
            raise EngineError(f"{path}: expected an 'id,pred' header")
        for row in reader:
            if not row:
                continue
            out[row[0]] = float(row[1]) if subtask == 1 else int(row[1])
    return out


def _cmd_report(args: argparse.Namespace) -> int:
    subtask = args.subtask
    gold_rows = load_instances(args.gold, subtask)
    systems: dict[str, dict] = {}
    for item in args.pred:
        name, _, path = item.partition("=")
        if not path:
            raise EngineError(f"--pred wants NAME=PATH, got {item!r}")
        systems[name] = _read_predictions(path, subtask)

    chunks: list[str] = []
    if subtask == 1:
        gold = {inst.id: inst.mean_grade for inst in gold_rows}
        if any(v is None for v in gold.values()):
            raise EngineError("gold file has unlabeled rows")
        vectors: dict[str, list[float]] = {"Human": [gold[i] for i in gold]}
        for name, preds in systems.items():
            missing = [i for i in gold if i not in preds]
            if missing:
                raise EngineError(f"{name}: missing predictions for {len(missing)} ids")
            vectors[name] = [preds[i] for i in gold]
            report = metrics.task1_report(vectors[name], vectors["Human"])
            chunks.append(f"[{name}]\n{report.render_text()}")
        if len(systems) >= 2:
            matrix = metrics.correlation_matrix(vectors)
            chunks.append(
                "correlation (Pearson below the diagonal, rank above)\n"
                + matrix.render_text()
            )
    else:
        gold_labels = {}
        gold_z = {}
        for pair in gold_rows:
            if pair.label is None:
                raise EngineError("gold file has unlabeled rows")
            gold_labels[pair.pair_id] = pair.label
            gold_z[pair.pair_id] = (pair.first.mean_grade, pair.second.mean_grade)
        for name, preds in systems.items():
            missing = [i for i in gold_labels if i not in preds]
            if missing:
                raise EngineError(f"{name}: missing predictions for {len(missing)} ids")
            ordered = list(gold_labels)
            graded = all(
                z[0] is not None and z[1] is not None for z in gold_z.values()
            )
            if graded:
                report = metrics.task2_report(
                    [gold_labels[i] for i in ordered],
                    [preds[i] for i in ordered],
                    [gold_z[i][0] for i in ordered],
                    [gold_z[i][1] for i in ordered],
                )
            else:
                report = metrics.task2_report(
                    [gold_labels[i] for i in ordered], [preds[i] for i in ordered]
                )
            chunks.append(f"[{name}]\n{report.render_text()}")

    text = "\n\n".join(chunks)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="headline-humor",
        description="Train and evaluate funniness scorers for micro-edited headlines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one configuration")
    _add_config_flags(p_train)
    p_train.add_argument("--train", required=True, help="training CSV")
    p_train.add_argument("--dev", required=True, help="development CSV")
    p_train.add_argument("--extra-csv", dest="extra_csv", help="extra training CSV")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a labeled split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, help="labeled CSV")
    p_eval.add_argument("--out", help="write the text/JSON report here")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_grid = sub.add_parser("grid", help="run an ablation grid")
    p_grid.add_argument("--config", help="grid spec JSON")
    p_grid.add_argument("--data-dir", dest="data_dir", default=None)
    p_grid.add_argument("--seed", type=int)
    p_grid.add_argument("--embeddings")
    p_grid.add_argument("--out")
    p_grid.set_defaults(func=_cmd_grid)

    p_pred = sub.add_parser("predict", help="export official-format predictions")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--input", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--clamp", action="store_true", help="clamp scores to [0, 3]")
    p_pred.set_defaults(func=_cmd_predict)

    p_rep = sub.add_parser("report", help="metrics and correlation across systems")
    p_rep.add_argument("--subtask", type=int, choices=(1, 2), required=True)
    p_rep.add_argument("--gold", required=True, help="labeled CSV")
    p_rep.add_argument(
        "--pred", action="append", required=True, metavar="NAME=PATH",
        help="prediction file; repeat for several systems",
    )
    p_rep.add_argument("--out")
    p_rep.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "data_dir", "sentinel") is None:
        import os

        args.data_dir = os.environ.get(DATA_DIR_ENV)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
