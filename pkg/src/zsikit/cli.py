"""``zsikit`` command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 I/O or parse error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import annotations as ann
from . import metrics, synthlab
from .maskgeom import MaskError
from .semheads import (
    EmbeddingError,
    LossConfig,
    ProblemSizes,
    TrainConfig,
    gradient_check,
    init_params,
    load_embeddings,
    random_problem,
)
from .semheads.train import DivergenceError

DATA_ENV = "ZSIKIT_DATA_DIR"
EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def resolve(path: str | None) -> Path | None:
    """Input path, falling back to ``$ZSIKIT_DATA_DIR/<path>`` for relative paths."""
    if path is None:
        return None
    p = Path(path)
    base = os.environ.get(DATA_ENV)
    if not p.is_absolute() and not p.exists() and base:
        q = Path(base) / p
        if q.exists():
            return q
    return p


def _split_arg(value: str) -> ann.ClassSplit:
    if value in ann.BUILTIN_SPLITS:
        return ann.load_split(value)
    return ann.load_split(str(resolve(value)))


def _floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or not all(0.0 < v <= 1.0 for v in vals):
        raise argparse.ArgumentTypeError("IoU thresholds must lie in (0, 1]")
    return vals


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _non_negative(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return v


def _write(path: str | Path, data: bytes) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _table(header: list[str], rows: list[list], out=None) -> None:
    out = out or sys.stdout
    cells = [header] + [[f"{c:.4f}" if isinstance(c, float) else str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for k, r in enumerate(cells):
        print("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))), file=out)
        if k == 0:
            print("  ".join("-" * w for w in widths), file=out)


# -- split ------------------------------------------------------------------


def cmd_split(args) -> int:
    data = ann.load_dataset(resolve(args.annotations))
    split = _split_arg(args.split)
    if not data.annotations:
        print(f"warning: {args.annotations} has no annotations; writing empty splits", file=sys.stderr)
    train = ann.build_training_set(data, split)
    test = ann.build_test_set(data, split)
    out = Path(args.out)
    _write(out / "train.json", ann.serialize_dataset(train))
    _write(out / "test.json", ann.serialize_dataset(test))

    tr = {n: (i, k) for n, i, k in ann.split_summary(train)}
    te = {n: (i, k) for n, i, k in ann.split_summary(test)}
    rows = []
    for c in data.categories:
        role = split.role(c.name)
        if role is None:
            continue
        rows.append([c.name, role, *tr.get(c.name, (0, 0)), *te.get(c.name, (0, 0))])
    print(f"split {split.name}: train {len(train.images)} images / {len(train.annotations)} instances, "
          f"test {len(test.images)} images / {len(test.annotations)} instances")
    if rows:
        _table(["class", "role", "train img", "train inst", "test img", "test inst"], rows)
    return EXIT_OK


# -- eval -------------------------------------------------------------------


def _report_rows(rep: metrics.EvalReport, thresholds):
    def row(label, r):
        return [label] + [100 * r.recall[t] for t in thresholds] + [100 * r.map]

    if rep.seen is None:
        return [row(rep.setting, rep)]
    hm = [100 * rep.hm["recall"][t] for t in thresholds] + [100 * rep.hm["map"]]
    return [row("seen", rep.seen), row("unseen", rep.unseen), ["HM"] + hm]


def cmd_eval(args) -> int:
    test = ann.load_dataset(resolve(args.annotations))
    preds = metrics.load_predictions(resolve(args.predictions))
    split = _split_arg(args.split)
    setting = metrics.EvalSetting.from_name(args.setting)
    rep = metrics.evaluate(test, preds, split, setting, top_k=args.top_k, thresholds=args.iou_thresholds)
    thresholds = sorted(set(args.iou_thresholds))
    header = [setting.name.upper()] + [f"Recall@{args.top_k} IoU={t:g}" for t in thresholds] + [
        f"mAP IoU={rep.ap_threshold:g}"
    ]
    _table(header, _report_rows(rep, thresholds))
    if args.out:
        _write(args.out, _json_bytes(rep.to_dict()))
    return EXIT_OK


# -- gradcheck --------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    sizes = ProblemSizes(
        batch=args.batch, visual=args.visual_dim, channels=args.channels, mask=args.mask_size,
        semantic=args.semantic_dim,
    )
    table = None
    if args.embeddings:
        split = _split_arg(args.split)
        table = load_embeddings(resolve(args.embeddings), split.seen, split.unseen, dim=args.semantic_dim)
        sizes = dataclasses.replace(sizes, seen=len(split.seen), unseen=len(split.unseen))
    rows, record, ok = [], [], True
    for seed in range(args.seed, args.seed + args.seeds):
        batch, params, w = random_problem(seed, sizes)
        if table is not None:
            rng = np.random.default_rng([seed, 1])
            w = table
            params = init_params(sizes.visual, sizes.channels, w, rng, scale=0.1)
        for r in gradient_check(batch, params, w, LossConfig(), seed=seed, corrupt=args.corrupt):
            ok &= r.passed
            rows.append([seed, r.name, f"{r.rel_error:.3e}", r.analytic_norm, "pass" if r.passed else "FAIL"])
            record.append({"seed": seed, **dataclasses.asdict(r)})
    _table(["seed", "block", "rel error", "|grad|", "result"], rows)
    print("all blocks pass" if ok else "gradient check FAILED")
    if args.out:
        _write(args.out, _json_bytes({"tolerance": 1e-4, "passed": bool(ok), "checks": record}))
    return EXIT_OK if ok else EXIT_INVALID


# -- toytrain ---------------------------------------------------------------


def cmd_toytrain(args) -> int:
    if args.config:
        scenario, training = synthlab.load_config(resolve(args.config))
    else:
        scenario, training = synthlab.default_config()
    if args.one_hot:
        scenario = dataclasses.replace(scenario, embedding="one-hot")
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    if args.steps is not None:
        training = dataclasses.replace(training, steps=args.steps)
    report = synthlab.run_transfer_experiment(scenario, training)
    checks = synthlab.check_thresholds(report, scenario.embedding)
    if training.steps == 0:
        # nothing was learned, so the background shift criterion does not apply
        checks = [c for c in checks if c[0] != "v_b_shift"]
    _table(
        ["embedding", "steps", "seen acc", "unseen acc", "chance", "indep. p"],
        [[scenario.embedding, training.steps, report.seen_accuracy, report.unseen_accuracy, report.chance,
          report.independence_p]],
    )
    print()
    _table(["criterion", "value", "bound", "result"], [[n, float(v), float(b), "pass" if ok else "FAIL"]
                                                       for n, v, b, ok in checks])
    passed = all(c[3] for c in checks)
    if args.out:
        out = report.to_dict()
        out.update(
            scenario=scenario.to_dict(),
            training={"steps": training.steps, "lr": training.lr, "momentum": training.momentum},
            checks=[{"criterion": n, "value": float(v), "bound": float(b), "passed": bool(ok)} for n, v, b, ok in checks],
            passed=passed,
        )
        _write(args.out, _json_bytes(out))
    return EXIT_OK if passed else EXIT_INVALID


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zsikit", description="Zero-shot instance segmentation toolkit.")
    p.epilog = f"Relative input paths that do not exist are also looked up under ${DATA_ENV}."
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("split", help="write seen-only train and unseen-bearing test annotation files")
    s.add_argument("--annotations", required=True)
    s.add_argument("--split", default="48/17", help="48/17, 65/15 or a JSON split file")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_split)

    e = sub.add_parser("eval", help="score predictions in one of the zero-shot settings")
    e.add_argument("--annotations", required=True, help="test-set ground truth (COCO JSON)")
    e.add_argument("--predictions", required=True, help="COCO results JSON")
    e.add_argument("--split", default="48/17")
    e.add_argument("--setting", choices=sorted(metrics.SETTINGS), required=True)
    e.add_argument("--iou-thresholds", type=_floats, default=metrics.DEFAULT_THRESHOLDS)
    e.add_argument("--top-k", type=_positive, default=metrics.DEFAULT_TOP_K)
    e.add_argument("--out", help="JSON report path")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every parameter block")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--seeds", type=_positive, default=3, help="number of consecutive seeds")
    g.add_argument("--batch", type=_positive, default=6)
    g.add_argument("--visual-dim", type=_positive, default=24)
    g.add_argument("--channels", type=_positive, default=5)
    g.add_argument("--mask-size", type=_positive, default=6)
    g.add_argument("--semantic-dim", type=_positive, default=300)
    g.add_argument("--embeddings", help="word2vec text file; uses the split's classes for the table")
    g.add_argument("--split", default="48/17")
    g.add_argument("--out", help="JSON result path")
    g.add_argument("--corrupt", help=argparse.SUPPRESS)  # fault injection for tests
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("toytrain", help="synthetic zero-shot transfer experiment")
    t.add_argument("--config", help="scenario/training JSON (default: shipped scenario)")
    t.add_argument("--one-hot", action="store_true", help="replace embeddings with one-hot vectors")
    t.add_argument("--steps", type=_non_negative)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="JSON report path")
    t.set_defaults(func=cmd_toytrain)
    return p


_INVALID = (
    ann.IntegrityError, ann.SplitError, metrics.EvaluationError, MaskError, EmbeddingError,
    synthlab.ScenarioError, DivergenceError, KeyError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ann.AnnotationParseError, metrics.PredictionParseError, json.JSONDecodeError, UnicodeDecodeError, OSError) as exc:
        print(f"zsikit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _INVALID as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"zsikit {args.command}: invalid input: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
