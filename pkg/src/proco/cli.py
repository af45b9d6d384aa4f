"""Command-line entry point.

Exit codes: 0 success, 1 failed verification suite or diverged training,
2 usage error (bad flags, invalid spec, missing files). Reports are JSON,
per-epoch series are CSV. Output goes to ``--out`` or, when absent, to the
directory named by ``PROCO_OUT_DIR`` (default ``proco_out``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import verify
from .datagen import LongTailSpec, generate, read_dataset, write_dataset
from .harness import (
    LONG_TAIL_TRAIN,
    PseudoLabelConfig,
    TrainConfig,
    TrainingDiverged,
    long_tail_comparison,
    split_labels,
    train,
    train_semisup,
)

OUT_ENV = "PROCO_OUT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "proco_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _args_echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    try:
        spec = LongTailSpec(
            n_classes=args.classes,
            n_max=args.n_max,
            gamma=args.gamma,
            p_raw=args.p_raw,
            n_test_per_class=args.n_test,
            generator=args.generator,
            kappa=args.kappa,
            noise=args.noise,
            min_angle_deg=args.min_angle,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ds = generate(spec)
    paths = write_dataset(ds, _out_dir(args))
    print(f"wrote {len(ds.y_train)} training and {len(ds.y_test)} test samples to {paths['meta'].parent}")
    print(f"class counts: {ds.counts.tolist()}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = Path(args.data)
    if not (data / "dataset.json").is_file():
        raise UsageError(f"no dataset at {data} (expected dataset.json, train.csv, test.csv)")
    try:
        ds = read_dataset(data)
        cfg = TrainConfig(
            alpha=args.alpha,
            tau=args.tau,
            p=args.p,
            hidden=args.hidden,
            projection=args.projection,
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr=args.lr,
            momentum=args.momentum,
            weight_decay=args.weight_decay,
            seed=args.seed,
        )
        pl_cfg = PseudoLabelConfig(threshold=args.threshold)
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    try:
        if args.semisup:
            labelled, unlabelled = split_labels(ds, args.label_fraction, np.random.default_rng(args.seed))
            _, report, _ = train_semisup(ds, labelled, unlabelled, cfg, pl_cfg)
        else:
            _, report, _ = train(ds, cfg)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report.config["args"] = _args_echo(args)
    out = _out_dir(args)
    report.write(out / "report.json")
    csv_path = out / "epochs.csv"
    csv_path.unlink(missing_ok=True)
    report.append_epochs_csv(csv_path)
    groups = ", ".join(f"{g}={a:.3f}" for g, a in report.group_accuracy.items())
    print(f"accuracy {report.overall_accuracy:.3f} ({groups}); report at {out / 'report.json'}")
    if report.pseudo_label is not None:
        print(f"pseudo-labels accepted {report.pseudo_label['accepted']}, precision {report.pseudo_label['precision']}")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    results = verify.run(names, seed=args.seed, samples=args.samples)
    for r in results:
        print(r.line())
    payload = {"config": _args_echo(args), "seed": args.seed, "results": [r.to_dict() for r in results]}
    _write_json(_out_dir(args) / "verify.json", payload)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_longtail(args) -> int:
    rep = long_tail_comparison(
        seeds=range(args.seed, args.seed + args.seeds),
        train_kw={"epochs": args.epochs, "p": args.p},
    )
    for seed, a, b in zip(rep.seeds, rep.few_with, rep.few_without):
        print(f"seed {seed}: few-shot accuracy alpha=1 {a:.3f}, alpha=0 {b:.3f}")
    print(f"mean few-shot accuracy alpha=1 {rep.mean_few_with:.4f}, alpha=0 {rep.mean_few_without:.4f}")
    payload = {"config": _args_echo(args), **rep.to_dict()}
    _write_json(_out_dir(args) / "longtail.json", payload)
    return EXIT_OK if rep.improved else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proco", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    defaults = LongTailSpec()
    g = sub.add_parser("gen", help="write a synthetic long-tailed dataset")
    g.add_argument("--classes", type=int, default=defaults.n_classes)
    g.add_argument("--n-max", type=int, default=defaults.n_max)
    g.add_argument("--gamma", type=float, default=defaults.gamma, help="imbalance factor, >= 1")
    g.add_argument("--p-raw", type=int, default=defaults.p_raw)
    g.add_argument("--n-test", type=int, default=defaults.n_test_per_class, help="test samples per class")
    g.add_argument("--generator", choices=("vmf", "gaussian"), default=defaults.generator)
    g.add_argument("--kappa", type=float, default=defaults.kappa)
    g.add_argument("--noise", type=float, default=defaults.noise)
    g.add_argument("--min-angle", type=float, default=defaults.min_angle_deg, help="degrees between class means")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    tc = TrainConfig()
    t = sub.add_parser("train", help="train the toy model on a generated dataset")
    t.add_argument("--data", required=True, help="directory written by 'gen'")
    t.add_argument("--alpha", type=float, default=tc.alpha)
    t.add_argument("--tau", type=float, default=tc.tau)
    t.add_argument("--p", type=int, default=tc.p)
    t.add_argument("--hidden", type=int, default=tc.hidden)
    t.add_argument("--projection", action="store_true")
    t.add_argument("--epochs", type=int, default=tc.epochs)
    t.add_argument("--batch-size", type=int, default=tc.batch_size)
    t.add_argument("--lr", type=float, default=tc.lr)
    t.add_argument("--momentum", type=float, default=tc.momentum)
    t.add_argument("--weight-decay", type=float, default=tc.weight_decay)
    t.add_argument("--semisup", action="store_true")
    t.add_argument("--label-fraction", type=float, default=0.1)
    t.add_argument("--threshold", type=float, default=PseudoLabelConfig().threshold)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="run the numerical verification suites")
    v.add_argument("--suite", choices=("all", *verify.SUITES), default="all")
    v.add_argument("--samples", type=int, default=None, help="Monte Carlo sample size (suite default if omitted)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    lt = sub.add_parser("longtail", help="compare alpha=1 with alpha=0 on the K=20, gamma=100 split")
    lt.add_argument("--seeds", type=int, default=5)
    lt.add_argument("--seed", type=int, default=0, help="first seed")
    lt.add_argument("--epochs", type=int, default=LONG_TAIL_TRAIN["epochs"])
    lt.add_argument("--p", type=int, default=LONG_TAIL_TRAIN["p"])
    lt.add_argument("--out")
    lt.set_defaults(func=cmd_longtail)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
