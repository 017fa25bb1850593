"""Command line entry point: ``influence-select <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .dataset import save_svmlight, synth_generate
from .harness import (
    OUTPUT_ENV,
    emit_report,
    load_config,
    load_splits,
    prepare_sst2,
    read_report,
    run_experiment,
)
from .influence import influence_matrix, load_influence, save_influence
from .model import save_model, train
from .selection import METHODS, run_method, write_scores_csv


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="override the selection / synth seed")
    p.add_argument("--threads", type=int, default=1, help="worker cap for influence solves")
    p.add_argument("--out", default=None,
                   help=f"output directory (default: config output_dir, ${OUTPUT_ENV}, or ./runs)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="influence-select", parents=[common],
                                     description="Influence-based training subset selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a full experiment")
    p.add_argument("--config", required=True)

    p = sub.add_parser("score", parents=[common], help="train and write influence.bin")
    p.add_argument("--config", required=True)

    p = sub.add_parser("select", parents=[common], help="score candidates with one method")
    p.add_argument("--method", required=True, choices=METHODS)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--influence", help="a saved influence.bin")
    p.add_argument("--scoring-mode", choices=("rectified", "literal"))
    p.add_argument("--direction-mode", choices=("label", "threshold"))
    p.add_argument("--tau", type=float)
    p.add_argument("--quantile", type=float, help="method 3 top quantile")

    p = sub.add_parser("report", parents=[common], help="re-render a report")
    p.add_argument("--input", required=True, help="report.csv or report.json")
    p.add_argument("--format", choices=("csv", "json", "markdown"), default="markdown")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic svmlight dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--name", default="synth.svm")

    p = sub.add_parser("prepare-sst2", parents=[common],
                       help="split sentence-level SST-2 files into experiment roles")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    return parser


def _out_dir(args, default: str = "runs") -> Path:
    return Path(args.out or os.environ.get(OUTPUT_ENV, default))


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    rows = run_experiment(cfg, out_dir=args.out, threads=args.threads, seed=args.seed)
    sys.stdout.write(emit_report(rows, "markdown"))
    return 0


def _cmd_score(args) -> int:
    cfg = load_config(args.config)
    splits = load_splits(cfg)
    model = train(splits.train, cfg.train)
    model = dataclasses.replace(model, vocab_digest=splits.vocab_digest)
    infl = influence_matrix(model, splits.train, splits.additional, splits.validation,
                            cfg.solver, threads=args.threads)
    out = Path(args.out) if args.out else Path(cfg.output_dir or os.environ.get(OUTPUT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    save_influence(infl, out / "influence.bin")
    save_model(model, out / "model.bin")
    print(f"wrote {out / 'influence.bin'} ({infl.shape[0]} x {infl.shape[1]})")
    return 0


def _cmd_select(args) -> int:
    pool = model = None
    if args.influence:
        infl = load_influence(args.influence)
        sel_cfg = _selection_overrides(None, args)
    else:
        cfg = load_config(args.config)
        splits = load_splits(cfg)
        model = train(splits.train, cfg.train)
        pool = splits.additional
        infl = influence_matrix(model, splits.train, pool, splits.validation, cfg.solver,
                                threads=args.threads)
        sel_cfg = _selection_overrides(cfg.selection, args)
    scores, selection = run_method(args.method, infl, sel_cfg, pool, model)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"scores_{args.method}.csv"
    write_scores_csv(scores, selection, path)
    print(f"{args.method}: selected {len(selection)} of {selection.n_candidates} "
          f"({100 * selection.added_fraction:.1f}%) -> {path}")
    return 0


def _selection_overrides(base, args):
    from .selection import SelectionConfig
    base = base or SelectionConfig()
    changes = {k: v for k, v in {
        "scoring_mode": args.scoring_mode, "direction_mode": args.direction_mode,
        "tau": args.tau, "method3_quantile": args.quantile, "seed": args.seed,
    }.items() if v is not None}
    return dataclasses.replace(base, **changes)


def _cmd_report(args) -> int:
    rows = read_report(args.input)
    ext = {"csv": "csv", "json": "json", "markdown": "md"}[args.format]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        emit_report(rows, args.format, out / f"report.{ext}")
    else:
        sys.stdout.write(emit_report(rows, args.format))
    return 0


def _cmd_synth(args) -> int:
    data = synth_generate(args.n, args.p, args.seed if args.seed is not None else 0,
                          args.separation, args.label_noise)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_svmlight(data, out / args.name)
    print(f"wrote {out / args.name}")
    return 0


def _cmd_prepare(args) -> int:
    path = prepare_sst2(args.train, args.dev, args.test, _out_dir(args, "data/sst2"),
                        seed=args.seed if args.seed is not None else 0)
    print(f"wrote {path}")
    return 0


_COMMANDS = {"run": _cmd_run, "score": _cmd_score, "select": _cmd_select,
             "report": _cmd_report, "synth": _cmd_synth, "prepare-sst2": _cmd_prepare}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # one-line diagnostic, no traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
