"""Command-line entry point: ``rpcate {generate,train,evaluate,gridsearch,export-attention}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Set ``RPCATE_LOG`` (DEBUG, INFO, WARNING, ...) for log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config, with_overrides
from .data import DataError, load_csv, save_csv
from .metrics import AttentionMap, MetricError, export_attention
from .model import ABLATIONS, RESIDUAL_MODES, load_checkpoint, save_checkpoint
from .plotting import loss_curve
from .training import evaluate, grid_search, train, write_grid_csv, write_loss_history

logger = logging.getLogger("rpcate")


def _report_rows(split: str, reports) -> list:
    return [{"split": split, **r.to_dict()} for r in reports]


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, seed=args.seed, out=args.out,
                         ablation=getattr(args, "ablation", None), residual=getattr(args, "residual", None))
    return cfg.validate()


def cmd_generate(args) -> int:
    cfg = _config(args)
    if cfg.generator is None:
        raise ConfigError("generate needs a data.generator block")
    d = cfg.load_data()
    out = Path(cfg.out)
    path = out if out.suffix == ".csv" else out / "data.csv"
    save_csv(d, path)
    print(f"{path}\t{d.m} rows")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    d_train, d_eval = cfg.load_splits()
    hp = cfg.hyperparams(cfg.x_prime(d_train))
    if d_train.m < hp.w:
        raise ConfigError(f"training split has {d_train.m} samples, fewer than window size w={hp.w}")
    if d_eval.m < hp.w:
        raise ConfigError(f"evaluation split has {d_eval.m} samples, fewer than window size w={hp.w}")
    out = Path(cfg.out)
    save_csv(d_train, out / "train.csv")
    save_csv(d_eval, out / "eval.csv")
    logger.info("training %s on %d samples (w=%d, N=%d, lr=%g, epochs=%d)",
                hp.ablation, d_train.m, hp.w, hp.N, hp.lr, hp.epochs)
    result = train(d_train, hp, scale=cfg.scale_features)
    save_checkpoint(result.model, out / "checkpoint.json")
    write_loss_history(result.history, out / "loss_history.csv")
    loss_curve(result.history, out / "loss_curve.svg")
    rows = _report_rows("train", evaluate(result.model, d_train)) + _report_rows("eval", evaluate(result.model, d_eval))
    _write_json(rows, out / "metrics.json")
    _write_json(hp.to_dict(), out / "hyperparams.json")
    print(json.dumps(rows, indent=2))
    print(f"wrote {out}")
    return 0


def _load_eval(args):
    model = load_checkpoint(args.checkpoint)
    d = load_csv(args.data)
    if d.n != model.n_features:
        raise DataError(f"dataset {args.data} has {d.n} features but checkpoint {args.checkpoint} "
                        f"expects {model.n_features}")
    return model, d


def cmd_evaluate(args) -> int:
    model, d = _load_eval(args)
    rows = _report_rows("eval", evaluate(model, d))
    print(json.dumps(rows, indent=2))
    if args.out:
        _write_json(rows, Path(args.out) / "metrics.json")
    return 0


def cmd_gridsearch(args) -> int:
    cfg = _config(args)
    d_train, d_eval = cfg.load_splits()
    hp = cfg.hyperparams(cfg.x_prime(d_train))
    try:
        result = grid_search(d_train, d_eval, hp, cfg.grid, jobs=args.jobs, scale=cfg.scale_features)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg.out)
    write_grid_csv(result, out / "grid.csv")
    failures = [{"w": c.hp.w, "N": c.hp.N, "lr": c.hp.lr, "error": c.error} for c in result.cells if c.status != "ok"]
    if failures:
        _write_json(failures, out / "grid_failures.json")
    print((out / "grid.csv").read_text(encoding="utf-8"), end="")
    if result.best is None:
        logger.error("every grid cell failed")
        return 1
    _write_json(result.best.hp.to_dict(), out / "best_hyperparams.json")
    b = result.best
    print(f"best: w={b.hp.w} N={b.hp.N} lr={b.hp.lr} seed={b.hp.seed} MIR={b.report.mir_percent:.2f}%")
    return 0


def cmd_export_attention(args) -> int:
    model, d = _load_eval(args)
    _, maps = model.predict(d)
    paths = export_attention(AttentionMap(maps, list(d.feature_names)), Path(args.out) / "attention")
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpcate", description="RP-CATE hybrid residual modeling")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", metavar="PATH", help="YAML/JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="DIR")

    p = sub.add_parser("generate", help="write a synthetic CSV dataset")
    with_config(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train, write checkpoint, loss history and metrics")
    with_config(p)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--residual", choices=RESIDUAL_MODES)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="train over the (w, N, lr) grid")
    with_config(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--residual", choices=RESIDUAL_MODES)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("export-attention", help="attention maps as CSV and SVG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_export_attention)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("RPCATE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.exit(2, f"rpcate: config error: {exc}\n")
    except (DataError, MetricError, OSError, ValueError, RuntimeError) as exc:
        print(f"rpcate: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
