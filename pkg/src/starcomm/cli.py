"""Command line entry point: ``starcomm <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments as ex
from .config import RunConfig, desk_mnist_config


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _load_config(args) -> RunConfig | None:
    if args.config == "desk-mnist":
        cfg = desk_mnist_config()
    elif args.config:
        cfg = RunConfig.load(args.config)
    else:
        return None
    return _override(cfg, args)


def _override(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "fusion", None):
        cfg.model.fusion = args.fusion
    return cfg.validate()


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file, or 'desk-mnist' for the builtin desk setup")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="starcomm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="export the configured task to disk")
    _common(p)

    p = sub.add_parser("train", help="run the three-stage schedule")
    _common(p)
    p.add_argument("--comm", choices=("sparse", "complete"), help="communication used in stage 3")
    p.add_argument("--fusion", choices=("pooled", "concat"))
    p.add_argument("--stages", type=_ints, default=(1, 2, 3), help="comma list, e.g. 3")
    p.add_argument("--init", help="checkpoint to initialize from (e.g. a stage-2 checkpoint)")

    for name, help_ in (("eval", "team accuracy at one team size"),
                        ("scalability", "accuracy across team sizes"),
                        ("robustness", "accuracy after mid-episode robot loss"),
                        ("timing", "shortest episode reaching an accuracy threshold")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--fusion", choices=("pooled", "concat"))
    sub.choices["eval"].add_argument("--robots", type=int)
    sub.choices["eval"].add_argument("--horizon", type=int)
    sub.choices["eval"].add_argument("--comm", choices=("sparse", "complete", "off"), default="sparse")
    sub.choices["eval"].add_argument("--dump-graphs", action="store_true",
                                     help="write graphs.txt with one 't i j' edge per line")
    sub.choices["scalability"].add_argument("--robots", type=_ints)
    sub.choices["scalability"].add_argument("--complete-checkpoint")
    sub.choices["robustness"].add_argument("--robots", type=int)
    sub.choices["robustness"].add_argument("--fractions", type=_floats)
    sub.choices["timing"].add_argument("--robots", type=_ints)
    sub.choices["timing"].add_argument("--threshold", type=float)
    sub.choices["timing"].add_argument("--max-horizon", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    cfg = _load_config(args)
    if args.command == "dataset":
        cfg = cfg or RunConfig()
        print(ex.cmd_dataset(cfg, args.out or cfg.out_dir))
        return 0
    if args.command == "train":
        cfg = cfg or RunConfig()
        if args.comm:
            cfg.train.comm = args.comm
        if cfg.train.comm == "complete":
            cfg.model.bank_size = cfg.eval.complete_max_robots - 1
        ckpt = ex.cmd_train(cfg, args.out or cfg.out_dir, stages=args.stages, init=args.init)
        print(json.dumps({"epoch": ckpt.epoch, "out": args.out or cfg.out_dir, "config_hash": cfg.digest()}))
        return 0
    if cfg is None and args.fusion:
        cfg = _override(ex.load_checkpoint(args.checkpoint).config, args)
    out = args.out
    if args.command == "eval":
        rep = ex.cmd_eval(args.checkpoint, cfg, n_robots=args.robots, horizon=args.horizon, comm=args.comm,
                          out=out, dump_graphs=args.dump_graphs)
    elif args.command == "scalability":
        rep = ex.cmd_scalability(args.checkpoint, cfg, robots=args.robots,
                                 complete_ckpt=args.complete_checkpoint, out=out)
    elif args.command == "robustness":
        rep = ex.cmd_robustness(args.checkpoint, cfg, n_robots=args.robots, fractions=args.fractions, out=out)
    else:
        rep = ex.cmd_timing(args.checkpoint, cfg, robots=args.robots, threshold=args.threshold,
                            max_horizon=args.max_horizon, out=out)
    print(json.dumps(rep, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
