"""Command-line entry point.

    fedks generate  [--preset desk] [--out dataset.ksds]
    fedks pod       --dataset D
    fedks train     --dataset D --mode {central,federated} --transport {inproc,socket}
    fedks serve     --dataset D --listen HOST:PORT
    fedks client    --dataset D --connect HOST:PORT --shard I
    fedks evaluate  --dataset D --checkpoint METHOD=PATH [...]

Every configuration key is also a flag (``--t-production 625``); flags
override ``--config`` files, which override ``--preset``.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import InvalidArgument
from .commands import (
    cmd_client,
    cmd_evaluate,
    cmd_generate,
    cmd_pod,
    cmd_train,
    evaluate,
    evaluate_checkpoint,
    generate_splits,
    pod_table,
    train_model,
)
from .config import PRESETS, ExperimentConfig, build_config, config_fields

__all__ = [
    "ExperimentConfig",
    "build_config",
    "cmd_client",
    "cmd_evaluate",
    "cmd_generate",
    "cmd_pod",
    "cmd_train",
    "evaluate",
    "evaluate_checkpoint",
    "generate_splits",
    "main",
    "pod_table",
    "train_model",
]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="key = value configuration file")
    g = p.add_argument_group("configuration overrides")
    for name, _ in config_fields():
        if name in ("mode", "transport", "listen"):
            continue
        g.add_argument("--" + name.replace("_", "-"), dest=name, default=None, metavar="V")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedks", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate KS and write the dataset file")
    _add_config_flags(p)
    p.add_argument("--out")

    p = sub.add_parser("pod", help="POD reconstruction errors over the R sweep")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")

    for name in ("train", "serve"):
        p = sub.add_parser(name, help="train an autoencoder" if name == "train" else "federated server over sockets")
        _add_config_flags(p)
        p.add_argument("--dataset", required=True)
        p.add_argument("--out", help="output prefix for checkpoint and history")
        p.add_argument("--listen", default=None)
        if name == "train":
            p.add_argument("--mode", choices=("central", "federated"), default=None)
            p.add_argument("--transport", choices=("inproc", "socket"), default=None)

    p = sub.add_parser("client", help="federated client for one shard")
    p.add_argument("--connect", required=True)
    p.add_argument("--shard", type=int, required=True)
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("evaluate", help="test MSE report and error fields")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", action="append", default=[], metavar="METHOD=PATH",
                   help="METHOD is ae_central or ae_federated; repeatable")
    p.add_argument("--pod-r", default="", help="extra comma-separated R values for POD rows")
    p.add_argument("--outdir")
    return ap


def _config(args) -> ExperimentConfig:
    overrides = {name: getattr(args, name, None) for name, _ in config_fields()}
    if args.command == "serve":
        overrides.update(mode="federated", transport="socket")
    return build_config(args.preset, args.config, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "client":
            cmd_client(args.connect, args.shard, args.dataset)
            return 0
        config = _config(args)
        if args.command == "generate":
            cmd_generate(config, args.out)
        elif args.command == "pod":
            print(cmd_pod(config, args.dataset, args.out))
        elif args.command in ("train", "serve"):
            cmd_train(config, args.dataset, args.out)
        elif args.command == "evaluate":
            ckpts: dict[str, list[str]] = {}
            for item in args.checkpoint:
                method, sep, path = item.partition("=")
                if not sep:
                    raise InvalidArgument(f"--checkpoint expects METHOD=PATH, got {item!r}")
                ckpts.setdefault(method, []).append(path)
            r_list = [int(r) for r in args.pod_r.split(",") if r.strip()]
            cmd_evaluate(config, args.dataset, ckpts, r_list, args.outdir)
    except (InvalidArgument, FileNotFoundError) as exc:
        print(f"fedks: error: {exc}", file=sys.stderr)
        return 2
    return 0
